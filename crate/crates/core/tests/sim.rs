use nlos_core::data::{TransientVolume, Vec3, WallGrid};
use nlos_core::sim::{add_background, add_noise, simulate_transients, Floor, Primitive, SceneSpec, SimOptions};

fn wall() -> WallGrid {
    WallGrid::regular(Vec3::zeros(), Vec3::z(), 0.5, 3, 3)
}

fn sphere(albedo: f64) -> SceneSpec {
    SceneSpec::sphere(Vec3::new(0.0, 0.0, 0.5), 0.25, albedo)
}

fn simulate(scene: &SceneSpec, angles: usize) -> TransientVolume {
    let opts = SimOptions {
        angles,
        ..SimOptions::default()
    };
    simulate_transients(scene, &wall(), 128, 70.0, &opts).unwrap().volume
}

/// Bins within a tiny fraction of the peak are dominated by the limb and the
/// partially covered first bin, so the change is measured against the peak
/// of each transient.
#[test]
fn doubling_the_quadrature_changes_bins_by_under_one_percent() {
    let coarse = simulate(&sphere(1.0), 256);
    let fine = simulate(&sphere(1.0), 512);
    for m in 0..coarse.wall_points() {
        let (a, b) = (coarse.transient(m), fine.transient(m));
        let peak = b.iter().cloned().fold(0.0f32, f32::max) as f64;
        assert!(peak > 0.0);
        let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
        assert!(
            worst < 0.01 * peak,
            "wall point {m}: max change {} of peak",
            worst / peak
        );
    }
}

#[test]
fn energy_is_linear_in_albedo() {
    let base = simulate(&sphere(1.0), 64);
    assert!(base.max_value() > 0.0);
    for k in [-3, -1, 1, 2] {
        let s = 2f64.powi(k);
        let scaled = simulate(&sphere(s), 64);
        for (a, b) in scaled.data().iter().zip(base.data()) {
            assert_eq!(*a, b * s as f32);
        }
    }
    let third = simulate(&sphere(1.0 / 3.0), 64);
    for (a, b) in third.data().iter().zip(base.data()) {
        assert!((*a as f64 - *b as f64 / 3.0).abs() <= 1e-6 * (*b as f64));
    }
}

#[test]
fn simulation_is_reproducible() {
    let a = simulate(&sphere(1.0), 64);
    let b = simulate(&sphere(1.0), 64);
    assert_eq!(a, b);
}

#[test]
fn noise_keeps_the_mean() {
    let clean = simulate(&sphere(1.0), 64);
    let clean = TransientVolume::new(
        clean.transient(4).to_vec(),
        128,
        70.0,
        WallGrid::regular(Vec3::zeros(), Vec3::z(), 0.0, 1, 1),
    )
    .unwrap();
    assert_eq!(add_noise(&clean, 1, 0.0).unwrap(), clean);
    assert_eq!(add_noise(&clean, 7, 1e-3).unwrap(), add_noise(&clean, 7, 1e-3).unwrap());
    assert!(add_noise(&clean, 7, -1.0).is_err());

    let peak = clean.max_value() as f64;
    let level = peak / 1000.0;
    let draws = 10_000;
    let mut sum = vec![0.0f64; 128];
    for seed in 0..draws {
        let noisy = add_noise(&clean, seed, level).unwrap();
        assert!(noisy.data().iter().all(|v| *v >= 0.0));
        for (s, v) in sum.iter_mut().zip(noisy.data()) {
            *s += *v as f64;
        }
    }
    for (t, (s, c)) in sum.iter().zip(clean.data()).enumerate() {
        let c = *c as f64;
        if c > 0.1 * peak {
            let mean = s / draws as f64;
            assert!((mean - c).abs() < 0.01 * c, "bin {t}: mean {mean} vs {c}");
        }
    }
}

#[test]
fn background_parts_add_up() {
    let mut scene = sphere(1.0);
    let object = simulate(&scene, 64);
    let opts = SimOptions {
        angles: 64,
        ..SimOptions::default()
    };
    let none = add_background(&object, &scene, &opts).unwrap();
    assert_eq!(none.total, object);
    assert!(none.background.data().iter().all(|v| *v == 0.0));

    scene.floor = Some(Floor {
        plane: Primitive::Plane {
            point: [0.0, -0.3, 0.5],
            normal: [0.0, 1.0, 0.0],
            half_extent: [1.0, 1.0],
            albedo: 1.0,
        },
        factor: 0.5,
    });
    let mix = add_background(&object, &scene, &opts).unwrap();
    assert_eq!(mix.object, object);
    assert!(mix.background.max_value() > 0.0);
    for ((t, o), b) in mix.total.data().iter().zip(object.data()).zip(mix.background.data()) {
        assert_eq!(*t, o + b);
    }
}
