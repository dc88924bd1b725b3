use proptest::prelude::*;

use nlos_core::data::{
    bin_to_radius, compute_object_mask, decode_transients, encode_transients, load_transients, save_transients, Config,
    NltError, Precision, TransientVolume, Vec3, WallGrid, WeightMode, ZeroLossNorm,
};

fn volume_strategy() -> impl Strategy<Value = TransientVolume> {
    (
        1usize..5,
        1usize..5,
        2usize..40,
        1.0f64..500.0,
        0usize..2000,
        -1.0f64..1.0,
        0.0f64..6.28,
    )
        .prop_flat_map(|(rows, cols, bins, width, offset, z, phi)| {
            let values = prop::collection::vec(
                prop_oneof![Just(0.0f32), (1u32..0x0080_0000).prop_map(f32::from_bits), 0.0f32..1e6],
                rows * cols * bins,
            );
            values.prop_map(move |data| {
                let s = (1.0 - z * z).sqrt();
                let normal = Vec3::new(s * phi.cos(), s * phi.sin(), z);
                let wall = WallGrid::regular(Vec3::new(0.1, -0.2, 0.3), normal, 0.4, rows, cols);
                TransientVolume::with_offset(data, bins, width, offset, wall).unwrap()
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn radii_increase_with_bin(t in 0usize..100_000, dt in 1usize..1000, width in 1e-13f64..1e-9) {
        prop_assert!(bin_to_radius(t, width) < bin_to_radius(t + dt, width));
    }

    #[test]
    fn mask_shrinks_as_kappa_grows(tau in volume_strategy(), k1 in 0.001f64..0.999, k2 in 0.001f64..0.999) {
        prop_assume!(k1 != k2);
        let (lo, hi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
        let a = compute_object_mask(&tau, lo);
        let b = compute_object_mask(&tau, hi);
        prop_assert!(b.bits().iter().zip(a.bits()).all(|(hi, lo)| !hi || *lo));
    }

    #[test]
    fn nlt_round_trip_is_identity(tau in volume_strategy()) {
        let back = decode_transients(&encode_transients(&tau)).unwrap();
        prop_assert_eq!(back.bins(), tau.bins());
        prop_assert_eq!(back.bin_offset(), tau.bin_offset());
        prop_assert_eq!(back.bin_width_ps().to_bits(), tau.bin_width_ps().to_bits());
        prop_assert_eq!(back.wall().dims(), tau.wall().dims());
        for i in 0..tau.wall_points() {
            let (p, q) = (back.wall().position(i), tau.wall().position(i));
            prop_assert!((0..3).all(|k| p[k].to_bits() == q[k].to_bits()));
        }
        prop_assert!(back.data().iter().zip(tau.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_files_are_rejected(tau in volume_strategy(), cut in 1usize..64) {
        let bytes = encode_transients(&tau);
        let cut = cut.min(bytes.len());
        prop_assert!(decode_transients(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn file_round_trip() {
    let wall = WallGrid::regular(Vec3::zeros(), Vec3::z(), 0.5, 2, 3);
    let data: Vec<f32> = (0..6 * 8).map(|i| i as f32 * 0.25).collect();
    let tau = TransientVolume::new(data, 8, 70.0, wall).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.nlt");
    save_transients(&path, &tau).unwrap();
    assert_eq!(load_transients(&path).unwrap(), tau);
    assert!(matches!(
        load_transients(dir.path().join("missing.nlt")),
        Err(NltError::Io(_))
    ));
}

#[test]
fn walls_must_be_planar_with_unit_normal() {
    let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::new(0.0, 1.0, 1e-3)];
    assert!(WallGrid::new(pts.clone(), Vec3::z(), 1, 3).is_err());
    assert!(WallGrid::new(pts[..2].to_vec(), Vec3::z() * 2.0, 1, 2).is_err());
    assert!(WallGrid::new(pts[..2].to_vec(), Vec3::z(), 2, 2).is_err());
    assert!(WallGrid::new(pts[..2].to_vec(), Vec3::z(), 1, 2).is_ok());
}

#[test]
fn config_toml_round_trip() {
    let mut cfg = Config::default();
    cfg.seed = 0xDEAD_BEEF;
    cfg.iterations = 123;
    cfg.precision = Precision::F64;
    cfg.weight_mode = WeightMode::Cumulative;
    cfg.zero_loss_norm = ZeroLossNorm::MaskedEntries;
    cfg.kappa = 0.1 + 0.2;
    cfg.loss.entropy = 1.0 / 3.0;
    cfg.network.alpha_init = 0.123456789012345;
    let back = Config::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());

    assert!(Config::from_toml("unknown_key = 1").is_err());
    let partial = Config::from_toml("seed = 7").unwrap();
    assert_eq!(partial.seed, 7);
    assert_eq!(partial.loss, Config::default().loss);
}
