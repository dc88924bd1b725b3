use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlos_core::optim::{clip_global_norm, Adam, OptimError};

/// Random symmetric matrix with eigenvalues in `[0.5, 2]`.
fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.5..2.0)));
    &q * d * q.transpose()
}

#[test]
fn one_step_descends_random_quadratics() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..100 {
        let n = rng.gen_range(1..12);
        let a = random_spd(n, &mut rng);
        let centre = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        // Starting at least a unit away keeps |g|_1 above the second-order
        // term of a sign-like first step for every lr <= 1e-2.
        let dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)).normalize();
        let x0 = &centre + dir * rng.gen_range(1.0..10.0);
        let f = |x: &DVector<f64>| {
            let e = x - &centre;
            0.5 * e.dot(&(&a * &e))
        };
        for lr in [1e-2, 1e-3, 1e-4] {
            let mut x: Vec<f64> = x0.iter().copied().collect();
            let g = &a * (&x0 - &centre);
            let mut adam = Adam::new(n, lr, 0.9, 0.999, 1e-8);
            adam.update(&mut x, g.as_slice()).unwrap();
            let after = f(&DVector::from_vec(x));
            assert!(after < f(&x0), "case {case}, lr {lr}: {after} >= {}", f(&x0));
        }
    }
}

#[test]
fn rejected_gradients_leave_state_alone() {
    let mut adam = Adam::new(3, 1e-3, 0.9, 0.999, 1e-8);
    let mut x = vec![1.0, 2.0, 3.0];
    assert_eq!(
        adam.update(&mut x, &[0.1, f64::NAN, 0.0]),
        Err(OptimError::NonFinite(1))
    );
    assert!(matches!(adam.update(&mut x, &[0.1]), Err(OptimError::Shape { .. })));
    assert_eq!(x, vec![1.0, 2.0, 3.0]);
    assert_eq!(adam.step, 0);
    assert!(adam.moments().0.iter().all(|m| *m == 0.0));
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let mut g: Vec<f64> = (0..rng.gen_range(1..50))
            .map(|_| rng.gen_range(-100.0..100.0))
            .collect();
        let orig = g.clone();
        let norm = clip_global_norm(&mut g, 10.0);
        let after = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(after <= 10.0 * (1.0 + 1e-12));
        if norm <= 10.0 {
            assert_eq!(g, orig);
        } else {
            // Direction is preserved.
            let cos = g.iter().zip(&orig).map(|(a, b)| a * b).sum::<f64>() / (after * norm);
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }
}
