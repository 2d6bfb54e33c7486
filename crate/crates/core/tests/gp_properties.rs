//! Property checks for the single-fidelity GP.

use mfbo_core::gp::{covariance_matrix, kernel_se, nlml, nlml_gradient, GpModel, Hyperparameters, TrainingSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random `(theta, data)` with `d <= 5`, `N <= 20`. `log10_noise` bounds the
/// noise std; it sets the conditioning of `K`.
fn random_instance_with(rng: &mut ChaCha8Rng, log10_noise: (f64, f64)) -> (Hyperparameters, TrainingSet) {
    let d = rng.random_range(1..=5);
    let n = rng.random_range(2..=20);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().enumerate().map(|(i, v)| ((i + 1) as f64 * 3.0 * v).sin()).sum::<f64>() + 0.05 * rng.random::<f64>())
        .collect();
    let ls: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random_range(-1.0..0.3))).collect();
    let theta = Hyperparameters::new(10f64.powf(rng.random_range(log10_noise.0..log10_noise.1)), 10f64.powf(rng.random_range(-0.5..0.5)), &ls);
    (theta, TrainingSet::new(xs, ys).unwrap())
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Hyperparameters, TrainingSet) {
    random_instance_with(rng, (-3.0, -0.5))
}

#[test]
fn gradient_matches_central_differences_on_many_instances() {
    const H: f64 = 1e-5;
    const REL_TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..150 {
        let (theta, ts) = random_instance(&mut rng);
        let g = nlml_gradient(&theta, &ts).unwrap();
        let p = theta.to_vec();
        for j in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[j] += H;
            lo[j] -= H;
            let f_hi = nlml(&Hyperparameters::from_slice(&hi).unwrap(), &ts).unwrap();
            let f_lo = nlml(&Hyperparameters::from_slice(&lo).unwrap(), &ts).unwrap();
            let fd = (f_hi - f_lo) / (2.0 * H);
            let rel = (fd - g[j]).abs() / (fd.abs().max(g[j].abs()) + 1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < REL_TOL, "worst relative error {worst}");
}

#[test]
fn predictions_match_dense_inverse_on_many_instances() {
    // Two f64 solvers can only agree to about cond(K) * eps, so the 1e-10
    // comparison needs well-conditioned instances.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (theta, ts) = random_instance_with(&mut rng, (-1.5, -0.5));
        let model = GpModel::new(ts.clone(), theta.clone()).unwrap();
        let k = covariance_matrix(ts.inputs(), &theta, true).unwrap();
        let kinv = k.clone().try_inverse().unwrap();
        let y = ts.standardized_targets();
        let x: Vec<f64> = (0..ts.dim()).map(|_| rng.random()).collect();
        let kx = nalgebra::DVector::from_iterator(ts.len(), ts.inputs().iter().map(|xi| kernel_se(&x, xi, &theta).unwrap()));
        let mean_std = (kx.transpose() * &kinv * &y)[0];
        let var_std = theta.kernel().signal_variance() + theta.noise_variance() - (kx.transpose() * &kinv * &kx)[0];
        let (m, v) = model.predict_standardized(&x).unwrap();
        assert!((m - mean_std).abs() <= 1e-10 * mean_std.abs().max(1.0), "{m} vs {mean_std}");
        assert!((v - var_std).abs() <= 1e-10 * var_std.abs().max(1.0), "{v} vs {var_std}");
    }
}

fn points(d: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..1.0f64, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric(a in prop::collection::vec(-2.0..2.0f64, 3), b in prop::collection::vec(-2.0..2.0f64, 3),
                           sf in 0.1..5.0f64, l in prop::collection::vec(0.05..3.0f64, 3)) {
        let theta = Hyperparameters::new(1e-3, sf, &l);
        prop_assert_eq!(kernel_se(&a, &b, &theta).unwrap(), kernel_se(&b, &a, &theta).unwrap());
    }

    #[test]
    fn kernel_matrix_is_psd(xs in (1usize..=20).prop_flat_map(|n| points(2, n)), l in 0.05..2.0f64) {
        let theta = Hyperparameters::new(1e-3, 1.0, &[l, l * 0.7]);
        let k = covariance_matrix(&xs, &theta, false).unwrap();
        let min = k.symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-10, "min eigenvalue {}", min);
    }

    #[test]
    fn nearly_noiseless_model_interpolates(xs in points(2, 6), shift in -1.0..1.0f64) {
        let ys: Vec<f64> = xs.iter().map(|x| (4.0 * x[0]).sin() + x[1] * x[1] + shift).collect();
        let ts = TrainingSet::new(xs.clone(), ys.clone()).unwrap();
        let model = GpModel::new(ts, Hyperparameters::new(1e-8, 1.0, &[0.3, 0.3])).unwrap();
        // Near-duplicate inputs make interpolation ill-posed; skip them.
        let min_gap = xs.iter().enumerate().flat_map(|(i, a)| xs[i + 1..].iter().map(move |b| {
            a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        })).fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 0.05);
        for (x, y) in xs.iter().zip(&ys) {
            let p = model.predict(x).unwrap();
            prop_assert!((p.mean - y).abs() < 1e-5, "{} vs {}", p.mean, y);
        }
    }
}
