use lgbo_core::gp::{lml_with_gradient, log_marginal_likelihood, Dataset, KernelParams, PosteriorState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matern(x: &[f64], y: &[f64], p: &KernelParams) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(&p.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    let s = (5.0 * r2).sqrt();
    p.signal_variance * (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
}

fn case() -> impl Strategy<Value = (KernelParams, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=12).prop_flat_map(|(d, n)| {
        (
            (0.2f64..4.0, prop::collection::vec(0.1f64..2.0, d), 1e-3f64..0.2)
                .prop_map(|(s, l, e)| KernelParams::new(s, l, e)),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0.0f64..1.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_matches_dense_solve((p, x, y, q) in case()) {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| matern(&x[i], &x[j], &p) + if i == j { p.noise_variance } else { 0.0 });
        let inv = k.clone().try_inverse().unwrap();
        let kq = DVector::from_iterator(n, x.iter().map(|xi| matern(&q, xi, &p)));
        let yv = DVector::from_column_slice(&y);
        let mean = kq.dot(&(&inv * &yv));
        let var = p.signal_variance - kq.dot(&(&inv * &kq));
        let lml = -0.5 * yv.dot(&(&inv * &yv)) - 0.5 * k.determinant().ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        let state = PosteriorState::fit(Dataset::raw(x.clone(), y.clone()).unwrap(), p.clone()).unwrap();
        let (m, v) = state.predict(&q);
        prop_assert!((m - mean).abs() < 1e-8, "mean {m} vs {mean}");
        prop_assert!((v - var.max(0.0)).abs() < 1e-8, "var {v} vs {var}");
        let got = log_marginal_likelihood(&Dataset::raw(x, y).unwrap(), &p).unwrap();
        prop_assert!((got - lml).abs() < 1e-8 * lml.abs().max(1.0));
    }

    #[test]
    fn lml_gradient_matches_central_differences((p, x, y, _q) in case()) {
        let data = Dataset::raw(x, y).unwrap();
        let (f0, grad) = lml_with_gradient(&data, &p).unwrap();
        let theta = p.to_log();
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            let fu = log_marginal_likelihood(&data, &KernelParams::from_log(&up)).unwrap();
            let fd = log_marginal_likelihood(&data, &KernelParams::from_log(&dn)).unwrap();
            let fd_grad = (fu - fd) / (2.0 * h);
            prop_assert!((grad[i] - fd_grad).abs() < 1e-4 * (1.0 + f0.abs()), "coord {i}: {} vs {fd_grad}", grad[i]);
        }
    }
}
