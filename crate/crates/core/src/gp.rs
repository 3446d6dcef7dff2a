//! Gaussian-process regression with an ARD Matérn-5/2 kernel.
//!
//! Outputs are standardized before fitting (zero mean, unit variance) and the
//! prior mean is zero in the standardized scale. All posterior quantities in
//! this module are in that scale unless a method says otherwise.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::space::sobol_points;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Diagonal jitter ladder tried when the plain factorization fails.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("covariance matrix is not positive definite even with jitter {max_jitter:e}")]
    Conditioning { max_jitter: f64 },
    #[error("inputs and outputs differ in length ({inputs} vs {outputs})")]
    Shape { inputs: usize, outputs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Self {
        assert!(signal_variance > 0.0 && noise_variance > 0.0);
        assert!(lengthscales.iter().all(|&l| l > 0.0));
        Self {
            signal_variance,
            lengthscales,
            noise_variance,
        }
    }

    pub fn isotropic(dim: usize, signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Self {
        Self::new(signal_variance, vec![lengthscale; dim], noise_variance)
    }

    /// Starting point used as restart 0 of the hyperparameter search.
    pub fn default_for(dim: usize) -> Self {
        Self::isotropic(dim, 1.0, 0.5, 1e-3)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `[ln σ_f², ln ℓ_1, ..., ln ℓ_d, ln σ_n²]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.signal_variance.ln());
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Self {
            signal_variance: theta[0].exp(),
            lengthscales: theta[1..=d].iter().map(|t| t.exp()).collect(),
            noise_variance: theta[d + 1].exp(),
        }
    }
}

/// Scaled distance ρ = sqrt(Σ ((x_j - y_j) / ℓ_j)²).
fn scaled_distance(x: &[f64], y: &[f64], lengthscales: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(lengthscales)
        .map(|((a, b), l)| {
            let t = (a - b) / l;
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

pub fn matern52(x: &[f64], y: &[f64], params: &KernelParams) -> f64 {
    let rho = scaled_distance(x, y, &params.lengthscales);
    let s = SQRT5 * rho;
    params.signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

pub fn gram(a: &[Vec<f64>], b: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| matern52(&a[i], &b[j], params))
}

/// Observed data with the standardization constants applied to `outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
}

impl Dataset {
    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            outputs: Vec::new(),
            output_mean: 0.0,
            output_std: 1.0,
        }
    }

    /// Standardizes raw observations. With fewer than two points (or zero
    /// spread) the scale is 1.
    pub fn standardized(inputs: Vec<Vec<f64>>, raw: &[f64]) -> Result<Self, GpError> {
        if inputs.len() != raw.len() {
            return Err(GpError::Shape {
                inputs: inputs.len(),
                outputs: raw.len(),
            });
        }
        let n = raw.len();
        if n == 0 {
            return Ok(Self::empty());
        }
        let mean = raw.iter().sum::<f64>() / n as f64;
        let std = if n >= 2 {
            let var = raw.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        } else {
            1.0
        };
        Ok(Self {
            inputs,
            outputs: raw.iter().map(|y| (y - mean) / std).collect(),
            output_mean: mean,
            output_std: std,
        })
    }

    /// Uses `outputs` as given (already on the modelling scale).
    pub fn raw(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self, GpError> {
        if inputs.len() != outputs.len() {
            return Err(GpError::Shape {
                inputs: inputs.len(),
                outputs: outputs.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            output_mean: 0.0,
            output_std: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Lower Cholesky factor of `K + (σ_n² + jitter) I`.
fn factor(inputs: &[Vec<f64>], params: &KernelParams) -> Result<(DMatrix<f64>, f64), GpError> {
    let n = inputs.len();
    let mut k = gram(inputs, inputs, params);
    for i in 0..n {
        k[(i, i)] += params.noise_variance;
    }
    for &jitter in &JITTER_LADDER {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(kj) {
            if ch.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((ch.unpack(), jitter));
            }
        }
    }
    Err(GpError::Conditioning {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub dataset: Dataset,
    pub params: KernelParams,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl PosteriorState {
    pub fn fit(dataset: Dataset, params: KernelParams) -> Result<Self, GpError> {
        if dataset.is_empty() {
            return Ok(Self {
                dataset,
                params,
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let (chol, jitter) = factor(&dataset.inputs, &params)?;
        let y = DVector::from_column_slice(&dataset.outputs);
        let alpha = cholesky_solve(&chol, &y);
        Ok(Self {
            dataset,
            params,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        matern52(x, y, &self.params)
    }

    pub fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.dataset.inputs.iter().map(|xi| matern52(x, xi, &self.params)),
        )
    }

    /// `(K + σ²I)^{-1} v`
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        cholesky_solve(&self.chol, v)
    }

    /// Posterior mean and variance (standardized scale). Variance is floored
    /// at [`VARIANCE_FLOOR`].
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.params.signal_variance;
        if self.is_empty() {
            return (0.0, prior);
        }
        let kx = self.cross(x);
        let mean = kx.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kx)
            .expect("factor has a positive diagonal");
        let var = (prior - v.norm_squared()).clamp(VARIANCE_FLOOR, prior);
        (mean, var)
    }

    /// Prediction mapped back to the scale of the raw observations.
    pub fn predict_raw(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict(x);
        let s = self.dataset.output_std;
        (m * s + self.dataset.output_mean, v * s * s)
    }

    /// Posterior cross-covariance `k(a,b) - k(a,X)(K+σ²I)^{-1}k(X,b)`.
    pub fn posterior_cov(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        let prior = gram(a, b, &self.params);
        if self.is_empty() {
            return prior;
        }
        let ka = gram(&self.dataset.inputs, a, &self.params);
        let kb = gram(&self.dataset.inputs, b, &self.params);
        let va = self
            .chol
            .solve_lower_triangular(&ka)
            .expect("factor has a positive diagonal");
        let vb = self
            .chol
            .solve_lower_triangular(&kb)
            .expect("factor has a positive diagonal");
        prior - va.transpose() * vb
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let y = DVector::from_column_slice(&self.dataset.outputs);
        let logdet: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l.solve_lower_triangular(b).expect("factor has a positive diagonal");
    l.tr_solve_lower_triangular(&z).expect("factor has a positive diagonal")
}

pub fn log_marginal_likelihood(dataset: &Dataset, params: &KernelParams) -> Result<f64, GpError> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    Ok(PosteriorState::fit(dataset.clone(), params.clone())?.log_marginal_likelihood())
}

/// LML and its gradient with respect to `KernelParams::to_log` coordinates.
pub fn lml_with_gradient(dataset: &Dataset, params: &KernelParams) -> Result<(f64, Vec<f64>), GpError> {
    let n = dataset.len();
    let d = params.dim();
    if n == 0 {
        return Ok((0.0, vec![0.0; d + 2]));
    }
    let state = PosteriorState::fit(dataset.clone(), params.clone())?;
    let lml = state.log_marginal_likelihood();
    let kinv = {
        let id = DMatrix::<f64>::identity(n, n);
        let z = state.chol.solve_lower_triangular(&id).expect("positive diagonal");
        z.transpose() * z
    };
    let a = &state.alpha;
    // W = αα^T - K^{-1}; dLML/dθ = ½ tr(W dK/dθ)
    let w = a * a.transpose() - kinv;
    let xs = &dataset.inputs;
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            let rho = scaled_distance(&xs[i], &xs[j], &params.lengthscales);
            let s = SQRT5 * rho;
            let e = (-s).exp();
            let k = params.signal_variance * (1.0 + s + s * s / 3.0) * e;
            grad[0] += 0.5 * wij * k;
            let common = params.signal_variance * (5.0 / 3.0) * (1.0 + s) * e;
            for (m, l) in params.lengthscales.iter().enumerate() {
                let t = (xs[i][m] - xs[j][m]) / l;
                grad[1 + m] += 0.5 * wij * common * t * t;
            }
        }
        grad[d + 1] += 0.5 * w[(i, i)] * params.noise_variance;
    }
    Ok((lml, grad))
}

/// Box constraints for the hyperparameter search, in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lengthscale: [f64; 2],
    pub signal_variance: [f64; 2],
    pub noise_variance: [f64; 2],
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            lengthscale: [1e-2, 10.0],
            signal_variance: [1e-2, 1e2],
            noise_variance: [1e-6, 1.0],
        }
    }
}

impl HyperBounds {
    fn log_box(&self, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.signal_variance[0].ln()];
        let mut hi = vec![self.signal_variance[1].ln()];
        lo.extend(std::iter::repeat_n(self.lengthscale[0].ln(), dim));
        hi.extend(std::iter::repeat_n(self.lengthscale[1].ln(), dim));
        lo.push(self.noise_variance[0].ln());
        hi.push(self.noise_variance[1].ln());
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperFit {
    pub params: KernelParams,
    pub lml: f64,
    /// Set when no restart could be evaluated and `params` is the fallback.
    pub fallback: bool,
    pub restarts_ok: usize,
}

/// Multi-start bounded quasi-Newton ascent of the LML in log space.
///
/// Restart 0 starts from `fallback` (clamped into the box), the remaining
/// restarts from scrambled-Sobol points of the log box.
pub fn optimize_hyperparams(
    dataset: &Dataset,
    bounds: &HyperBounds,
    restarts: usize,
    seed: u64,
    fallback: &KernelParams,
) -> HyperFit {
    let dim = fallback.dim();
    let (lo, hi) = bounds.log_box(dim);
    let p = dim + 2;
    let mut starts = vec![clamp_vec(&fallback.to_log(), &lo, &hi)];
    let sob = sobol_points(p, restarts.saturating_sub(1), seeding::derive(seed, &[seeding::purpose::HYPER]));
    for u in sob {
        starts.push(u.iter().enumerate().map(|(i, t)| lo[i] + t * (hi[i] - lo[i])).collect());
    }
    let objective = |theta: &[f64]| lml_with_gradient(dataset, &KernelParams::from_log(theta)).ok();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut ok = 0;
    for start in starts.iter().take(restarts.max(1)) {
        if let Some((theta, val)) = bounded_ascent(&objective, start.clone(), &lo, &hi, 100) {
            ok += 1;
            if best.as_ref().is_none_or(|(_, b)| val > *b) {
                best = Some((theta, val));
            }
        }
    }
    match best {
        Some((theta, lml)) => HyperFit {
            params: KernelParams::from_log(&theta),
            lml,
            fallback: false,
            restarts_ok: ok,
        },
        None => {
            log::warn!("hyperparameter search failed on every restart; keeping previous parameters");
            HyperFit {
                params: fallback.clone(),
                lml: f64::NEG_INFINITY,
                fallback: true,
                restarts_ok: 0,
            }
        }
    }
}

fn clamp_vec(v: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    v.iter().zip(lo).zip(hi).map(|((x, l), h)| x.clamp(*l, *h)).collect()
}

/// Projected gradient with a BFGS inverse-Hessian model; returns the best
/// visited point. Never returns a point worse than `x0`.
pub(crate) fn bounded_ascent<F>(f: &F, x0: Vec<f64>, lo: &[f64], hi: &[f64], max_iter: usize) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let p = x0.len();
    let (mut fx, mut g) = f(&x0)?;
    if !fx.is_finite() {
        return None;
    }
    let mut x = x0;
    let mut h = DMatrix::<f64>::identity(p, p);
    for _ in 0..max_iter {
        // Free variables: not pinned at a bound with the gradient pushing out.
        let free: Vec<bool> = (0..p)
            .map(|i| !((x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0)))
            .collect();
        let pg: f64 = (0..p).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if pg < 1e-6 {
            break;
        }
        let gv = DVector::from_iterator(p, (0..p).map(|i| if free[i] { g[i] } else { 0.0 }));
        let mut dir = &h * &gv;
        for i in 0..p {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&gv) <= 0.0 {
            h = DMatrix::identity(p, p);
            dir = gv.clone();
        }
        // keep log-space steps moderate
        let dn = dir.norm();
        if dn > 2.0 {
            dir *= 2.0 / dn;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = (0..p).map(|i| (x[i] + step * dir[i]).clamp(lo[i], hi[i])).collect();
            if let Some((fc, gc)) = f(&cand) {
                let moved: f64 = (0..p).map(|i| (cand[i] - x[i]) * g[i]).sum();
                if fc.is_finite() && fc >= fx + 1e-4 * moved.max(0.0) && fc >= fx {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s = DVector::from_iterator(p, (0..p).map(|i| xn[i] - x[i]));
        let yv = DVector::from_iterator(p, (0..p).map(|i| -(gn[i] - g[i])));
        let sy = s.dot(&yv);
        let improvement = fn_ - fx;
        x = xn;
        fx = fn_;
        g = gn;
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let id = DMatrix::<f64>::identity(p, p);
            let a = &id - rho * &s * yv.transpose();
            let b = &id - rho * &yv * s.transpose();
            h = &a * &h * &b + rho * &s * s.transpose();
        }
        if improvement.abs() < 1e-10 * (1.0 + fx.abs()) {
            break;
        }
    }
    Some((x, fx))
}
