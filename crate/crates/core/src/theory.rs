//! Numerical checks of the tilt/shift identity, RKHS quantities and
//! GP-UCB regret bounds on synthetic kernel-expansion objectives.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::gp::{gram, matern52, KernelParams, PosteriorState, Dataset};
use crate::lift::calibrate_lambda;
use crate::par;
use crate::seeding::{self, purpose};
use crate::space::{argmax, sobol_points};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TheoryError {
    #[error("covariance is not symmetric positive semi-definite: {0}")]
    NotPsd(String),
    #[error("need at least 10000 samples, got {0}")]
    TooFewSamples(usize),
    #[error("tilt weights degenerate (effective sample size {ess:.1} of {n}); use a smaller lambda")]
    DegenerateTilt { ess: f64, n: usize },
    #[error("quadratic form {0:e} is negative beyond tolerance")]
    PsdViolation(f64),
    #[error("alignment undefined for a zero-norm function")]
    UndefinedAlignment,
    #[error("functions use different kernels or dimensions")]
    KernelMismatch,
    #[error("invalid configuration: {0}")]
    Config(String),
}

// ---------------------------------------------------------------------------
// Monte Carlo tilt

const MC_CHUNK: usize = 1 << 16;

/// Result of comparing a self-normalised importance-sampled tilt with the
/// analytic mean shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltCheck {
    pub empirical_shift: Vec<f64>,
    pub analytic_shift: Vec<f64>,
    pub max_abs_err: f64,
    /// Per-component Monte Carlo standard errors of the tilted mean.
    pub std_errors: Vec<f64>,
    /// `max_i |err_i| / se_i`.
    pub max_z: f64,
    /// `‖err‖ / ‖λΣa‖`, or the absolute error norm when the shift is zero.
    pub mean_rel_err: f64,
    /// `‖Ĉ − Σ‖_F / ‖Σ‖_F`.
    pub cov_rel_err: f64,
    /// Shift of `aᵀF`: empirical and `λ aᵀΣa`.
    pub delta_empirical: f64,
    pub delta_analytic: f64,
    pub delta_se: f64,
    pub ess: f64,
    pub n_samples: usize,
}

#[derive(Default)]
struct Moments {
    sw: f64,
    sw2: f64,
    swz: Vec<f64>,
    sw2z: Vec<f64>,
    sw2z2: Vec<f64>,
    swzz: Vec<f64>,
    swl: f64,
    sw2l: f64,
    sw2l2: f64,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            swz: vec![0.0; d],
            sw2z: vec![0.0; d],
            sw2z2: vec![0.0; d],
            swzz: vec![0.0; d * d],
            ..Default::default()
        }
    }

    fn merge(mut self, o: &Moments) -> Self {
        self.sw += o.sw;
        self.sw2 += o.sw2;
        self.swl += o.swl;
        self.sw2l += o.sw2l;
        self.sw2l2 += o.sw2l2;
        for (a, b) in [
            (&mut self.swz, &o.swz),
            (&mut self.sw2z, &o.sw2z),
            (&mut self.sw2z2, &o.sw2z2),
            (&mut self.swzz, &o.swzz),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

/// Square root factor `L` with `L Lᵀ = cov`, via the eigendecomposition so
/// singular covariances are fine.
fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, TheoryError> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(TheoryError::NotPsd("matrix is not square".into()));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-10 * scale {
        return Err(TheoryError::NotPsd("matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(TheoryError::NotPsd(format!("eigenvalue {min:e}")));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Draws `F ~ N(mean, cov)`, weights each draw by `exp(λ aᵀF)` and compares
/// the weighted mean and covariance with `mean + λ cov a` and `cov`.
pub fn mc_tilt_verify(
    mean: &[f64],
    cov: &DMatrix<f64>,
    a: &[f64],
    lambda: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TiltCheck, TheoryError> {
    let d = mean.len();
    if cov.nrows() != d || a.len() != d {
        return Err(TheoryError::NotPsd(format!(
            "dimension mismatch: mean {d}, cov {}x{}, a {}",
            cov.nrows(),
            cov.ncols(),
            a.len()
        )));
    }
    if n_samples < 10_000 {
        return Err(TheoryError::TooFewSamples(n_samples));
    }
    let l = psd_factor(cov)?;
    let av = DVector::from_column_slice(a);
    let sa = cov * &av;
    let s2 = av.dot(&sa);
    // Weights are normalised to mean one under the untilted law.
    let log_norm = 0.5 * lambda * lambda * s2;
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let parts = par::map_range(chunks, |c| {
        let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
        let mut rng = seeding::rng(seed, &[purpose::MC, c as u64]);
        let mut m = Moments::new(d);
        let mut e = vec![0.0; d];
        let mut z = vec![0.0; d];
        for _ in 0..count {
            e.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for i in 0..d {
                z[i] = (0..d).map(|j| l[(i, j)] * e[j]).sum();
            }
            let lin: f64 = z.iter().zip(a).map(|(zi, ai)| zi * ai).sum();
            let w = (lambda * lin - log_norm).exp();
            let w2 = w * w;
            m.sw += w;
            m.sw2 += w2;
            m.swl += w * lin;
            m.sw2l += w2 * lin;
            m.sw2l2 += w2 * lin * lin;
            for i in 0..d {
                m.swz[i] += w * z[i];
                m.sw2z[i] += w2 * z[i];
                m.sw2z2[i] += w2 * z[i] * z[i];
                for j in 0..d {
                    m.swzz[i * d + j] += w * z[i] * z[j];
                }
            }
        }
        m
    });
    let m = parts.iter().fold(Moments::new(d), Moments::merge);
    let ess = m.sw * m.sw / m.sw2;
    if !ess.is_finite() || ess < 0.01 * n_samples as f64 {
        return Err(TheoryError::DegenerateTilt { ess, n: n_samples });
    }
    let emp: Vec<f64> = m.swz.iter().map(|v| v / m.sw).collect();
    let ana: Vec<f64> = sa.iter().map(|v| lambda * v).collect();
    // Delta-method standard error of a self-normalised mean:
    // sqrt(Σ w² (z − ẑ)²) / Σ w.
    let se = |s2z2: f64, s2z: f64, zhat: f64| {
        let num = s2z2 - 2.0 * zhat * s2z + zhat * zhat * m.sw2;
        num.max(0.0).sqrt() / m.sw
    };
    let std_errors: Vec<f64> = (0..d).map(|i| se(m.sw2z2[i], m.sw2z[i], emp[i])).collect();
    let errs: Vec<f64> = emp.iter().zip(&ana).map(|(e, a)| e - a).collect();
    let max_abs_err = errs.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let max_z = errs
        .iter()
        .zip(&std_errors)
        .fold(0.0_f64, |acc, (e, s)| acc.max(if *s > 0.0 { e.abs() / s } else if *e == 0.0 { 0.0 } else { f64::INFINITY }));
    let err_norm = errs.iter().map(|e| e * e).sum::<f64>().sqrt();
    let ana_norm = ana.iter().map(|e| e * e).sum::<f64>().sqrt();
    let mean_rel_err = if ana_norm > 0.0 { err_norm / ana_norm } else { err_norm };
    let mut cov_err = 0.0;
    for i in 0..d {
        for j in 0..d {
            let c = m.swzz[i * d + j] / m.sw - emp[i] * emp[j];
            cov_err += (c - cov[(i, j)]).powi(2);
        }
    }
    let cov_norm = cov.norm();
    let cov_rel_err = if cov_norm > 0.0 { cov_err.sqrt() / cov_norm } else { cov_err.sqrt() };
    let delta_empirical = m.swl / m.sw;
    Ok(TiltCheck {
        empirical_shift: emp,
        analytic_shift: ana,
        max_abs_err,
        std_errors,
        max_z,
        mean_rel_err,
        cov_rel_err,
        delta_empirical,
        delta_analytic: lambda * s2,
        delta_se: se(m.sw2l2, m.sw2l, delta_empirical),
        ess,
        n_samples,
    })
}

/// A random 5-point tilt instance: the joint GP posterior over five random
/// points given a few random observations, region weights `1/5`, and λ
/// calibrated at `confidence`.
#[derive(Debug, Clone)]
pub struct TiltInstance {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub lambda: f64,
}

pub fn tilt_instance(seed: u64, points: usize, confidence: f64) -> TiltInstance {
    let mut rng = seeding::rng(seed, &[purpose::INSTANCE]);
    let dim = 2;
    let params = KernelParams::isotropic(dim, rng.random_range(0.5..2.0), rng.random_range(0.15..0.6), 1e-3);
    let n_obs = rng.random_range(0..=6);
    let inputs: Vec<Vec<f64>> = (0..n_obs).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let outputs: Vec<f64> = (0..n_obs).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let state = PosteriorState::fit(Dataset::raw(inputs, outputs).expect("finite data"), params)
        .expect("well-conditioned random data");
    let grid: Vec<Vec<f64>> = (0..points).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let cov = state.posterior_cov(&grid, &grid);
    let cov = (&cov + cov.transpose()) * 0.5;
    let mean = grid.iter().map(|x| state.predict(x).0).collect();
    let weights = vec![1.0 / points as f64; points];
    let lambda = calibrate_lambda(confidence, &weights, &cov).lambda;
    TiltInstance {
        mean,
        cov,
        weights,
        lambda,
    }
}

// ---------------------------------------------------------------------------
// RKHS quantities

/// `f(x) = Σ α_i k(x, x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsFunction {
    pub centers: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
    pub kernel: KernelParams,
}

impl RkhsFunction {
    pub fn new(centers: Vec<Vec<f64>>, coeffs: Vec<f64>, kernel: KernelParams) -> Result<Self, TheoryError> {
        if centers.len() != coeffs.len() {
            return Err(TheoryError::Config(format!(
                "{} centers but {} coefficients",
                centers.len(),
                coeffs.len()
            )));
        }
        if centers.iter().any(|c| c.len() != kernel.dim()) {
            return Err(TheoryError::KernelMismatch);
        }
        Ok(Self { centers, coeffs, kernel })
    }

    pub fn zero(kernel: KernelParams) -> Self {
        Self {
            centers: Vec::new(),
            coeffs: Vec::new(),
            kernel,
        }
    }

    /// Random centres in `[0,1]^d`, standard normal coefficients, rescaled
    /// to RKHS norm `norm`.
    pub fn random<R: Rng>(kernel: KernelParams, n_centers: usize, norm: f64, rng: &mut R) -> Self {
        let d = kernel.dim();
        let centers = (0..n_centers).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let coeffs = (0..n_centers).map(|_| rng.sample(StandardNormal)).collect();
        let f = Self { centers, coeffs, kernel };
        let n = rkhs_norm(&f).expect("matern gram is PSD");
        f.scaled(norm / n)
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.coeffs)
            .map(|(c, a)| a * matern52(x, c, &self.kernel))
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            centers: self.centers.clone(),
            coeffs: self.coeffs.iter().map(|a| a * s).collect(),
            kernel: self.kernel.clone(),
        }
    }

    /// `self + s·other`, concatenating the expansions.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Result<Self, TheoryError> {
        self.check_kernel(other)?;
        let mut out = self.clone();
        out.centers.extend(other.centers.iter().cloned());
        out.coeffs.extend(other.coeffs.iter().map(|a| a * s));
        Ok(out)
    }

    /// `⟨self, other⟩ = αᵀ K β`.
    pub fn inner(&self, other: &Self) -> Result<f64, TheoryError> {
        self.check_kernel(other)?;
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Ok(0.0);
        }
        let k = gram(&self.centers, &other.centers, &self.kernel);
        let a = DVector::from_column_slice(&self.coeffs);
        let b = DVector::from_column_slice(&other.coeffs);
        Ok(a.dot(&(k * b)))
    }

    fn check_kernel(&self, other: &Self) -> Result<(), TheoryError> {
        if self.kernel != other.kernel {
            Err(TheoryError::KernelMismatch)
        } else {
            Ok(())
        }
    }
}

/// `√(αᵀKα)`.
pub fn rkhs_norm(f: &RkhsFunction) -> Result<f64, TheoryError> {
    let q = f.inner(f)?;
    if q < -1e-10 {
        return Err(TheoryError::PsdViolation(q));
    }
    Ok(q.max(0.0).sqrt())
}

/// RKHS cosine between `f − τ` and `g`.
pub fn alignment(f: &RkhsFunction, tau: &RkhsFunction, g: &RkhsFunction) -> Result<f64, TheoryError> {
    let r = f.add_scaled(tau, -1.0)?;
    let nr = rkhs_norm(&r)?;
    let ng = rkhs_norm(g)?;
    if nr < 1e-12 || ng < 1e-12 {
        return Err(TheoryError::UndefinedAlignment);
    }
    Ok((r.inner(g)? / (nr * ng)).clamp(-1.0, 1.0))
}

/// `½ log det(I + σ⁻² K)`.
pub fn info_gain(gram_k: &DMatrix<f64>, noise_var: f64) -> f64 {
    let n = gram_k.nrows();
    if n == 0 {
        return 0.0;
    }
    let m = DMatrix::identity(n, n) + gram_k / noise_var;
    match m.clone().cholesky() {
        Some(c) => c.l().diagonal().iter().map(|v| v.ln()).sum(),
        None => 0.5 * SymmetricEigen::new(m).eigenvalues.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum::<f64>(),
    }
}

/// `β = B² + 2R²(γ + 1 + ln(1/δ))`.
pub fn beta_schedule(b: f64, r: f64, gamma_prev: f64, delta: f64) -> f64 {
    b * b + 2.0 * r * r * (gamma_prev + 1.0 + (1.0 / delta).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    /// `B₀ + λ‖g‖`
    pub outer: f64,
    /// `B₀ √(1 − c²)`
    pub inner: f64,
    /// Whether `c > 0`, the premise under which `inner` bounds the residual.
    pub inner_valid: bool,
}

pub fn lifted_radii(b0: f64, lambda: f64, g_norm: f64, c: f64) -> Radii {
    Radii {
        outer: b0 + lambda * g_norm,
        inner: b0 * (1.0 - c * c).max(0.0).sqrt(),
        inner_valid: c > 0.0,
    }
}

/// Splits `h` into the part orthogonal to `g` in the RKHS metric.
pub fn orthogonal_to(h: &RkhsFunction, g: &RkhsFunction) -> Result<RkhsFunction, TheoryError> {
    let gg = g.inner(g)?;
    if gg <= 0.0 {
        return Err(TheoryError::UndefinedAlignment);
    }
    h.add_scaled(g, -h.inner(g)? / gg)
}

/// Objective, lift direction and lift scale for one regret run.
#[derive(Debug, Clone)]
pub struct RegretInstance {
    pub f: RkhsFunction,
    pub g: RkhsFunction,
    pub lambda: f64,
}

/// `f = c B₀ ĝ + √(1−c²) B₀ ĥ` with `ĥ ⟂ g`, and `λ = c B₀ / ‖g‖`, so that
/// `τ = λg` is the g-component of `f` and `‖f − τ‖ = B₀√(1−c²)`.
pub fn aligned_instance(kernel: &KernelParams, b0: f64, c: f64, n_centers: usize, seed: u64) -> RegretInstance {
    let mut rng = seeding::rng(seed, &[purpose::INSTANCE, 1]);
    let g = RkhsFunction::random(kernel.clone(), n_centers, 1.0, &mut rng);
    let h = RkhsFunction::random(kernel.clone(), n_centers, 1.0, &mut rng);
    let h = orthogonal_to(&h, &g).expect("random directions are independent");
    let hn = rkhs_norm(&h).expect("PSD");
    let g_norm = rkhs_norm(&g).expect("PSD");
    let f = g
        .scaled(c * b0 / g_norm)
        .add_scaled(&h, (1.0 - c * c).max(0.0).sqrt() * b0 / hn)
        .expect("shared kernel");
    RegretInstance {
        f,
        g,
        lambda: c * b0 / g_norm,
    }
}

/// `‖f‖ = B₀`, `g` pointing away from `f` (`⟨f, g⟩ ≤ 0`) and `λ‖g‖ = B₀/2`.
pub fn misaligned_instance(kernel: &KernelParams, b0: f64, n_centers: usize, seed: u64) -> RegretInstance {
    let mut rng = seeding::rng(seed, &[purpose::INSTANCE, 2]);
    let f = RkhsFunction::random(kernel.clone(), n_centers, b0, &mut rng);
    let mut g = RkhsFunction::random(kernel.clone(), n_centers, 1.0, &mut rng);
    if f.inner(&g).expect("shared kernel") > 0.0 {
        g = g.scaled(-1.0);
    }
    RegretInstance { f, g, lambda: 0.5 * b0 }
}

// ---------------------------------------------------------------------------
// Regret study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegretStudyConfig {
    pub b0: f64,
    /// Sub-Gaussian scale of the observation noise (Gaussian with this sd).
    pub r: f64,
    pub delta: f64,
    pub horizon: usize,
    pub lambda: f64,
    /// GP regression noise variance.
    pub noise_variance: f64,
    pub grid_size: usize,
}

impl Default for RegretStudyConfig {
    fn default() -> Self {
        Self {
            b0: 1.0,
            r: 0.1,
            delta: 0.05,
            horizon: 200,
            lambda: 0.0,
            noise_variance: 0.01,
            grid_size: 512,
        }
    }
}

impl RegretStudyConfig {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: &str| Err(TheoryError::Config(m.to_owned()));
        if !(self.b0 > 0.0) {
            return bad("B0 must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.r >= 0.0) || !(self.lambda >= 0.0) {
            return bad("R and lambda must be non-negative");
        }
        if !(self.noise_variance > 0.0) {
            return bad("noise variance must be positive");
        }
        if self.horizon == 0 || self.grid_size == 0 {
            return bad("horizon and grid size must be positive");
        }
        Ok(())
    }
}

/// Fixed candidate set in `[0,1]^d`: evenly spaced in 1-D, scrambled Sobol
/// otherwise.
pub fn candidate_grid(dim: usize, size: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        let den = (size.max(2) - 1) as f64;
        (0..size).map(|i| vec![i as f64 / den]).collect()
    } else {
        sobol_points(dim, size, seeding::derive(0, &[purpose::GRID]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub dim: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub b0: f64,
    pub f_norm: f64,
    pub g_norm: f64,
    /// `alignment(f, 0, g)`
    pub c: f64,
    pub residual_norm: f64,
    pub radii: Radii,
    /// `"inner"` when `‖f − τ‖ ≤ B_in` and `c > 0`, otherwise `"outer"`.
    pub radius_used: String,
    pub gamma_t: f64,
    /// `Σ_t ½ log(1 + s²_{t-1}(x_t)/σ²)`, equal to `gamma_t` by the chain rule.
    pub gamma_sequential: f64,
    pub beta_t: f64,
    pub cumulative_regret: f64,
    pub bound_outer: f64,
    pub bound_inner: Option<f64>,
    pub bound: f64,
    pub regret_ok: bool,
    pub width_sum: f64,
    pub width_bound: f64,
    pub width_ok: bool,
    pub chosen: Vec<usize>,
}

/// GP-UCB on the residual labels `y − τ(x)` with `τ = λg`, selecting
/// `argmax τ + μ' + √β s` over a fixed grid.
pub fn regret_study(
    config: &RegretStudyConfig,
    f_true: &RkhsFunction,
    lift_g: &RkhsFunction,
    seed: u64,
) -> Result<RegretReport, TheoryError> {
    config.validate()?;
    let f_norm = rkhs_norm(f_true)?;
    if f_norm > config.b0 * (1.0 + 1e-9) {
        return Err(TheoryError::Config(format!("‖f‖ = {f_norm} exceeds B0 = {}", config.b0)));
    }
    let kernel = &f_true.kernel;
    let g_norm = rkhs_norm(lift_g)?;
    let tau = lift_g.scaled(config.lambda);
    let residual_norm = rkhs_norm(&f_true.add_scaled(&tau, -1.0)?)?;
    let c = if g_norm > 0.0 && f_norm > 0.0 {
        alignment(f_true, &RkhsFunction::zero(kernel.clone()), lift_g)?
    } else {
        0.0
    };
    let radii = lifted_radii(config.b0, config.lambda, g_norm, c);
    let inner_applies = radii.inner_valid && residual_norm <= radii.inner + 1e-8 * config.b0.max(1.0);
    let radius = if inner_applies { radii.inner } else { radii.outer };

    let grid = candidate_grid(f_true.dim(), config.grid_size);
    let n = grid.len();
    let fv: Vec<f64> = grid.iter().map(|x| f_true.eval(x)).collect();
    let tv: Vec<f64> = grid.iter().map(|x| tau.eval(x)).collect();
    let f_best = fv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s2n = config.noise_variance;
    let mut rng = seeding::rng(seed, &[purpose::NOISE]);

    let mut mu = vec![0.0; n];
    let mut var = vec![kernel.signal_variance; n];
    let mut factors: Vec<Vec<f64>> = Vec::with_capacity(config.horizon);
    let mut chosen = Vec::with_capacity(config.horizon);
    let mut gamma = 0.0;
    let mut gamma_prev = 0.0;
    let mut regret = 0.0;
    let mut width_sum = 0.0;
    let mut scores = vec![0.0; n];
    for _ in 0..config.horizon {
        let beta = beta_schedule(radius, config.r, gamma, config.delta);
        let sb = beta.sqrt();
        for i in 0..n {
            scores[i] = tv[i] + mu[i] + sb * var[i].max(0.0).sqrt();
        }
        let idx = argmax(&scores);
        let s2 = var[idx].max(0.0);
        width_sum += s2.sqrt();
        gamma_prev = gamma;
        gamma += 0.5 * (1.0 + s2 / s2n).ln();
        let noise: f64 = rng.sample(StandardNormal);
        let y = fv[idx] + config.r * noise - tv[idx];
        let xi = &grid[idx];
        let denom = (s2 + s2n).sqrt();
        let u: Vec<f64> = (0..n)
            .map(|j| {
                let prior = matern52(&grid[j], xi, kernel);
                let down: f64 = factors.iter().map(|u| u[j] * u[idx]).sum();
                (prior - down) / denom
            })
            .collect();
        let innov = (y - mu[idx]) / denom;
        for j in 0..n {
            mu[j] += u[j] * innov;
            var[j] -= u[j] * u[j];
        }
        factors.push(u);
        chosen.push(idx);
        regret += f_best - fv[idx];
    }
    let pts: Vec<Vec<f64>> = chosen.iter().map(|&i| grid[i].clone()).collect();
    let gamma_t = info_gain(&gram(&pts, &pts, kernel), s2n);
    let t = config.horizon as f64;
    let beta_t = beta_schedule(radius, config.r, gamma_prev, config.delta);
    let bound_for = |b: f64| (8.0 * t * beta_schedule(b, config.r, gamma_prev, config.delta) * gamma_t).sqrt();
    let bound_outer = bound_for(radii.outer);
    let bound_inner = radii.inner_valid.then(|| bound_for(radii.inner));
    let bound = if inner_applies { bound_inner.unwrap_or(bound_outer) } else { bound_outer };
    let width_bound = (2.0 * t * gamma_t).sqrt();
    Ok(RegretReport {
        dim: f_true.dim(),
        horizon: config.horizon,
        lambda: config.lambda,
        b0: config.b0,
        f_norm,
        g_norm,
        c,
        residual_norm,
        radii,
        radius_used: if inner_applies { "inner" } else { "outer" }.to_owned(),
        gamma_t,
        gamma_sequential: gamma,
        beta_t,
        cumulative_regret: regret,
        bound_outer,
        bound_inner,
        bound,
        regret_ok: regret <= bound,
        width_sum,
        width_bound,
        width_ok: width_sum <= width_bound,
        chosen,
    })
}

/// Kernel used by the seeded regret instances.
pub fn study_kernel(dim: usize) -> KernelParams {
    KernelParams::isotropic(dim, 1.0, if dim == 1 { 0.1 } else { 0.2 }, 1e-6)
}

/// Alignment targets cycled over the aligned-construction runs.
pub const ALIGNED_TARGETS: [f64; 3] = [0.3, 0.6, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRun {
    pub instance: usize,
    pub kind: String,
    pub report: RegretReport,
}

/// `instances` seeded problems alternating 1-D and 2-D; each is run once
/// with a misaligned lift and once with the aligned construction.
pub fn regret_suite(config: &RegretStudyConfig, instances: usize, seed: u64) -> Result<Vec<SuiteRun>, TheoryError> {
    let jobs: Vec<(usize, bool)> = (0..instances).flat_map(|i| [(i, false), (i, true)]).collect();
    par::map_slice(&jobs, |&(i, aligned)| {
        let dim = 1 + i % 2;
        let kernel = study_kernel(dim);
        let s = seeding::derive(seed, &[i as u64]);
        let inst = if aligned {
            aligned_instance(&kernel, config.b0, ALIGNED_TARGETS[i % ALIGNED_TARGETS.len()], 12, s)
        } else {
            misaligned_instance(&kernel, config.b0, 12, s)
        };
        let cfg = RegretStudyConfig {
            lambda: inst.lambda,
            ..config.clone()
        };
        regret_study(&cfg, &inst.f, &inst.g, s).map(|report| SuiteRun {
            instance: i,
            kind: if aligned { "aligned" } else { "misaligned" }.to_owned(),
            report,
        })
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub values: BTreeMap<String, f64>,
    pub tolerance: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, values: &[(&str, f64)], tolerance: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            values: values.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect(),
            tolerance: tolerance.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Tilt,
    Radii,
    Regret,
    All,
}

impl std::str::FromStr for CheckKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tilt" => Ok(Self::Tilt),
            "radii" => Ok(Self::Radii),
            "regret" => Ok(Self::Regret),
            "all" => Ok(Self::All),
            other => Err(format!("unknown check {other:?}; expected tilt, radii, regret or all")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub const TILT_GRIDS: usize = 20;
pub const TILT_SAMPLES: usize = 2_000_000;

/// Tilt-equals-shift on random 5-point grids at `c = 0.5`.
pub fn verify_tilt(seed: u64, grids: usize, samples: usize) -> Vec<Check> {
    (0..grids)
        .map(|g| {
            let s = seeding::derive(seed, &[g as u64]);
            let inst = tilt_instance(s, 5, 0.5);
            let name = format!("tilt/grid{g}");
            match mc_tilt_verify(&inst.mean, &inst.cov, &inst.weights, inst.lambda, samples, s) {
                Ok(t) => {
                    let delta_z = (t.delta_empirical - t.delta_analytic).abs() / t.delta_se;
                    let pass = t.max_z <= 3.0 && t.mean_rel_err < 0.02 && t.cov_rel_err < 0.02 && delta_z <= 3.0;
                    Check::new(
                        name,
                        pass,
                        &[
                            ("lambda", inst.lambda),
                            ("max_abs_err", t.max_abs_err),
                            ("max_z", t.max_z),
                            ("mean_rel_err", t.mean_rel_err),
                            ("cov_rel_err", t.cov_rel_err),
                            ("delta_empirical", t.delta_empirical),
                            ("delta_analytic", t.delta_analytic),
                            ("delta_z", delta_z),
                            ("ess", t.ess),
                        ],
                        "max_z <= 3, delta_z <= 3, mean_rel_err < 0.02, cov_rel_err < 0.02",
                    )
                }
                Err(e) => Check::new(format!("{name}: {e}"), false, &[], "no error"),
            }
        })
        .collect()
}

/// Residual-norm identity of the aligned construction and the closed-form
/// radii.
pub fn verify_radii(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    for (i, &c) in [0.1, 0.3, 0.6, 0.9, 0.99].iter().enumerate() {
        for dim in [1, 2] {
            let b0 = 1.0 + i as f64 * 0.5;
            let kernel = study_kernel(dim);
            let inst = aligned_instance(&kernel, b0, c, 10, seeding::derive(seed, &[i as u64, dim as u64]));
            let tau = inst.g.scaled(inst.lambda);
            let res = rkhs_norm(&inst.f.add_scaled(&tau, -1.0).expect("shared kernel")).expect("PSD");
            let want = lifted_radii(b0, inst.lambda, rkhs_norm(&inst.g).expect("PSD"), c).inner;
            let got_c = alignment(&inst.f, &RkhsFunction::zero(kernel), &inst.g).expect("nonzero");
            let f_norm = rkhs_norm(&inst.f).expect("PSD");
            let pass = (res - want).abs() <= 1e-8 && (got_c - c).abs() <= 1e-8 && (f_norm - b0).abs() <= 1e-8;
            out.push(Check::new(
                format!("radii/aligned_c{c}_d{dim}"),
                pass,
                &[("residual_norm", res), ("b_in", want), ("alignment", got_c), ("f_norm", f_norm)],
                "|‖f−τ‖ − B0√(1−c²)| <= 1e-8, |c − target| <= 1e-8, |‖f‖ − B0| <= 1e-8",
            ));
        }
    }
    let r = lifted_radii(1.0, 0.5, 2.0, 0.6);
    out.push(Check::new(
        "radii/closed_form",
        (r.outer - 2.0).abs() < 1e-12 && (r.inner - 0.8).abs() < 1e-12 && r.inner_valid,
        &[("b_out", r.outer), ("b_in", r.inner)],
        "B_out = 2, B_in = 0.8 to 1e-12",
    ));
    out
}

pub const REGRET_INSTANCES: usize = 20;

pub fn verify_regret(seed: u64, instances: usize) -> Vec<Check> {
    match regret_suite(&RegretStudyConfig::default(), instances, seed) {
        Ok(runs) => runs
            .into_iter()
            .map(|run| {
                let r = &run.report;
                Check::new(
                    format!("regret/{}{}_d{}", run.kind, run.instance, r.dim),
                    r.regret_ok && r.width_ok && (run.kind == "misaligned" || r.radius_used == "inner"),
                    &[
                        ("c", r.c),
                        ("lambda", r.lambda),
                        ("cumulative_regret", r.cumulative_regret),
                        ("bound", r.bound),
                        ("gamma_t", r.gamma_t),
                        ("width_sum", r.width_sum),
                        ("width_bound", r.width_bound),
                    ],
                    format!("R_T <= sqrt(8 T beta_T({}) gamma_T); width_sum <= sqrt(2 T gamma_T)", r.radius_used),
                )
            })
            .collect(),
        Err(e) => vec![Check::new(format!("regret: {e}"), false, &[], "no error")],
    }
}

pub fn verify(kind: CheckKind, seed: u64) -> VerifyReport {
    let mut checks = Vec::new();
    if matches!(kind, CheckKind::Tilt | CheckKind::All) {
        checks.extend(verify_tilt(seed, TILT_GRIDS, TILT_SAMPLES));
    }
    if matches!(kind, CheckKind::Radii | CheckKind::All) {
        checks.extend(verify_radii(seed));
    }
    if matches!(kind, CheckKind::Regret | CheckKind::All) {
        checks.extend(verify_regret(seed, REGRET_INSTANCES));
    }
    let passed = checks.iter().all(|c| c.pass);
    VerifyReport { seed, checks, passed }
}
