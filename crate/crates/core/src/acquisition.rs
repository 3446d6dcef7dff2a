//! Acquisition functions and the candidate-then-pattern-search maximizer.
//!
//! Maximization convention throughout. The maximizer scores a block of
//! scrambled-Sobol candidates (in parallel when the `parallel` feature is
//! on), then refines the best few with a shrinking coordinate pattern
//! search. The reduction breaks ties by lowest candidate index, so results
//! do not depend on evaluation order.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::PosteriorState;
use crate::lift::LiftSpec;
use crate::par;
use crate::seeding;
use crate::space::sobol_points;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("log-EI requires a positive standard deviation, got {0}")]
    Domain(f64),
}

/// Anything that yields a Gaussian predictive distribution.
pub trait Surrogate: Sync {
    /// `(mean, variance)` at `x`.
    fn predict(&self, x: &[f64]) -> (f64, f64);
}

/// Posterior plus an optional mean shift.
pub struct LiftedSurrogate<'a> {
    pub state: &'a PosteriorState,
    pub lift: Option<&'a LiftSpec>,
}

impl<'a> LiftedSurrogate<'a> {
    pub fn new(state: &'a PosteriorState, lift: Option<&'a LiftSpec>) -> Self {
        Self { state, lift }
    }
}

impl Surrogate for LiftedSurrogate<'_> {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.state.predict(x);
        match self.lift {
            Some(l) => (m + l.shift(self.state, x), v),
            None => (m, v),
        }
    }
}

impl Surrogate for PosteriorState {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        PosteriorState::predict(self, x)
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let diff = mean - best;
    if std <= 0.0 {
        return diff.max(0.0);
    }
    let z = diff / std;
    (diff * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

/// `1 - x R(x)` for `x >= 3`, with `R` the Mills ratio, via the continued
/// fraction `R(x) = 1 / (x + T)`, `T = 1 / (x + 2 / (x + 3 / (x + ...)))`,
/// so that `1 - x R = T / (x + T)` without cancellation.
fn one_minus_x_mills(x: f64) -> f64 {
    let mut t = 0.0;
    for k in (1..=200).rev() {
        t = k as f64 / (x + t);
    }
    t / (x + t)
}

/// `ln(z Φ(z) + φ(z))`
fn log_h(z: f64) -> f64 {
    if z > -3.0 {
        (z * normal_cdf(z) + normal_pdf(z)).ln()
    } else {
        -0.5 * z * z - LN_SQRT_2PI + one_minus_x_mills(-z).ln()
    }
}

/// Numerically stable `ln EI`.
pub fn log_expected_improvement(mean: f64, std: f64, best: f64) -> Result<f64, AcquisitionError> {
    if std.is_nan() || std <= 0.0 {
        return Err(AcquisitionError::Domain(std));
    }
    Ok(std.ln() + log_h((mean - best) / std))
}

pub fn ucb(mean: f64, std: f64, beta: f64) -> f64 {
    mean + beta.sqrt() * std
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Ei,
    LogEi,
    Ucb,
}

impl std::str::FromStr for AcquisitionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ei" => Ok(Self::Ei),
            "log_ei" | "logei" | "log-ei" => Ok(Self::LogEi),
            "ucb" => Ok(Self::Ucb),
            other => Err(format!("unknown acquisition `{other}` (expected ei, log_ei or ucb)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    pub ucb_beta: f64,
    pub candidate_count: usize,
    pub refine_steps: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::LogEi,
            ucb_beta: 4.0,
            candidate_count: 4096,
            refine_steps: 32,
            seed: 0,
        }
    }
}

/// Initial pattern-search step, as a fraction of the unit box.
pub const PATTERN_STEP: f64 = 0.05;
/// Number of top candidates refined by pattern search.
pub const REFINE_STARTS: usize = 5;

impl AcquisitionConfig {
    /// Scores `(mean, variance)` under this acquisition. `best` is the
    /// incumbent on the surrogate's scale.
    pub fn score(&self, mean: f64, variance: f64, best: f64) -> f64 {
        let std = variance.max(0.0).sqrt();
        match self.kind {
            AcquisitionKind::Ei => expected_improvement(mean, std, best),
            AcquisitionKind::LogEi => log_expected_improvement(mean, std, best).unwrap_or(f64::NEG_INFINITY),
            AcquisitionKind::Ucb => ucb(mean, std, self.ucb_beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximized {
    pub best: Scored,
    /// Refined points followed by raw candidates, best first. Used by callers
    /// that need a fallback when the winner is unusable.
    pub ranked: Vec<Scored>,
    pub candidates_best: f64,
}

/// Maximizes the acquisition of `surrogate` over `[0, 1]^dim`.
pub fn maximize<S: Surrogate + ?Sized>(surrogate: &S, dim: usize, best: f64, config: &AcquisitionConfig) -> Maximized {
    assert!(config.candidate_count >= 1, "candidate_count must be >= 1");
    let score = |x: &[f64]| {
        let (m, v) = surrogate.predict(x);
        let s = config.score(m, v, best);
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    };
    let cands = sobol_points(dim, config.candidate_count, seeding::derive(config.seed, &[seeding::purpose::ACQ]));
    let values = par::map_slice(&cands, |x| score(x));

    // stable order: value desc, index asc
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let starts: Vec<usize> = order.iter().copied().take(REFINE_STARTS).collect();
    let refined = par::map_slice(&starts, |&i| pattern_search(&score, cands[i].clone(), values[i], config.refine_steps));

    let candidates_best = values[order[0]];
    let mut ranked: Vec<Scored> = refined;
    // stable sort keeps the start order on ties, i.e. lowest candidate rank
    ranked.sort_by(|a, b| b.value.total_cmp(&a.value));
    ranked.extend(order.iter().map(|&i| Scored {
        x: cands[i].clone(),
        value: values[i],
    }));
    Maximized {
        best: ranked[0].clone(),
        ranked,
        candidates_best,
    }
}

/// Coordinate pattern search; only strict improvements are accepted.
fn pattern_search<F: Fn(&[f64]) -> f64>(f: &F, mut x: Vec<f64>, mut fx: f64, steps: usize) -> Scored {
    let mut step = PATTERN_STEP;
    for _ in 0..steps {
        let mut improved = false;
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                let old = x[j];
                let moved = (old + dir * step).clamp(0.0, 1.0);
                if moved == old {
                    continue;
                }
                x[j] = moved;
                let v = f(&x);
                if v > fx {
                    fx = v;
                    improved = true;
                    break;
                }
                x[j] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Scored { x, value: fx }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Dataset, KernelParams};

    struct Quadratic {
        peak: f64,
    }

    impl Surrogate for Quadratic {
        fn predict(&self, x: &[f64]) -> (f64, f64) {
            (-(x[0] - self.peak).powi(2), 0.0)
        }
    }

    /// Simpson quadrature of E[max(Y - best, 0)], Y ~ N(mean, std²).
    fn ei_quadrature(mean: f64, std: f64, best: f64) -> f64 {
        let (a, b) = (best, mean + 12.0 * std);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |y: f64| (y - best) * normal_pdf((y - mean) / std) / std;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn ei_reference_values() {
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 1.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.0);
        assert!((expected_improvement(1.0, 1.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let q = ei_quadrature(0.0, 0.5, 1.0);
        assert!((expected_improvement(0.0, 0.5, 1.0) - q).abs() < 1e-6, "{q}");
    }

    #[test]
    fn log_ei_matches_and_is_finite() {
        assert!((log_expected_improvement(1.0, 1.0, 1.0).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-12);
        for i in 0..400 {
            let z = -30.0 + i as f64 * 0.1;
            let l = log_expected_improvement(z, 1.0, 0.0).unwrap();
            assert!(l.is_finite(), "z={z}");
            let ei = expected_improvement(z, 1.0, 0.0);
            if ei > 1e-300 && z > -25.0 {
                assert!((l - ei.ln()).abs() <= 1e-8 * l.abs().max(1.0), "z={z}: {l} vs {}", ei.ln());
            }
        }
        assert!(matches!(log_expected_improvement(0.0, 0.0, 0.0), Err(AcquisitionError::Domain(_))));
    }

    #[test]
    fn log_ei_deep_tail_matches_asymptotics() {
        // 1 - xR(x) = 1/x² - 3/x⁴ + 15/x⁶ - 105/x⁸ + 945/x¹⁰ - ...
        let x: f64 = 20.0;
        let series = 1.0 / x.powi(2) - 3.0 / x.powi(4) + 15.0 / x.powi(6) - 105.0 / x.powi(8) + 945.0 / x.powi(10);
        let expected = -0.5 * x * x - LN_SQRT_2PI + series.ln();
        let got = log_expected_improvement(-20.0, 1.0, 0.0).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-4);
    }

    #[test]
    fn log_ei_monotone_in_mean() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..500 {
            let m = -10.0 + i as f64 * 0.03;
            let l = log_expected_improvement(m, 0.7, 1.0).unwrap();
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn ucb_values() {
        assert_eq!(ucb(1.0, 0.5, 4.0), 2.0);
        assert_eq!(ucb(1.3, 0.0, 9.0), 1.3);
    }

    #[test]
    fn ucb_argmax_matches_scan() {
        let pts: Vec<(Vec<f64>, f64, f64)> = (0..50)
            .map(|i| {
                let t = i as f64 / 49.0;
                (vec![t], (6.0 * t).sin(), 0.1 + 0.2 * (3.0 * t).cos().abs())
            })
            .collect();
        let beta = 2.5;
        let brute = pts
            .iter()
            .enumerate()
            .max_by(|a, b| ucb(a.1 .1, a.1 .2, beta).total_cmp(&ucb(b.1 .1, b.1 .2, beta)))
            .unwrap()
            .0;
        let scores: Vec<f64> = pts.iter().map(|(_, m, s)| ucb(*m, *s, beta)).collect();
        let mut idx = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[idx] {
                idx = i;
            }
        }
        assert_eq!(idx, brute);
    }

    #[test]
    fn prior_surrogate_returns_candidate_zero() {
        let state = PosteriorState::fit(Dataset::empty(), KernelParams::isotropic(2, 1.0, 0.3, 1e-3)).unwrap();
        let cfg = AcquisitionConfig {
            kind: AcquisitionKind::Ucb,
            candidate_count: 64,
            seed: 5,
            ..Default::default()
        };
        let out = maximize(&state, 2, 0.0, &cfg);
        let cands = sobol_points(2, 64, seeding::derive(5, &[seeding::purpose::ACQ]));
        assert_eq!(out.best.x, cands[0]);
    }

    #[test]
    fn quadratic_argmax() {
        let cfg = AcquisitionConfig {
            kind: AcquisitionKind::Ucb,
            candidate_count: 256,
            ..Default::default()
        };
        let out = maximize(&Quadratic { peak: 0.3141 }, 1, 0.0, &cfg);
        assert!((out.best.x[0] - 0.3141).abs() < 1e-3);
        assert!(out.best.value >= out.candidates_best);
        assert!(out.ranked.iter().skip(REFINE_STARTS).all(|s| s.value <= out.best.value));
    }

    #[test]
    fn maximize_is_pure() {
        let state = PosteriorState::fit(
            Dataset::standardized(vec![vec![0.2, 0.3], vec![0.8, 0.5], vec![0.4, 0.9]], &[1.0, 0.2, -0.3]).unwrap(),
            KernelParams::isotropic(2, 1.0, 0.3, 1e-4),
        )
        .unwrap();
        let cfg = AcquisitionConfig {
            candidate_count: 512,
            ..Default::default()
        };
        let a = maximize(&state, 2, 1.0, &cfg);
        let b = maximize(&state, 2, 1.0, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn ei_non_negative() {
        for i in 0..100 {
            let m = -5.0 + 0.1 * i as f64;
            assert!(expected_improvement(m, 0.3, 0.0) >= 0.0);
            assert!(expected_improvement(m, 0.0, 5.0) == 0.0);
        }
    }
}
