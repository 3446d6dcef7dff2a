//! Region-lifted preferences.
//!
//! A directive (point or region with confidence `c`) is discretized into a
//! grid `G` with non-negative weights `a`. Tilting the GP by
//! `exp(λ aᵀ F_G)` keeps the covariance and shifts the mean by
//! `λ Σ_g a_g cov(x, x_g)`, so the lifted surrogate is an ordinary GP
//! whose mean is offset. `λ = c / sqrt(aᵀ Σ_GG a)` puts the shift of the
//! regional average at `c` posterior standard deviations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{gram, PosteriorState};
use crate::seeding;
use crate::space::{sobol_points, SearchSpace, SpaceError, Value, VariableKind};

pub const DEFAULT_GRID_SIZE: usize = 64;
/// Floor on `aᵀ Σ_GG a` below which λ is capped.
pub const REGIONAL_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("directive rejected: region does not intersect the search box in `{variable}`")]
    EmptyRegion { variable: String },
    #[error("directive rejected: {0}")]
    Invalid(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectiveMode {
    Point,
    Region,
}

/// A parsed preference in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDirective {
    pub mode: DirectiveMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<(Vec<Value>, Vec<Value>)>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub thinking: String,
}

impl PreferenceDirective {
    pub fn point(point: Vec<Value>, confidence: f64) -> Self {
        Self {
            mode: DirectiveMode::Point,
            point: Some(point),
            region: None,
            confidence,
            thinking: String::new(),
        }
    }

    pub fn region(lower: Vec<Value>, upper: Vec<Value>, confidence: f64) -> Self {
        Self {
            mode: DirectiveMode::Region,
            point: None,
            region: Some((lower, upper)),
            confidence,
            thinking: String::new(),
        }
    }

    pub fn with_thinking(mut self, thinking: impl Into<String>) -> Self {
        self.thinking = thinking.into();
        self
    }
}

/// A directive expressed in encoded unit-cube coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitDirective {
    Point { center: Vec<f64>, confidence: f64 },
    Region { lower: Vec<f64>, upper: Vec<f64>, confidence: f64 },
}

impl UnitDirective {
    pub fn confidence(&self) -> f64 {
        match self {
            UnitDirective::Point { confidence, .. } | UnitDirective::Region { confidence, .. } => *confidence,
        }
    }
}

/// Maps a physical directive into the encoded cube, intersecting regions
/// with the box and clamping points into it.
pub fn to_unit(directive: &PreferenceDirective, space: &SearchSpace) -> Result<UnitDirective, LiftError> {
    let c = directive.confidence;
    if !(0.0..=1.0).contains(&c) {
        return Err(LiftError::Invalid(format!("confidence {c} outside [0, 1]")));
    }
    let dim = space.dim();
    let enc = space.encoded_dim();
    match directive.mode {
        DirectiveMode::Point => {
            let p = directive
                .point
                .as_ref()
                .ok_or_else(|| LiftError::Invalid("point mode without a point".into()))?;
            check_arity(p.len(), dim)?;
            let mut center = vec![0.0; enc];
            for (i, (var, block)) in space.variables().iter().zip(space.blocks()).enumerate() {
                match var.kind {
                    VariableKind::Categorical => {
                        let idx = space.category_index(var, &p[i])?;
                        center[block.start + idx] = 1.0;
                    }
                    _ => {
                        let v = numeric(&p[i], &var.name)?;
                        center[block.start] = space.normalize_relaxed(i, v)?.clamp(0.0, 1.0);
                    }
                }
            }
            Ok(UnitDirective::Point { center, confidence: c })
        }
        DirectiveMode::Region => {
            let (lb, ub) = directive
                .region
                .as_ref()
                .ok_or_else(|| LiftError::Invalid("region mode without bounds".into()))?;
            check_arity(lb.len(), dim)?;
            check_arity(ub.len(), dim)?;
            let mut lower = vec![0.0; enc];
            let mut upper = vec![0.0; enc];
            for (i, (var, block)) in space.variables().iter().zip(space.blocks()).enumerate() {
                match var.kind {
                    VariableKind::Categorical => {
                        if lb[i] != ub[i] {
                            return Err(LiftError::Invalid(format!(
                                "categorical `{}` must use lb = ub",
                                var.name
                            )));
                        }
                        let idx = space.category_index(var, &lb[i])?;
                        lower[block.start + idx] = 1.0;
                        upper[block.start + idx] = 1.0;
                    }
                    _ => {
                        let l = numeric(&lb[i], &var.name)?;
                        let u = numeric(&ub[i], &var.name)?;
                        if l > u {
                            return Err(LiftError::Invalid(format!("lb > ub for `{}`", var.name)));
                        }
                        let lo = space.normalize_relaxed(i, l)?.max(0.0);
                        let hi = space.normalize_relaxed(i, u)?.min(1.0);
                        if lo > hi {
                            return Err(LiftError::EmptyRegion {
                                variable: var.name.clone(),
                            });
                        }
                        lower[block.start] = lo;
                        upper[block.start] = hi;
                    }
                }
            }
            Ok(UnitDirective::Region {
                lower,
                upper,
                confidence: c,
            })
        }
    }
}

fn check_arity(got: usize, expected: usize) -> Result<(), LiftError> {
    if got != expected {
        return Err(LiftError::Invalid(format!("expected {expected} coordinates, got {got}")));
    }
    Ok(())
}

fn numeric(v: &Value, name: &str) -> Result<f64, LiftError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| LiftError::Invalid(format!("`{name}` expects a number, got `{v}`")))
}

/// Point-mode neighbourhood half-width / kernel bandwidth.
pub fn point_bandwidth(encoded_dim: usize) -> f64 {
    0.1 * (encoded_dim as f64).sqrt()
}

/// Scrambled-Sobol discretization of the directive. Categorical blocks are
/// held at the directive's one-hot value.
pub fn build_grid(directive: &UnitDirective, space: &SearchSpace, size: usize, seed: u64) -> Vec<Vec<f64>> {
    let enc = space.encoded_dim();
    let u = sobol_points(enc, size, seeding::derive(seed, &[seeding::purpose::GRID]));
    let fixed = categorical_mask(space);
    match directive {
        UnitDirective::Region { lower, upper, .. } => u
            .into_iter()
            .map(|s| {
                (0..enc)
                    .map(|j| if fixed[j] { lower[j] } else { lower[j] + s[j] * (upper[j] - lower[j]) })
                    .collect()
            })
            .collect(),
        UnitDirective::Point { center, .. } => {
            let h = point_bandwidth(enc);
            u.into_iter()
                .map(|s| {
                    (0..enc)
                        .map(|j| {
                            if fixed[j] {
                                center[j]
                            } else {
                                (center[j] + (2.0 * s[j] - 1.0) * h).clamp(0.0, 1.0)
                            }
                        })
                        .collect()
                })
                .collect()
        }
    }
}

fn categorical_mask(space: &SearchSpace) -> Vec<bool> {
    let mut mask = vec![false; space.encoded_dim()];
    for b in space.blocks() {
        if b.kind == VariableKind::Categorical {
            mask[b.start..b.start + b.len].iter_mut().for_each(|m| *m = true);
        }
    }
    mask
}

/// Region: uniform `1/G`. Point: Gaussian decay `exp(-‖x_g - x_p‖² / 2h²)`
/// normalized to sum to one.
pub fn build_weights(directive: &UnitDirective, grid: &[Vec<f64>], bandwidth: f64) -> Vec<f64> {
    assert!(!grid.is_empty(), "grid must be non-empty");
    let g = grid.len() as f64;
    match directive {
        UnitDirective::Region { .. } => vec![1.0 / g; grid.len()],
        UnitDirective::Point { center, .. } => {
            let raw = gaussian_weights(center, grid, bandwidth);
            let total: f64 = raw.iter().sum();
            if total > 0.0 && total.is_finite() {
                raw.iter().map(|w| w / total).collect()
            } else {
                vec![1.0 / g; grid.len()]
            }
        }
    }
}

/// Unnormalized point-mode weights.
pub fn gaussian_weights(center: &[f64], grid: &[Vec<f64>], bandwidth: f64) -> Vec<f64> {
    grid.iter()
        .map(|x| {
            let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * bandwidth * bandwidth)).exp()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    /// `aᵀ Σ_GG a`
    pub regional_variance: f64,
    pub low_variance: bool,
}

/// `λ = c / sqrt(aᵀ Σ a)`, capped at `c / sqrt(floor)` for near-zero
/// regional variance.
pub fn calibrate_lambda(confidence: f64, weights: &[f64], sigma_gg: &DMatrix<f64>) -> Calibration {
    let a = DVector::from_column_slice(weights);
    let var = a.dot(&(sigma_gg * &a));
    if confidence == 0.0 {
        return Calibration {
            lambda: 0.0,
            regional_variance: var,
            low_variance: var < REGIONAL_VARIANCE_FLOOR,
        };
    }
    if var < REGIONAL_VARIANCE_FLOOR {
        Calibration {
            lambda: confidence / REGIONAL_VARIANCE_FLOOR.sqrt(),
            regional_variance: var,
            low_variance: true,
        }
    } else {
        Calibration {
            lambda: confidence / var.sqrt(),
            regional_variance: var,
            low_variance: false,
        }
    }
}

/// Calibrated lift against a specific posterior.
#[derive(Debug, Clone)]
pub struct LiftSpec {
    pub grid: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub sigma_gg: DMatrix<f64>,
    pub calibration: Calibration,
    pub prior_kernel: bool,
    /// `(K + σ²I)^{-1} K_XG a`, empty for the prior-kernel variant.
    correction: DVector<f64>,
}

impl LiftSpec {
    /// Builds grid and weights for `directive` and calibrates λ against
    /// `state`. With `prior_kernel` the shift and calibration use the prior
    /// kernel instead of the posterior covariance.
    pub fn build(
        state: &PosteriorState,
        directive: &UnitDirective,
        space: &SearchSpace,
        grid_size: usize,
        seed: u64,
        prior_kernel: bool,
    ) -> Self {
        let grid = build_grid(directive, space, grid_size, seed);
        let weights = build_weights(directive, &grid, point_bandwidth(space.encoded_dim()));
        Self::from_parts(state, grid, weights, directive.confidence(), prior_kernel)
    }

    pub fn from_parts(
        state: &PosteriorState,
        grid: Vec<Vec<f64>>,
        weights: Vec<f64>,
        confidence: f64,
        prior_kernel: bool,
    ) -> Self {
        let sigma_gg = if prior_kernel {
            gram(&grid, &grid, &state.params)
        } else {
            state.posterior_cov(&grid, &grid)
        };
        let calibration = calibrate_lambda(confidence, &weights, &sigma_gg);
        let mut spec = Self::with_lambda(state, grid, weights, calibration.lambda, prior_kernel);
        spec.sigma_gg = sigma_gg;
        spec.calibration = calibration;
        spec
    }

    /// Lift with an explicit λ (no calibration).
    pub fn with_lambda(
        state: &PosteriorState,
        grid: Vec<Vec<f64>>,
        weights: Vec<f64>,
        lambda: f64,
        prior_kernel: bool,
    ) -> Self {
        let correction = if prior_kernel || state.is_empty() {
            DVector::zeros(0)
        } else {
            let kxg = gram(&state.dataset.inputs, &grid, &state.params);
            let a = DVector::from_column_slice(&weights);
            state.solve(&(kxg * a))
        };
        let sigma_gg = if prior_kernel {
            gram(&grid, &grid, &state.params)
        } else {
            state.posterior_cov(&grid, &grid)
        };
        let a = DVector::from_column_slice(&weights);
        let var = a.dot(&(&sigma_gg * &a));
        Self {
            grid,
            weights,
            lambda,
            calibration: Calibration {
                lambda,
                regional_variance: var,
                low_variance: var < REGIONAL_VARIANCE_FLOOR,
            },
            sigma_gg,
            prior_kernel,
            correction,
        }
    }

    /// Unscaled shift direction `Σ_g a_g cov(x, x_g)`.
    pub fn direction(&self, state: &PosteriorState, x: &[f64]) -> f64 {
        let prior: f64 = self
            .grid
            .iter()
            .zip(&self.weights)
            .map(|(g, a)| a * state.kernel(x, g))
            .sum();
        if self.correction.is_empty() {
            prior
        } else {
            prior - state.cross(x).dot(&self.correction)
        }
    }

    pub fn shift(&self, state: &PosteriorState, x: &[f64]) -> f64 {
        self.lambda * self.direction(state, x)
    }

    /// `Δ = λ aᵀ Σ_GG a`
    pub fn expected_regional_lift(&self) -> f64 {
        self.lambda * self.calibration.regional_variance
    }
}

/// Mean of the lifted surrogate.
pub fn lifted_mean(state: &PosteriorState, lift: &LiftSpec, x: &[f64]) -> f64 {
    state.predict(x).0 + lift.shift(state, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Dataset, KernelParams};
    use crate::space::VariableSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_space(d: usize) -> SearchSpace {
        SearchSpace::new((0..d).map(|i| VariableSpec::continuous(&format!("x{i}"), 0.0, 1.0)).collect()).unwrap()
    }

    fn fitted(d: usize, n: usize, seed: u64) -> PosteriorState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|p| (4.0 * p[0]).cos()).collect();
        PosteriorState::fit(
            Dataset::standardized(x, &y).unwrap(),
            KernelParams::isotropic(d, 1.0, 0.3, 1e-4),
        )
        .unwrap()
    }

    #[test]
    fn region_grid_contracts() {
        let space = unit_space(2);
        let whole = UnitDirective::Region {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            confidence: 0.5,
        };
        let g = build_grid(&whole, &space, 64, 3);
        assert_eq!(g.len(), 64);
        assert!(g.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(g, build_grid(&whole, &space, 64, 3));
        let degenerate = UnitDirective::Region {
            lower: vec![0.3, 0.6],
            upper: vec![0.3, 0.6],
            confidence: 0.5,
        };
        assert!(build_grid(&degenerate, &space, 16, 1).iter().all(|p| p == &vec![0.3, 0.6]));
    }

    #[test]
    fn region_half_outside_box_is_intersected() {
        let space = SearchSpace::new(vec![
            VariableSpec::continuous("a", 0.0, 10.0),
            VariableSpec::continuous("b", -1.0, 1.0),
        ])
        .unwrap();
        let d = PreferenceDirective::region(vec![5.0.into(), (-3.0).into()], vec![15.0.into(), 0.0.into()], 0.7);
        let u = to_unit(&d, &space).unwrap();
        let g = build_grid(&u, &space, 64, 9);
        for p in &g {
            let phys = space.denormalize(p);
            let a = phys[0].as_f64().unwrap();
            let b = phys[1].as_f64().unwrap();
            assert!((5.0..=10.0).contains(&a) && (-1.0..=0.0).contains(&b), "{a} {b}");
        }
        let outside = PreferenceDirective::region(vec![11.0.into(), 0.0.into()], vec![12.0.into(), 0.5.into()], 0.7);
        assert!(matches!(to_unit(&outside, &space), Err(LiftError::EmptyRegion { .. })));
    }

    #[test]
    fn categorical_region_needs_equal_bounds() {
        let space = SearchSpace::new(vec![
            VariableSpec::categorical("s", &["A", "B"]),
            VariableSpec::continuous("x", 0.0, 1.0),
        ])
        .unwrap();
        let ok = PreferenceDirective::region(vec!["B".into(), 0.2.into()], vec!["B".into(), 0.4.into()], 0.5);
        let u = to_unit(&ok, &space).unwrap();
        let g = build_grid(&u, &space, 8, 0);
        assert!(g.iter().all(|p| p[0] == 0.0 && p[1] == 1.0));
        let bad = PreferenceDirective::region(vec!["A".into(), 0.2.into()], vec!["B".into(), 0.4.into()], 0.5);
        assert!(to_unit(&bad, &space).is_err());
    }

    #[test]
    fn weight_rules() {
        let region = UnitDirective::Region {
            lower: vec![0.0],
            upper: vec![1.0],
            confidence: 1.0,
        };
        let grid = vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4]];
        assert_eq!(build_weights(&region, &grid, 0.1), vec![0.25; 4]);
        let point = UnitDirective::Point {
            center: vec![0.5, 0.5],
            confidence: 1.0,
        };
        let ring = vec![vec![0.6, 0.5], vec![0.4, 0.5], vec![0.5, 0.6], vec![0.5, 0.4]];
        let w = build_weights(&point, &ring, 0.1);
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let h = 0.1;
        let raw = gaussian_weights(&[0.0], &[vec![h], vec![2.0 * h]], h);
        assert!((raw[0] / raw[1] - (-0.5f64).exp() / (-2.0f64).exp()).abs() < 1e-12);
        let norm = build_weights(&UnitDirective::Point { center: vec![0.0], confidence: 1.0 }, &[vec![h], vec![2.0 * h]], h);
        assert!((norm.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_rules() {
        let sigma = DMatrix::from_element(1, 1, 4.0);
        assert_eq!(calibrate_lambda(0.0, &[1.0], &sigma).lambda, 0.0);
        assert_eq!(calibrate_lambda(0.5, &[1.0], &sigma).lambda, 0.25);
        let tiny = DMatrix::from_element(1, 1, 1e-20);
        let cap = calibrate_lambda(0.5, &[1.0], &tiny);
        assert!(cap.low_variance);
        assert!((cap.lambda - 0.5 / 1e-6).abs() < 1e-6);
    }

    #[test]
    fn expected_lift_formula() {
        let state = fitted(1, 0, 1);
        let mut spec = LiftSpec::with_lambda(&state, vec![vec![0.5]], vec![1.0], 1.0, false);
        spec.calibration.regional_variance = 2.0;
        assert_eq!(spec.expected_regional_lift(), 2.0);
        spec.lambda = 0.0;
        assert_eq!(spec.expected_regional_lift(), 0.0);
    }

    #[test]
    fn zero_lambda_is_exact_noop() {
        let state = fitted(2, 6, 4);
        let dir = UnitDirective::Region {
            lower: vec![0.1, 0.1],
            upper: vec![0.4, 0.3],
            confidence: 0.0,
        };
        let lift = LiftSpec::build(&state, &dir, &unit_space(2), 64, 2, false);
        assert_eq!(lift.lambda, 0.0);
        for q in [[0.2, 0.2], [0.9, 0.1]] {
            assert_eq!(lifted_mean(&state, &lift, &q), state.predict(&q).0);
        }
    }

    #[test]
    fn shift_equals_posterior_cross_covariance() {
        let state = fitted(2, 8, 5);
        let dir = UnitDirective::Point {
            center: vec![0.7, 0.2],
            confidence: 0.9,
        };
        let lift = LiftSpec::build(&state, &dir, &unit_space(2), 64, 1, false);
        let q = vec![vec![0.3, 0.8], vec![0.65, 0.25]];
        let cov = state.posterior_cov(&q, &lift.grid);
        let a = DVector::from_column_slice(&lift.weights);
        let expected = cov * a * lift.lambda;
        for (i, x) in q.iter().enumerate() {
            assert!((lift.shift(&state, x) - expected[i]).abs() < 1e-10);
        }
        // single grid point
        let single = LiftSpec::with_lambda(&state, vec![vec![0.5, 0.5]], vec![1.0], 0.7, false);
        let c = state.posterior_cov(&[q[0].clone()], &[vec![0.5, 0.5]])[(0, 0)];
        assert!((single.shift(&state, &q[0]) - 0.7 * c).abs() < 1e-12);
    }

    #[test]
    fn calibration_identity_and_linearity() {
        let state = fitted(3, 10, 6);
        let space = unit_space(3);
        let dir = UnitDirective::Region {
            lower: vec![0.2, 0.2, 0.0],
            upper: vec![0.6, 0.5, 1.0],
            confidence: 0.8,
        };
        let lift = LiftSpec::build(&state, &dir, &space, 64, 7, false);
        let sd = lift.calibration.regional_variance.sqrt();
        assert!((lift.lambda * sd - 0.8).abs() < 1e-10);
        assert!((lift.expected_regional_lift() - 0.8 * sd).abs() < 1e-10);
        let l1 = LiftSpec::with_lambda(&state, lift.grid.clone(), lift.weights.clone(), 0.3, false);
        let l2 = LiftSpec::with_lambda(&state, lift.grid.clone(), lift.weights.clone(), 1.1, false);
        let l12 = LiftSpec::with_lambda(&state, lift.grid.clone(), lift.weights.clone(), 1.4, false);
        let x = [0.4, 0.3, 0.9];
        let lhs = lifted_mean(&state, &l12, &x);
        let rhs = state.predict(&x).0 + l1.shift(&state, &x) + l2.shift(&state, &x);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn prior_kernel_variant_ignores_data() {
        let state = fitted(1, 5, 8);
        let lift = LiftSpec::with_lambda(&state, vec![vec![0.5]], vec![1.0], 2.0, true);
        let x = [0.45];
        assert!((lift.shift(&state, &x) - 2.0 * state.kernel(&x, &[0.5])).abs() < 1e-15);
    }
}
