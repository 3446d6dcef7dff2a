//! Random-region ablation provider: boxes of fixed normalized side and fixed
//! confidence, placed uniformly at random.

use rand::Rng;

use super::{PreferenceProvider, ProviderError, ProviderReply, RoundContext};
use crate::lift::PreferenceDirective;
use crate::seeding;
use crate::space::{SearchSpace, Value, VariableKind};

/// Axis-aligned region of normalized side `fraction` with a uniform centre,
/// deterministic in `(seed, round)`. Categorical variables get one random
/// level with `lb = ub`.
pub fn random_region(space: &SearchSpace, fraction: f64, confidence: f64, seed: u64, round: usize) -> PreferenceDirective {
    assert!(fraction > 0.0 && fraction <= 1.0, "region fraction must lie in (0, 1]");
    let mut rng = seeding::rng(seed, &[seeding::purpose::RANDOM_REGION, round as u64]);
    let half = fraction / 2.0;
    let mut lower = Vec::with_capacity(space.dim());
    let mut upper = Vec::with_capacity(space.dim());
    for (i, var) in space.variables().iter().enumerate() {
        match var.kind {
            VariableKind::Categorical => {
                let n = var.levels.as_ref().map_or(0, Vec::len);
                let level = var.levels.as_ref().expect("validated")[rng.random_range(0..n)].clone();
                lower.push(level.clone());
                upper.push(level);
            }
            _ => {
                let centre = if half >= 0.5 { 0.5 } else { rng.random_range(half..=1.0 - half) };
                lower.push(Value::Num(space.denormalize_relaxed(i, centre - half)));
                upper.push(Value::Num(space.denormalize_relaxed(i, centre + half)));
            }
        }
    }
    PreferenceDirective::region(lower, upper, confidence)
}

#[derive(Debug, Clone)]
pub struct RandomRegionProvider {
    pub fraction: f64,
    pub confidence: f64,
}

impl RandomRegionProvider {
    pub fn new(fraction: f64, confidence: f64) -> Self {
        Self { fraction, confidence }
    }
}

impl PreferenceProvider for RandomRegionProvider {
    fn propose(&self, ctx: &RoundContext<'_>) -> Result<ProviderReply, ProviderError> {
        Ok(ProviderReply::direct(random_region(
            ctx.space,
            self.fraction,
            self.confidence,
            ctx.seed,
            ctx.round,
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::VariableSpec;

    fn space() -> SearchSpace {
        SearchSpace::new(vec![
            VariableSpec::continuous("a", -5.0, 10.0),
            VariableSpec::discrete("b", &[6.0, 12.0, 24.0, 48.0]),
            VariableSpec::categorical("c", &["x", "y", "z"]),
        ])
        .unwrap()
    }

    fn num(v: &Value) -> f64 {
        v.as_f64().unwrap()
    }

    #[test]
    fn full_fraction_is_whole_box() {
        let s = space();
        let d = random_region(&s, 1.0, 0.8, 3, 4);
        let (lb, ub) = d.region.unwrap();
        assert_eq!((num(&lb[0]), num(&ub[0])), (-5.0, 10.0));
        assert_eq!((num(&lb[1]), num(&ub[1])), (6.0, 48.0));
        assert_eq!(lb[2], ub[2]);
        assert_eq!(d.confidence, 0.8);
    }

    #[test]
    fn deterministic_per_seed_and_round() {
        let s = space();
        assert_eq!(random_region(&s, 0.25, 0.8, 9, 3), random_region(&s, 0.25, 0.8, 9, 3));
        assert_ne!(random_region(&s, 0.25, 0.8, 9, 3), random_region(&s, 0.25, 0.8, 9, 4));
    }

    #[test]
    fn centres_are_uniform() {
        let s = space();
        let mut sums = [0.0; 2];
        for r in 0..1000 {
            let (lb, ub) = random_region(&s, 0.2, 0.5, 11, r).region.unwrap();
            for i in 0..2 {
                let lo = s.normalize_relaxed(i, num(&lb[i])).unwrap();
                let hi = s.normalize_relaxed(i, num(&ub[i])).unwrap();
                assert!((hi - lo - 0.2).abs() < 1e-9);
                sums[i] += 0.5 * (lo + hi);
            }
        }
        for s in sums {
            assert!((s / 1000.0 - 0.5).abs() < 0.05, "{}", s / 1000.0);
        }
    }
}
