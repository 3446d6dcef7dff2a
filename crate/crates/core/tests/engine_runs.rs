use std::sync::Arc;

use lgbo_core::acquisition::AcquisitionConfig;
use lgbo_core::engine::{run, run_seeds, Method, RunConfig};
use lgbo_core::gp::{Dataset, KernelParams, PosteriorState};
use lgbo_core::lift::{lifted_mean, LiftSpec, UnitDirective};
use lgbo_core::oracle::Objective;
use lgbo_core::provider::scripted::ScriptedProvider;
use lgbo_core::provider::{PreferenceProvider, ProviderKind};
use lgbo_core::space::{SearchSpace, VariableSpec};
use lgbo_core::synthetic::Branin;
use lgbo_core::trace::trajectory_csv;

fn cfg(method: Method) -> RunConfig {
    let mut c = RunConfig {
        method,
        budget: 6,
        seed: 11,
        acquisition: AcquisitionConfig {
            candidate_count: 512,
            ..Default::default()
        },
        ..Default::default()
    };
    if method == Method::Lgbo {
        c.provider.kind = ProviderKind::Scripted;
    }
    c
}

fn script(confidence: f64) -> Arc<dyn PreferenceProvider> {
    let text = format!(r#"[{{"round":1,"mode":"region","payload":[[1.5,1],[4.5,4]],"confidence":{confidence}}}]"#);
    Arc::new(ScriptedProvider::from_json(&text).unwrap())
}

#[test]
fn same_seed_same_trajectory() {
    let b = Branin::new();
    for (m, p) in [(Method::Gpbo, None), (Method::Lgbo, Some(script(0.8))), (Method::RandomLift, None)] {
        let p = p.or_else(|| lgbo_core::engine::provider_for(&cfg(m)).unwrap());
        let a = run(&cfg(m), &b, p.clone()).unwrap();
        let c = run(&cfg(m), &b, p).unwrap();
        assert_eq!(trajectory_csv(&a).unwrap(), trajectory_csv(&c).unwrap(), "{m:?}");
    }
}

#[test]
fn seed_order_does_not_matter() {
    let b = Branin::new();
    let fwd = run_seeds(&cfg(Method::Gpbo), &[1, 2, 3], &b, None).unwrap();
    let rev = run_seeds(&cfg(Method::Gpbo), &[3, 1, 2], &b, None).unwrap();
    for t in &fwd {
        let other = rev.iter().find(|r| r.seed == t.seed).unwrap();
        assert_eq!(trajectory_csv(t).unwrap(), trajectory_csv(other).unwrap());
    }
}

fn inside(t: &lgbo_core::trace::Trace) -> usize {
    t.records[2..]
        .iter()
        .filter(|r| {
            let (x1, x2) = (r.suggestion.x[0].as_f64().unwrap(), r.suggestion.x[1].as_f64().unwrap());
            (1.5..=4.5).contains(&x1) && (1.0..=4.0).contains(&x2)
        })
        .count()
}

#[test]
fn confident_region_pulls_suggestions_inside() {
    let b = Branin::new();
    let seeds = [1, 2, 3, 4, 5];
    let guided = run_seeds(&cfg(Method::Lgbo), &seeds, &b, Some(script(1.0))).unwrap();
    let plain = run_seeds(&cfg(Method::Gpbo), &seeds, &b, None).unwrap();
    let g: usize = guided.iter().map(inside).sum();
    let p: usize = plain.iter().map(inside).sum();
    assert!(g > p, "guided {g} vs plain {p} rounds inside the region");
    assert!(guided
        .iter()
        .flat_map(|t| &t.records[2..])
        .all(|r| r.suggestion.lambda > 0.0 && r.suggestion.delta > 0.0));
}

#[test]
fn region_lift_raises_the_region_most() {
    let space = SearchSpace::new(vec![VariableSpec::continuous("x", 0.0, 1.0)]).unwrap();
    let data = Dataset::raw(vec![vec![0.1], vec![0.9]], vec![0.3, -0.2]).unwrap();
    let state = PosteriorState::fit(data, KernelParams::isotropic(1, 1.0, 0.15, 1e-4)).unwrap();
    let directive = UnitDirective::Region {
        lower: vec![0.4],
        upper: vec![0.6],
        confidence: 0.9,
    };
    let lift = LiftSpec::build(&state, &directive, &space, 64, 3, false);
    let shift = |x: f64| lifted_mean(&state, &lift, &[x]) - state.predict(&[x]).0;
    assert!(shift(0.5) > 0.0);
    assert!(shift(0.5) > shift(0.25) && shift(0.5) > shift(0.75));
    // observed points are pinned by the posterior covariance
    assert!(shift(0.1).abs() < 0.05 * shift(0.5));
    assert!(shift(0.9).abs() < 0.05 * shift(0.5));
}

#[test]
fn branin_is_scaled_to_unit_best() {
    assert_eq!(Branin::new().best_value(), Some(1.0));
}
