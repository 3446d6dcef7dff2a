//! The optimization loop for GPBO, LGBO and the random-lift ablation.
//!
//! [`Optimizer`] is incremental: [`Optimizer::suggest`] computes (or
//! returns the pending) next experiment and [`Optimizer::observe`] records
//! its outcome. [`run`] drives it against an [`Objective`]; the campaign
//! service drives it with externally measured values.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{maximize, AcquisitionConfig, LiftedSurrogate};
use crate::gp::{optimize_hyperparams, Dataset, GpError, HyperBounds, KernelParams, PosteriorState};
use crate::lift::{to_unit, DirectiveMode, LiftSpec, PreferenceDirective, DEFAULT_GRID_SIZE};
use crate::oracle::{Objective, OracleError};
use crate::provider::random::RandomRegionProvider;
use crate::provider::{
    build_provider, Exchange, Observation, Phase, PreferenceProvider, ProviderConfig, ProviderError, ProviderKind,
    RoundContext,
};
use crate::seeding;
use crate::space::{SearchSpace, Value};
use crate::trace::{Trace, TraceRecord};

/// Proposals closer than this (normalized Euclidean) to a past point are
/// treated as repeats.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lgbo,
    Gpbo,
    RandomLift,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lgbo => "lgbo",
            Method::Gpbo => "gpbo",
            Method::RandomLift => "random_lift",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lgbo" => Ok(Method::Lgbo),
            "gpbo" => Ok(Method::Gpbo),
            "random-lift" | "random_lift" => Ok(Method::RandomLift),
            other => Err(format!("unknown method `{other}` (expected lgbo, gpbo or random-lift)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub budget: usize,
    pub init_count: usize,
    pub seed: u64,
    pub acquisition: AcquisitionConfig,
    pub provider: ProviderConfig,
    pub lift_grid: usize,
    pub prior_kernel_lift: bool,
    pub hyper_restarts: usize,
    pub hyper_bounds: HyperBounds,
    /// Record wall time per round; off keeps traces reproducible.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Gpbo,
            budget: 30,
            init_count: 2,
            seed: 0,
            acquisition: AcquisitionConfig::default(),
            provider: ProviderConfig::default(),
            lift_grid: DEFAULT_GRID_SIZE,
            prior_kernel_lift: false,
            hyper_restarts: 5,
            hyper_bounds: HyperBounds::default(),
            record_timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.budget < 1 {
            return Err(EngineError::Config("budget must be at least 1".into()));
        }
        if self.init_count < 1 {
            return Err(EngineError::Config("init_count must be at least 1".into()));
        }
        if self.lift_grid < 1 {
            return Err(EngineError::Config("lift_grid must be at least 1".into()));
        }
        if self.acquisition.candidate_count < 1 {
            return Err(EngineError::Config("candidate_count must be at least 1".into()));
        }
        if !(self.acquisition.ucb_beta > 0.0) {
            return Err(EngineError::Config("ucb_beta must be positive".into()));
        }
        self.provider.validate()?;
        Ok(())
    }

    pub fn total_rounds(&self) -> usize {
        self.init_count + self.budget
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("objective: {0}")]
    Oracle(#[from] OracleError),
    #[error("surrogate: {0}")]
    Gp(#[from] GpError),
    #[error("run is complete ({0} rounds)")]
    Complete(usize),
    #[error("no open suggestion")]
    NoPending,
    #[error("round {got} is not the open round {expected}")]
    RoundMismatch { expected: usize, got: usize },
    #[error("observed value must be finite, got {0}")]
    NonFinite(f64),
    #[error("proposal left the search space: {0}")]
    Proposal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderStatus {
    /// No provider involved (GPBO, or Sobol design).
    None,
    Ok,
    /// Provider failed or returned an unusable directive; round ran unlifted.
    Fallback,
    /// Directive failed validation; round ran unlifted.
    Rejected,
}

impl ProviderStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderStatus::None => "none",
            ProviderStatus::Ok => "ok",
            ProviderStatus::Fallback => "fallback",
            ProviderStatus::Rejected => "rejected",
        }
    }
}

/// A proposed experiment, before its outcome is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub round: usize,
    pub phase: Phase,
    pub x: Vec<Value>,
    pub encoded: Vec<f64>,
    pub directive: Option<PreferenceDirective>,
    pub lambda: f64,
    pub delta: f64,
    pub low_variance: bool,
    pub provider_status: ProviderStatus,
    #[serde(default)]
    pub provider_detail: String,
    #[serde(default)]
    pub retries: u32,
    #[serde(default)]
    pub exchanges: Vec<Exchange>,
    /// Hyperparameters fitted this round, warm start for the next one.
    pub kernel: Option<KernelParams>,
    pub ms: u64,
}

/// The provider a method uses, if any.
pub fn provider_for(config: &RunConfig) -> Result<Option<Arc<dyn PreferenceProvider>>, EngineError> {
    Ok(match config.method {
        Method::Gpbo => None,
        Method::RandomLift => Some(Arc::new(RandomRegionProvider::new(
            config.provider.region_fraction,
            config.provider.fixed_confidence,
        ))),
        Method::Lgbo => {
            if config.provider.kind == ProviderKind::None {
                return Err(EngineError::Config("lgbo needs a preference provider".into()));
            }
            build_provider(&config.provider)?.map(Arc::from)
        }
    })
}

pub struct Optimizer {
    config: RunConfig,
    space: SearchSpace,
    provider: Option<Arc<dyn PreferenceProvider>>,
    records: Vec<TraceRecord>,
    pending: Option<Suggestion>,
    init_design: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(
        config: RunConfig,
        space: SearchSpace,
        provider: Option<Arc<dyn PreferenceProvider>>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if config.method != Method::Gpbo && provider.is_none() {
            return Err(EngineError::Config(format!("{} needs a preference provider", config.method.as_str())));
        }
        let init_design = space.sobol_sample(config.init_count, seeding::derive(config.seed, &[seeding::purpose::INIT]));
        Ok(Self {
            config,
            space,
            provider,
            records: Vec::new(),
            pending: None,
            init_design,
        })
    }

    /// Rebuilds an optimizer from stored records (and an optional open
    /// suggestion) without recomputing anything.
    pub fn restore(
        config: RunConfig,
        space: SearchSpace,
        provider: Option<Arc<dyn PreferenceProvider>>,
        records: Vec<TraceRecord>,
        pending: Option<Suggestion>,
    ) -> Result<Self, EngineError> {
        let mut opt = Self::new(config, space, provider)?;
        for (i, r) in records.iter().enumerate() {
            if r.suggestion.round != i + 1 {
                return Err(EngineError::RoundMismatch {
                    expected: i + 1,
                    got: r.suggestion.round,
                });
            }
        }
        if let Some(p) = &pending {
            if p.round != records.len() + 1 {
                return Err(EngineError::RoundMismatch {
                    expected: records.len() + 1,
                    got: p.round,
                });
            }
        }
        opt.records = records;
        opt.pending = pending;
        Ok(opt)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn pending(&self) -> Option<&Suggestion> {
        self.pending.as_ref()
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() >= self.config.total_rounds()
    }

    pub fn best_so_far(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }

    /// Physical-unit history for providers.
    pub fn observations(&self) -> Vec<Observation> {
        self.records
            .iter()
            .map(|r| Observation {
                round: r.suggestion.round,
                point: r.suggestion.x.clone(),
                value: r.y,
            })
            .collect()
    }

    /// The next experiment. Repeated calls before [`observe`](Self::observe)
    /// return the same suggestion.
    pub fn suggest(&mut self) -> Result<Suggestion, EngineError> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        if self.is_complete() {
            return Err(EngineError::Complete(self.records.len()));
        }
        let started = Instant::now();
        let round = self.records.len() + 1;
        let mut s = if round <= self.config.init_count {
            self.initial(round)
        } else {
            self.optimize(round)?
        };
        if self.config.record_timing {
            s.ms = started.elapsed().as_millis() as u64;
        }
        self.pending = Some(s.clone());
        Ok(s)
    }

    /// Records the outcome of the open suggestion.
    pub fn observe(&mut self, round: usize, y: f64) -> Result<&TraceRecord, EngineError> {
        let Some(p) = &self.pending else {
            return Err(EngineError::NoPending);
        };
        if p.round != round {
            return Err(EngineError::RoundMismatch {
                expected: p.round,
                got: round,
            });
        }
        if !y.is_finite() {
            return Err(EngineError::NonFinite(y));
        }
        let suggestion = self.pending.take().expect("checked above");
        let best_so_far = self.best_so_far().map_or(y, |b| b.max(y));
        self.records.push(TraceRecord {
            suggestion,
            y,
            best_so_far,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn into_trace(self) -> Trace {
        Trace {
            seed: self.config.seed,
            method: self.config.method,
            variables: self.space.variables().iter().map(|v| v.name.clone()).collect(),
            config: self.config,
            records: self.records,
        }
    }

    fn context<'a>(&'a self, round: usize, phase: Phase, history: &'a [Observation]) -> RoundContext<'a> {
        RoundContext {
            round,
            phase,
            seed: self.config.seed,
            space: &self.space,
            history,
            previous_thinking: self
                .records
                .iter()
                .rev()
                .find_map(|r| r.suggestion.directive.as_ref().map(|d| d.thinking.as_str()))
                .unwrap_or(""),
        }
    }

    fn blank(&self, round: usize, phase: Phase, encoded: Vec<f64>) -> Suggestion {
        Suggestion {
            round,
            phase,
            x: self.space.denormalize(&encoded),
            encoded,
            directive: None,
            lambda: 0.0,
            delta: 0.0,
            low_variance: false,
            provider_status: ProviderStatus::None,
            provider_detail: String::new(),
            retries: 0,
            exchanges: Vec::new(),
            kernel: None,
            ms: 0,
        }
    }

    fn is_repeat(&self, encoded: &[f64]) -> bool {
        self.records.iter().any(|r| {
            r.suggestion
                .encoded
                .iter()
                .zip(encoded)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                < DUPLICATE_TOLERANCE
        })
    }

    fn sobol_init(&self, round: usize) -> Vec<f64> {
        self.space.snap(&self.init_design[round - 1])
    }

    /// Initial design: Sobol for GPBO and the ablation, provider points for
    /// LGBO with a per-point Sobol fallback.
    fn initial(&self, round: usize) -> Suggestion {
        let fallback = self.sobol_init(round);
        let provider = match (self.config.method, &self.provider) {
            (Method::Lgbo, Some(p)) => p.clone(),
            _ => return self.blank(round, Phase::Init, fallback),
        };
        let history = self.observations();
        let ctx = self.context(round, Phase::Init, &history);
        let mut s;
        match provider.propose(&ctx) {
            Ok(reply) => {
                let d = reply.directive;
                let usable = match d.mode {
                    DirectiveMode::Point => d
                        .point
                        .as_ref()
                        .and_then(|p| self.space.normalize(p).ok())
                        .map(|e| self.space.snap(&e))
                        .filter(|e| !self.is_repeat(e)),
                    DirectiveMode::Region => None,
                };
                match usable {
                    Some(enc) => {
                        s = self.blank(round, Phase::Init, enc);
                        s.provider_status = ProviderStatus::Ok;
                    }
                    None => {
                        s = self.blank(round, Phase::Init, fallback);
                        s.provider_status = ProviderStatus::Fallback;
                        s.provider_detail = match d.mode {
                            DirectiveMode::Region => "region directive during initial design; Sobol point used".into(),
                            DirectiveMode::Point => "unusable or repeated initial point; Sobol point used".into(),
                        };
                    }
                }
                s.directive = Some(d);
                s.retries = reply.retries;
                s.exchanges = reply.exchanges;
            }
            Err(e) => {
                s = self.blank(round, Phase::Init, fallback);
                s.provider_status = status_for(&e);
                s.provider_detail = e.to_string();
                s.exchanges = e.exchanges().to_vec();
            }
        }
        s
    }

    fn optimize(&self, round: usize) -> Result<Suggestion, EngineError> {
        let seed = self.config.seed;
        let enc_dim = self.space.encoded_dim();
        let inputs: Vec<Vec<f64>> = self.records.iter().map(|r| r.suggestion.encoded.clone()).collect();
        let ys: Vec<f64> = self.records.iter().map(|r| r.y).collect();
        let dataset = Dataset::standardized(inputs, &ys)?;
        let previous = self
            .records
            .iter()
            .rev()
            .find_map(|r| r.suggestion.kernel.clone())
            .unwrap_or_else(|| KernelParams::default_for(enc_dim));
        let params = if dataset.len() >= 2 {
            optimize_hyperparams(
                &dataset,
                &self.config.hyper_bounds,
                self.config.hyper_restarts,
                seeding::derive(seed, &[seeding::purpose::HYPER, round as u64]),
                &previous,
            )
            .params
        } else {
            previous
        };
        let state = PosteriorState::fit(dataset, params.clone())?;

        let mut directive = None;
        let mut status = ProviderStatus::None;
        let mut detail = String::new();
        let mut retries = 0;
        let mut exchanges = Vec::new();
        let mut lift: Option<LiftSpec> = None;
        if let (Some(provider), true) = (&self.provider, self.config.method != Method::Gpbo) {
            let history = self.observations();
            let ctx = self.context(round, Phase::Optimize, &history);
            match provider.propose(&ctx) {
                Ok(reply) => {
                    retries = reply.retries;
                    exchanges = reply.exchanges;
                    match to_unit(&reply.directive, &self.space) {
                        Ok(unit) => {
                            status = ProviderStatus::Ok;
                            lift = Some(LiftSpec::build(
                                &state,
                                &unit,
                                &self.space,
                                self.config.lift_grid,
                                seeding::derive(seed, &[seeding::purpose::GRID, round as u64]),
                                self.config.prior_kernel_lift,
                            ));
                        }
                        Err(e) => {
                            status = ProviderStatus::Rejected;
                            detail = e.to_string();
                        }
                    }
                    directive = Some(reply.directive);
                }
                Err(e) => {
                    status = status_for(&e);
                    detail = e.to_string();
                    exchanges = e.exchanges().to_vec();
                }
            }
        }

        let (lambda, delta, low_variance) = lift
            .as_ref()
            .map_or((0.0, 0.0, false), |l| (l.lambda, l.expected_regional_lift(), l.calibration.low_variance));
        // a zero lift is exactly the plain posterior
        let active = lift.as_ref().filter(|l| l.lambda != 0.0);
        let surrogate = LiftedSurrogate::new(&state, active);
        let best = state.dataset.outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let acq = AcquisitionConfig {
            seed: seeding::derive(seed, &[round as u64]),
            ..self.config.acquisition.clone()
        };
        let result = maximize(&surrogate, enc_dim, best, &acq);
        let encoded = result
            .ranked
            .iter()
            .map(|c| self.space.snap(&c.x))
            .find(|e| !self.is_repeat(e))
            .or_else(|| {
                self.space
                    .sobol_sample(64, seeding::derive(seed, &[seeding::purpose::INIT, round as u64]))
                    .into_iter()
                    .map(|u| self.space.snap(&u))
                    .find(|e| !self.is_repeat(e))
            })
            .unwrap_or_else(|| self.space.snap(&result.best.x));

        let mut s = self.blank(round, Phase::Optimize, encoded);
        self.space
            .normalize(&s.x)
            .map_err(|e| EngineError::Proposal(e.to_string()))?;
        s.directive = directive;
        s.lambda = lambda;
        s.delta = delta;
        s.low_variance = low_variance;
        s.provider_status = status;
        s.provider_detail = detail;
        s.retries = retries;
        s.exchanges = exchanges;
        s.kernel = Some(params);
        Ok(s)
    }
}

fn status_for(e: &ProviderError) -> ProviderStatus {
    match e {
        ProviderError::Rejected(_) => ProviderStatus::Rejected,
        _ => ProviderStatus::Fallback,
    }
}

/// Runs one seed end to end against `objective`.
pub fn run(
    config: &RunConfig,
    objective: &dyn Objective,
    provider: Option<Arc<dyn PreferenceProvider>>,
) -> Result<Trace, EngineError> {
    let mut opt = Optimizer::new(config.clone(), objective.space().clone(), provider)?;
    while !opt.is_complete() {
        let s = opt.suggest()?;
        let y = objective.evaluate(&s.x)?;
        opt.observe(s.round, y)?;
    }
    Ok(opt.into_trace())
}

/// Runs every seed with otherwise identical configuration. Seeds run in
/// parallel with independent state; output order follows `seeds`.
pub fn run_seeds(
    config: &RunConfig,
    seeds: &[u64],
    objective: &dyn Objective,
    provider: Option<Arc<dyn PreferenceProvider>>,
) -> Result<Vec<Trace>, EngineError> {
    let results = crate::par::map_slice(seeds, |&seed| {
        let cfg = RunConfig { seed, ..config.clone() };
        run(&cfg, objective, provider.clone())
    });
    results.into_iter().collect()
}
