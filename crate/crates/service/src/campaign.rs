//! Campaign state rebuilt from its event log, and the JSON views served
//! over HTTP.

use lgbo_core::engine::{ProviderStatus, RunConfig, Suggestion};
use lgbo_core::lift::PreferenceDirective;
use lgbo_core::provider::Phase;
use lgbo_core::space::{SearchSpace, Value, VariableSpec};
use lgbo_core::trace::{Trace, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::store::Event;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ReadyToSuggest,
    AwaitingObservation,
    Closed,
}

/// One proposed experiment and, once measured, its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub suggestion: Suggestion,
    pub suggested_at_ms: u64,
    pub observation: Option<(f64, u64)>,
    pub best_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub id: String,
    pub name: String,
    pub space: SearchSpace,
    pub config: RunConfig,
    pub created_at_ms: u64,
    pub rounds: Vec<Round>,
    pub closed_at_ms: Option<u64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("log does not start with a creation event")]
    MissingCreate,
    #[error("event {index}: {detail}")]
    Inconsistent { index: usize, detail: String },
}

impl Campaign {
    pub fn from_events(events: &[Event]) -> Result<Self, ReplayError> {
        let Some(Event::Created {
            id,
            name,
            space,
            config,
            at_ms,
        }) = events.first()
        else {
            return Err(ReplayError::MissingCreate);
        };
        let mut c = Campaign {
            id: id.clone(),
            name: name.clone(),
            space: space.clone(),
            config: config.clone(),
            created_at_ms: *at_ms,
            rounds: Vec::new(),
            closed_at_ms: None,
        };
        for (index, e) in events.iter().enumerate().skip(1) {
            c.apply(e).map_err(|detail| ReplayError::Inconsistent { index, detail })?;
        }
        Ok(c)
    }

    /// Applies one event, checking it is legal in the current state.
    pub fn apply(&mut self, event: &Event) -> Result<(), String> {
        if self.closed_at_ms.is_some() {
            return Err("campaign is closed".into());
        }
        match event {
            Event::Created { .. } => Err("duplicate creation event".into()),
            Event::Suggested { suggestion, at_ms } => {
                if self.open_round().is_some() {
                    return Err("suggestion while another is open".into());
                }
                let want = self.rounds.len() + 1;
                if suggestion.round != want {
                    return Err(format!("suggestion for round {} but next round is {want}", suggestion.round));
                }
                self.space
                    .normalize(&suggestion.x)
                    .map_err(|e| format!("suggestion outside the space: {e}"))?;
                self.rounds.push(Round {
                    suggestion: suggestion.clone(),
                    suggested_at_ms: *at_ms,
                    observation: None,
                    best_so_far: None,
                });
                Ok(())
            }
            Event::Observed { round, value, at_ms } => {
                let Some(open) = self.open_round() else {
                    return Err("observation without an open suggestion".into());
                };
                if *round != open {
                    return Err(format!("observation for round {round} but round {open} is open"));
                }
                if !value.is_finite() {
                    return Err("non-finite observation".into());
                }
                let prev = self.best_so_far();
                let r = self.rounds.last_mut().expect("open round exists");
                r.observation = Some((*value, *at_ms));
                r.best_so_far = Some(prev.map_or(*value, |b| b.max(*value)));
                Ok(())
            }
            Event::Closed { at_ms } => {
                self.closed_at_ms = Some(*at_ms);
                Ok(())
            }
        }
    }

    pub fn open_round(&self) -> Option<usize> {
        self.rounds
            .last()
            .filter(|r| r.observation.is_none())
            .map(|r| r.suggestion.round)
    }

    pub fn observed(&self) -> usize {
        self.rounds.iter().filter(|r| r.observation.is_some()).count()
    }

    pub fn best_so_far(&self) -> Option<f64> {
        self.rounds.iter().rev().find_map(|r| r.best_so_far)
    }

    pub fn budget_exhausted(&self) -> bool {
        self.observed() >= self.config.total_rounds()
    }

    pub fn status(&self) -> Status {
        if self.closed_at_ms.is_some() || (self.budget_exhausted() && self.open_round().is_none()) {
            Status::Closed
        } else if self.open_round().is_some() {
            Status::AwaitingObservation
        } else {
            Status::ReadyToSuggest
        }
    }

    /// Completed rounds as engine records, and the open suggestion.
    pub fn engine_state(&self) -> (Vec<TraceRecord>, Option<Suggestion>) {
        let mut records = Vec::new();
        let mut pending = None;
        for r in &self.rounds {
            match (r.observation, r.best_so_far) {
                (Some((y, _)), Some(best)) => records.push(TraceRecord {
                    suggestion: r.suggestion.clone(),
                    y,
                    best_so_far: best,
                }),
                _ => pending = Some(r.suggestion.clone()),
            }
        }
        (records, pending)
    }

    /// Observed rounds in the engine's trace form.
    pub fn trace(&self) -> Trace {
        Trace {
            seed: self.config.seed,
            method: self.config.method,
            variables: self.space.variables().iter().map(|v| v.name.clone()).collect(),
            config: self.config.clone(),
            records: self.engine_state().0,
        }
    }

    pub fn summary(&self) -> CampaignSummary {
        CampaignSummary {
            id: self.id.clone(),
            name: self.name.clone(),
            status: self.status(),
            method: self.config.method.as_str().to_owned(),
            variables: self.space.variables().to_vec(),
            budget: self.config.total_rounds(),
            rounds_observed: self.observed(),
            open_round: self.open_round(),
            best_so_far: self.best_so_far(),
            created_at_ms: self.created_at_ms,
        }
    }

    pub fn round_view(&self, r: &Round) -> RoundView {
        let s = &r.suggestion;
        RoundView {
            round: s.round,
            phase: s.phase,
            x: s.x.clone(),
            mode: s
                .directive
                .as_ref()
                .map_or("none", |d| match d.mode {
                    lgbo_core::lift::DirectiveMode::Point => "point",
                    lgbo_core::lift::DirectiveMode::Region => "region",
                })
                .to_owned(),
            confidence: s.directive.as_ref().map(|d| d.confidence),
            rationale: s.directive.as_ref().map(|d| d.thinking.clone()).unwrap_or_default(),
            directive: s.directive.clone(),
            lambda: s.lambda,
            delta: s.delta,
            provider_status: s.provider_status,
            provider_detail: s.provider_detail.clone(),
            value: r.observation.map(|(v, _)| v),
            best_so_far: r.best_so_far,
            suggested_at_ms: r.suggested_at_ms,
            observed_at_ms: r.observation.map(|(_, t)| t),
        }
    }

    pub fn trace_view(&self) -> TraceView {
        TraceView {
            campaign: self.summary(),
            rounds: self.rounds.iter().map(|r| self.round_view(r)).collect(),
            best_so_far: self.rounds.iter().filter_map(|r| r.best_so_far).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub id: String,
    pub name: String,
    pub status: Status,
    pub method: String,
    pub variables: Vec<VariableSpec>,
    /// Total rounds including the initial design.
    pub budget: usize,
    pub rounds_observed: usize,
    pub open_round: Option<usize>,
    pub best_so_far: Option<f64>,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub round: usize,
    pub phase: Phase,
    pub x: Vec<Value>,
    pub mode: String,
    pub confidence: Option<f64>,
    pub rationale: String,
    pub directive: Option<PreferenceDirective>,
    pub lambda: f64,
    pub delta: f64,
    pub provider_status: ProviderStatus,
    pub provider_detail: String,
    pub value: Option<f64>,
    pub best_so_far: Option<f64>,
    pub suggested_at_ms: u64,
    pub observed_at_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub campaign: CampaignSummary,
    pub rounds: Vec<RoundView>,
    pub best_so_far: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use lgbo_core::engine::Optimizer;
    use lgbo_core::space::VariableSpec;

    fn created() -> Event {
        Event::Created {
            id: "c1".into(),
            name: "demo".into(),
            space: SearchSpace::new(vec![VariableSpec::continuous("a", 0.0, 1.0)]).unwrap(),
            config: RunConfig {
                budget: 1,
                init_count: 1,
                ..Default::default()
            },
            at_ms: 5,
        }
    }

    fn suggestion(round: usize) -> Suggestion {
        let Event::Created { space, config, .. } = created() else { unreachable!() };
        let mut opt = Optimizer::new(config, space, None).unwrap();
        let mut s = opt.suggest().unwrap();
        s.round = round;
        s
    }

    #[test]
    fn lifecycle() {
        let mut events = vec![created()];
        let c = Campaign::from_events(&events).unwrap();
        assert_eq!(c.status(), Status::ReadyToSuggest);
        events.push(Event::Suggested {
            suggestion: suggestion(1),
            at_ms: 6,
        });
        let c = Campaign::from_events(&events).unwrap();
        assert_eq!((c.status(), c.open_round()), (Status::AwaitingObservation, Some(1)));
        events.push(Event::Observed {
            round: 1,
            value: 2.5,
            at_ms: 7,
        });
        let c = Campaign::from_events(&events).unwrap();
        assert_eq!(c.best_so_far(), Some(2.5));
        assert_eq!(c.status(), Status::ReadyToSuggest);
        assert_eq!(c.trace().records.len(), 1);
        let view = c.trace_view();
        assert_eq!(view.rounds[0].value, Some(2.5));
        assert_eq!(view.best_so_far, vec![2.5]);
    }

    #[test]
    fn illegal_sequences_are_rejected() {
        let s = Event::Suggested {
            suggestion: suggestion(1),
            at_ms: 6,
        };
        let wrong = Event::Observed {
            round: 2,
            value: 1.0,
            at_ms: 7,
        };
        assert!(Campaign::from_events(&[created(), s.clone(), s.clone()]).is_err());
        assert!(Campaign::from_events(&[created(), s, wrong]).is_err());
        assert_eq!(Campaign::from_events(&[Event::Closed { at_ms: 1 }]), Err(ReplayError::MissingCreate));
        let skip = Event::Suggested {
            suggestion: suggestion(2),
            at_ms: 6,
        };
        assert!(Campaign::from_events(&[created(), skip]).is_err());
    }
}
