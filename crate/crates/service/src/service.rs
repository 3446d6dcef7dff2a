//! Campaign registry: replay on startup, per-campaign serialized writes,
//! reads against the last persisted state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use lgbo_core::engine::{provider_for, EngineError, Optimizer, RunConfig};
use lgbo_core::space::{SearchSpace, VariableSpec};
use lgbo_core::trace::trace_csv;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use tokio::sync::Mutex;

use crate::campaign::{Campaign, CampaignSummary, RoundView, Status, TraceView};
use crate::error::ApiError;
use crate::store::{list_logs, Event, EventLog, LOG_EXTENSION};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Slot {
    /// Held for the whole of every mutation, so writes to one campaign are
    /// serialized. `None` for a log that could not be replayed.
    writer: Mutex<Option<EventLog>>,
    view: RwLock<Result<Campaign, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unrecoverable {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub campaigns: Vec<CampaignSummary>,
    pub unrecoverable: Vec<Unrecoverable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveResponse {
    pub round: usize,
    pub status: Status,
    pub best_so_far: Option<f64>,
}

pub struct Service {
    data_dir: PathBuf,
    defaults: RunConfig,
    campaigns: RwLock<BTreeMap<String, Arc<Slot>>>,
}

fn merge(base: &mut Json, overlay: &Json) {
    match (base, overlay) {
        (Json::Object(b), Json::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Json::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn field_error(field: &str, message: impl Into<String>) -> ApiError {
    ApiError::validation(message, json!({ "field": field }))
}

impl Service {
    /// Opens `data_dir`, creating it if needed, and replays every log in it.
    pub fn open(data_dir: &Path, defaults: RunConfig) -> std::io::Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let mut campaigns = BTreeMap::new();
        let logs = list_logs(data_dir).map_err(std::io::Error::other)?;
        for path in logs {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let slot = match EventLog::open(path.clone()) {
                Ok(r) => {
                    if let Some(why) = &r.truncated {
                        log::warn!("campaign {id}: dropped unreadable final event ({why})");
                    }
                    match Campaign::from_events(r.log.events()) {
                        Ok(c) => Slot {
                            writer: Mutex::new(Some(r.log)),
                            view: RwLock::new(Ok(c)),
                        },
                        Err(e) => {
                            log::error!("campaign {id}: unrecoverable: {e}");
                            Slot {
                                writer: Mutex::new(None),
                                view: RwLock::new(Err(e.to_string())),
                            }
                        }
                    }
                }
                Err(e) => {
                    log::error!("campaign {id}: unrecoverable: {e}");
                    Slot {
                        writer: Mutex::new(None),
                        view: RwLock::new(Err(e.to_string())),
                    }
                }
            };
            campaigns.insert(id, Arc::new(slot));
        }
        Ok(Self {
            data_dir: data_dir.to_owned(),
            defaults,
            campaigns: RwLock::new(campaigns),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.campaigns
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn snapshot(&self, id: &str) -> Result<Campaign, ApiError> {
        let slot = self.slot(id)?;
        let view = slot.view.read().expect("view lock");
        view.clone().map_err(|reason| ApiError::unrecoverable(id, &reason))
    }

    /// Validates a creation request and persists the new campaign.
    pub async fn create(&self, body: &Json) -> Result<CampaignSummary, ApiError> {
        let obj = body
            .as_object()
            .ok_or_else(|| field_error("", "request body must be a JSON object"))?;
        let name = match obj.get("name") {
            None | Some(Json::Null) => String::new(),
            Some(Json::String(s)) => s.clone(),
            Some(_) => return Err(field_error("name", "name must be a string")),
        };
        let vars = obj
            .get("variables")
            .and_then(Json::as_array)
            .ok_or_else(|| field_error("variables", "variables must be a non-empty array"))?;
        let mut specs = Vec::with_capacity(vars.len());
        for (i, v) in vars.iter().enumerate() {
            let path = format!("variables[{i}]");
            let spec: VariableSpec =
                serde_json::from_value(v.clone()).map_err(|e| field_error(&path, e.to_string()))?;
            SearchSpace::new(vec![spec.clone()]).map_err(|e| field_error(&path, e.to_string()))?;
            specs.push(spec);
        }
        let space = SearchSpace::new(specs).map_err(|e| field_error("variables", e.to_string()))?;

        let mut cfg = serde_json::to_value(&self.defaults).expect("config serializes");
        if let Some(over) = obj.get("config") {
            if !over.is_object() {
                return Err(field_error("config", "config must be an object"));
            }
            merge(&mut cfg, over);
        }
        let config: RunConfig = serde_json::from_value(cfg).map_err(|e| field_error("config", e.to_string()))?;
        config.validate().map_err(|e| field_error("config", e.to_string()))?;
        // Building an LLM client blocks, so the check runs off the async
        // workers.
        let probe = config.clone();
        tokio::task::spawn_blocking(move || provider_for(&probe).map(drop))
            .await
            .map_err(ApiError::internal)?
            .map_err(|e| field_error("config.provider", e.to_string()))?;

        let id = uuid::Uuid::new_v4().simple().to_string();
        let path = self.data_dir.join(format!("{id}.{LOG_EXTENSION}"));
        let created = Event::Created {
            id: id.clone(),
            name,
            space,
            config,
            at_ms: now_ms(),
        };
        let campaign = Campaign::from_events(std::slice::from_ref(&created)).expect("fresh campaign");
        let log = EventLog::create(path, created).map_err(ApiError::internal)?;
        let summary = campaign.summary();
        self.campaigns.write().expect("registry lock").insert(
            id,
            Arc::new(Slot {
                writer: Mutex::new(Some(log)),
                view: RwLock::new(Ok(campaign)),
            }),
        );
        Ok(summary)
    }

    pub fn list(&self) -> Listing {
        let slots: Vec<(String, Arc<Slot>)> = self
            .campaigns
            .read()
            .expect("registry lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut out = Listing {
            campaigns: Vec::new(),
            unrecoverable: Vec::new(),
        };
        for (id, slot) in slots {
            match &*slot.view.read().expect("view lock") {
                Ok(c) => out.campaigns.push(c.summary()),
                Err(reason) => out.unrecoverable.push(Unrecoverable {
                    id,
                    reason: reason.clone(),
                }),
            }
        }
        out.campaigns.sort_by(|a, b| (a.created_at_ms, &a.id).cmp(&(b.created_at_ms, &b.id)));
        out
    }

    pub fn summary(&self, id: &str) -> Result<CampaignSummary, ApiError> {
        Ok(self.snapshot(id)?.summary())
    }

    pub fn trace(&self, id: &str) -> Result<TraceView, ApiError> {
        Ok(self.snapshot(id)?.trace_view())
    }

    pub fn export_csv(&self, id: &str) -> Result<String, ApiError> {
        trace_csv(&self.snapshot(id)?.trace()).map_err(ApiError::internal)
    }

    /// Appends `event` and publishes the new state.
    fn commit(slot: &Slot, log: &mut EventLog, mut next: Campaign, event: Event) -> Result<Campaign, ApiError> {
        next.apply(&event).map_err(ApiError::internal)?;
        log.append(event).map_err(ApiError::internal)?;
        *slot.view.write().expect("view lock") = Ok(next.clone());
        Ok(next)
    }

    /// Returns the open suggestion, or runs one engine round to make one.
    pub async fn suggest(&self, id: &str) -> Result<RoundView, ApiError> {
        let slot = self.slot(id)?;
        let mut guard = slot.writer.lock().await;
        let campaign = self.snapshot(id)?;
        let Some(log) = guard.as_mut() else {
            return Err(ApiError::unrecoverable(id, "log could not be replayed"));
        };
        if campaign.status() == Status::Closed {
            return Err(ApiError::closed(id));
        }
        if let Some(open) = campaign.rounds.last().filter(|r| r.observation.is_none()) {
            return Ok(campaign.round_view(open));
        }
        let (records, _) = campaign.engine_state();
        let config = campaign.config.clone();
        let space = campaign.space.clone();
        let suggestion = tokio::task::spawn_blocking(move || -> Result<_, EngineError> {
            let provider = provider_for(&config)?;
            let mut opt = Optimizer::restore(config, space, provider, records, None)?;
            opt.suggest()
        })
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::engine)?;
        let event = Event::Suggested {
            suggestion,
            at_ms: now_ms(),
        };
        let next = Self::commit(&slot, log, campaign, event)?;
        Ok(next.round_view(next.rounds.last().expect("just suggested")))
    }

    /// Records the measured value for the open round.
    pub async fn observe(&self, id: &str, body: &Json) -> Result<ObserveResponse, ApiError> {
        let round = body
            .get("round")
            .and_then(Json::as_u64)
            .ok_or_else(|| field_error("round", "round must be a positive integer"))? as usize;
        let value = match body.get("value") {
            Some(Json::Number(n)) => n.as_f64().filter(|v| v.is_finite()),
            _ => None,
        }
        .ok_or_else(|| field_error("value", "value must be a finite number"))?;
        let slot = self.slot(id)?;
        let mut guard = slot.writer.lock().await;
        let campaign = self.snapshot(id)?;
        let Some(log) = guard.as_mut() else {
            return Err(ApiError::unrecoverable(id, "log could not be replayed"));
        };
        if campaign.status() == Status::Closed {
            return Err(ApiError::closed(id));
        }
        let Some(open) = campaign.open_round() else {
            return Err(ApiError::conflict(
                "no open suggestion; request one first",
                json!({ "expected_round": Json::Null, "got_round": round }),
            ));
        };
        if open != round {
            return Err(ApiError::conflict(
                format!("round {round} is not open; expected round {open}"),
                json!({ "expected_round": open, "got_round": round }),
            ));
        }
        let event = Event::Observed {
            round,
            value,
            at_ms: now_ms(),
        };
        let next = Self::commit(&slot, log, campaign, event)?;
        Ok(ObserveResponse {
            round,
            status: next.status(),
            best_so_far: next.best_so_far(),
        })
    }

    /// Closes the campaign; closing a closed campaign is a no-op.
    pub async fn close(&self, id: &str) -> Result<CampaignSummary, ApiError> {
        let slot = self.slot(id)?;
        let mut guard = slot.writer.lock().await;
        let campaign = self.snapshot(id)?;
        let Some(log) = guard.as_mut() else {
            return Err(ApiError::unrecoverable(id, "log could not be replayed"));
        };
        if campaign.closed_at_ms.is_some() {
            return Ok(campaign.summary());
        }
        let next = Self::commit(&slot, log, campaign, Event::Closed { at_ms: now_ms() })?;
        Ok(next.summary())
    }
}
