//! Deterministic provider backed by a JSON list of per-round directives.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_directive, parse_directive, PreferenceProvider, ProviderError, ProviderReply, RoundContext};
use crate::lift::{DirectiveMode, PreferenceDirective};
use crate::space::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub round: usize,
    pub mode: DirectiveMode,
    pub payload: serde_json::Value,
    pub confidence: f64,
    #[serde(default)]
    pub thinking: String,
}

impl ScriptEntry {
    pub fn to_directive(&self) -> Result<PreferenceDirective, ProviderError> {
        let bad = |what: &str| ProviderError::Script(format!("round {}: {what}", self.round));
        let d = match self.mode {
            DirectiveMode::Point => {
                let p: Vec<Value> =
                    serde_json::from_value(self.payload.clone()).map_err(|_| bad("point payload must be a flat list"))?;
                PreferenceDirective::point(p, self.confidence)
            }
            DirectiveMode::Region => {
                let (lb, ub): (Vec<Value>, Vec<Value>) = serde_json::from_value(self.payload.clone())
                    .map_err(|_| bad("region payload must be [[lb...], [ub...]]"))?;
                PreferenceDirective::region(lb, ub, self.confidence)
            }
        };
        Ok(d.with_thinking(self.thinking.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    entries: Vec<ScriptEntry>,
}

impl ScriptedProvider {
    pub fn new(mut entries: Vec<ScriptEntry>) -> Result<Self, ProviderError> {
        if entries.is_empty() {
            return Err(ProviderError::Script("script has no entries".into()));
        }
        entries.sort_by_key(|e| e.round);
        for w in entries.windows(2) {
            if w[0].round == w[1].round {
                return Err(ProviderError::Script(format!("round {} listed twice", w[0].round)));
            }
        }
        for e in &entries {
            if e.round == 0 {
                return Err(ProviderError::Script("rounds start at 1".into()));
            }
            e.to_directive()?;
        }
        Ok(Self { entries })
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| ProviderError::Script(format!("malformed script: {e}")))?;
        Self::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Script(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Entry for `round`: the latest entry at or before it, the first entry
    /// for earlier rounds and the last one past the end.
    pub fn entry(&self, round: usize) -> &ScriptEntry {
        let idx = self.entries.partition_point(|e| e.round <= round);
        &self.entries[idx.saturating_sub(1)]
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }
}

impl PreferenceProvider for ScriptedProvider {
    fn propose(&self, ctx: &RoundContext<'_>) -> Result<ProviderReply, ProviderError> {
        let entry = self.entry(ctx.round);
        let d = entry.to_directive()?;
        // same validation path as live text
        let text = format_directive(&d);
        let parsed = parse_directive(&text, ctx.space)?;
        Ok(ProviderReply::direct(parsed.with_thinking(entry.thinking.clone())))
    }
}
