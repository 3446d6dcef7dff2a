//! Append-only JSON-lines event logs, one file per campaign.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lgbo_core::engine::{RunConfig, Suggestion};
use lgbo_core::space::SearchSpace;
use serde::{Deserialize, Serialize};

pub const LOG_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        name: String,
        space: SearchSpace,
        config: RunConfig,
        at_ms: u64,
    },
    Suggested {
        suggestion: Suggestion,
        at_ms: u64,
    },
    Observed {
        round: usize,
        value: f64,
        at_ms: u64,
    },
    Closed {
        at_ms: u64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Corrupt { line: usize, detail: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Replaces `path` with `contents` through a synced temporary file and a
/// rename, so readers see either the old or the new file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(contents).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))
}

fn encode(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in events {
        serde_json::to_writer(&mut out, e).expect("events serialize");
        out.push(b'\n');
    }
    out
}

/// A campaign's log on disk together with the events already in it.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    events: Vec<Event>,
}

/// Outcome of reading a log back.
#[derive(Debug)]
pub struct Replayed {
    pub log: EventLog,
    /// Set when an unreadable final line was dropped.
    pub truncated: Option<String>,
}

impl EventLog {
    pub fn create(path: PathBuf, first: Event) -> Result<Self, StoreError> {
        let mut log = Self { path, events: Vec::new() };
        log.append(first)?;
        Ok(log)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn append(&mut self, event: Event) -> Result<(), StoreError> {
        self.events.push(event);
        let bytes = encode(&self.events);
        if let Err(e) = write_atomic(&self.path, &bytes) {
            self.events.pop();
            return Err(e);
        }
        Ok(())
    }

    /// Reads a log. An unreadable last line is dropped and the file is
    /// rewritten without it; an unreadable earlier line is an error.
    pub fn open(path: PathBuf) -> Result<Replayed, StoreError> {
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut events = Vec::with_capacity(lines.len());
        let mut truncated = None;
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<Event>(line) {
                Ok(e) => events.push(e),
                Err(err) if i + 1 == lines.len() => {
                    truncated = Some(format!("line {}: {err}", i + 1));
                }
                Err(err) => {
                    return Err(StoreError::Corrupt {
                        line: i + 1,
                        detail: err.to_string(),
                    })
                }
            }
        }
        if events.is_empty() {
            return Err(StoreError::Corrupt {
                line: 1,
                detail: "log has no readable events".into(),
            });
        }
        if truncated.is_some() {
            write_atomic(&path, &encode(&events))?;
        }
        Ok(Replayed {
            log: Self { path, events },
            truncated,
        })
    }
}

/// Log files under `dir`, sorted by name.
pub fn list_logs(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let p = entry.map_err(io(dir))?.path();
        if p.extension().is_some_and(|e| e == LOG_EXTENSION) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed(t: u64) -> Event {
        Event::Closed { at_ms: t }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        let mut log = EventLog::create(p.clone(), closed(1)).unwrap();
        log.append(closed(2)).unwrap();
        let r = EventLog::open(p).unwrap();
        assert_eq!(r.log.events(), &[closed(1), closed(2)]);
        assert!(r.truncated.is_none());
        assert!(!dir.path().join("a.tmp").exists());
    }

    #[test]
    fn torn_tail_is_dropped_and_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        fs::write(&p, "{\"event\":\"closed\",\"at_ms\":1}\n{\"event\":\"clo").unwrap();
        let r = EventLog::open(p.clone()).unwrap();
        assert_eq!(r.log.events(), &[closed(1)]);
        assert!(r.truncated.is_some());
        assert_eq!(fs::read_to_string(&p).unwrap(), "{\"event\":\"closed\",\"at_ms\":1}\n");
    }

    #[test]
    fn earlier_corruption_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        fs::write(&p, "garbage\n{\"event\":\"closed\",\"at_ms\":1}\n").unwrap();
        assert!(matches!(EventLog::open(p), Err(StoreError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn listing_filters_extension() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.jsonl"), "").unwrap();
        fs::write(dir.path().join("a.jsonl"), "").unwrap();
        fs::write(dir.path().join("a.tmp"), "").unwrap();
        let names: Vec<_> = list_logs(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["a.jsonl", "b.jsonl"]);
    }
}
