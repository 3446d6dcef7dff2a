//! Run traces and their CSV/JSON forms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Method, RunConfig, Suggestion};
use crate::lift::DirectiveMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(flatten)]
    pub suggestion: Suggestion,
    pub y: f64,
    pub best_so_far: f64,
}

impl TraceRecord {
    pub fn mode(&self) -> &'static str {
        match self.suggestion.directive.as_ref().map(|d| d.mode) {
            Some(DirectiveMode::Point) => "point",
            Some(DirectiveMode::Region) => "region",
            None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    pub method: Method,
    pub variables: Vec<String>,
    pub config: RunConfig,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn best_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_so_far).collect()
    }

    /// Best-so-far after `round` evaluations (1-based).
    pub fn best_at(&self, round: usize) -> Option<f64> {
        round.checked_sub(1).and_then(|i| self.records.get(i)).map(|r| r.best_so_far)
    }

    /// First round whose best-so-far reaches `target`.
    pub fn rounds_to_reach(&self, target: f64) -> Option<usize> {
        self.records.iter().position(|r| r.best_so_far >= target).map(|i| i + 1)
    }
}

fn header(variables: &[String], full: bool) -> Vec<String> {
    let mut h = vec!["seed".to_owned(), "round".to_owned()];
    h.extend(variables.iter().cloned());
    h.extend(["y", "best_so_far"].map(str::to_owned));
    if full {
        h.extend(["mode", "confidence", "lambda", "delta", "provider_status", "ms"].map(str::to_owned));
    } else {
        h.extend(["lambda", "delta"].map(str::to_owned));
    }
    h
}

fn write_rows(traces: &[&Trace], full: bool) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let vars = traces.first().map(|t| t.variables.as_slice()).unwrap_or_default();
    w.write_record(header(vars, full))?;
    for t in traces {
        for r in &t.records {
            let s = &r.suggestion;
            let mut row = vec![t.seed.to_string(), s.round.to_string()];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.push(r.y.to_string());
            row.push(r.best_so_far.to_string());
            if full {
                row.push(r.mode().to_owned());
                row.push(s.directive.as_ref().map(|d| d.confidence.to_string()).unwrap_or_default());
            }
            row.push(s.lambda.to_string());
            row.push(s.delta.to_string());
            if full {
                row.push(s.provider_status.as_str().to_owned());
                row.push(s.ms.to_string());
            }
            w.write_record(row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Trace CSV: `seed, round, <variables>, y, best_so_far, mode, confidence,
/// lambda, delta, provider_status, ms`.
pub fn trace_csv(trace: &Trace) -> Result<String, csv::Error> {
    write_rows(&[trace], true)
}

/// Several seeds of the same space in one CSV.
pub fn traces_csv(traces: &[Trace]) -> Result<String, csv::Error> {
    write_rows(&traces.iter().collect::<Vec<_>>(), true)
}

/// The optimization path only: `seed, round, <variables>, y, best_so_far,
/// lambda, delta`.
pub fn trajectory_csv(trace: &Trace) -> Result<String, csv::Error> {
    write_rows(&[trace], false)
}

pub fn export_trace(trace: &Trace, path: &Path) -> std::io::Result<()> {
    let text = trace_csv(trace).map_err(std::io::Error::other)?;
    std::fs::write(path, text)
}

pub fn export_trace_json(trace: &Trace, path: &Path) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(trace).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub seed: u64,
    pub round: usize,
    pub x: Vec<String>,
    pub y: f64,
    pub best_so_far: f64,
    pub mode: String,
    pub confidence: Option<f64>,
    pub lambda: f64,
    pub delta: f64,
    pub provider_status: String,
    pub ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {detail}")]
    Field { line: usize, detail: String },
}

/// Parses a CSV produced by [`trace_csv`].
pub fn read_trace_csv(text: &str) -> Result<(Vec<String>, Vec<CsvRow>), TraceCsvError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let head: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    const TAIL: usize = 8;
    if head.len() < 2 + TAIL || head[0] != "seed" || head[1] != "round" {
        return Err(TraceCsvError::Field {
            line: 1,
            detail: "not a trace CSV header".into(),
        });
    }
    let d = head.len() - 2 - TAIL;
    let variables = head[2..2 + d].to_vec();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| TraceCsvError::Field {
            line,
            detail: format!("bad {what}"),
        };
        let f = |j: usize, what: &str| rec[j].parse::<f64>().map_err(|_| bad(what));
        let b = 2 + d;
        rows.push(CsvRow {
            seed: rec[0].parse().map_err(|_| bad("seed"))?,
            round: rec[1].parse().map_err(|_| bad("round"))?,
            x: rec.iter().skip(2).take(d).map(str::to_owned).collect(),
            y: f(b, "y")?,
            best_so_far: f(b + 1, "best_so_far")?,
            mode: rec[b + 2].to_owned(),
            confidence: if rec[b + 3].is_empty() { None } else { Some(f(b + 3, "confidence")?) },
            lambda: f(b + 4, "lambda")?,
            delta: f(b + 5, "delta")?,
            provider_status: rec[b + 6].to_owned(),
            ms: rec[b + 7].parse().map_err(|_| bad("ms"))?,
        });
    }
    Ok((variables, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::AcquisitionConfig;
    use crate::engine::run;
    use crate::synthetic::Branin;

    fn trace() -> Trace {
        let cfg = RunConfig {
            budget: 5,
            seed: 8,
            acquisition: AcquisitionConfig {
                candidate_count: 256,
                ..Default::default()
            },
            ..Default::default()
        };
        run(&cfg, &Branin::new(), None).unwrap()
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let t = trace();
        let text = trace_csv(&t).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], "seed,round,x1,x2,y,best_so_far,mode,confidence,lambda,delta,provider_status,ms");
        let (vars, rows) = read_trace_csv(&text).unwrap();
        assert_eq!(vars, vec!["x1", "x2"]);
        let best: Vec<f64> = rows.iter().map(|r| r.best_so_far).collect();
        assert_eq!(best, t.best_series());
        assert!(rows.iter().all(|r| r.mode == "none" && r.confidence.is_none()));
    }

    #[test]
    fn json_round_trip() {
        let t = trace();
        let json = serde_json::to_string(&t).unwrap();
        let back: Trace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn helpers() {
        let t = trace();
        assert_eq!(t.best_at(7), t.records.last().map(|r| r.best_so_far));
        assert_eq!(t.best_at(0), None);
        assert_eq!(t.rounds_to_reach(f64::NEG_INFINITY), Some(1));
    }
}
