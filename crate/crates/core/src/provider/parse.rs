//! Strict parser for the two-mode directive grammar:
//!
//! ```text
//! [point,  [x1, ..., xd], ccc]
//! [region, [[lb1, ..., lbd], [ub1, ..., ubd]], ccc]
//! ```
//!
//! The last bracketed structure that starts with a mode keyword is taken as
//! the final answer; the text before it is kept as the thinking block.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lift::{DirectiveMode, PreferenceDirective};
use crate::space::{SearchSpace, Value, VariableKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseReason {
    /// No `[point ...]` / `[region ...]` structure found.
    NoStructure,
    /// Brackets or tokens could not be read.
    Malformed,
    /// Mode keyword is neither `point` nor `region`.
    BadMode,
    /// Payload nesting does not match the mode.
    BadShape,
    /// Wrong number of coordinates.
    Arity,
    /// A numeric variable got a non-number (or a non-finite number).
    NotNumeric,
    /// Categorical literal not among the declared levels.
    UnknownLevel,
    /// Confidence missing, non-numeric or outside `[0, 1]`.
    ConfidenceRange,
    /// `lb > ub` in some dimension.
    BoundsOrder,
    /// Categorical region with `lb != ub`.
    CategoricalRange,
    /// Region does not intersect the search box.
    EmptyRegion,
}

impl ParseReason {
    pub fn code(self) -> &'static str {
        match self {
            ParseReason::NoStructure => "no_structure",
            ParseReason::Malformed => "malformed",
            ParseReason::BadMode => "bad_mode",
            ParseReason::BadShape => "bad_shape",
            ParseReason::Arity => "arity",
            ParseReason::NotNumeric => "not_numeric",
            ParseReason::UnknownLevel => "unknown_level",
            ParseReason::ConfidenceRange => "confidence_range",
            ParseReason::BoundsOrder => "bounds_order",
            ParseReason::CategoricalRange => "categorical_range",
            ParseReason::EmptyRegion => "empty_region",
        }
    }
}

impl fmt::Display for ParseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{reason}: {detail}")]
pub struct ParseError {
    pub reason: ParseReason,
    pub detail: String,
}

fn fail<T>(reason: ParseReason, detail: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        reason,
        detail: detail.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    List(Vec<Node>),
    Num(f64),
    Word(String),
}

struct Reader<'a> {
    s: &'a [u8],
    i: usize,
}

impl<'a> Reader<'a> {
    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn node(&mut self) -> Result<Node, ParseError> {
        self.skip_ws();
        let Some(&c) = self.s.get(self.i) else {
            return fail(ParseReason::Malformed, "unexpected end of input");
        };
        match c {
            b'[' => {
                self.i += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.s.get(self.i) {
                        Some(b']') => {
                            self.i += 1;
                            return Ok(Node::List(items));
                        }
                        None => return fail(ParseReason::Malformed, "unbalanced brackets"),
                        _ => {}
                    }
                    if !items.is_empty() {
                        if self.s.get(self.i) != Some(&b',') {
                            return fail(ParseReason::Malformed, format!("expected `,` at byte {}", self.i));
                        }
                        self.i += 1;
                    }
                    items.push(self.node()?);
                }
            }
            b'"' | b'\'' => {
                let quote = c;
                self.i += 1;
                let start = self.i;
                while self.i < self.s.len() && self.s[self.i] != quote {
                    self.i += 1;
                }
                if self.i >= self.s.len() {
                    return fail(ParseReason::Malformed, "unterminated string");
                }
                let text = String::from_utf8_lossy(&self.s[start..self.i]).into_owned();
                self.i += 1;
                Ok(Node::Word(text))
            }
            _ => {
                let start = self.i;
                while self.i < self.s.len() && !matches!(self.s[self.i], b',' | b'[' | b']') {
                    self.i += 1;
                }
                let tok = String::from_utf8_lossy(&self.s[start..self.i]).trim().to_owned();
                if tok.is_empty() {
                    return fail(ParseReason::Malformed, format!("empty token at byte {start}"));
                }
                match tok.parse::<f64>() {
                    Ok(v) => Ok(Node::Num(v)),
                    Err(_) => Ok(Node::Word(tok)),
                }
            }
        }
    }
}

/// Byte offset of the last `[` that opens a `point`/`region` structure.
fn locate(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut found = None;
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'[' {
            continue;
        }
        let rest = text[i + 1..].trim_start().trim_start_matches(['"', '\'']);
        let lower: String = rest.chars().take(6).collect::<String>().to_ascii_lowercase();
        if lower.starts_with("point") || lower.starts_with("region") {
            found = Some(i);
        }
    }
    found
}

fn extract_thinking(prefix: &str) -> String {
    let mut t = prefix.trim_end();
    if let Some(pos) = t.to_ascii_lowercase().rfind("final answer") {
        t = t[..pos].trim_end();
    }
    t = t.strip_suffix("2)").unwrap_or(t).trim();
    t = t.strip_prefix("1)").unwrap_or(t).trim_start();
    for marker in ["Thinking:", "Thinking"] {
        if let Some(rest) = t.strip_prefix(marker) {
            t = rest;
            break;
        }
    }
    t.trim().to_owned()
}

/// Parses raw provider text into a directive validated against `space`.
pub fn parse_directive(raw: &str, space: &SearchSpace) -> Result<PreferenceDirective, ParseError> {
    let Some(start) = locate(raw) else {
        return fail(ParseReason::NoStructure, "no [point ...] or [region ...] structure found");
    };
    let mut reader = Reader {
        s: raw.as_bytes(),
        i: start,
    };
    let node = reader.node()?;
    let thinking = extract_thinking(&raw[..start]);
    let Node::List(top) = node else {
        return fail(ParseReason::Malformed, "final answer is not a list");
    };
    if top.len() != 3 {
        return fail(ParseReason::BadShape, format!("expected [mode, payload, ccc], got {} items", top.len()));
    }
    let mode = match &top[0] {
        Node::Word(w) if w == "point" => DirectiveMode::Point,
        Node::Word(w) if w == "region" => DirectiveMode::Region,
        other => return fail(ParseReason::BadMode, format!("unknown mode {other:?}")),
    };
    let confidence = match &top[2] {
        Node::Num(c) if c.is_finite() && (0.0..=1.0).contains(c) => *c,
        Node::Num(c) => return fail(ParseReason::ConfidenceRange, format!("confidence {c} outside [0, 1]")),
        other => return fail(ParseReason::ConfidenceRange, format!("confidence is not a number: {other:?}")),
    };
    let d = space.dim();
    let directive = match mode {
        DirectiveMode::Point => {
            let Node::List(items) = &top[1] else {
                return fail(ParseReason::BadShape, "point payload must be a list");
            };
            if items.iter().any(|n| matches!(n, Node::List(_))) {
                return fail(ParseReason::BadShape, "point payload must be flat");
            }
            if items.len() != d {
                return fail(ParseReason::Arity, format!("expected {d} coordinates, got {}", items.len()));
            }
            let mut point = Vec::with_capacity(d);
            for (i, item) in items.iter().enumerate() {
                point.push(coordinate(space, i, item)?);
            }
            let point = point
                .into_iter()
                .enumerate()
                .map(|(i, v)| clamp_value(space, i, v))
                .collect();
            PreferenceDirective::point(point, confidence)
        }
        DirectiveMode::Region => {
            let Node::List(pair) = &top[1] else {
                return fail(ParseReason::BadShape, "region payload must be [[lb...], [ub...]]");
            };
            let (Some(Node::List(lb)), Some(Node::List(ub)), 2) = (pair.first(), pair.get(1), pair.len()) else {
                return fail(ParseReason::BadShape, "region payload must be [[lb...], [ub...]]");
            };
            if lb.len() != d || ub.len() != d {
                return fail(
                    ParseReason::Arity,
                    format!("expected {d} bounds per side, got {} and {}", lb.len(), ub.len()),
                );
            }
            let mut lower = Vec::with_capacity(d);
            let mut upper = Vec::with_capacity(d);
            for i in 0..d {
                let l = coordinate(space, i, &lb[i])?;
                let u = coordinate(space, i, &ub[i])?;
                let var = &space.variables()[i];
                match (&l, &u) {
                    (Value::Num(a), Value::Num(b)) => {
                        if a > b {
                            return fail(ParseReason::BoundsOrder, format!("lb > ub for `{}`", var.name));
                        }
                        let (lo, hi) = var.range().expect("numeric variable");
                        if *b < lo || *a > hi {
                            return fail(ParseReason::EmptyRegion, format!("`{}` range misses [{lo}, {hi}]", var.name));
                        }
                        lower.push(Value::Num(a.max(lo)));
                        upper.push(Value::Num(b.min(hi)));
                    }
                    _ => {
                        if l != u {
                            return fail(
                                ParseReason::CategoricalRange,
                                format!("categorical `{}` needs lb = ub", var.name),
                            );
                        }
                        lower.push(l);
                        upper.push(u);
                    }
                }
            }
            PreferenceDirective::region(lower, upper, confidence)
        }
    };
    Ok(directive.with_thinking(thinking))
}

fn coordinate(space: &SearchSpace, i: usize, node: &Node) -> Result<Value, ParseError> {
    let var = &space.variables()[i];
    match var.kind {
        VariableKind::Categorical => {
            let lit = match node {
                Node::Word(w) => w.clone(),
                Node::Num(v) => v.to_string(),
                Node::List(_) => return fail(ParseReason::BadShape, "nested list in coordinate"),
            };
            let value = Value::Text(lit.clone());
            if space.category_index(var, &value).is_err() {
                return fail(ParseReason::UnknownLevel, format!("`{lit}` is not a level of `{}`", var.name));
            }
            Ok(value)
        }
        _ => match node {
            Node::Num(v) if v.is_finite() => Ok(Value::Num(*v)),
            Node::List(_) => fail(ParseReason::BadShape, "nested list in coordinate"),
            other => fail(ParseReason::NotNumeric, format!("`{}` expects a number, got {other:?}", var.name)),
        },
    }
}

fn clamp_value(space: &SearchSpace, i: usize, v: Value) -> Value {
    match (&v, space.variables()[i].range()) {
        (Value::Num(x), Some((lo, hi))) => Value::Num(x.clamp(lo, hi)),
        _ => v,
    }
}

fn format_value(v: &Value) -> String {
    match v {
        Value::Num(x) => format!("{x:?}"),
        Value::Text(s) => {
            let bare = !s.is_empty()
                && s.parse::<f64>().is_err()
                && s.chars().all(|c| !matches!(c, ',' | '[' | ']' | '"' | '\'') && !c.is_whitespace());
            if bare {
                s.clone()
            } else {
                format!("\"{s}\"")
            }
        }
    }
}

fn format_list(vs: &[Value]) -> String {
    let parts: Vec<String> = vs.iter().map(format_value).collect();
    format!("[{}]", parts.join(", "))
}

/// Serializes a directive in the bracket grammar (no thinking block).
pub fn format_directive(d: &PreferenceDirective) -> String {
    let c = format!("{:?}", d.confidence);
    match d.mode {
        DirectiveMode::Point => format!("[point, {}, {c}]", format_list(d.point.as_deref().unwrap_or_default())),
        DirectiveMode::Region => {
            let (lb, ub) = d.region.as_ref().map(|(l, u)| (l.as_slice(), u.as_slice())).unwrap_or_default();
            format!("[region, [{}, {}], {c}]", format_list(lb), format_list(ub))
        }
    }
}
