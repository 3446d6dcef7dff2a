//! Search-space declarations and the physical <-> unit-cube mapping.
//!
//! The GP works exclusively in normalized coordinates. Continuous variables
//! map affinely onto `[0, 1]`, discrete variables map by level index, and
//! categorical variables expand into one-hot blocks. Anything that leaves
//! the library towards a human or an LLM is expressed in physical units.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("variable `{name}`: value {value} outside bounds [{lower}, {upper}]")]
    Bounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("variable `{name}`: `{value}` is not a declared level")]
    Level { name: String, value: String },
    #[error("expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid declaration at variables[{index}] (`{name}`): {reason}")]
    Declaration {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("schema: {0}")]
    Schema(String),
}

/// A physical coordinate value: numbers for continuous/discrete variables,
/// literals for categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Text(s) => write!(f, "{s}"),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    Discrete,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<Value>>,
}

impl VariableSpec {
    pub fn continuous(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_owned(),
            kind: VariableKind::Continuous,
            bounds: Some([lower, upper]),
            levels: None,
        }
    }

    pub fn discrete(name: &str, levels: &[f64]) -> Self {
        Self {
            name: name.to_owned(),
            kind: VariableKind::Discrete,
            bounds: None,
            levels: Some(levels.iter().map(|&v| Value::Num(v)).collect()),
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_owned(),
            kind: VariableKind::Categorical,
            bounds: None,
            levels: Some(levels.iter().map(|&s| Value::from(s)).collect()),
        }
    }

    /// Physical range `[lower, upper]` for numeric variables.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self.kind {
            VariableKind::Continuous => self.bounds.map(|[l, u]| (l, u)),
            VariableKind::Discrete => {
                let lv = self.numeric_levels();
                Some((lv[0], lv[lv.len() - 1]))
            }
            VariableKind::Categorical => None,
        }
    }

    fn numeric_levels(&self) -> Vec<f64> {
        self.levels
            .as_deref()
            .unwrap_or_default()
            .iter()
            .filter_map(Value::as_f64)
            .collect()
    }

    fn text_levels(&self) -> Vec<&str> {
        self.levels
            .as_deref()
            .unwrap_or_default()
            .iter()
            .filter_map(|v| match v {
                Value::Text(s) => Some(s.as_str()),
                Value::Num(_) => None,
            })
            .collect()
    }

    /// Number of encoded coordinates this variable occupies.
    pub fn width(&self) -> usize {
        match self.kind {
            VariableKind::Categorical => self.levels.as_ref().map_or(0, Vec::len),
            _ => 1,
        }
    }

    fn validate(&self, index: usize) -> Result<(), SpaceError> {
        let fail = |reason: &str| SpaceError::Declaration {
            index,
            name: self.name.clone(),
            reason: reason.to_owned(),
        };
        if self.name.trim().is_empty() {
            return Err(fail("empty name"));
        }
        match self.kind {
            VariableKind::Continuous => {
                let [l, u] = self.bounds.ok_or_else(|| fail("continuous variable needs bounds"))?;
                if !(l.is_finite() && u.is_finite()) {
                    return Err(fail("bounds must be finite"));
                }
                if l >= u {
                    return Err(fail("lower bound must be < upper bound"));
                }
            }
            VariableKind::Discrete => {
                let levels = self.levels.as_ref().ok_or_else(|| fail("discrete variable needs levels"))?;
                if levels.is_empty() {
                    return Err(fail("levels must be non-empty"));
                }
                let nums = self.numeric_levels();
                if nums.len() != levels.len() || nums.iter().any(|v| !v.is_finite()) {
                    return Err(fail("discrete levels must be finite numbers"));
                }
                if nums.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(fail("discrete levels must be strictly increasing"));
                }
            }
            VariableKind::Categorical => {
                let levels = self.levels.as_ref().ok_or_else(|| fail("categorical variable needs levels"))?;
                if levels.is_empty() {
                    return Err(fail("levels must be non-empty"));
                }
                let texts = self.text_levels();
                if texts.len() != levels.len() {
                    return Err(fail("categorical levels must be strings"));
                }
                for (i, a) in texts.iter().enumerate() {
                    if texts[..i].contains(a) {
                        return Err(fail("categorical levels must be unique"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Position of a coordinate inside the encoded vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub len: usize,
    pub kind: VariableKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSpace {
    variables: Vec<VariableSpec>,
    #[serde(skip)]
    blocks: Vec<Block>,
}

#[derive(Deserialize)]
struct RawSpace {
    variables: Vec<VariableSpec>,
}

impl<'de> Deserialize<'de> for SearchSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawSpace::deserialize(d)?;
        SearchSpace::new(raw.variables).map_err(serde::de::Error::custom)
    }
}

impl SearchSpace {
    pub fn new(variables: Vec<VariableSpec>) -> Result<Self, SpaceError> {
        if variables.is_empty() {
            return Err(SpaceError::Schema("at least one variable is required".into()));
        }
        for (i, v) in variables.iter().enumerate() {
            v.validate(i)?;
            if variables[..i].iter().any(|w| w.name == v.name) {
                return Err(SpaceError::Declaration {
                    index: i,
                    name: v.name.clone(),
                    reason: "duplicate variable name".into(),
                });
            }
        }
        let mut blocks = Vec::with_capacity(variables.len());
        let mut start = 0;
        for v in &variables {
            blocks.push(Block {
                start,
                len: v.width(),
                kind: v.kind,
            });
            start += v.width();
        }
        Ok(Self { variables, blocks })
    }

    /// Parses the `{"variables": [...]}` sidecar form.
    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        serde_json::from_str(text).map_err(|e| SpaceError::Schema(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, SpaceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpaceError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Number of declared variables (the LLM-facing `d`).
    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn encoded_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len)
    }

    pub fn has_discrete_structure(&self) -> bool {
        self.variables.iter().any(|v| v.kind != VariableKind::Continuous)
    }

    /// Physical point -> encoded unit-cube point.
    pub fn normalize(&self, point: &[Value]) -> Result<Vec<f64>, SpaceError> {
        self.check_dim(point.len())?;
        let mut out = vec![0.0; self.encoded_dim()];
        for ((var, block), value) in self.variables.iter().zip(&self.blocks).zip(point) {
            match var.kind {
                VariableKind::Continuous => {
                    let x = self.numeric(var, value)?;
                    let (l, u) = var.range().expect("validated");
                    if !(l..=u).contains(&x) {
                        return Err(bounds_error(var, x));
                    }
                    out[block.start] = (x - l) / (u - l);
                }
                VariableKind::Discrete => {
                    let x = self.numeric(var, value)?;
                    let levels = var.numeric_levels();
                    let idx = levels
                        .iter()
                        .position(|&l| (l - x).abs() <= 1e-9 * l.abs().max(1.0))
                        .ok_or_else(|| {
                            let (l, u) = var.range().expect("validated");
                            if x < l || x > u {
                                bounds_error(var, x)
                            } else {
                                SpaceError::Level {
                                    name: var.name.clone(),
                                    value: x.to_string(),
                                }
                            }
                        })?;
                    out[block.start] = index_position(idx, levels.len());
                }
                VariableKind::Categorical => {
                    let idx = self.category_index(var, value)?;
                    out[block.start + idx] = 1.0;
                }
            }
        }
        Ok(out)
    }

    /// Encoded point -> physical point. Coordinates are clamped to `[0, 1]`;
    /// discrete coordinates snap to the nearest level index and one-hot
    /// blocks resolve to their argmax (lowest index on ties).
    pub fn denormalize(&self, unit: &[f64]) -> Vec<Value> {
        assert_eq!(unit.len(), self.encoded_dim(), "encoded dimension mismatch");
        self.variables
            .iter()
            .zip(&self.blocks)
            .map(|(var, block)| match var.kind {
                VariableKind::Continuous => {
                    let (l, u) = var.range().expect("validated");
                    let t = unit[block.start].clamp(0.0, 1.0);
                    Value::Num(if t >= 1.0 { u } else { l + t * (u - l) })
                }
                VariableKind::Discrete => {
                    let levels = var.numeric_levels();
                    let t = unit[block.start].clamp(0.0, 1.0);
                    let idx = (t * (levels.len() - 1) as f64).round() as usize;
                    Value::Num(levels[idx.min(levels.len() - 1)])
                }
                VariableKind::Categorical => {
                    let slice = &unit[block.start..block.start + block.len];
                    let idx = argmax(slice);
                    var.levels.as_ref().expect("validated")[idx].clone()
                }
            })
            .collect()
    }

    /// Projects an encoded point onto the nearest representable point
    /// (levels and one-hot vertices); continuous coordinates are clamped.
    pub fn snap(&self, unit: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = unit.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        for (var, block) in self.variables.iter().zip(&self.blocks) {
            match var.kind {
                VariableKind::Continuous => {}
                VariableKind::Discrete => {
                    let n = var.width().max(var.levels.as_ref().map_or(1, Vec::len));
                    let idx = (out[block.start] * (n - 1) as f64).round() as usize;
                    out[block.start] = index_position(idx.min(n - 1), n);
                }
                VariableKind::Categorical => {
                    let slice = &mut out[block.start..block.start + block.len];
                    let idx = argmax(slice);
                    slice.iter_mut().for_each(|v| *v = 0.0);
                    slice[idx] = 1.0;
                }
            }
        }
        out
    }

    /// Relaxed normalization of a single numeric bound. Discrete variables use
    /// piecewise-linear interpolation between level positions so that values
    /// between levels (e.g. region bounds) are representable.
    pub fn normalize_relaxed(&self, var_index: usize, value: f64) -> Result<f64, SpaceError> {
        let var = &self.variables[var_index];
        match var.kind {
            VariableKind::Continuous => {
                let (l, u) = var.range().expect("validated");
                Ok((value - l) / (u - l))
            }
            VariableKind::Discrete => {
                let levels = var.numeric_levels();
                if levels.len() == 1 {
                    return Ok(0.0);
                }
                let n = levels.len();
                if value <= levels[0] {
                    return Ok(0.0 - (levels[0] - value) / (levels[1] - levels[0]) / (n - 1) as f64);
                }
                for i in 0..n - 1 {
                    if value <= levels[i + 1] {
                        let frac = (value - levels[i]) / (levels[i + 1] - levels[i]);
                        return Ok((i as f64 + frac) / (n - 1) as f64);
                    }
                }
                let last = levels[n - 1] - levels[n - 2];
                Ok(1.0 + (value - levels[n - 1]) / last / (n - 1) as f64)
            }
            VariableKind::Categorical => Err(SpaceError::Level {
                name: var.name.clone(),
                value: value.to_string(),
            }),
        }
    }

    /// Inverse of [`normalize_relaxed`](Self::normalize_relaxed) on `[0, 1]`.
    pub fn denormalize_relaxed(&self, var_index: usize, t: f64) -> f64 {
        let var = &self.variables[var_index];
        let t = t.clamp(0.0, 1.0);
        match var.kind {
            VariableKind::Continuous => {
                let (l, u) = var.range().expect("validated");
                if t >= 1.0 {
                    u
                } else {
                    l + t * (u - l)
                }
            }
            VariableKind::Discrete => {
                let levels = var.numeric_levels();
                let n = levels.len();
                if n == 1 {
                    return levels[0];
                }
                let pos = t * (n - 1) as f64;
                let i = (pos.floor() as usize).min(n - 2);
                let frac = pos - i as f64;
                if frac >= 1.0 {
                    levels[i + 1]
                } else {
                    levels[i] + frac * (levels[i + 1] - levels[i])
                }
            }
            VariableKind::Categorical => panic!("categorical variable has no relaxed coordinate"),
        }
    }

    /// Index of a categorical literal (case-sensitive).
    pub fn category_index(&self, var: &VariableSpec, value: &Value) -> Result<usize, SpaceError> {
        let Value::Text(s) = value else {
            return Err(SpaceError::Level {
                name: var.name.clone(),
                value: value.to_string(),
            });
        };
        var.text_levels()
            .iter()
            .position(|l| l == s)
            .ok_or_else(|| SpaceError::Level {
                name: var.name.clone(),
                value: s.clone(),
            })
    }

    /// `n` scrambled-Sobol points in `[0, 1]^encoded_dim`.
    pub fn sobol_sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        sobol_points(self.encoded_dim(), n, seed)
    }

    fn numeric(&self, var: &VariableSpec, value: &Value) -> Result<f64, SpaceError> {
        match value {
            Value::Num(x) if x.is_finite() => Ok(*x),
            _ => Err(SpaceError::Level {
                name: var.name.clone(),
                value: value.to_string(),
            }),
        }
    }

    fn check_dim(&self, got: usize) -> Result<(), SpaceError> {
        if got != self.dim() {
            return Err(SpaceError::Dimension {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

fn bounds_error(var: &VariableSpec, x: f64) -> SpaceError {
    let (lower, upper) = var.range().unwrap_or((f64::NAN, f64::NAN));
    SpaceError::Bounds {
        name: var.name.clone(),
        value: x,
        lower,
        upper,
    }
}

fn index_position(idx: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        idx as f64 / (n - 1) as f64
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Owen-scrambled Sobol points in `[0, 1]^dim`, keyed by `seed`.
///
/// At most 2^16 points per call; dimensions beyond the generator's table
/// reuse dimensions with a derived seed.
pub fn sobol_points(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n <= 1 << 16, "at most 65536 Sobol points per draw");
    let table = sobol_burley::NUM_DIMENSIONS as usize;
    (0..n as u32)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let block = (j / table) as u64;
                    let s = seeding::derive_u32(seed, &[block]);
                    f64::from(sobol_burley::sample(i, (j % table) as u32, s))
                })
                .collect()
        })
        .collect()
}
