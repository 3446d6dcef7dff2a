//! Tabular datasets as continuous black-box objectives.
//!
//! A table whose rows enumerate a full Cartesian grid is interpolated
//! multilinearly; anything else goes through k-nearest-neighbour inverse
//! distance weighting in the encoded unit cube. Multi-objective tables are
//! scalarized by summing range-normalized objectives, with minimized
//! objectives flipped.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{SearchSpace, SpaceError, Value, VariableKind, VariableSpec};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("header mismatch: expected [{expected}], got [{got}]")]
    Header { expected: String, got: String },
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    Cell { row: usize, column: String, value: String },
    #[error("row {row}: {source}")]
    Row { row: usize, source: SpaceError },
    #[error("rows {first} and {second} have identical inputs")]
    Duplicate { first: usize, second: usize },
    #[error("dataset has no rows")]
    Empty,
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: String,
    pub direction: Direction,
}

/// Search space plus objective columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub variables: Vec<VariableSpec>,
    pub objectives: Vec<ObjectiveSpec>,
}

impl DatasetSchema {
    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let schema: Self = serde_json::from_str(text).map_err(|e| OracleError::Schema(e.to_string()))?;
        if schema.objectives.is_empty() {
            return Err(OracleError::Schema("at least one objective is required".into()));
        }
        schema.space()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self, OracleError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn space(&self) -> Result<SearchSpace, OracleError> {
        Ok(SearchSpace::new(self.variables.clone())?)
    }

    pub fn header(&self) -> Vec<String> {
        self.variables
            .iter()
            .map(|v| v.name.clone())
            .chain(self.objectives.iter().map(|o| o.name.clone()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetTable {
    pub schema: DatasetSchema,
    pub space: SearchSpace,
    /// Physical inputs per row.
    pub inputs: Vec<Vec<Value>>,
    /// Objective values per row, in schema order.
    pub values: Vec<Vec<f64>>,
    /// Observed `(min, max)` per objective.
    pub ranges: Vec<(f64, f64)>,
}

impl DatasetTable {
    pub fn new(schema: DatasetSchema, inputs: Vec<Vec<Value>>, values: Vec<Vec<f64>>) -> Result<Self, OracleError> {
        let space = schema.space()?;
        if inputs.is_empty() {
            return Err(OracleError::Empty);
        }
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for (row, x) in inputs.iter().enumerate() {
            let enc = space.normalize(x).map_err(|source| OracleError::Row { row, source })?;
            let key: Vec<u64> = enc.iter().map(|v| v.to_bits()).collect();
            if let Some(first) = seen.insert(key, row) {
                return Err(OracleError::Duplicate { first, second: row });
            }
        }
        let m = schema.objectives.len();
        let ranges = (0..m)
            .map(|j| {
                values
                    .iter()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .collect();
        Ok(Self {
            schema,
            space,
            inputs,
            values,
            ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.schema.objectives.iter().map(|o| o.direction).collect()
    }

    /// One scalar per row: the raw value for single-objective tables,
    /// otherwise the scalarized sum.
    pub fn scalar_values(&self) -> Vec<f64> {
        if self.schema.objectives.len() == 1 {
            return self.values.iter().map(|r| r[0]).collect();
        }
        let dirs = self.directions();
        self.values.iter().map(|r| scalarize(r, &dirs, &self.ranges).value).collect()
    }
}

/// Reads a CSV whose header is the schema's variables then objectives.
pub fn load_dataset(csv_path: &Path, schema_path: &Path) -> Result<DatasetTable, OracleError> {
    let schema = DatasetSchema::from_path(schema_path)?;
    let file = std::fs::File::open(csv_path)?;
    read_table(schema, file)
}

pub fn read_table<R: std::io::Read>(schema: DatasetSchema, reader: R) -> Result<DatasetTable, OracleError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let expected = schema.header();
    if header != expected {
        return Err(OracleError::Header {
            expected: expected.join(","),
            got: header.join(","),
        });
    }
    let d = schema.variables.len();
    let mut inputs = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut x = Vec::with_capacity(d);
        for (j, var) in schema.variables.iter().enumerate() {
            let cell = &rec[j];
            x.push(match var.kind {
                VariableKind::Categorical => Value::Text(cell.to_owned()),
                _ => Value::Num(number(cell, row, &var.name)?),
            });
        }
        let y = schema
            .objectives
            .iter()
            .enumerate()
            .map(|(k, o)| number(&rec[d + k], row, &o.name))
            .collect::<Result<Vec<_>, _>>()?;
        inputs.push(x);
        values.push(y);
    }
    DatasetTable::new(schema, inputs, values)
}

fn number(cell: &str, row: usize, column: &str) -> Result<f64, OracleError> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| OracleError::Cell {
        row,
        column: column.to_owned(),
        value: cell.to_owned(),
    })
}

/// Writes a table in the layout [`read_table`] accepts.
pub fn write_table<W: std::io::Write>(table: &DatasetTable, writer: W) -> Result<(), OracleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(table.schema.header())?;
    for (x, y) in table.inputs.iter().zip(&table.values) {
        let rec: Vec<String> = x.iter().map(|v| v.to_string()).chain(y.iter().map(|v| v.to_string())).collect();
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalarized {
    pub value: f64,
    /// Some objective had a zero-width range and contributed nothing.
    pub degenerate: bool,
}

/// `Σ u_j` with `u = (v - min) / (max - min)`, flipped to `1 - u` for
/// minimized objectives.
pub fn scalarize(values: &[f64], directions: &[Direction], ranges: &[(f64, f64)]) -> Scalarized {
    let mut total = 0.0;
    let mut degenerate = false;
    for ((v, dir), (lo, hi)) in values.iter().zip(directions).zip(ranges) {
        let width = hi - lo;
        if !(width > 0.0) {
            degenerate = true;
            continue;
        }
        let u = (v - lo) / width;
        total += match dir {
            Direction::Maximize => u,
            Direction::Minimize => 1.0 - u,
        };
    }
    Scalarized {
        value: total,
        degenerate,
    }
}

/// Per-variable grid coordinate: the numeric value, or the level index for
/// categoricals.
fn grid_coords(space: &SearchSpace, x: &[Value]) -> Result<Vec<f64>, SpaceError> {
    space
        .variables()
        .iter()
        .zip(x)
        .map(|(var, v)| match var.kind {
            VariableKind::Categorical => space.category_index(var, v).map(|i| i as f64),
            _ => v.as_f64().ok_or_else(|| SpaceError::Level {
                name: var.name.clone(),
                value: v.to_string(),
            }),
        })
        .collect()
}

/// A complete Cartesian grid with values in row-major order (last axis
/// fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct RegularGrid {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl RegularGrid {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        assert_eq!(axes.iter().map(Vec::len).product::<usize>(), values.len(), "grid shape mismatch");
        Self { axes, values }
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (i, ax)| acc * ax.len() + i)
    }
}

/// Axes of `coords` if the rows enumerate a full grid, with values placed
/// in row-major order.
pub fn detect_full_grid_coords(coords: &[Vec<f64>], values: &[f64]) -> Option<RegularGrid> {
    let d = coords.first()?.len();
    let mut axes: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut ax: Vec<f64> = coords.iter().map(|c| c[j]).collect();
            ax.sort_by(f64::total_cmp);
            ax.dedup();
            ax
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    if total != coords.len() {
        return None;
    }
    let mut grid_values = vec![f64::NAN; total];
    let mut filled = vec![false; total];
    for (c, v) in coords.iter().zip(values) {
        let idx: Vec<usize> = c
            .iter()
            .zip(&axes)
            .map(|(x, ax)| ax.binary_search_by(|a| a.total_cmp(x)).expect("level present"))
            .collect();
        let flat = idx.iter().zip(&axes).fold(0, |acc, (i, ax)| acc * ax.len() + i);
        if filled[flat] {
            return None;
        }
        filled[flat] = true;
        grid_values[flat] = *v;
    }
    if filled.iter().all(|f| *f) {
        axes.shrink_to_fit();
        Some(RegularGrid::new(axes, grid_values))
    } else {
        None
    }
}

/// Full-grid detection on a loaded table, using its scalar values.
pub fn detect_full_grid(table: &DatasetTable) -> Option<RegularGrid> {
    let coords: Vec<Vec<f64>> = table
        .inputs
        .iter()
        .map(|x| grid_coords(&table.space, x).expect("validated row"))
        .collect();
    detect_full_grid_coords(&coords, &table.scalar_values())
}

/// Multilinear blend of the `2^d` cell corners around `query`. Returns the
/// value and whether the query had to be clamped into the grid box.
pub fn multilinear_interpolate(grid: &RegularGrid, query: &[f64]) -> (f64, bool) {
    let d = grid.axes.len();
    let mut clamped = false;
    let mut lo = vec![0usize; d];
    let mut frac = vec![0.0; d];
    for j in 0..d {
        let ax = &grid.axes[j];
        let (a, b) = (ax[0], ax[ax.len() - 1]);
        let mut q = query[j];
        if q < a || q > b {
            clamped = true;
            q = q.clamp(a, b);
        }
        if ax.len() == 1 {
            continue;
        }
        let i = ax.partition_point(|v| *v <= q).saturating_sub(1).min(ax.len() - 2);
        lo[j] = i;
        frac[j] = (q - ax[i]) / (ax[i + 1] - ax[i]);
    }
    let mut total = 0.0;
    let mut idx = vec![0usize; d];
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        for j in 0..d {
            let up = corner >> j & 1 == 1;
            if grid.axes[j].len() == 1 {
                if up {
                    w = 0.0;
                    break;
                }
                idx[j] = 0;
                continue;
            }
            idx[j] = lo[j] + up as usize;
            w *= if up { frac[j] } else { 1.0 - frac[j] };
        }
        if w != 0.0 {
            total += w * grid.values[grid.flat_index(&idx)];
        }
    }
    (total, clamped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub k: usize,
    pub p: f64,
    pub eps: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            k: 12,
            p: 2.0,
            eps: 1e-12,
        }
    }
}

/// Inverse-distance-weighted mean of the `k` nearest rows (Euclidean in the
/// given coordinates). A row within `eps` of the query is returned as is.
pub fn knn_idw(points: &[Vec<f64>], values: &[f64], query: &[f64], config: &OracleConfig) -> f64 {
    assert!(!points.is_empty(), "knn_idw needs at least one row");
    let mut dist: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
        .collect();
    // distance, then coordinates, so the result does not depend on row order
    dist.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            points[a.1]
                .iter()
                .zip(&points[b.1])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    if dist[0].0 < config.eps {
        return values[dist[0].1];
    }
    let k = config.k.clamp(1, points.len());
    let (mut num, mut den) = (0.0, 0.0);
    for &(d, i) in &dist[..k] {
        let w = d.powf(-config.p);
        num += w * values[i];
        den += w;
    }
    num / den
}

/// A maximization target over a declared space.
pub trait Objective: Send + Sync {
    fn space(&self) -> &SearchSpace;
    fn evaluate(&self, point: &[Value]) -> Result<f64, OracleError>;
    /// Best attainable value, when known.
    fn best_value(&self) -> Option<f64>;
    fn name(&self) -> &str;
}

#[derive(Debug, Clone)]
enum Interpolant {
    Grid(RegularGrid),
    Scattered { encoded: Vec<Vec<f64>> },
}

/// Dataset-backed objective.
#[derive(Debug, Clone)]
pub struct TableOracle {
    name: String,
    table: DatasetTable,
    scalar: Vec<f64>,
    path: Interpolant,
    config: OracleConfig,
}

impl TableOracle {
    pub fn new(name: &str, table: DatasetTable, config: OracleConfig) -> Self {
        let scalar = table.scalar_values();
        let path = match detect_full_grid(&table) {
            Some(g) => Interpolant::Grid(g),
            None => Interpolant::Scattered {
                encoded: table
                    .inputs
                    .iter()
                    .map(|x| table.space.normalize(x).expect("validated row"))
                    .collect(),
            },
        };
        Self {
            name: name.to_owned(),
            table,
            scalar,
            path,
            config,
        }
    }

    pub fn load(name: &str, csv_path: &Path, schema_path: &Path) -> Result<Self, OracleError> {
        Ok(Self::new(name, load_dataset(csv_path, schema_path)?, OracleConfig::default()))
    }

    pub fn table(&self) -> &DatasetTable {
        &self.table
    }

    pub fn uses_grid(&self) -> bool {
        matches!(self.path, Interpolant::Grid(_))
    }

    /// Index of the best row (first on ties).
    pub fn best_row(&self) -> usize {
        crate::space::argmax(&self.scalar)
    }
}

impl Objective for TableOracle {
    fn space(&self) -> &SearchSpace {
        &self.table.space
    }

    fn evaluate(&self, point: &[Value]) -> Result<f64, OracleError> {
        let enc = self.table.space.normalize(point)?;
        Ok(match &self.path {
            Interpolant::Grid(g) => multilinear_interpolate(g, &grid_coords(&self.table.space, point)?).0,
            Interpolant::Scattered { encoded } => knn_idw(encoded, &self.scalar, &enc, &self.config),
        })
    }

    fn best_value(&self) -> Option<f64> {
        self.scalar.iter().copied().reduce(f64::max)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema_1d() -> DatasetSchema {
        DatasetSchema::from_json(
            r#"{"variables":[{"name":"x","kind":"continuous","bounds":[0,2]}],
                "objectives":[{"name":"y","direction":"maximize"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn header_and_cell_errors() {
        let e = read_table(schema_1d(), "x,z\n0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(e, OracleError::Header { .. }));
        let e = read_table(schema_1d(), "x,y\n0,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(e, OracleError::Cell { row: 0, .. }));
        assert!(matches!(read_table(schema_1d(), "x,y\n".as_bytes()), Err(OracleError::Empty)));
    }

    #[test]
    fn bounds_and_duplicates_rejected() {
        let e = read_table(schema_1d(), "x,y\n0,1\n5,1\n".as_bytes()).unwrap_err();
        assert!(matches!(e, OracleError::Row { row: 1, .. }));
        let e = read_table(schema_1d(), "x,y\n0,1\n1,2\n0,3\n".as_bytes()).unwrap_err();
        assert!(matches!(e, OracleError::Duplicate { first: 0, second: 2 }));
    }

    #[test]
    fn grid_detection() {
        let t = read_table(schema_1d(), "x,y\n2,4\n0,0\n1,1\n".as_bytes()).unwrap();
        let g = detect_full_grid(&t).unwrap();
        assert_eq!(g.axes, vec![vec![0.0, 1.0, 2.0]]);
        assert_eq!(g.values, vec![0.0, 1.0, 4.0]);
        let coords = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(detect_full_grid_coords(&coords, &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn multilinear_reference_cases() {
        let g1 = RegularGrid::new(vec![vec![0.0, 1.0]], vec![2.0, 4.0]);
        assert_eq!(multilinear_interpolate(&g1, &[0.5]), (3.0, false));
        let g2 = RegularGrid::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(multilinear_interpolate(&g2, &[0.5, 0.5]).0, 1.5);
        assert_eq!(multilinear_interpolate(&g2, &[1.0, 1.0]).0, 3.0);
        assert_eq!(multilinear_interpolate(&g2, &[2.0, 0.0]), (2.0, true));
    }

    #[test]
    fn idw_reference_cases() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        let vals = [1.0, 3.0, 10.0];
        let cfg = OracleConfig { k: 2, ..Default::default() };
        assert_eq!(knn_idw(&pts, &vals, &[1.0], &cfg), 3.0);
        assert!((knn_idw(&pts, &vals, &[0.5], &cfg) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn scalarize_rules() {
        let dirs = [Direction::Maximize, Direction::Maximize, Direction::Minimize];
        let ranges = [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)];
        assert_eq!(scalarize(&[1.0, 1.0, 0.0], &dirs, &ranges).value, 3.0);
        assert_eq!(scalarize(&[0.0, 0.0, 1.0], &dirs, &ranges).value, 0.0);
        assert_eq!(scalarize(&[0.5, 1.0, 0.25], &dirs, &ranges).value, 2.25);
        let s = scalarize(&[0.5, 1.0, 0.25], &dirs, &[(0.0, 1.0), (1.0, 1.0), (0.0, 1.0)]);
        assert!(s.degenerate);
        assert_eq!(s.value, 1.25);
    }

    #[test]
    fn oracle_exact_at_rows_and_order_invariant() {
        let csv = "x,y\n0,1\n0.3,5\n0.9,2\n1.4,7\n2,3\n";
        let t = read_table(schema_1d(), csv.as_bytes()).unwrap();
        let o = TableOracle::new("t", t, OracleConfig::default());
        assert!(o.uses_grid());
        for (x, y) in [(0.0, 1.0), (0.3, 5.0), (1.4, 7.0)] {
            assert_eq!(o.evaluate(&[x.into()]).unwrap(), y);
        }
        let rev = "x,y\n2,3\n1.4,7\n0.9,2\n0.3,5\n0,1\n";
        let o2 = TableOracle::new("t", read_table(schema_1d(), rev.as_bytes()).unwrap(), OracleConfig::default());
        for q in [0.1, 0.77, 1.9] {
            assert_eq!(o.evaluate(&[q.into()]).unwrap(), o2.evaluate(&[q.into()]).unwrap());
        }
        assert_eq!(o.best_value(), Some(7.0));
        assert!(o.evaluate(&[3.0.into()]).is_err());
    }

    proptest! {
        #[test]
        fn idw_is_convex_combination(
            pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 3..20),
            q in prop::collection::vec(0.0f64..1.0, 2),
            k in 1usize..8,
        ) {
            let vals: Vec<f64> = pts.iter().map(|p| p[0] * 3.0 - p[1]).collect();
            let cfg = OracleConfig { k, ..Default::default() };
            let v = knn_idw(&pts, &vals, &q, &cfg);
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
