//! Built-in benchmark objectives: a rescaled Branin function and generated
//! stand-in tables with the Cross-barrel and LNP3 schemas.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::oracle::{
    write_table, DatasetSchema, DatasetTable, Direction, Objective, ObjectiveSpec, OracleConfig, OracleError,
    TableOracle,
};
use crate::seeding;
use crate::space::{sobol_points, SearchSpace, Value, VariableSpec};

/// Global minimum of the Branin function.
pub const BRANIN_MIN: f64 = 0.397_887_357_729_738_2;
/// The three minimizers of the Branin function.
pub const BRANIN_MINIMIZERS: [[f64; 2]; 3] = [[-PI, 12.275], [PI, 2.275], [9.424_777_960_769_38, 2.475]];

pub fn branin_raw(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Branin on `[-5, 10] x [0, 15]`, flipped and rescaled to `[0, 1]` so that
/// the three minimizers score 1 and the worst corner scores 0.
#[derive(Debug, Clone)]
pub struct Branin {
    space: SearchSpace,
    max_raw: f64,
}

impl Default for Branin {
    fn default() -> Self {
        Self::new()
    }
}

impl Branin {
    pub fn new() -> Self {
        let space = SearchSpace::new(vec![
            VariableSpec::continuous("x1", -5.0, 10.0),
            VariableSpec::continuous("x2", 0.0, 15.0),
        ])
        .expect("static space");
        Self {
            space,
            max_raw: branin_raw(-5.0, 0.0),
        }
    }

    pub fn value_at(&self, x1: f64, x2: f64) -> f64 {
        (self.max_raw - branin_raw(x1, x2)) / (self.max_raw - BRANIN_MIN)
    }
}

impl Objective for Branin {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, point: &[Value]) -> Result<f64, OracleError> {
        self.space.normalize(point)?;
        let x = |i: usize| point[i].as_f64().expect("validated");
        Ok(self.value_at(x(0), x(1)))
    }

    fn best_value(&self) -> Option<f64> {
        Some(1.0)
    }

    fn name(&self) -> &str {
        "branin"
    }
}

pub fn cross_barrel_schema() -> DatasetSchema {
    DatasetSchema {
        variables: vec![
            VariableSpec::continuous("n", 6.0, 12.0),
            VariableSpec::continuous("theta", 0.0, 200.0),
            VariableSpec::continuous("r", 1.5, 2.5),
            VariableSpec::continuous("t", 0.7, 1.4),
        ],
        objectives: vec![ObjectiveSpec {
            name: "toughness".into(),
            direction: Direction::Maximize,
        }],
    }
}

pub const CROSS_BARREL_ROWS: usize = 600;

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

/// 600 scattered designs with a smooth single-peak toughness surface and
/// mild measurement noise.
pub fn cross_barrel_table(seed: u64) -> DatasetTable {
    let schema = cross_barrel_schema();
    let space = schema.space().expect("static schema");
    let mut rng = seeding::rng(seed, &[seeding::purpose::NOISE]);
    let noise = Normal::new(0.0, 0.4).expect("valid sd");
    let pts = sobol_points(4, CROSS_BARREL_ROWS, seeding::derive(seed, &[seeding::purpose::INSTANCE]));
    let mut inputs = Vec::with_capacity(pts.len());
    let mut values = Vec::with_capacity(pts.len());
    for u in pts {
        let x: Vec<Value> = (0..4)
            .map(|i| Value::Num(round_to(space.denormalize_relaxed(i, u[i]), 4)))
            .collect();
        let z: Vec<f64> = (0..4)
            .map(|i| space.normalize_relaxed(i, x[i].as_f64().expect("numeric")).expect("in range"))
            .collect();
        let peak = (-((z[0] - 0.55).powi(2) / 0.18
            + (z[1] - 0.35).powi(2) / 0.12
            + (z[2] - 0.6).powi(2) / 0.3
            + (z[3] - 0.8).powi(2) / 0.2))
            .exp();
        let tough = 40.0 * peak + 8.0 * z[3] + 3.0 * (3.0 * z[1]).sin() + 5.0 + noise.sample(&mut rng);
        inputs.push(x);
        values.push(vec![round_to(tough, 4)]);
    }
    DatasetTable::new(schema, inputs, values).expect("generated rows are valid")
}

pub const LNP3_LIPIDS: [&str; 3] = ["Stearic_acid", "Compritol_888", "Glyceryl_monostearate"];

pub fn lnp3_schema() -> DatasetSchema {
    DatasetSchema {
        variables: vec![
            VariableSpec::discrete("drug_input", &[6.0, 12.0, 24.0, 48.0]),
            VariableSpec::categorical("solid_lipid", &LNP3_LIPIDS),
            VariableSpec::discrete("solid_lipid_input", &[72.0, 96.0, 108.0, 120.0]),
            VariableSpec::discrete("liquid_lipid_input", &[0.0, 12.0, 24.0, 48.0]),
            VariableSpec::discrete("surfactant_input", &[0.0, 0.0025, 0.005, 0.01]),
        ],
        objectives: vec![
            ObjectiveSpec {
                name: "drug_loading".into(),
                direction: Direction::Maximize,
            },
            ObjectiveSpec {
                name: "encapsulation_efficiency".into(),
                direction: Direction::Maximize,
            },
            ObjectiveSpec {
                name: "particle_diameter".into(),
                direction: Direction::Minimize,
            },
        ],
    }
}

/// `(drug_loading, encapsulation_efficiency, particle_diameter)` for level
/// indices `[drug, lipid, solid, liquid, surfactant]`.
fn lnp3_response(idx: [usize; 5]) -> [f64; 3] {
    let drug: f64 = [6.0, 12.0, 24.0, 48.0][idx[0]];
    let solid: f64 = [72.0, 96.0, 108.0, 120.0][idx[2]];
    let liquid: f64 = [0.0, 12.0, 24.0, 48.0][idx[3]];
    let surf: f64 = [0.0, 0.0025, 0.005, 0.01][idx[4]];
    let lipid = solid + liquid;
    // Compritol packs drug best, stearic acid crystallizes and expels it
    let (ee_shift, size_shift, capacity): (f64, f64, f64) = match idx[1] {
        0 => (-6.0, 12.0, 0.30),
        1 => (4.0, -10.0, 0.42),
        _ => (0.0, 18.0, 0.36),
    };
    let ratio = drug / lipid;
    let liquid_frac = liquid / lipid;
    // imperfect crystal from a moderate liquid fraction holds more drug
    let ee = 96.0 - 160.0 * (ratio - capacity * 0.4).max(0.0) - 900.0 * (liquid_frac - 0.14).powi(2) + ee_shift
        - 9.0e4 * (surf - 0.006).powi(2)
        - 0.01 * (solid - 100.0).powi(2);
    let ee = ee.clamp(5.0, 99.5);
    let dl = 100.0 * drug * ee / 100.0 / (drug + lipid);
    let diameter = 150.0 + 0.35 * lipid + 1.5 * drug - 6000.0 * surf + 4.0e5 * surf * surf + size_shift;
    [dl, ee, diameter]
}

/// Full 4 x 3 x 4 x 4 x 4 factorial (768 rows) with mild noise.
pub fn lnp3_table(seed: u64) -> DatasetTable {
    let schema = lnp3_schema();
    let space = schema.space().expect("static schema");
    let mut rng = seeding::rng(seed, &[seeding::purpose::NOISE]);
    let mut inputs = Vec::with_capacity(768);
    let mut values = Vec::with_capacity(768);
    for a in 0..4 {
        for b in 0..3 {
            for c in 0..4 {
                for d in 0..4 {
                    for e in 0..4 {
                        let idx = [a, b, c, d, e];
                        let x: Vec<Value> = space
                            .variables()
                            .iter()
                            .zip(idx)
                            .map(|(v, i)| v.levels.as_ref().expect("leveled")[i].clone())
                            .collect();
                        let [dl, ee, dia] = lnp3_response(idx);
                        let jitter = |v: f64, rel: f64, rng: &mut rand_chacha::ChaCha8Rng| {
                            v * (1.0 + rel * (rng.random::<f64>() - 0.5))
                        };
                        values.push(vec![
                            round_to(jitter(dl, 0.02, &mut rng), 4),
                            round_to(jitter(ee, 0.01, &mut rng), 3),
                            round_to(jitter(dia, 0.02, &mut rng), 2),
                        ]);
                        inputs.push(x);
                    }
                }
            }
        }
    }
    DatasetTable::new(schema, inputs, values).expect("generated rows are valid")
}

pub const DATA_SEED: u64 = 20_240_917;

pub fn cross_barrel_oracle() -> TableOracle {
    TableOracle::new("cross_barrel", cross_barrel_table(DATA_SEED), OracleConfig::default())
}

pub fn lnp3_oracle() -> TableOracle {
    TableOracle::new("lnp3", lnp3_table(DATA_SEED), OracleConfig::default())
}

/// Writes `<name>.csv` and `<name>.schema.json` for both generated tables.
pub fn write_datasets(dir: &Path) -> Result<Vec<std::path::PathBuf>, OracleError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, table) in [
        ("cross_barrel", cross_barrel_table(DATA_SEED)),
        ("lnp3", lnp3_table(DATA_SEED)),
    ] {
        let csv_path = dir.join(format!("{name}.csv"));
        write_table(&table, std::fs::File::create(&csv_path)?)?;
        let schema_path = dir.join(format!("{name}.schema.json"));
        let json = serde_json::to_string_pretty(&table.schema).map_err(|e| OracleError::Schema(e.to_string()))?;
        std::fs::write(&schema_path, json + "\n")?;
        written.push(csv_path);
        written.push(schema_path);
    }
    Ok(written)
}
