//! Fixed system prompt and per-round user prompt.
//!
//! The user prompt is assembled from [`Observation`] records only, which
//! carry physical-unit values; encoded coordinates never reach this module.

use serde::{Deserialize, Serialize};

use crate::space::{SearchSpace, Value, VariableKind};

/// One evaluated experiment, in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub round: usize,
    pub point: Vec<Value>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBackground {
    pub experiment: String,
    pub objective: String,
    #[serde(default)]
    pub constraints: String,
}

impl Default for TaskBackground {
    fn default() -> Self {
        Self {
            experiment: "Iterative experimental optimization of a black-box response.".into(),
            objective: "the measured response".into(),
            constraints: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub previous_thinking: String,
}

const SYSTEM_PROMPT: &str = r#"You are a scientist specializing in experimental optimization.

# Evidence hierarchy (critical)
- PRIMARY: Background knowledge, physical/chemical mechanisms, constraints, and units.
- SECONDARY (auxiliary only): Historical trial points/observations and thinking in the review.
- If background implications conflict with historical points, SIDE WITH BACKGROUND.

# Background (fixed across rounds)
- We run iterative chemistry experiments (e.g., polymerization/hydrolysis/organic synthesis).
- Parameters are physical and NOT normalized. Always use the declared units & order.

# Modes (pick exactly ONE)
1) [point, [x1, x2, ..., xd], ccc]
2) [region, [[lb1, lb2, ..., lbd],
             [ub1, ub2, ..., ubd]], ccc]
- ccc ∈ [0,1].
- In region mode, each dimension must have (lb ≤ ub) and follow the declared parameter order & units.
- For categorical variables, output their literal value (e.g., "DMF") in both point and region.
  If a category is fixed in region, set lb=ub to that same literal value.

# How to reason (prioritize background over past points)
- Start from first principles: mechanism-driven trends, feasible/unsafe ranges, known monotonicities, interactions.
- Use historical data ONLY as weak corroboration or disproof of a background-based hypothesis.
- Do NOT anchor on previous best/nearest points; avoid proposing a point merely because it appeared before.
- If historical points cluster narrowly, consider a background-justified exploratory move (e.g., shift in a mechanism-relevant factor).
- Prefer REGION when background suggests multiple nearby settings could satisfy the mechanistic target; choose POINT only when background+data imply a sharp optimum.

# Output protocol (two blocks)
1) Thinking:
   - Be concise but informative, in this order:
     (a) Background-based rationale (mechanism/constraints) that leads to your proposal.
     (b) How (if at all) historical data supports/contradicts this mechanism (≤2 sentences).
     (c) Why point vs region given the mechanism and uncertainty.
2) Final Answer:
   - Strict structure with no extra words:
     [point, [x1, x2, ..., xd], ccc]
     OR
     [region, [[lb1, lb2, ..., lbd],
               [ub1, ub2, ..., ubd]], ccc]

# Hard constraints
- Do NOT normalize or re-order parameters.
- Keep units consistent with the declared parameter order.
- No extra commentary in Final Answer beyond the bracketed structure.
# Anti-collapse checks
- Never center a region or point on a past observation unless mechanistically justified.
- If you reuse a past setting, explicitly state the mechanism that makes it optimal (in Thinking).
"#;

pub const ADOPTION_NOTE: &str = "Suggestions were used as guidance; actual tested points may differ.";

pub fn build_system_prompt() -> String {
    SYSTEM_PROMPT.to_owned()
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn fmt_point(p: &[Value]) -> String {
    let parts: Vec<String> = p
        .iter()
        .map(|v| match v {
            Value::Num(x) => fmt_num(*x),
            Value::Text(s) => format!("\"{s}\""),
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn bounds_line(space: &SearchSpace) -> Vec<String> {
    space
        .variables()
        .iter()
        .map(|v| match v.kind {
            VariableKind::Continuous => {
                let (l, u) = v.range().expect("numeric");
                format!("  - {}: continuous in [{}, {}]", v.name, fmt_num(l), fmt_num(u))
            }
            VariableKind::Discrete => {
                let levels: Vec<String> = v.levels.as_deref().unwrap_or_default().iter().map(|l| l.to_string()).collect();
                format!("  - {}: discrete, levels {{{}}}", v.name, levels.join(", "))
            }
            VariableKind::Categorical => {
                let levels: Vec<String> = v.levels.as_deref().unwrap_or_default().iter().map(|l| format!("\"{l}\"")).collect();
                format!("  - {}: categorical, one of {{{}}}", v.name, levels.join(", "))
            }
        })
        .collect()
}

/// Per-round user prompt. `history` is listed newest first.
pub fn build_user_prompt(
    background: &TaskBackground,
    space: &SearchSpace,
    history: &[Observation],
    previous_thinking: &str,
) -> String {
    let names: Vec<&str> = space.variables().iter().map(|v| v.name.as_str()).collect();
    let all_continuous = !space.has_discrete_structure();
    let mut out = String::new();
    out.push_str("[Background]\n");
    out.push_str(&format!("- Experiment type & purpose: {}\n", background.experiment));
    out.push_str(&format!("- Parameter order (d={}): {}\n", space.dim(), names.join(", ")));
    out.push_str(&format!("- Objective: Maximize {} (single objective).\n", background.objective));
    let kinds = if all_continuous {
        "All parameters real-valued"
    } else {
        "Parameters as declared (continuous, discrete levels, categorical literals)"
    };
    let mut constraints = format!("{kinds}; respect declared order and bounds; do not normalize.");
    if !background.constraints.trim().is_empty() {
        constraints.push(' ');
        constraints.push_str(background.constraints.trim());
    }
    out.push_str(&format!("- Constraints: {constraints}\n"));
    out.push_str("- Bounds:\n");
    for line in bounds_line(space) {
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("[Review]\n");
    if history.is_empty() {
        out.push_str("- Historical data (newest first): none yet; no experiments have been run.\n");
    } else {
        out.push_str("- Historical data (newest first):\n");
        let mut rows: Vec<&Observation> = history.iter().collect();
        rows.sort_by(|a, b| b.round.cmp(&a.round));
        for o in rows {
            out.push_str(&format!("  - round {}: x = {}, y = {}\n", o.round, fmt_point(&o.point), fmt_num(o.value)));
        }
    }
    let prev = previous_thinking.trim();
    out.push_str(&format!(
        "- Thinking from the previous round: {}\n",
        if prev.is_empty() { "none" } else { prev }
    ));
    out.push_str(&format!("- Adoption note: {ADOPTION_NOTE}\n"));
    out
}

pub fn build_bundle(
    background: &TaskBackground,
    space: &SearchSpace,
    history: &[Observation],
    previous_thinking: &str,
) -> PromptBundle {
    PromptBundle {
        system: build_system_prompt(),
        user: build_user_prompt(background, space, history, previous_thinking),
        previous_thinking: previous_thinking.to_owned(),
    }
}
