//! Clinical rule DSL: parsing, evaluation on raw observations, and
//! per-stay order bounds.
//!
//! Rules are conjunctions of windowed clauses over raw (unstandardized)
//! observed values; a fired rule forces its ordered tests into the minimal
//! order vector. The maximal order is the elementwise OR of the minimal
//! order and the logged order.

mod eval;
mod parse;

pub use eval::{eval_rule, ClauseValue, RawWindow};
pub use parse::parse_rules;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureCatalog, K};

/// The default rule file shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../../../../rules/default.rules");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Last,
    Min,
    Max,
    Delta,
    Drop,
    Rise,
    PctDrop,
    PctRise,
    Sum,
    Event,
    NewEvent,
}

impl Metric {
    pub fn is_event(&self) -> bool {
        matches!(self, Metric::Event | Metric::NewEvent)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Last => "LAST",
            Metric::Min => "MIN",
            Metric::Max => "MAX",
            Metric::Delta => "DELTA",
            Metric::Drop => "DROP",
            Metric::Rise => "RISE",
            Metric::PctDrop => "PCTDROP",
            Metric::PctRise => "PCTRISE",
            Metric::Sum => "SUM",
            Metric::Event => "EVENT",
            Metric::NewEvent => "NEWEVENT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Gt,
    Le,
    Ge,
}

impl Cmp {
    pub fn holds(&self, value: f64, threshold: f64) -> bool {
        match self {
            Cmp::Lt => value < threshold,
            Cmp::Gt => value > threshold,
            Cmp::Le => value <= threshold,
            Cmp::Ge => value >= threshold,
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub metric: Metric,
    pub feature: usize,
    pub feature_name: String,
    pub window_hours: f64,
    /// NEWEVENT only: the look-back window preceding the recent one.
    pub prior_window_hours: Option<f64>,
    pub cmp: Option<(Cmp, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub clauses: Vec<Clause>,
    /// Indices into the fixed test list.
    pub ordered_tests: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("syntax error at line {line}, col {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown identifier \"{name}\" at line {line}")]
    UnknownIdent { line: usize, name: String },
    #[error("window of {hours}h at line {line} exceeds the 48h context")]
    WindowTooLong { line: usize, hours: f64 },
    #[error("rule \"{name}\" at line {line}: {why}")]
    BadRule { line: usize, name: String, why: String },
    #[error("io error on {0}: {1}")]
    Io(String, String),
    #[error("malformed bounds line {line}: {why}")]
    MalformedBounds { line: usize, why: String },
}

/// Per-stay minimal/maximal order vectors with fired-rule provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderBounds {
    pub stay_id: String,
    pub t_min: Vec<u8>,
    pub t_max: Vec<u8>,
    pub fired_rules: Vec<String>,
}

/// Evaluate every rule on the stay's raw window; fired rules set their
/// tests in `t_min`, and `t_max` is the OR of `t_min` with the logged order.
pub fn compute_bounds(
    ruleset: &RuleSet,
    window: &RawWindow<'_>,
    observed_order: &[u8],
    stay_id: &str,
) -> OrderBounds {
    assert_eq!(observed_order.len(), K);
    let mut t_min = vec![0u8; K];
    let mut fired_rules = Vec::new();
    for rule in &ruleset.rules {
        let (fired, _) = eval_rule(rule, window);
        if fired {
            for &t in &rule.ordered_tests {
                t_min[t] = 1;
            }
            fired_rules.push(rule.name.clone());
        }
    }
    let t_max: Vec<u8> = t_min.iter().zip(observed_order).map(|(&a, &b)| a | b).collect();
    OrderBounds { stay_id: stay_id.to_string(), t_min, t_max, fired_rules }
}

pub fn save_bounds(path: &Path, bounds: &[OrderBounds]) -> Result<(), RuleError> {
    let file = std::fs::File::create(path)
        .map_err(|e| RuleError::Io(path.display().to_string(), e.to_string()))?;
    let mut w = BufWriter::new(file);
    for b in bounds {
        writeln!(w, "{}", serde_json::to_string(b).expect("bounds serialization"))
            .map_err(|e| RuleError::Io(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| RuleError::Io(path.display().to_string(), e.to_string()))
}

pub fn load_bounds(path: &Path) -> Result<Vec<OrderBounds>, RuleError> {
    let file = std::fs::File::open(path)
        .map_err(|e| RuleError::Io(path.display().to_string(), e.to_string()))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RuleError::Io(path.display().to_string(), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let b: OrderBounds = serde_json::from_str(&line)
            .map_err(|e| RuleError::MalformedBounds { line: i + 1, why: e.to_string() })?;
        out.push(b);
    }
    Ok(out)
}

/// Parse the shipped default rule file against a catalog.
pub fn default_ruleset(catalog: &FeatureCatalog) -> RuleSet {
    parse_rules(DEFAULT_RULES, catalog).expect("shipped rule file parses")
}
