//! Contamination screening and pairwise win/tie/loss counts.

use std::collections::{BTreeMap, HashSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::DataError;

pub const CONTAMINATION_N: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Contamination {
    pub contaminated: bool,
    /// One shared n-gram, space-joined, when contaminated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

/// True iff the two texts share a contiguous run of `n` whitespace tokens.
/// Case is preserved. The witness is the first shared n-gram in `retrieved`.
pub fn ngram_contamination(gold: &str, retrieved: &str, n: usize) -> Result<Contamination, DataError> {
    if n == 0 {
        return Err(DataError::InvalidArgument("n must be at least 1".into()));
    }
    let g: Vec<&str> = gold.split_whitespace().collect();
    let r: Vec<&str> = retrieved.split_whitespace().collect();
    if g.len() < n || r.len() < n {
        return Ok(Contamination {
            contaminated: false,
            witness: None,
        });
    }
    let grams: HashSet<&[&str]> = g.windows(n).collect();
    let witness = r.windows(n).find(|w| grams.contains(w)).map(|w| w.join(" "));
    Ok(Contamination {
        contaminated: witness.is_some(),
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct WtlOutcome {
    pub metric_name: String,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl WtlOutcome {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }
}

/// Per-instance comparison of system A against B: a win when
/// `a - b > tie_eps`, a loss when `b - a > tie_eps`, a tie otherwise.
pub fn pairwise_wtl(metric_name: &str, a: &[f64], b: &[f64], tie_eps: f64) -> Result<WtlOutcome, DataError> {
    if a.len() != b.len() {
        return Err(DataError::MismatchedInstances(format!("{} scores against {}", a.len(), b.len())));
    }
    if !(tie_eps >= 0.0) {
        return Err(DataError::InvalidArgument("tie_eps must be non-negative".into()));
    }
    let mut out = WtlOutcome {
        metric_name: metric_name.to_string(),
        wins: 0,
        ties: 0,
        losses: 0,
    };
    for (x, y) in a.iter().zip(b) {
        if x - y > tie_eps {
            out.wins += 1;
        } else if y - x > tie_eps {
            out.losses += 1;
        } else {
            out.ties += 1;
        }
    }
    Ok(out)
}

/// Like [`pairwise_wtl`] over scores keyed by instance id; the id sets must
/// be identical.
pub fn pairwise_wtl_by_id(
    metric_name: &str,
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    tie_eps: f64,
) -> Result<WtlOutcome, DataError> {
    if let Some(id) = a.keys().find(|k| !b.contains_key(*k)).or_else(|| b.keys().find(|k| !a.contains_key(*k))) {
        return Err(DataError::MismatchedInstances(format!("instance {id} is scored by only one system")));
    }
    let xs: Vec<f64> = a.values().copied().collect();
    let ys: Vec<f64> = a.keys().map(|k| b[k]).collect();
    pairwise_wtl(metric_name, &xs, &ys, tie_eps)
}
