//! Ranking of variants by the analytical cost of their cache placement or
//! by a learned pairwise judge aggregated in a round-robin tournament.

mod data;
mod dnn;

pub use data::{label_by_cost, read_dataset, synthetic_pairs, write_dataset, Label, LabeledPair};
pub use dnn::{
    accuracy, dnn_judge, forward, judge_probs, loss_and_grad, tournament_rank, train_ranker, Activation, Gradients,
    Judgment, RankerModel, TrainConfig, TrainOutcome,
};

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::cachemap::{CacheAssignment, MachineModel};

pub type Rational = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankError {
    #[error("zero bandwidth at {0}")]
    ZeroBandwidth(String),
    #[error("non-finite activation in layer {0}")]
    NonFinite(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("at least {0} variants are required")]
    TooFew(usize),
    #[error("model file: {0}")]
    Model(String),
    #[error("dataset file: {0}")]
    Dataset(String),
}

/// Placement summary of one variant, in bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantStats {
    pub id: usize,
    pub l1: u64,
    pub l2: u64,
    pub l3: u64,
    pub mem: u64,
}

impl VariantStats {
    /// Levels past the third are folded into `l3`.
    pub fn from_assignment(id: usize, a: &CacheAssignment) -> Self {
        let lvl = |k: usize| a.per_level.get(k).copied().unwrap_or(0);
        let l3 = a.per_level.iter().skip(2).sum();
        VariantStats { id, l1: lvl(0), l2: lvl(1), l3, mem: a.memory }
    }

    pub fn fields(&self) -> [u64; 4] {
        [self.l1, self.l2, self.l3, self.mem]
    }
}

/// `Σ_l WS_l · lat_l / bw_l + WS_mem · lat_mem / bw_mem` over explicit
/// per-level byte counts.
pub fn cost_of(per_level: &[u64], memory: u64, m: &MachineModel) -> Result<Rational, RankError> {
    let mut c = Rational::zero();
    for (ws, l) in per_level.iter().zip(&m.levels) {
        if l.bandwidth == 0 {
            return Err(RankError::ZeroBandwidth(l.name.clone()));
        }
        c += Rational::new(*ws as i128 * l.latency as i128, l.bandwidth as i128);
    }
    if m.memory_bandwidth == 0 {
        return Err(RankError::ZeroBandwidth("memory".into()));
    }
    c += Rational::new(memory as i128 * m.memory_latency as i128, m.memory_bandwidth as i128);
    Ok(c)
}

pub fn cost(a: &CacheAssignment, m: &MachineModel) -> Result<Rational, RankError> {
    cost_of(&a.per_level, a.memory, m)
}

/// Cost of a stats record; the machine's first three levels are used.
pub fn stats_cost(s: &VariantStats, m: &MachineModel) -> Result<Rational, RankError> {
    let levels = [s.l1, s.l2, s.l3];
    cost_of(&levels[..m.levels.len().min(3)], s.mem, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cost,
    Dnn,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedEntry {
    pub id: usize,
    /// Cost (lower is better) or win count (higher is better).
    pub score: f64,
    /// Exact cost as `num/den`, for the cost method.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedList {
    pub method: Method,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

/// Ascending cost; equal costs keep ascending id order.
pub fn rank_by_cost(stats: &[VariantStats], m: &MachineModel) -> Result<RankedList, RankError> {
    let mut scored: Vec<(Rational, usize)> =
        stats.iter().map(|s| Ok((stats_cost(s, m)?, s.id))).collect::<Result<_, RankError>>()?;
    scored.sort();
    Ok(RankedList {
        method: Method::Cost,
        entries: scored
            .into_iter()
            .map(|(c, id)| RankedEntry { id, score: c.to_f64().unwrap_or(f64::INFINITY), exact: Some(c.to_string()) })
            .collect(),
    })
}

/// Normalized pair features `(v1 fields, v2 fields) / Σ all fields`. An
/// all-zero pair gives the uniform vector and `degenerate = true`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures {
    pub values: [Rational; 8],
    pub degenerate: bool,
}

impl PairFeatures {
    pub fn to_f64(&self) -> [f64; 8] {
        self.values.map(|v| v.to_f64().unwrap_or(0.0))
    }
}

pub fn pair_features(v1: &VariantStats, v2: &VariantStats) -> PairFeatures {
    let raw: Vec<u64> = v1.fields().into_iter().chain(v2.fields()).collect();
    let sum: i128 = raw.iter().map(|&x| x as i128).sum();
    if sum == 0 {
        return PairFeatures { values: [Rational::new(1, 8); 8], degenerate: true };
    }
    let mut values = [Rational::zero(); 8];
    for (v, &x) in values.iter_mut().zip(&raw) {
        *v = Rational::new(x as i128, sum);
    }
    PairFeatures { values, degenerate: false }
}
