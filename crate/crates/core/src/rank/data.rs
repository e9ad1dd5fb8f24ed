use std::io::{Read, Write};

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{stats_cost, RankError, VariantStats};
use crate::cachemap::MachineModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// The first variant is better.
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabeledPair {
    pub first: VariantStats,
    pub second: VariantStats,
    pub label: Label,
}

/// Lower cost wins. Pairs whose costs differ by at most `margin` relative to
/// the larger cost are draws (`None`); a zero margin only drops exact ties.
pub fn label_by_cost(
    a: &VariantStats,
    b: &VariantStats,
    m: &MachineModel,
    margin: f64,
) -> Result<Option<Label>, RankError> {
    let (ca, cb) = (stats_cost(a, m)?, stats_cost(b, m)?);
    if ca == cb {
        return Ok(None);
    }
    if margin > 0.0 {
        let (x, y) = (ca.to_f64().unwrap_or(0.0), cb.to_f64().unwrap_or(0.0));
        if (x - y).abs() <= margin * x.max(y) {
            return Ok(None);
        }
    }
    Ok(Some(if ca < cb { Label::First } else { Label::Second }))
}

fn random_stats(rng: &mut impl Rng, id: usize) -> VariantStats {
    // total footprint log-uniform between 1KB and 64MB, split at random
    let total = 2f64.powf(rng.gen_range(10.0..26.0));
    let w: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen::<f64>() * rng.gen::<f64>()];
    let s: f64 = w.iter().sum();
    let part = |k: usize| (total * w[k] / s).round() as u64;
    VariantStats { id, l1: part(0), l2: part(1), l3: part(2), mem: part(3) }
}

/// `n` random pairs labeled by the cost oracle under `m`; ties are redrawn.
pub fn synthetic_pairs(n: usize, seed: u64, m: &MachineModel) -> Result<Vec<LabeledPair>, RankError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let first = random_stats(&mut rng, 2 * out.len());
        let second = random_stats(&mut rng, 2 * out.len() + 1);
        if let Some(label) = label_by_cost(&first, &second, m, 0.0)? {
            out.push(LabeledPair { first, second, label });
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Row {
    a_l1: u64,
    a_l2: u64,
    a_l3: u64,
    a_mem: u64,
    b_l1: u64,
    b_l2: u64,
    b_l3: u64,
    b_mem: u64,
    label: Label,
}

/// CSV with eight raw byte counts per pair and a `first`/`second` label.
pub fn write_dataset(pairs: &[LabeledPair], w: impl Write) -> Result<(), RankError> {
    let err = |e: csv::Error| RankError::Dataset(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    for p in pairs {
        let (a, b) = (&p.first, &p.second);
        out.serialize(Row {
            a_l1: a.l1,
            a_l2: a.l2,
            a_l3: a.l3,
            a_mem: a.mem,
            b_l1: b.l1,
            b_l2: b.l2,
            b_l3: b.l3,
            b_mem: b.mem,
            label: p.label,
        })
        .map_err(err)?;
    }
    out.flush().map_err(|e| RankError::Dataset(e.to_string()))
}

/// Reads pairs written by [`write_dataset`]; ids are assigned by row.
pub fn read_dataset(r: impl Read) -> Result<Vec<LabeledPair>, RankError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (k, row) in rd.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| RankError::Dataset(e.to_string()))?;
        out.push(LabeledPair {
            first: VariantStats { id: 2 * k, l1: row.a_l1, l2: row.a_l2, l3: row.a_l3, mem: row.a_mem },
            second: VariantStats { id: 2 * k + 1, l1: row.b_l1, l2: row.b_l2, l3: row.b_l3, mem: row.b_mem },
            label: row.label,
        });
    }
    Ok(out)
}
