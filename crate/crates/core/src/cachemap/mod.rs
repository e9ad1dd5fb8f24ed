//! Cache hierarchy description and greedy placement of working sets into
//! cache levels.

use serde::{Deserialize, Serialize};

use crate::wset::{WorkingSetEntry, WorkingSetReport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MachineError {
    #[error("invalid machine model: {0}")]
    Invalid(String),
    #[error("cannot read machine model: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheLevel {
    pub name: String,
    /// Bytes.
    pub size: u64,
    /// Cycles.
    pub latency: u64,
    /// Bytes per cycle.
    pub bandwidth: u64,
    #[serde(default)]
    pub shared: bool,
    /// Cores sharing the level; only meaningful when `shared`.
    #[serde(default = "one")]
    pub cores: u32,
}

fn one() -> u32 {
    1
}

fn four() -> u64 {
    4
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineModel {
    pub levels: Vec<CacheLevel>,
    pub memory_latency: u64,
    pub memory_bandwidth: u64,
    /// Bytes per array element.
    #[serde(default = "four")]
    pub datatype_size: u64,
}

impl Default for MachineModel {
    /// A 28-core server part: 32KB private L1, 1MB private L2, 39MB shared L3.
    /// Latencies and bandwidths are representative placeholders.
    fn default() -> Self {
        MachineModel {
            levels: vec![
                CacheLevel { name: "L1".into(), size: 32 << 10, latency: 4, bandwidth: 128, shared: false, cores: 1 },
                CacheLevel { name: "L2".into(), size: 1 << 20, latency: 14, bandwidth: 64, shared: false, cores: 1 },
                CacheLevel { name: "L3".into(), size: 39 << 20, latency: 50, bandwidth: 32, shared: true, cores: 28 },
            ],
            memory_latency: 200,
            memory_bandwidth: 16,
            datatype_size: 4,
        }
    }
}

impl MachineModel {
    pub fn validate(&self) -> Result<(), MachineError> {
        let bad = |m: String| Err(MachineError::Invalid(m));
        if self.datatype_size == 0 {
            return bad("datatype size must be positive".into());
        }
        if self.memory_bandwidth == 0 {
            return bad("memory bandwidth must be positive".into());
        }
        for (k, l) in self.levels.iter().enumerate() {
            if l.bandwidth == 0 {
                return bad(format!("{}: bandwidth must be positive", l.name));
            }
            if l.shared && l.cores == 0 {
                return bad(format!("{}: a shared level needs at least one core", l.name));
            }
            if k > 0 {
                let prev = &self.levels[k - 1];
                if l.size <= prev.size {
                    return bad(format!("{} must be larger than {}", l.name, prev.name));
                }
                if l.latency < prev.latency {
                    return bad(format!("{} latency is below {}", l.name, prev.name));
                }
            }
        }
        if let Some(last) = self.levels.last() {
            if self.memory_latency < last.latency {
                return bad("memory latency is below the last cache level".into());
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, MachineError> {
        let m: MachineModel = toml::from_str(text).map_err(|e| MachineError::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("machine model serializes")
    }

    /// Capacity of level `l` in elements.
    pub fn capacity_elements(&self, l: usize) -> u64 {
        self.levels[l].size / self.datatype_size
    }

    /// Latency of the level below `l` (memory after the last level).
    pub fn next_latency(&self, l: usize) -> u64 {
        self.levels.get(l + 1).map_or(self.memory_latency, |n| n.latency)
    }
}

/// Per-core view: shared levels divided evenly among `cores_used` cores.
pub fn effective_sizes(m: &MachineModel, cores_used: u32) -> Result<MachineModel, MachineError> {
    if cores_used == 0 {
        return Err(MachineError::Invalid("cores_used must be at least 1".into()));
    }
    let mut out = m.clone();
    for l in out.levels.iter_mut().filter(|l| l.shared) {
        l.size /= u64::from(cores_used);
    }
    Ok(out)
}

/// Where one working-set entry was placed; `level == None` means memory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub entry: usize,
    pub level: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheAssignment {
    /// Accumulated bytes per cache level.
    pub per_level: Vec<u64>,
    pub memory: u64,
    /// In placement (sorted) order.
    pub placements: Vec<Placement>,
}

/// Sort key: size, then dependence id, then variant.
fn entry_order(entries: &[WorkingSetEntry]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by_key(|&i| (entries[i].bytes, entries[i].dependence, entries[i].variant));
    idx
}

/// Greedy placement of entries, smallest first, into the fastest level that
/// still has room; the rest goes to memory.
pub fn assign_entries(entries: &[WorkingSetEntry], m: &MachineModel) -> CacheAssignment {
    let mut per_level = vec![0u64; m.levels.len()];
    let mut memory = 0u64;
    let mut placements = Vec::with_capacity(entries.len());
    for i in entry_order(entries) {
        let b = entries[i].bytes;
        let slot = (0..m.levels.len()).find(|&l| per_level[l] + b <= m.levels[l].size);
        match slot {
            Some(l) => per_level[l] += b,
            None => memory += b,
        }
        placements.push(Placement { entry: i, level: slot });
    }
    CacheAssignment { per_level, memory, placements }
}

pub fn assign_to_caches(report: &WorkingSetReport, m: &MachineModel) -> CacheAssignment {
    assign_entries(&report.entries, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wset::WsVariant;
    use proptest::prelude::*;

    fn entry(dep: usize, variant: WsVariant, bytes: u64) -> WorkingSetEntry {
        WorkingSetEntry { dependence: dep, variant, elements: bytes / 4, bytes }
    }

    fn tiny() -> MachineModel {
        MachineModel {
            levels: vec![
                CacheLevel { name: "L1".into(), size: 64, latency: 4, bandwidth: 128, shared: false, cores: 1 },
                CacheLevel { name: "L2".into(), size: 512, latency: 14, bandwidth: 64, shared: false, cores: 1 },
            ],
            memory_latency: 200,
            memory_bandwidth: 16,
            datatype_size: 4,
        }
    }

    #[test]
    fn greedy_trace() {
        let a = assign_entries(&[entry(0, WsVariant::Min, 44), entry(0, WsVariant::Max, 84)], &tiny());
        assert_eq!(a.per_level, vec![44, 84]);
        assert_eq!(a.memory, 0);
        assert_eq!(a.placements[1], Placement { entry: 1, level: Some(1) });
    }

    #[test]
    fn oversized_entries_go_to_memory() {
        let a = assign_entries(&[entry(0, WsVariant::Par, 1000), entry(1, WsVariant::Par, 600)], &tiny());
        assert_eq!(a.per_level, vec![0, 0]);
        assert_eq!(a.memory, 1600);
    }

    #[test]
    fn shared_level_is_divided() {
        let m = MachineModel::default();
        let per_core = effective_sizes(&m, 28).unwrap();
        assert_eq!(per_core.levels[2].size, (39u64 << 20) / 28);
        assert_eq!(per_core.levels[0].size, 32 << 10);
        assert_eq!(effective_sizes(&m, 1).unwrap(), m);
        assert!(effective_sizes(&m, 0).is_err());
        per_core.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let m = MachineModel::default();
        assert_eq!(MachineModel::from_toml(&m.to_toml()).unwrap(), m);
        let mut bad = m.clone();
        bad.levels[1].size = 16;
        assert!(bad.validate().is_err());
        bad = m;
        bad.levels[0].bandwidth = 0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn conservation_capacity_and_order_independence(
            sizes in prop::collection::vec(0u64..400, 0..24),
            rot in 0usize..24,
        ) {
            let entries: Vec<WorkingSetEntry> = sizes
                .iter()
                .enumerate()
                .map(|(k, &b)| entry(k / 2, if k % 2 == 0 { WsVariant::Min } else { WsVariant::Max }, b))
                .collect();
            let m = tiny();
            let a = assign_entries(&entries, &m);
            let total: u64 = sizes.iter().sum();
            prop_assert_eq!(a.per_level.iter().sum::<u64>() + a.memory, total);
            for (l, acc) in a.per_level.iter().enumerate() {
                prop_assert!(*acc <= m.levels[l].size);
            }
            let mut shuffled = entries.clone();
            if !shuffled.is_empty() {
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
            }
            let b = assign_entries(&shuffled, &m);
            prop_assert_eq!(a.per_level, b.per_level);
            prop_assert_eq!(a.memory, b.memory);
        }
    }
}
