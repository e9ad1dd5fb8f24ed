use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::interp::{run, Arrays, Observer};
use super::trace::{Record, Trace};
use super::SimError;
use crate::cachemap::MachineModel;
use crate::loopdsl::{AccessKind, LoopNest};
use crate::polyset::ParamBinding;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    /// Elements per cache line; 1 models element granularity.
    pub line_elements: u64,
    /// Keep the servicing level of every access.
    pub keep_serviced: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { line_elements: 1, keep_serviced: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LevelStats {
    pub name: String,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimStats {
    pub accesses: u64,
    pub levels: Vec<LevelStats>,
    /// Accesses serviced by memory.
    pub memory: u64,
    /// Servicing level per access; `levels.len()` stands for memory.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub serviced: Vec<u8>,
    /// Sum over levels of misses times the latency of the level below.
    pub cost: u64,
}

struct Level {
    capacity: usize,
    /// Stamp to key; the first entry is the least recently used.
    lru: BTreeMap<u64, u64>,
}

/// Exclusive, fully associative, LRU hierarchy: a block lives in at most one
/// level. Hits and fills go to the first level and victims move one level
/// down, leaving the hierarchy from the last level.
pub struct CacheSim {
    levels: Vec<Level>,
    names: Vec<String>,
    latency_below: Vec<u64>,
    /// Key to (level, stamp).
    home: HashMap<u64, (usize, u64)>,
    clock: u64,
    hits: Vec<u64>,
    misses: Vec<u64>,
    memory: u64,
    accesses: u64,
    serviced: Option<Vec<u8>>,
    line: u64,
}

impl CacheSim {
    pub fn new(m: &MachineModel, opts: SimOptions) -> Self {
        let line = opts.line_elements.max(1);
        CacheSim {
            levels: (0..m.levels.len())
                .map(|l| Level { capacity: (m.capacity_elements(l) / line) as usize, lru: BTreeMap::new() })
                .collect(),
            names: m.levels.iter().map(|l| l.name.clone()).collect(),
            latency_below: (0..m.levels.len()).map(|l| m.next_latency(l)).collect(),
            home: HashMap::new(),
            clock: 0,
            hits: vec![0; m.levels.len()],
            misses: vec![0; m.levels.len()],
            memory: 0,
            accesses: 0,
            serviced: opts.keep_serviced.then(Vec::new),
            line,
        }
    }

    fn insert(&mut self, mut level: usize, mut key: u64) {
        while level < self.levels.len() {
            self.clock += 1;
            self.levels[level].lru.insert(self.clock, key);
            self.home.insert(key, (level, self.clock));
            if self.levels[level].lru.len() <= self.levels[level].capacity {
                return;
            }
            let (_, victim) = self.levels[level].lru.pop_first().expect("non-empty level");
            self.home.remove(&victim);
            key = victim;
            level += 1;
        }
    }

    /// Touches `element` of `array`; returns the servicing level.
    pub fn access(&mut self, array: u32, element: u64) -> usize {
        let key = (u64::from(array) << 48) | (element / self.line);
        self.accesses += 1;
        let found = self.home.remove(&key).map(|(l, stamp)| {
            self.levels[l].lru.remove(&stamp);
            l
        });
        let served = found.unwrap_or(self.levels.len());
        for m in &mut self.misses[..served] {
            *m += 1;
        }
        if served < self.levels.len() {
            self.hits[served] += 1;
        } else {
            self.memory += 1;
        }
        if let Some(s) = &mut self.serviced {
            s.push(served as u8);
        }
        self.insert(0, key);
        served
    }

    /// Every resident block is in exactly one level, at the recorded stamp.
    pub fn residency_is_exclusive(&self) -> bool {
        let total: usize = self.levels.iter().map(|l| l.lru.len()).sum();
        total == self.home.len()
            && self.home.iter().all(|(k, &(l, s))| self.levels[l].lru.get(&s) == Some(k))
            && self.levels.iter().all(|l| l.lru.len() <= l.capacity)
    }

    pub fn stats(&self) -> SimStats {
        let cost = self.misses.iter().zip(&self.latency_below).map(|(m, l)| m * l).sum();
        SimStats {
            accesses: self.accesses,
            levels: self
                .names
                .iter()
                .enumerate()
                .map(|(l, n)| LevelStats { name: n.clone(), hits: self.hits[l], misses: self.misses[l] })
                .collect(),
            memory: self.memory,
            serviced: self.serviced.clone().unwrap_or_default(),
            cost,
        }
    }
}

impl Observer for CacheSim {
    fn access(&mut self, array: usize, element: usize, _kind: AccessKind, _reference: usize) {
        CacheSim::access(self, array as u32, element as u64);
    }
}

/// Replays a recorded trace through the hierarchy.
pub fn simulate_trace(trace: &Trace, m: &MachineModel, opts: SimOptions) -> SimStats {
    simulate_records(trace.records(), m, opts)
}

pub fn simulate_records(records: &[Record], m: &MachineModel, opts: SimOptions) -> SimStats {
    let mut sim = CacheSim::new(m, opts);
    for r in records {
        sim.access(r.array, r.element);
    }
    sim.stats()
}

/// Executes `nest` and streams its accesses through the hierarchy without
/// storing the trace.
pub fn simulate(nest: &LoopNest, binding: &ParamBinding, m: &MachineModel, opts: SimOptions) -> Result<SimStats, SimError> {
    let mut arrays = Arrays::zeros(nest, binding)?;
    let mut sim = CacheSim::new(m, opts);
    run(nest, binding, &mut arrays, &mut sim)?;
    Ok(sim.stats())
}
