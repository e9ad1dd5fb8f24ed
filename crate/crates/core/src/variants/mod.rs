//! Candidate schedules for a nest: interchange of the outer loop band, one- or
//! two-level tiling, and the choice of the parallel loop. A microkernel call
//! or marked band below the outer band is carried through untouched.

mod build;
mod emit;
mod legality;

pub use build::{outer_band, Band};
pub use emit::{c_identifier, emit_c, emit_nest, manifest, write_variants, Manifest, ManifestEntry, MANIFEST_VERSION};
pub use legality::{check_binding, legality_check, parallel_conflict, structural_order, LegalityOptions, OrderCheck};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::loopdsl::{print_nest, LoopNest};
use crate::polyset::ParamBinding;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VariantError {
    #[error("variant config: {0}")]
    Config(String),
    #[error("unbound parameter in loop bounds of `{0}`")]
    Unbound(String),
    #[error("legality check: {0}")]
    Check(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermPolicy {
    Identity,
    /// The original order and every swap of two adjacent band loops, neither
    /// of which is parallel.
    Adjacent,
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Permutations {
    Policy(PermPolicy),
    /// Explicit band orders by iterator name.
    List(Vec<Vec<String>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoPolicy {
    /// The non-parallel band loop with the largest extent (outermost on ties).
    Largest,
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoLoops {
    Policy(AutoPolicy),
    Names(Vec<String>),
}

/// Generated tile menus: powers of two in `[min_size, extent / 2]`, the
/// largest `max_sizes` of them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoTile {
    pub loops: AutoLoops,
    #[serde(default = "default_min_size")]
    pub min_size: i64,
    #[serde(default = "default_max_sizes")]
    pub max_sizes: usize,
    /// 2 pairs every outer size with each smaller inner size.
    #[serde(default = "one")]
    pub levels: u8,
}

/// Marks the innermost point loops of a fully tiled band as a microkernel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    #[serde(default = "default_perms")]
    pub permutations: Permutations,
    /// Explicit menus: iterator -> list of tile tuples, outermost size first.
    #[serde(default)]
    pub tiles: BTreeMap<String, Vec<Vec<i64>>>,
    /// `loops = []` disables generated menus.
    #[serde(default = "default_auto")]
    pub auto_tile: AutoTile,
    /// Offer the untiled loop alongside its menu.
    #[serde(default = "yes")]
    pub include_untiled: bool,
    #[serde(default = "two")]
    pub max_levels: u8,
    /// Loops to flag parallel, one per variant. Empty keeps the original's
    /// parallel loop (or its outermost tile loop).
    #[serde(default)]
    pub parallel: Vec<String>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Run the legality check on every candidate.
    #[serde(default = "yes")]
    pub verify: bool,
    #[serde(default)]
    pub legality: LegalityOptions,
}

fn default_min_size() -> i64 {
    4
}
fn default_max_sizes() -> usize {
    3
}
fn one() -> u8 {
    1
}
fn two() -> u8 {
    2
}
fn yes() -> bool {
    true
}
fn default_cap() -> usize {
    5000
}
fn default_perms() -> Permutations {
    Permutations::Policy(PermPolicy::Adjacent)
}
fn default_auto() -> AutoTile {
    AutoTile {
        loops: AutoLoops::Policy(AutoPolicy::Largest),
        min_size: default_min_size(),
        max_sizes: default_max_sizes(),
        levels: 1,
    }
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            permutations: default_perms(),
            tiles: BTreeMap::new(),
            auto_tile: default_auto(),
            include_untiled: true,
            max_levels: 2,
            parallel: Vec::new(),
            kernel: None,
            cap: default_cap(),
            verify: true,
            legality: LegalityOptions::default(),
        }
    }
}

impl VariantConfig {
    /// Only the original nest.
    pub fn identity() -> Self {
        VariantConfig {
            permutations: Permutations::Policy(PermPolicy::Identity),
            auto_tile: AutoTile { loops: AutoLoops::Names(Vec::new()), ..default_auto() },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, VariantError> {
        let cfg: VariantConfig = toml::from_str(text).map_err(|e| VariantError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), VariantError> {
        let bad = |m: String| Err(VariantError::Config(m));
        if !(1..=2).contains(&self.max_levels) {
            return bad(format!("max_levels must be 1 or 2, got {}", self.max_levels));
        }
        if self.cap == 0 {
            return bad("cap must be positive".into());
        }
        for (x, menu) in &self.tiles {
            for t in menu {
                if t.is_empty() || t.len() > self.max_levels as usize {
                    return bad(format!("tile tuple {t:?} for `{x}` needs 1..={} sizes", self.max_levels));
                }
                if t.iter().any(|&s| s <= 0) || t.windows(2).any(|w| w[0] <= w[1]) {
                    return bad(format!("tile tuple {t:?} for `{x}` must be positive and decreasing"));
                }
            }
        }
        let a = &self.auto_tile;
        if a.min_size < 1 || a.max_sizes == 0 || !(1..=self.max_levels).contains(&a.levels) {
            return bad("auto_tile needs min_size >= 1, max_sizes >= 1 and levels within max_levels".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Band iterators in their new order.
    pub permutation: Vec<String>,
    /// Tile sizes of each tiled band loop, outermost first.
    pub tiles: BTreeMap<String, Vec<i64>>,
    pub parallel: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub id: usize,
    pub nest: LoopNest,
    pub provenance: Provenance,
}

/// One candidate per (order, tile choice, parallel loop), in that nesting of
/// enumeration order; duplicates by printed text and illegal candidates are
/// dropped and ids are assigned densely. Never empty: when nothing survives
/// the original is returned alone.
pub fn generate_variants(
    nest: &LoopNest,
    cfg: &VariantConfig,
    b: &ParamBinding,
) -> Result<Vec<Variant>, VariantError> {
    cfg.validate()?;
    let band = outer_band(nest);
    let orders = band.orders(cfg)?;
    let menus = band.menus(cfg, b)?;
    let check_b = if cfg.verify { Some(check_binding(&band, &menus, b, &cfg.legality)) } else { None };

    let mut seen = BTreeSet::new();
    let mut out: Vec<Variant> = Vec::new();
    'outer: for order in &orders {
        for choice in cartesian(&menus) {
            for (candidate, par) in band.parallel_choices(nest, cfg, &choice) {
                let v = band.build(nest, b, order, &choice, par.as_deref(), cfg.kernel.as_ref());
                let text = print_nest(&v);
                if seen.contains(&text) {
                    continue;
                }
                if let Some(cb) = &check_b {
                    match legality_check(&v, nest, cb, &cfg.legality) {
                        Ok(true) => {}
                        Ok(false) => {
                            log::debug!("dropping illegal candidate {:?} {:?} {:?}", order, choice, par);
                            continue;
                        }
                        Err(e) => return Err(VariantError::Check(e.to_string())),
                    }
                    if candidate && par.is_some() && parallel_conflict(&v, par.as_deref().unwrap(), cb)? {
                        log::debug!("dropping candidate with racy parallel loop {:?}", par);
                        continue;
                    }
                }
                seen.insert(text);
                let provenance = Provenance {
                    permutation: order.iter().map(|&k| band.loops[k].iter.clone()).collect(),
                    tiles: band.loops.iter().zip(&choice).filter_map(|(l, t)| Some((l.iter.clone(), t.clone()?))).collect(),
                    parallel: par,
                };
                out.push(Variant { id: out.len(), nest: v, provenance });
                if out.len() >= cfg.cap {
                    break 'outer;
                }
            }
        }
    }
    if out.is_empty() {
        log::warn!("no legal variant of `{}`; keeping the original", nest.name);
        let parallel = nest.loops().iter().find(|l| l.parallel).map(|l| l.iter.clone());
        out.push(Variant {
            id: 0,
            nest: nest.clone(),
            provenance: Provenance {
                permutation: band.loops.iter().map(|l| l.iter.clone()).collect(),
                tiles: BTreeMap::new(),
                parallel,
            },
        });
    }
    Ok(out)
}

/// All index combinations, the last menu varying fastest.
fn cartesian<T: Clone>(menus: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for m in menus {
        out = out.iter().flat_map(|p| m.iter().map(move |x| [p.clone(), vec![x.clone()]].concat())).collect();
    }
    out
}
