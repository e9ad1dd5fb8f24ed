//! Locality analysis and ranking of loop-nest variants: integer sets, a small
//! loop language, dependences, working sets, cache placement, cost and
//! learned ranking, variant generation, operator fusion and a reference
//! simulator.

pub mod cachemap;
pub mod cli;
pub mod depend;
pub mod fusion;
pub mod loopdsl;
pub mod polyset;
pub mod rank;
pub mod simcache;
pub mod synth;
pub mod variants;
pub mod wset;
