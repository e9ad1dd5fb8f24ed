use std::collections::BTreeSet;

use super::{AutoLoops, AutoPolicy, KernelSpec, PermPolicy, Permutations, VariantConfig, VariantError};
use crate::loopdsl::{BandMark, Loop, LoopNest, Node};
use crate::polyset::{AffineExpr, ParamBinding};

/// The outermost chain of perfectly nested, unmarked loops and what lies
/// below it.
#[derive(Clone, Debug)]
pub struct Band {
    /// Loop headers (empty bodies), outermost first.
    pub loops: Vec<Loop>,
    pub inner: Vec<Node>,
    /// No band loop bound mentions another band iterator.
    pub rectangular: bool,
}

pub fn outer_band(nest: &LoopNest) -> Band {
    let mut loops = Vec::new();
    let mut body = &nest.body;
    while let [Node::Loop(l)] = body.as_slice() {
        if l.band.is_some() {
            break;
        }
        loops.push(Loop { body: Vec::new(), ..l.clone() });
        body = &l.body;
    }
    let iters: Vec<&str> = loops.iter().map(|l| l.iter.as_str()).collect();
    let rectangular = loops
        .iter()
        .all(|l| l.lower.iter().chain(&l.upper).all(|e| iters.iter().all(|x| !e.mentions(x))));
    Band { inner: body.clone(), loops, rectangular }
}

/// Tile sizes of one band loop, outermost first; `None` leaves it untiled.
pub(crate) type TileChoice = Option<Vec<i64>>;

impl Band {
    fn tileable(&self, k: usize) -> bool {
        let l = &self.loops[k];
        self.rectangular && l.step == 1 && l.lower.len() == 1
    }

    /// `min(upper) - lower` under `b`.
    pub fn extent(&self, k: usize, b: &ParamBinding) -> Result<i64, VariantError> {
        let l = &self.loops[k];
        let unbound = || VariantError::Unbound(l.iter.clone());
        let ev = |e: &AffineExpr| e.eval(b.as_map()).ok_or_else(unbound);
        let lo = l.lower.iter().map(ev).collect::<Result<Vec<_>, _>>()?.into_iter().max().ok_or_else(unbound)?;
        let hi = l.upper.iter().map(ev).collect::<Result<Vec<_>, _>>()?.into_iter().min().ok_or_else(unbound)?;
        Ok((hi - lo).max(0))
    }

    /// Band orders as index lists; the identity comes first.
    pub fn orders(&self, cfg: &VariantConfig) -> Result<Vec<Vec<usize>>, VariantError> {
        let n = self.loops.len();
        let id: Vec<usize> = (0..n).collect();
        if !self.rectangular {
            if cfg.permutations != Permutations::Policy(PermPolicy::Identity) {
                log::warn!("band is not rectangular; only the original loop order is kept");
            }
            return Ok(vec![id]);
        }
        match &cfg.permutations {
            Permutations::Policy(PermPolicy::Identity) => Ok(vec![id]),
            Permutations::Policy(PermPolicy::Adjacent) => {
                let mut out = vec![id.clone()];
                for k in 0..n.saturating_sub(1) {
                    if !self.loops[k].parallel && !self.loops[k + 1].parallel {
                        let mut o = id.clone();
                        o.swap(k, k + 1);
                        out.push(o);
                    }
                }
                Ok(out)
            }
            Permutations::Policy(PermPolicy::All) => {
                if n > 8 {
                    return Err(VariantError::Config(format!("{n} band loops are too many for all permutations")));
                }
                let mut out = Vec::new();
                let mut p = id;
                loop {
                    out.push(p.clone());
                    if !next_permutation(&mut p) {
                        return Ok(out);
                    }
                }
            }
            Permutations::List(list) => {
                let mut out = Vec::new();
                for names in list {
                    let mut o = Vec::with_capacity(n);
                    for x in names {
                        match self.loops.iter().position(|l| &l.iter == x) {
                            Some(k) if !o.contains(&k) => o.push(k),
                            _ => return Err(VariantError::Config(format!("`{x}` in order {names:?} is not a band loop"))),
                        }
                    }
                    if o.len() != n {
                        return Err(VariantError::Config(format!("order {names:?} must list all {n} band loops")));
                    }
                    if !out.contains(&o) {
                        out.push(o);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Tile options per band loop, the untiled option first when offered.
    pub fn menus(&self, cfg: &VariantConfig, b: &ParamBinding) -> Result<Vec<Vec<TileChoice>>, VariantError> {
        let n = self.loops.len();
        let extents = (0..n)
            .map(|k| if self.tileable(k) { self.extent(k, b) } else { Ok(0) })
            .collect::<Result<Vec<_>, _>>()?;
        let auto: Vec<bool> = match &cfg.auto_tile.loops {
            AutoLoops::Policy(AutoPolicy::All) => vec![true; n],
            AutoLoops::Policy(AutoPolicy::Largest) => {
                let pick = (0..n)
                    .filter(|&k| self.tileable(k) && !self.loops[k].parallel)
                    .fold(None, |best: Option<usize>, k| match best {
                        Some(j) if extents[j] >= extents[k] => Some(j),
                        _ => Some(k),
                    });
                (0..n).map(|k| Some(k) == pick).collect()
            }
            AutoLoops::Names(names) => self.loops.iter().map(|l| names.contains(&l.iter)).collect(),
        };
        let mut menus = Vec::with_capacity(n);
        for k in 0..n {
            let e = extents[k];
            let mut sizes: Vec<Vec<i64>> = Vec::new();
            if self.tileable(k) {
                if let Some(explicit) = cfg.tiles.get(&self.loops[k].iter) {
                    for t in explicit {
                        let mut c: Vec<i64> = t.iter().map(|&s| s.min(e).max(1)).collect();
                        c.dedup();
                        if !sizes.contains(&c) {
                            sizes.push(c);
                        }
                    }
                } else if auto[k] {
                    sizes = auto_menu(e, &cfg.auto_tile);
                }
            }
            let mut m: Vec<TileChoice> = Vec::new();
            if cfg.include_untiled || sizes.is_empty() {
                m.push(None);
            }
            m.extend(sizes.into_iter().map(Some));
            menus.push(m);
        }
        Ok(menus)
    }

    /// Names of the tile loops of each band loop, outermost first.
    fn tile_names(&self, nest: &LoopNest, choice: &[TileChoice]) -> Vec<Vec<String>> {
        let mut taken: BTreeSet<String> = nest.loops().iter().map(|l| l.iter.clone()).collect();
        taken.extend(nest.params.iter().cloned());
        taken.extend(nest.arrays.iter().map(|a| a.name.clone()));
        taken.extend(nest.scalars.iter().map(|s| s.0.clone()));
        taken.extend(nest.consts.iter().map(|c| c.0.clone()));
        let mut out = Vec::with_capacity(choice.len());
        for (l, c) in self.loops.iter().zip(choice) {
            let d = c.as_ref().map_or(0, Vec::len);
            let mut names = Vec::with_capacity(d);
            for j in 0..d {
                let mut name = format!("{}t{}", l.iter, d - j);
                while taken.contains(&name) {
                    name.push('_');
                }
                taken.insert(name.clone());
                names.push(name);
            }
            out.push(names);
        }
        out
    }

    /// `(needs race check, parallel loop)` pairs for one order and tiling.
    pub(crate) fn parallel_choices(
        &self,
        nest: &LoopNest,
        cfg: &VariantConfig,
        choice: &[TileChoice],
    ) -> Vec<(bool, Option<String>)> {
        let names = self.tile_names(nest, choice);
        let outermost = |k: usize| names[k].first().cloned().unwrap_or_else(|| self.loops[k].iter.clone());
        let default = self.loops.iter().position(|l| l.parallel).map(outermost);
        let present: Vec<&String> =
            self.loops.iter().map(|l| &l.iter).chain(names.iter().flatten()).collect();
        let picked: Vec<(bool, Option<String>)> = cfg
            .parallel
            .iter()
            .filter(|p| present.contains(p))
            .map(|p| (Some(p) != default.as_ref(), Some(p.clone())))
            .collect();
        if picked.is_empty() {
            vec![(false, default)]
        } else {
            picked
        }
    }

    /// Applies one order, tiling and parallel choice. Tile loops keep their
    /// loop's position in `order`; point loops sink below every tile loop.
    pub(crate) fn build(
        &self,
        nest: &LoopNest,
        b: &ParamBinding,
        order: &[usize],
        choice: &[TileChoice],
        parallel: Option<&str>,
        kernel: Option<&KernelSpec>,
    ) -> LoopNest {
        let names = self.tile_names(nest, choice);
        let depth = |k: usize| choice[k].as_ref().map_or(0, Vec::len);
        let maxd = (0..self.loops.len()).map(depth).max().unwrap_or(0);
        let mut headers: Vec<Loop> = Vec::new();
        for s in 0..maxd.max(1) {
            for &k in order {
                if s == 0 && depth(k) == 0 {
                    headers.push(self.loops[k].clone());
                } else if s < depth(k) {
                    headers.push(self.tile_loop(k, &names[k], choice[k].as_deref().unwrap(), s, b));
                }
            }
        }
        let first_point = headers.len();
        for &k in order {
            if depth(k) > 0 {
                let d = depth(k);
                headers.push(self.tile_loop(k, &names[k], choice[k].as_deref().unwrap(), d, b));
            }
        }
        for h in &mut headers {
            h.parallel = Some(h.iter.as_str()) == parallel;
        }
        let fully_tiled = maxd > 0 && (0..self.loops.len()).all(|k| depth(k) > 0);
        if let (Some(ks), true) = (kernel, fully_tiled && !contains_kernel(&self.inner)) {
            let mark = BandMark { name: ks.name.clone(), args: ks.args.clone() };
            for h in &mut headers[first_point..] {
                h.band = Some(mark.clone());
            }
        }
        let mut body = self.inner.clone();
        for mut h in headers.into_iter().rev() {
            h.body = body;
            body = vec![Node::Loop(h)];
        }
        LoopNest { body, ..nest.clone() }
    }

    /// Level `j` of band loop `k` tiled by `sizes` with tile iterators
    /// `names`; `j == sizes.len()` is the point loop.
    fn tile_loop(&self, k: usize, names: &[String], sizes: &[i64], j: usize, b: &ParamBinding) -> Loop {
        let l = &self.loops[k];
        let extent = self.extent(k, b).ok();
        let iter = if j == sizes.len() { l.iter.clone() } else { names[j].clone() };
        let step = if j == sizes.len() { 1 } else { sizes[j] };
        if j == 0 {
            let mut t = Loop::new(&iter, l.lower[0].clone(), l.upper[0].clone());
            t.upper = l.upper.clone();
            t.step = step;
            return t;
        }
        let parent = AffineExpr::var(&names[j - 1]);
        let mut t = Loop::new(&iter, parent.clone(), parent.offset(sizes[j - 1]));
        t.step = step;
        // enclosing tile ends that the parent tile may overrun
        for i in (0..j - 1).rev() {
            if !sizes[i..j].windows(2).all(|w| w[0] % w[1] == 0) {
                t.upper.push(AffineExpr::var(&names[i]).offset(sizes[i]));
            }
        }
        let aligned = sizes[..j].windows(2).all(|w| w[0] % w[1] == 0);
        if !(aligned && extent.is_some_and(|e| e % sizes[j - 1] == 0)) {
            t.upper.extend(l.upper.iter().cloned());
        }
        t
    }
}

fn contains_kernel(nodes: &[Node]) -> bool {
    nodes.iter().any(|n| match n {
        Node::Microkernel(_) => true,
        Node::Loop(l) => l.band.is_some() || contains_kernel(&l.body),
        Node::Stmt(_) => false,
    })
}

fn auto_menu(extent: i64, a: &super::AutoTile) -> Vec<Vec<i64>> {
    let mut pow = Vec::new();
    let mut t = 1i64;
    while t <= extent / 2 {
        if t >= a.min_size {
            pow.push(t);
        }
        t *= 2;
    }
    let pow = pow[pow.len().saturating_sub(a.max_sizes)..].to_vec();
    if a.levels == 1 {
        return pow.into_iter().map(|t| vec![t]).collect();
    }
    let mut out = Vec::new();
    for &outer in &pow {
        for &inner in pow.iter().filter(|&&x| x < outer) {
            out.push(vec![outer, inner]);
        }
    }
    out
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
