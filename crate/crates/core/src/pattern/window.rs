//! Occupancy tables: weighted sums indexed by (size, small-pattern count,
//! large-pattern count), over the full translation-quotient ensemble or over
//! the fixed clusters confined to a finite window. The window ensemble is
//! closed under flips, so the exact occupancy identity
//! `a·T_n(a,b) = ((b+1)/θ)·T_{n+1}(a-1,b+1)` holds with zero residual.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;

use crate::cluster::{Cluster, ClusterClass, LocalStats, SizeMeasure};
use crate::enumerate::{enumerate_fold, EnumConfig, EnumTask};
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, SiteRef};
use crate::pattern::{occurrences, Element, FlipDirection, FlipPair, Pattern};
use crate::weights::{ExactScalar, WeightModel};

/// An axis-aligned box of cells; the window contains every offset copy of
/// each cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl WindowBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<WindowBox> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidParam("malformed window box".into()));
        }
        Ok(WindowBox { lo, hi })
    }

    /// Cube of side `side` starting at the origin.
    pub fn cube(dim: usize, side: i64) -> Result<WindowBox> {
        if side < 1 {
            return Err(Error::InvalidParam("window side must be positive".into()));
        }
        WindowBox::new(vec![0; dim], vec![side - 1; dim])
    }

    fn volume(&self) -> usize {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a + 1) as usize).product()
    }

    fn contains(&self, cell: &[i64]) -> bool {
        cell.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (a, b))| c >= a && c <= b)
    }

    fn describe(&self) -> String {
        format!("window[{:?}..{:?}]", self.lo, self.hi)
    }
}

/// Which family of clusters a table sums over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ensemble {
    /// One representative per translation class.
    Full,
    /// All fixed clusters whose sites lie in the box. Only the
    /// occurrence-bearing rows are materialized: rows with neither pattern
    /// present never enter any identity residual.
    Window(WindowBox),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableMeta {
    pub lattice_name: String,
    pub lattice_digest: String,
    pub class: ClusterClass,
    pub measure: SizeMeasure,
    pub weights: String,
    pub pair: String,
    pub ensemble: String,
}

/// Weighted sums keyed by (n, small-occurrence count, large-occurrence
/// count).
#[derive(Clone, Debug)]
pub struct OccupancyTable {
    pub meta: TableMeta,
    pub entries: BTreeMap<(u32, u32, u32), ExactScalar>,
}

impl OccupancyTable {
    pub fn get(&self, n: u32, a: u32, b: u32) -> ExactScalar {
        self.entries.get(&(n, a, b)).cloned().unwrap_or_else(ExactScalar::zero)
    }

    pub fn level_sum(&self, n: u32) -> ExactScalar {
        let mut total = ExactScalar::zero();
        for ((k, _, _), v) in &self.entries {
            if *k == n {
                total += v;
            }
        }
        total
    }

    pub fn max_small_count(&self) -> u32 {
        self.entries.keys().map(|(_, a, _)| *a).max().unwrap_or(0)
    }
}

/// One identity residual row.
#[derive(Clone, Debug)]
pub struct Residual {
    pub n: u32,
    pub small_count: u32,
    pub large_count: u32,
    pub lhs: ExactScalar,
    pub rhs: ExactScalar,
    pub residual: ExactScalar,
}

/// Build the occupancy table for sizes `n_lo..=n_hi`.
pub fn occupancy_table(
    task: &EnumTask,
    pair: &FlipPair,
    w: &WeightModel,
    n_lo: u32,
    n_hi: u32,
    ensemble: &Ensemble,
    cfg: &EnumConfig,
) -> Result<OccupancyTable> {
    let meta = TableMeta {
        lattice_name: task.lattice.name().to_string(),
        lattice_digest: task.lattice.digest(),
        class: task.class,
        measure: task.measure,
        weights: w.describe(),
        pair: pair.digest(),
        ensemble: match ensemble {
            Ensemble::Full => "full".into(),
            Ensemble::Window(b) => b.describe(),
        },
    };
    match ensemble {
        Ensemble::Full => {
            let mut entries: BTreeMap<(u32, u32, u32), ExactScalar> = BTreeMap::new();
            for n in n_lo..=n_hi.min(task.n_max) {
                let (_, level) = enumerate_fold(
                    task,
                    n,
                    cfg,
                    BTreeMap::<(u32, u32), ExactScalar>::new,
                    |acc, g| {
                        let a = occurrences(g, &pair.small).len() as u32;
                        let b = occurrences(g, &pair.large).len() as u32;
                        let wt = crate::weights::weight(g, w);
                        match acc.get_mut(&(a, b)) {
                            Some(slot) => *slot += &wt,
                            None => {
                                acc.insert((a, b), wt);
                            }
                        }
                    },
                    |mut x, y| {
                        for (k, v) in y {
                            match x.get_mut(&k) {
                                Some(slot) => *slot += &v,
                                None => {
                                    x.insert(k, v);
                                }
                            }
                        }
                        x
                    },
                )?;
                for ((a, b), v) in level {
                    entries.insert((n, a, b), v);
                }
            }
            Ok(OccupancyTable { meta, entries })
        }
        Ensemble::Window(win) => window_table(task, pair, w, n_lo, n_hi, win, meta),
    }
}

struct WindowIndex {
    dim: usize,
    offsets: u32,
    box_: WindowBox,
    cells: Vec<Vec<i64>>,
    /// adjacency masks within the window
    adj: Vec<u64>,
    /// full lattice degree per window site
    deg: Vec<u32>,
}

impl WindowIndex {
    fn build(lattice: &Arc<LatticeSpec>, win: &WindowBox) -> Result<WindowIndex> {
        let dim = lattice.dimension();
        let offsets = lattice.offset_count() as u32;
        let count = win.volume() * offsets as usize;
        if count > 64 {
            return Err(Error::Unsupported(format!(
                "window holds {count} sites; the decorated enumeration supports up to 64"
            )));
        }
        let mut cells = Vec::new();
        let mut cur = win.lo.clone();
        loop {
            cells.push(cur.clone());
            let mut k = 0;
            loop {
                if k == dim {
                    break;
                }
                cur[k] += 1;
                if cur[k] <= win.hi[k] {
                    break;
                }
                cur[k] = win.lo[k];
                k += 1;
            }
            if k == dim {
                break;
            }
        }
        let index_of = |s: &SiteRef, cells: &Vec<Vec<i64>>| -> Option<usize> {
            if !win.contains(&s.cell) {
                return None;
            }
            let pos = cells.iter().position(|c| *c == s.cell)?;
            Some(pos * offsets as usize + s.offset as usize)
        };
        let mut adj = vec![0u64; count];
        let mut deg = vec![0u32; count];
        for (ci, cell) in cells.iter().enumerate() {
            for off in 0..offsets {
                let idx = ci * offsets as usize + off as usize;
                let s = SiteRef::new(off, cell.clone());
                deg[idx] = lattice.degree(off) as u32;
                for (far, _) in lattice.neighbors(&s) {
                    if let Some(fidx) = index_of(&far, &cells) {
                        adj[idx] |= 1u64 << fidx;
                    }
                }
            }
        }
        Ok(WindowIndex { dim, offsets, box_: win.clone(), cells, adj, deg })
    }

    fn site_index(&self, s: &SiteRef) -> Option<usize> {
        if !self.box_.contains(&s.cell) {
            return None;
        }
        let pos = self.cells.iter().position(|c| *c == s.cell)?;
        Some(pos * self.offsets as usize + s.offset as usize)
    }

    fn site_of(&self, idx: usize) -> SiteRef {
        let cell = self.cells[idx / self.offsets as usize].clone();
        SiteRef::new((idx % self.offsets as usize) as u32, cell)
    }
}

fn pattern_sites(p: &Pattern) -> BTreeSet<SiteRef> {
    let mut out = BTreeSet::new();
    for e in p.p1() {
        match e {
            Element::Site(s) => {
                out.insert(s.clone());
            }
            Element::Bond(b) => {
                out.insert(b.lo().clone());
                out.insert(b.hi().clone());
            }
        }
    }
    out
}

fn cell_bbox(sites: impl Iterator<Item = SiteRef>, dim: usize) -> Option<(Vec<i64>, Vec<i64>)> {
    let mut lo = vec![i64::MAX; dim];
    let mut hi = vec![i64::MIN; dim];
    let mut any = false;
    for s in sites {
        any = true;
        for k in 0..dim {
            lo[k] = lo[k].min(s.cell[k]);
            hi[k] = hi[k].max(s.cell[k]);
        }
    }
    any.then_some((lo, hi))
}

fn shifts_fitting(bbox: &(Vec<i64>, Vec<i64>), win: &WindowBox) -> Vec<Vec<i64>> {
    let dim = win.lo.len();
    let mut ranges = Vec::with_capacity(dim);
    for k in 0..dim {
        let lo = win.lo[k] - bbox.0[k];
        let hi = win.hi[k] - bbox.1[k];
        if lo > hi {
            return Vec::new();
        }
        ranges.push((lo, hi));
    }
    let mut shifts = vec![Vec::new()];
    for (lo, hi) in ranges {
        let mut next = Vec::new();
        for s in &shifts {
            for v in lo..=hi {
                let mut t = s.clone();
                t.push(v);
                next.push(t);
            }
        }
        shifts = next;
    }
    shifts
}

/// Certify that within the window ensemble a frame placed at `t` with
/// content `content` admits no pattern occurrence other than `content` at
/// `t`, regardless of the free-cell decoration. The blockers only use
/// elements whose presence or absence the frame content pins down.
fn certify_unique_occurrence(
    pair: &FlipPair,
    t: &[i64],
    content: FlipDirection,
    win: &WindowBox,
    dim: usize,
) -> Result<()> {
    let content_pat = match content {
        FlipDirection::Grow => &pair.small,
        FlipDirection::Shrink => &pair.large,
    };
    let content_elems: BTreeSet<Element> =
        content_pat.p1().iter().map(|e| e.translated(t)).collect();
    let frame_sites: BTreeSet<SiteRef> =
        pair.frame.sites.iter().map(|s| s.translated(t)).collect();
    let frame_bonds: BTreeSet<crate::lattice::BondRef> =
        pair.frame.bonds.iter().map(|b| b.translated(t)).collect();

    for (other_dir, other) in [(FlipDirection::Grow, &pair.small), (FlipDirection::Shrink, &pair.large)]
    {
        let bbox = cell_bbox(pattern_sites(other).into_iter(), dim)
            .ok_or_else(|| Error::Construction("pattern has no sites".into()))?;
        for x in shifts_fitting(&bbox, win) {
            if x == t && other_dir == content {
                continue;
            }
            let mut blocked = false;
            // (A)/(B): a required element falls inside the frame region but
            // is not part of the pinned content.
            for e in other.p1() {
                let te = e.translated(&x);
                let in_frame = match &te {
                    Element::Site(s) => frame_sites.contains(s),
                    Element::Bond(b) => frame_bonds.contains(b),
                };
                if in_frame && !content_elems.contains(&te) {
                    blocked = true;
                    break;
                }
            }
            // (C): an excluded element is pinned present by the content.
            if !blocked {
                for e in other.p2() {
                    if content_elems.contains(&e.translated(&x)) {
                        blocked = true;
                        break;
                    }
                }
            }
            if !blocked {
                return Err(Error::Construction(format!(
                    "window decomposition not certified: occurrence at {x:?} not excluded by the frame at {t:?}"
                )));
            }
        }
    }
    Ok(())
}

fn window_table(
    task: &EnumTask,
    pair: &FlipPair,
    w: &WeightModel,
    n_lo: u32,
    n_hi: u32,
    win: &WindowBox,
    meta: TableMeta,
) -> Result<OccupancyTable> {
    if task.class != ClusterClass::SiteAnimal {
        return Err(Error::Unsupported(
            "window ensembles are materialized for undirected site animals only".into(),
        ));
    }
    let lattice = &task.lattice;
    let index = WindowIndex::build(lattice, win)?;
    let dim = index.dim;

    // Placements: all shifts of the frame's site set into the window.
    let frame_bbox = cell_bbox(pair.frame.sites.iter().cloned(), dim)
        .ok_or_else(|| Error::Construction("empty frame".into()))?;
    let placements = shifts_fitting(&frame_bbox, win);

    // Certify uniqueness of the pinned occurrence for every placement and
    // content before trusting the per-placement decomposition.
    for t in &placements {
        for content in [FlipDirection::Grow, FlipDirection::Shrink] {
            certify_unique_occurrence(pair, t, content, win, dim)?;
        }
    }

    struct Unit {
        t: Vec<i64>,
        content: FlipDirection,
    }
    let units: Vec<Unit> = placements
        .iter()
        .flat_map(|t| {
            [FlipDirection::Grow, FlipDirection::Shrink]
                .into_iter()
                .map(|content| Unit { t: t.clone(), content })
        })
        .collect();

    let tallies: Result<Vec<(FlipDirection, HashMap<(u32, u32, u32), u64>, Vec<u64>)>> = units
        .par_iter()
        .map(|unit| {
            let content_pat = match unit.content {
                FlipDirection::Grow => &pair.small,
                FlipDirection::Shrink => &pair.large,
            };
            let mut base_mask = 0u64;
            for s in pattern_sites(content_pat) {
                let idx = index.site_index(&s.translated(&unit.t)).ok_or_else(|| {
                    Error::Construction("frame content site escapes the window".into())
                })?;
                base_mask |= 1u64 << idx;
            }
            let mut frame_mask = 0u64;
            for s in &pair.frame.sites {
                let idx = index.site_index(&s.translated(&unit.t)).ok_or_else(|| {
                    Error::Construction("frame site escapes the window".into())
                })?;
                frame_mask |= 1u64 << idx;
            }
            let all_mask = if index.adj.len() == 64 {
                u64::MAX
            } else {
                (1u64 << index.adj.len()) - 1
            };
            let free_mask = all_mask & !frame_mask;

            // Base statistics.
            let mut ns = 0u32;
            let mut nb = 0u32;
            let mut degsum = 0u32;
            let mut m = base_mask;
            while m != 0 {
                let i = m.trailing_zeros() as usize;
                m &= m - 1;
                ns += 1;
                degsum += index.deg[i];
                nb += (index.adj[i] & base_mask).count_ones();
            }
            nb /= 2;

            let mut tally: HashMap<(u32, u32, u32), u64> = HashMap::new();
            let mut samples: Vec<u64> = Vec::new();
            // Initial extension: free cells adjacent to the base.
            let mut ext: Vec<u8> = Vec::new();
            let mut seen = base_mask;
            let mut fm = free_mask;
            while fm != 0 {
                let i = fm.trailing_zeros() as usize;
                fm &= fm - 1;
                if index.adj[i] & base_mask != 0 {
                    ext.push(i as u8);
                    seen |= 1u64 << i;
                }
            }
            decorated_rec(
                &index,
                free_mask,
                base_mask,
                seen,
                &ext,
                ns,
                nb,
                degsum,
                &mut tally,
                &mut samples,
            );
            Ok((unit.content, tally, samples))
        })
        .collect();
    let tallies = tallies?;

    // Spot-check a few enumerated configurations against the general
    // occurrence matcher.
    for ((unit, (_, _, samples)), _) in units.iter().zip(&tallies).zip(0..) {
        for mask in samples.iter().take(2) {
            let mut sites = Vec::new();
            let mut m = *mask;
            while m != 0 {
                let i = m.trailing_zeros() as usize;
                m &= m - 1;
                sites.push(index.site_of(i));
            }
            let g = Cluster::site_animal_from_sites(lattice.clone(), ClusterClass::SiteAnimal, sites);
            if g.validate().is_err() {
                return Err(Error::Construction("window enumeration emitted an invalid cluster".into()));
            }
            let occ_small = occurrences(&g, &pair.small);
            let occ_large = occurrences(&g, &pair.large);
            let (want_small, want_large) = match unit.content {
                FlipDirection::Grow => (vec![unit.t.clone()], vec![]),
                FlipDirection::Shrink => (vec![], vec![unit.t.clone()]),
            };
            if occ_small != want_small || occ_large != want_large {
                return Err(Error::Construction(
                    "window enumeration occurrence bookkeeping mismatch".into(),
                ));
            }
        }
    }

    // Assemble weighted entries; weights depend only on the tallied stats.
    let mut weight_cache: HashMap<(u32, u32, u32), ExactScalar> = HashMap::new();
    let mut entries: BTreeMap<(u32, u32, u32), ExactScalar> = BTreeMap::new();
    for (content, tally, _) in &tallies {
        let (a, b) = match content {
            FlipDirection::Grow => (1u32, 0u32),
            FlipDirection::Shrink => (0u32, 1u32),
        };
        for (&(ns, nb, degsum), &count) in tally {
            let n = match task.measure {
                SizeMeasure::Sites => ns,
                SizeMeasure::Bonds => nb,
            };
            if n < n_lo || n > n_hi {
                continue;
            }
            let wt = weight_cache.entry((ns, nb, degsum)).or_insert_with(|| {
                let stats = LocalStats {
                    n_sites: ns as u64,
                    n_bonds: nb as u64,
                    mono: 0,
                    solv: (degsum - 2 * nb) as u64,
                    cyc: (nb + 1 - ns) as u64,
                };
                w.eval_stats(&stats)
            });
            let term = &*wt * &ExactScalar::from_integer(count as i64);
            match entries.get_mut(&(n, a, b)) {
                Some(slot) => *slot += &term,
                None => {
                    entries.insert((n, a, b), term);
                }
            }
        }
    }
    Ok(OccupancyTable { meta, entries })
}

/// Enumerate connected supersets of the base inside the free cells exactly
/// once each, tallying (sites, bonds, degree-sum).
#[allow(clippy::too_many_arguments)]
fn decorated_rec(
    index: &WindowIndex,
    free_mask: u64,
    in_mask: u64,
    seen: u64,
    ext: &[u8],
    ns: u32,
    nb: u32,
    degsum: u32,
    tally: &mut HashMap<(u32, u32, u32), u64>,
    samples: &mut Vec<u64>,
) {
    *tally.entry((ns, nb, degsum)).or_insert(0) += 1;
    if samples.len() < 2 && ns > (in_mask.count_ones() / 2).max(1) {
        samples.push(in_mask);
    }
    for (i, &wi) in ext.iter().enumerate() {
        let w = wi as usize;
        let bit = 1u64 << w;
        let new_in = in_mask | bit;
        let new_nb = nb + (index.adj[w] & in_mask).count_ones();
        let mut new_seen = seen | bit;
        let mut new_ext: Vec<u8> = ext[i + 1..].to_vec();
        let mut fresh = index.adj[w] & free_mask & !new_seen;
        while fresh != 0 {
            let j = fresh.trailing_zeros() as usize;
            fresh &= fresh - 1;
            new_ext.push(j as u8);
            new_seen |= 1u64 << j;
        }
        decorated_rec(
            index,
            free_mask,
            new_in,
            new_seen,
            &new_ext,
            ns + 1,
            new_nb,
            degsum + index.deg[w],
            tally,
            samples,
        );
    }
}

/// Residuals of the occupancy identity between a table at level n and one at
/// level n+1. Exact zero everywhere when the ensemble is flip-closed.
pub fn verify_flip_identity(
    table_a: &OccupancyTable,
    table_b: &OccupancyTable,
    n: u32,
    weight_ratio: &ExactScalar,
) -> Result<Vec<Residual>> {
    if table_a.meta != table_b.meta {
        return Err(Error::MetadataMismatch(format!(
            "{:?} vs {:?}",
            table_a.meta, table_b.meta
        )));
    }
    let mut keys: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (nn, a, b) in table_a.entries.keys() {
        if *nn == n && *a >= 1 {
            keys.insert((*a, *b));
        }
    }
    for (nn, a, b) in table_b.entries.keys() {
        if *nn == n + 1 && *b >= 1 {
            keys.insert((*a + 1, *b - 1));
        }
    }
    let mut out = Vec::new();
    for (a, b) in keys {
        let lhs = &ExactScalar::from_integer(a as i64) * &table_a.get(n, a, b);
        let rhs = &(&ExactScalar::from_integer((b + 1) as i64) * &table_b.get(n + 1, a - 1, b + 1))
            / weight_ratio;
        let residual = &lhs - &rhs;
        out.push(Residual { n, small_count: a, large_count: b, lhs, rhs, residual });
    }
    Ok(out)
}

/// Run the identity across every size level of a single table.
pub fn verify_flip_identity_range(
    table: &OccupancyTable,
    weight_ratio: &ExactScalar,
) -> Result<Vec<Residual>> {
    let Some(min_n) = table.entries.keys().map(|(n, _, _)| *n).min() else {
        return Ok(Vec::new());
    };
    let max_n = table.entries.keys().map(|(n, _, _)| *n).max().unwrap();
    let mut out = Vec::new();
    for n in min_n.saturating_sub(1)..=max_n {
        out.extend(verify_flip_identity(table, table, n, weight_ratio)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{builtin_lattice, rat, rat_frac};
    use crate::pattern::builtin_flip_pair;

    fn z2() -> Arc<LatticeSpec> {
        builtin_lattice("hypercubic", &[2]).unwrap()
    }

    #[test]
    fn full_table_below_pattern_size_has_zero_counts_only() {
        let l = z2();
        let pair = builtin_flip_pair(&l, ClusterClass::SiteAnimal, &WeightModel::Unit).unwrap();
        let task = EnumTask::new(l, ClusterClass::SiteAnimal, SizeMeasure::Sites, 5).unwrap();
        let table = occupancy_table(
            &task,
            &pair,
            &WeightModel::Unit,
            1,
            5,
            &Ensemble::Full,
            &EnumConfig::default(),
        )
        .unwrap();
        for ((_, a, b), _) in &table.entries {
            assert_eq!((*a, *b), (0, 0));
        }
        // Level sums reproduce the counts.
        assert_eq!(table.level_sum(5), ExactScalar::from_integer(63));
    }

    #[test]
    fn window_identity_small_window_unit_weights() {
        // A 5x5 window admits exactly one frame placement.
        let l = z2();
        let pair = builtin_flip_pair(&l, ClusterClass::SiteAnimal, &WeightModel::Unit).unwrap();
        let task = EnumTask::new(l.clone(), ClusterClass::SiteAnimal, SizeMeasure::Sites, 49).unwrap();
        let win = WindowBox::cube(2, 5).unwrap();
        let table = occupancy_table(
            &task,
            &pair,
            &WeightModel::Unit,
            1,
            49,
            &Ensemble::Window(win),
            &EnumConfig::default(),
        )
        .unwrap();
        // One placement, no free cells: exactly two clusters.
        assert_eq!(table.entries.len(), 2);
        assert_eq!(table.get(17, 1, 0), ExactScalar::one());
        assert_eq!(table.get(18, 0, 1), ExactScalar::one());
        assert!(table.max_small_count() <= 9);
        let residuals = verify_flip_identity_range(&table, &pair.weight_ratio).unwrap();
        assert!(!residuals.is_empty());
        for r in &residuals {
            assert!(r.residual.is_zero(), "{r:?}");
        }
    }

    #[test]
    fn window_identity_six_by_six_collapse_weights() {
        let l = z2();
        let w = WeightModel::collapse(rat(2), rat_frac(1, 2)).unwrap();
        let pair = builtin_flip_pair(&l, ClusterClass::SiteAnimal, &w).unwrap();
        let task = EnumTask::new(l.clone(), ClusterClass::SiteAnimal, SizeMeasure::Sites, 64).unwrap();
        let win = WindowBox::cube(2, 6).unwrap();
        let table = occupancy_table(
            &task,
            &pair,
            &w,
            1,
            64,
            &Ensemble::Window(win),
            &EnumConfig::default(),
        )
        .unwrap();
        let residuals = verify_flip_identity_range(&table, &pair.weight_ratio).unwrap();
        assert!(!residuals.is_empty());
        for r in &residuals {
            assert!(r.residual.is_zero(), "{r:?}");
        }
        // Sensitivity: corrupting one entry must break exactly the matching
        // residual rows.
        let mut corrupt = table.clone();
        let key = *corrupt.entries.keys().find(|(_, a, _)| *a == 1).unwrap();
        let bumped = &corrupt.entries[&key] + &ExactScalar::one();
        corrupt.entries.insert(key, bumped);
        let residuals = verify_flip_identity_range(&corrupt, &pair.weight_ratio).unwrap();
        let bad: Vec<&Residual> = residuals.iter().filter(|r| !r.residual.is_zero()).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!((bad[0].n, bad[0].small_count, bad[0].large_count), key);
    }

    #[test]
    fn metadata_mismatch_rejected() {
        let l = z2();
        let pair = builtin_flip_pair(&l, ClusterClass::SiteAnimal, &WeightModel::Unit).unwrap();
        let task = EnumTask::new(l, ClusterClass::SiteAnimal, SizeMeasure::Sites, 4).unwrap();
        let t1 = occupancy_table(
            &task,
            &pair,
            &WeightModel::Unit,
            1,
            3,
            &Ensemble::Full,
            &EnumConfig::default(),
        )
        .unwrap();
        let mut t2 = t1.clone();
        t2.meta.weights = "different".into();
        assert!(matches!(
            verify_flip_identity(&t1, &t2, 2, &ExactScalar::one()),
            Err(Error::MetadataMismatch(_))
        ));
    }
}
