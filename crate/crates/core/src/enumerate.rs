//! Exhaustive generation of all clusters of a given size up to translation.
//!
//! The optimized enumerator pins the lexicographically smallest site of each
//! cluster at an offset representative and extends by a fixed element order,
//! so every canonical cluster is produced exactly once with no global
//! deduplication table. Site-determined classes grow site sets; bond classes
//! grow bond sets over the line graph with the same discipline. Directed
//! classes are filtered at emission. An independent breadth-first oracle with
//! canonical-key deduplication ([`oracle_enumerate`]) cross-checks the whole
//! thing at small sizes.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrd};
use std::sync::{Arc, Mutex};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::cluster::{Cluster, ClusterClass, SizeMeasure};
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, SiteRef};

/// An enumeration job: lattice, cluster class, size measure, size bound.
#[derive(Clone)]
pub struct EnumTask {
    pub lattice: Arc<LatticeSpec>,
    pub class: ClusterClass,
    pub measure: SizeMeasure,
    pub n_max: u32,
}

impl EnumTask {
    pub fn new(
        lattice: Arc<LatticeSpec>,
        class: ClusterClass,
        measure: SizeMeasure,
        n_max: u32,
    ) -> Result<EnumTask> {
        if n_max == 0 {
            return Err(Error::InvalidParam("n_max must be at least 1".into()));
        }
        if class.is_directed() && lattice.direction().is_none() {
            return Err(Error::InvalidParam(
                "directed classes need a lattice direction vector".into(),
            ));
        }
        Ok(EnumTask { lattice, class, measure, n_max })
    }
}

/// Resource and scheduling knobs for enumeration.
#[derive(Clone)]
pub struct EnumConfig {
    /// Maximum number of search-tree node expansions before an explicit
    /// error (never a silent truncation).
    pub node_budget: u64,
    /// Fan subtrees out to the rayon pool.
    pub parallel: bool,
    /// Depth at which the search tree is split into independent subtrees.
    pub split_depth: usize,
    /// Deliver visitor callbacks under a lock instead of concurrently.
    pub serialize_visitor: bool,
    /// Cap on clusters stored by the oracle.
    pub oracle_item_budget: usize,
}

impl Default for EnumConfig {
    fn default() -> Self {
        EnumConfig {
            node_budget: 1_000_000_000,
            parallel: true,
            split_depth: 2,
            serialize_visitor: false,
            oracle_item_budget: 20_000_000,
        }
    }
}

// ---------------------------------------------------------------------------
// Region: interned bounded neighborhood of the anchor cells
// ---------------------------------------------------------------------------

struct Region {
    lattice: Arc<LatticeSpec>,
    dim: usize,
    offsets: usize,
    radius: i64,
    side: i64,
    cells: usize,
    /// site id -> rank in exact lexicographic embedded order
    lex_rank: Vec<u32>,
    /// site id -> (neighbor site id, bond id), only in-box targets
    site_adj: Vec<Vec<(u32, u32)>>,
    /// bond id -> endpoint ids, lex-ordered
    bond_ends: Vec<(u32, u32)>,
    /// bond id -> packed (lo_rank, hi_rank)
    bond_rank: Vec<u64>,
    /// line-graph adjacency
    bond_adj: Vec<Vec<u32>>,
    /// site id -> direction-height level (directed lattices only)
    height_level: Option<Vec<u32>>,
    /// anchor site id per offset class
    anchors: Vec<u32>,
}

impl Region {
    fn build(lattice: &Arc<LatticeSpec>, radius: i64) -> Region {
        let dim = lattice.dimension();
        let offsets = lattice.offset_count();
        let side = 2 * radius + 1;
        let cells = (side as usize).pow(dim as u32);
        let n_sites = cells * offsets;

        let to_site = |id: usize| -> SiteRef {
            let off = (id / cells) as u32;
            let mut rest = id % cells;
            let mut cell = vec![0i64; dim];
            for c in cell.iter_mut() {
                *c = (rest % side as usize) as i64 - radius;
                rest /= side as usize;
            }
            SiteRef::new(off, cell)
        };
        let to_id = |s: &SiteRef| -> Option<usize> {
            let mut lin = 0usize;
            for c in s.cell.iter().rev() {
                if c.abs() > radius {
                    return None;
                }
                lin = lin * side as usize + (c + radius) as usize;
            }
            Some(s.offset as usize * cells + lin)
        };

        // Exact lexicographic ranks.
        let embeds: Vec<Vec<crate::lattice::Rat>> =
            (0..n_sites).map(|id| lattice.embed(&to_site(id))).collect();
        let mut order: Vec<u32> = (0..n_sites as u32).collect();
        order.sort_by(|a, b| crate::lattice::lex_cmp(&embeds[*a as usize], &embeds[*b as usize]));
        let mut lex_rank = vec![0u32; n_sites];
        for (rank, id) in order.iter().enumerate() {
            lex_rank[*id as usize] = rank as u32;
        }

        // Site adjacency and deduplicated bonds.
        let mut site_adj: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_sites];
        let mut bond_ends: Vec<(u32, u32)> = Vec::new();
        let mut bond_index: HashMap<(u32, u32), u32> = HashMap::new();
        for id in 0..n_sites {
            let s = to_site(id);
            for step in lattice.steps_at(s.offset) {
                let far = SiteRef {
                    offset: step.to_offset,
                    cell: s.cell.iter().zip(&step.cell_delta).map(|(c, d)| c + d).collect(),
                };
                if let Some(fid) = to_id(&far) {
                    let key = (id.min(fid) as u32, id.max(fid) as u32);
                    let bid = *bond_index.entry(key).or_insert_with(|| {
                        let (a, b) = key;
                        let (lo, hi) = if lex_rank[a as usize] < lex_rank[b as usize] {
                            (a, b)
                        } else {
                            (b, a)
                        };
                        bond_ends.push((lo, hi));
                        (bond_ends.len() - 1) as u32
                    });
                    site_adj[id].push((fid as u32, bid));
                }
            }
        }

        let bond_rank: Vec<u64> = bond_ends
            .iter()
            .map(|(lo, hi)| ((lex_rank[*lo as usize] as u64) << 32) | lex_rank[*hi as usize] as u64)
            .collect();

        let mut bond_adj: Vec<Vec<u32>> = vec![Vec::new(); bond_ends.len()];
        for (bid, (lo, hi)) in bond_ends.iter().enumerate() {
            for &(_, other) in site_adj[*lo as usize].iter().chain(&site_adj[*hi as usize]) {
                if other as usize != bid && !bond_adj[bid].contains(&other) {
                    bond_adj[bid].push(other);
                }
            }
        }

        let height_level = lattice.direction().map(|_| {
            let mut heights: Vec<(usize, crate::lattice::Rat)> = (0..n_sites)
                .map(|id| (id, lattice.direction_height(&to_site(id)).expect("direction set")))
                .collect();
            heights.sort_by(|a, b| a.1.cmp(&b.1));
            let mut level = vec![0u32; n_sites];
            let mut cur = 0u32;
            for w in 0..heights.len() {
                if w > 0 && heights[w].1 != heights[w - 1].1 {
                    cur += 1;
                }
                level[heights[w].0] = cur;
            }
            level
        });

        let anchors: Vec<u32> = (0..offsets)
            .map(|off| {
                let zero = SiteRef::new(off as u32, vec![0; dim]);
                to_id(&zero).expect("anchor in box") as u32
            })
            .collect();

        Region {
            lattice: lattice.clone(),
            dim,
            offsets,
            radius,
            side,
            cells,
            lex_rank,
            site_adj,
            bond_ends,
            bond_rank,
            bond_adj,
            height_level,
            anchors,
        }
    }

    fn site(&self, id: u32) -> SiteRef {
        let id = id as usize;
        let off = (id / self.cells) as u32;
        let mut rest = id % self.cells;
        let mut cell = vec![0i64; self.dim];
        for c in cell.iter_mut() {
            *c = (rest % self.side as usize) as i64 - self.radius;
            rest /= self.side as usize;
        }
        SiteRef::new(off, cell)
    }

    /// Directed validity of a site/edge selection: unique minimal height
    /// level and every site reachable along strictly rising bonds.
    fn directed_ok(
        &self,
        sites: &[u32],
        edges: &[(u32, u32)],
        scratch: &mut DirectedScratch,
    ) -> bool {
        let level = self.height_level.as_ref().expect("directed check needs direction");
        let min_level = sites.iter().map(|&s| level[s as usize]).min().expect("nonempty");
        let mut root = None;
        for &s in sites {
            if level[s as usize] == min_level {
                if root.is_some() {
                    return false;
                }
                root = Some(s);
            }
        }
        let root = root.expect("nonempty");
        scratch.epoch += 1;
        let epoch = scratch.epoch;
        if scratch.stamp.len() < self.site_adj.len() {
            scratch.stamp.resize(self.site_adj.len(), 0);
        }
        scratch.adj.clear();
        for &(a, b) in edges {
            let (lo, hi) = if level[a as usize] < level[b as usize] { (a, b) } else { (b, a) };
            scratch.adj.entry(lo).or_default().push(hi);
        }
        scratch.queue.clear();
        scratch.queue.push(root);
        scratch.stamp[root as usize] = epoch;
        let mut head = 0;
        let mut reached = 1usize;
        while head < scratch.queue.len() {
            let s = scratch.queue[head];
            head += 1;
            if let Some(list) = scratch.adj.get(&s) {
                for &t in list {
                    if scratch.stamp[t as usize] != epoch {
                        scratch.stamp[t as usize] = epoch;
                        scratch.queue.push(t);
                        reached += 1;
                    }
                }
            }
        }
        reached == sites.len()
    }
}

struct DirectedScratch {
    stamp: Vec<u32>,
    epoch: u32,
    queue: Vec<u32>,
    adj: HashMap<u32, Vec<u32>>,
}

impl DirectedScratch {
    fn new() -> Self {
        DirectedScratch { stamp: Vec::new(), epoch: 0, queue: Vec::new(), adj: HashMap::new() }
    }
}

// ---------------------------------------------------------------------------
// Budget accounting
// ---------------------------------------------------------------------------

struct Budget {
    limit: u64,
    spent: AtomicU64,
}

impl Budget {
    fn new(limit: u64) -> Self {
        Budget { limit, spent: AtomicU64::new(0) }
    }

    fn charge(&self, k: u64) -> Result<()> {
        if k == 0 {
            return Ok(());
        }
        let total = self.spent.fetch_add(k, AtomicOrd::Relaxed) + k;
        if total > self.limit {
            Err(Error::BudgetExceeded { budget: self.limit, spent: total })
        } else {
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Anchored connected-subgraph search (site classes)
// ---------------------------------------------------------------------------

struct SiteSearch<'a, FE> {
    region: &'a Region,
    class: ClusterClass,
    measure: SizeMeasure,
    target: u32,
    max_sites: usize,
    budget: &'a Budget,
    emit: &'a FE,
}

struct SiteState {
    anchor_rank: u32,
    sub: Vec<u32>,
    in_sub: Vec<bool>,
    seen: Vec<bool>,
    bonds: Vec<(u32, u32)>,
    scratch: DirectedScratch,
    local_nodes: u64,
    count: u64,
}

impl SiteState {
    fn new(region: &Region) -> Self {
        SiteState {
            anchor_rank: 0,
            sub: Vec::new(),
            in_sub: vec![false; region.site_adj.len()],
            seen: vec![false; region.site_adj.len()],
            bonds: Vec::new(),
            scratch: DirectedScratch::new(),
            local_nodes: 0,
            count: 0,
        }
    }

    /// Install a snapshot: sub in insertion order plus its extension list.
    /// The seen set is reconstructible as sub ∪ rank-admissible neighbors.
    fn install(&mut self, region: &Region, anchor_rank: u32, sub: &[u32]) {
        self.anchor_rank = anchor_rank;
        self.sub.clear();
        self.bonds.clear();
        self.in_sub.iter_mut().for_each(|x| *x = false);
        self.seen.iter_mut().for_each(|x| *x = false);
        for &w in sub {
            for &(t, _) in &region.site_adj[w as usize] {
                if self.in_sub[t as usize] {
                    self.bonds.push((w, t));
                }
            }
            self.in_sub[w as usize] = true;
            self.sub.push(w);
            self.seen[w as usize] = true;
        }
        for &w in sub {
            for &(t, _) in &region.site_adj[w as usize] {
                if region.lex_rank[t as usize] > anchor_rank {
                    self.seen[t as usize] = true;
                }
            }
        }
    }
}

enum Phase<'s> {
    Collect { limit: usize, tasks: &'s mut Vec<(Vec<u32>, Vec<u32>)> },
    Run,
}

impl<'a, FE> SiteSearch<'a, FE> {
    fn emit_if_ready<T>(&self, st: &mut SiteState, acc: &mut T)
    where
        FE: Fn(&mut T, &Cluster),
    {
        let size = match self.measure {
            SizeMeasure::Sites => st.sub.len() as u32,
            SizeMeasure::Bonds => st.bonds.len() as u32,
        };
        if size != self.target {
            return;
        }
        if self.class.is_directed() && !self.region.directed_ok(&st.sub, &st.bonds, &mut st.scratch)
        {
            return;
        }
        let sites = st.sub.iter().map(|&id| self.region.site(id));
        let bonds = st.bonds.iter().map(|&(a, b)| {
            crate::lattice::BondRef::new_unchecked(
                &self.region.lattice,
                self.region.site(a),
                self.region.site(b),
            )
        });
        let g = Cluster::new(self.region.lattice.clone(), self.class, sites, bonds).flag_canonical();
        st.count += 1;
        (self.emit)(acc, &g);
    }

    fn rec<T>(
        &self,
        st: &mut SiteState,
        ext: Vec<u32>,
        depth: usize,
        phase: &mut Phase<'_>,
        acc: &mut T,
    ) -> Result<()>
    where
        FE: Fn(&mut T, &Cluster),
    {
        st.local_nodes += 1;
        if st.local_nodes >= 1024 {
            self.budget.charge(std::mem::take(&mut st.local_nodes))?;
        }
        self.emit_if_ready(st, acc);
        if st.sub.len() >= self.max_sites {
            return Ok(());
        }
        if self.measure == SizeMeasure::Bonds && st.bonds.len() as u32 >= self.target {
            // Any further site strictly increases the induced bond count.
            return Ok(());
        }
        for i in 0..ext.len() {
            let w = ext[i];
            if let Phase::Collect { limit, tasks } = phase {
                if depth >= *limit {
                    let mut sub = st.sub.clone();
                    sub.push(w);
                    let mut rest: Vec<u32> = ext[i + 1..].to_vec();
                    for &(t, _) in &self.region.site_adj[w as usize] {
                        if !st.seen[t as usize]
                            && self.region.lex_rank[t as usize] > st.anchor_rank
                        {
                            rest.push(t);
                        }
                    }
                    tasks.push((sub, rest));
                    continue;
                }
            }
            let bonds_mark = st.bonds.len();
            for &(t, _) in &self.region.site_adj[w as usize] {
                if st.in_sub[t as usize] {
                    st.bonds.push((w, t));
                }
            }
            st.in_sub[w as usize] = true;
            st.sub.push(w);
            let mut new_ext: Vec<u32> = ext[i + 1..].to_vec();
            let mut marked: Vec<u32> = Vec::new();
            for &(t, _) in &self.region.site_adj[w as usize] {
                if !st.seen[t as usize] && self.region.lex_rank[t as usize] > st.anchor_rank {
                    st.seen[t as usize] = true;
                    marked.push(t);
                    new_ext.push(t);
                }
            }
            let r = self.rec(st, new_ext, depth + 1, phase, acc);
            for &t in &marked {
                st.seen[t as usize] = false;
            }
            st.sub.pop();
            st.in_sub[w as usize] = false;
            st.bonds.truncate(bonds_mark);
            r?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Anchored connected bond-set search (bond classes)
// ---------------------------------------------------------------------------

struct BondSearch<'a, FE> {
    region: &'a Region,
    class: ClusterClass,
    measure: SizeMeasure,
    target: u32,
    max_sites: usize,
    max_bonds: usize,
    budget: &'a Budget,
    emit: &'a FE,
}

struct BondState {
    anchor_bond_rank: u64,
    sub: Vec<u32>,
    in_sub: Vec<bool>,
    seen: Vec<bool>,
    site_mult: Vec<u8>,
    site_list: Vec<u32>,
    scratch: DirectedScratch,
    local_nodes: u64,
    count: u64,
}

impl BondState {
    fn new(region: &Region) -> Self {
        BondState {
            anchor_bond_rank: 0,
            sub: Vec::new(),
            in_sub: vec![false; region.bond_ends.len()],
            seen: vec![false; region.bond_ends.len()],
            site_mult: vec![0; region.site_adj.len()],
            site_list: Vec::new(),
            scratch: DirectedScratch::new(),
            local_nodes: 0,
            count: 0,
        }
    }

    fn add_site(&mut self, s: u32) {
        if self.site_mult[s as usize] == 0 {
            self.site_list.push(s);
        }
        self.site_mult[s as usize] += 1;
    }

    fn pop_bond_sites(&mut self, lo: u32, hi: u32) {
        for s in [hi, lo] {
            self.site_mult[s as usize] -= 1;
            if self.site_mult[s as usize] == 0 {
                let idx = self.site_list.iter().rposition(|&x| x == s).expect("site present");
                self.site_list.swap_remove(idx);
            }
        }
    }

    fn install(&mut self, region: &Region, anchor_rank: u64, sub: &[u32]) {
        self.anchor_bond_rank = anchor_rank;
        self.sub.clear();
        self.site_list.clear();
        self.in_sub.iter_mut().for_each(|x| *x = false);
        self.seen.iter_mut().for_each(|x| *x = false);
        self.site_mult.iter_mut().for_each(|x| *x = 0);
        for &b in sub {
            let (lo, hi) = region.bond_ends[b as usize];
            self.add_site(lo);
            self.add_site(hi);
            self.in_sub[b as usize] = true;
            self.sub.push(b);
            self.seen[b as usize] = true;
        }
        for &b in sub {
            for &nb in &region.bond_adj[b as usize] {
                if region.bond_rank[nb as usize] > anchor_rank {
                    self.seen[nb as usize] = true;
                }
            }
        }
    }
}

impl<'a, FE> BondSearch<'a, FE> {
    fn emit_if_ready<T>(&self, st: &mut BondState, acc: &mut T)
    where
        FE: Fn(&mut T, &Cluster),
    {
        let size = match self.measure {
            SizeMeasure::Sites => st.site_list.len() as u32,
            SizeMeasure::Bonds => st.sub.len() as u32,
        };
        if size != self.target {
            return;
        }
        let edges: Vec<(u32, u32)> =
            st.sub.iter().map(|&b| self.region.bond_ends[b as usize]).collect();
        if self.class.is_directed()
            && !self.region.directed_ok(&st.site_list, &edges, &mut st.scratch)
        {
            return;
        }
        let sites = st.site_list.iter().map(|&id| self.region.site(id));
        let bonds = edges.iter().map(|&(a, b)| {
            crate::lattice::BondRef::new_unchecked(
                &self.region.lattice,
                self.region.site(a),
                self.region.site(b),
            )
        });
        let g = Cluster::new(self.region.lattice.clone(), self.class, sites, bonds).flag_canonical();
        st.count += 1;
        (self.emit)(acc, &g);
    }

    fn rec<T>(
        &self,
        st: &mut BondState,
        ext: Vec<u32>,
        depth: usize,
        phase: &mut Phase<'_>,
        acc: &mut T,
    ) -> Result<()>
    where
        FE: Fn(&mut T, &Cluster),
    {
        st.local_nodes += 1;
        if st.local_nodes >= 1024 {
            self.budget.charge(std::mem::take(&mut st.local_nodes))?;
        }
        self.emit_if_ready(st, acc);
        if st.sub.len() >= self.max_bonds {
            return Ok(());
        }
        for i in 0..ext.len() {
            let w = ext[i];
            let (lo, hi) = self.region.bond_ends[w as usize];
            let new_lo = st.site_mult[lo as usize] == 0;
            let new_hi = st.site_mult[hi as usize] == 0;
            // Trees never close a cycle: the new bond must bring a new site.
            if self.class.is_tree() && !new_lo && !new_hi {
                continue;
            }
            let new_sites = new_lo as usize + new_hi as usize;
            if st.site_list.len() + new_sites > self.max_sites {
                continue;
            }
            if let Phase::Collect { limit, tasks } = phase {
                if depth >= *limit {
                    let mut sub = st.sub.clone();
                    sub.push(w);
                    let mut rest: Vec<u32> = ext[i + 1..].to_vec();
                    for &nb in &self.region.bond_adj[w as usize] {
                        if !st.seen[nb as usize]
                            && self.region.bond_rank[nb as usize] > st.anchor_bond_rank
                        {
                            rest.push(nb);
                        }
                    }
                    tasks.push((sub, rest));
                    continue;
                }
            }
            st.add_site(lo);
            st.add_site(hi);
            st.in_sub[w as usize] = true;
            st.sub.push(w);
            let mut new_ext: Vec<u32> = ext[i + 1..].to_vec();
            let mut marked: Vec<u32> = Vec::new();
            for &nb in &self.region.bond_adj[w as usize] {
                if !st.seen[nb as usize]
                    && self.region.bond_rank[nb as usize] > st.anchor_bond_rank
                {
                    st.seen[nb as usize] = true;
                    marked.push(nb);
                    new_ext.push(nb);
                }
            }
            let r = self.rec(st, new_ext, depth + 1, phase, acc);
            for &nb in &marked {
                st.seen[nb as usize] = false;
            }
            st.sub.pop();
            st.in_sub[w as usize] = false;
            st.pop_bond_sites(lo, hi);
            r?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

/// Visit every canonical cluster of size `n` exactly once. Returns the
/// number of clusters visited. Aggregate results are independent of worker
/// count and schedule; the visitor must tolerate concurrent invocation
/// unless [`EnumConfig::serialize_visitor`] is set.
pub fn enumerate_clusters<F>(task: &EnumTask, n: u32, cfg: &EnumConfig, visitor: F) -> Result<u64>
where
    F: Fn(&Cluster) + Sync,
{
    if cfg.serialize_visitor {
        let guard = Mutex::new(());
        let (count, _) = enumerate_fold(
            task,
            n,
            cfg,
            || (),
            |_, g| {
                let _lock = guard.lock().unwrap();
                visitor(g);
            },
            |a, _| a,
        )?;
        Ok(count)
    } else {
        let (count, _) = enumerate_fold(task, n, cfg, || (), |_, g| visitor(g), |a, _| a)?;
        Ok(count)
    }
}

/// Fold over every canonical cluster of size `n`. Each worker folds into its
/// own accumulator; accumulators are merged at the end, so `merge` must be
/// associative and commutative for schedule independence.
pub fn enumerate_fold<T, FI, FE, FM>(
    task: &EnumTask,
    n: u32,
    cfg: &EnumConfig,
    init: FI,
    emit: FE,
    merge: FM,
) -> Result<(u64, T)>
where
    T: Send,
    FI: Fn() -> T + Sync,
    FE: Fn(&mut T, &Cluster) + Sync,
    FM: Fn(T, T) -> T + Sync,
{
    if n == 0 || n > task.n_max {
        return Err(Error::InvalidParam(format!(
            "size {n} outside task bound 1..={}",
            task.n_max
        )));
    }
    let budget = Budget::new(cfg.node_budget);
    let radius = (n as i64 + 1) * task.lattice.max_step_norm();
    let region = Region::build(&task.lattice, radius);

    let mut acc0 = init();
    let mut count0 = 0u64;

    // Single-site clusters are valid members of every class; bond-set growth
    // cannot reach them, so emit them directly.
    if task.measure == SizeMeasure::Sites && n == 1 && !task.class.is_site_determined() {
        for off in 0..region.offsets as u32 {
            let g = Cluster::single_site(
                task.lattice.clone(),
                task.class,
                SiteRef::new(off, vec![0; region.dim]),
            )
            .flag_canonical();
            count0 += 1;
            emit(&mut acc0, &g);
        }
    }

    let max_deg =
        (0..region.offsets).map(|o| region.lattice.degree(o as u32)).max().unwrap_or(1);
    let limit = if cfg.parallel { cfg.split_depth } else { usize::MAX };

    if task.class.is_site_determined() {
        let max_sites = match task.measure {
            SizeMeasure::Sites => n as usize,
            SizeMeasure::Bonds => n as usize + 1,
        };
        let search = SiteSearch {
            region: &region,
            class: task.class,
            measure: task.measure,
            target: n,
            max_sites,
            budget: &budget,
            emit: &emit,
        };
        let mut tasks: Vec<(u32, Vec<u32>, Vec<u32>)> = Vec::new();
        let mut st = SiteState::new(&region);
        for &anchor in &region.anchors {
            let anchor_rank = region.lex_rank[anchor as usize];
            st.install(&region, anchor_rank, &[anchor]);
            let ext: Vec<u32> = region.site_adj[anchor as usize]
                .iter()
                .filter(|(t, _)| region.lex_rank[*t as usize] > anchor_rank)
                .map(|(t, _)| *t)
                .collect();
            for &t in &ext {
                st.seen[t as usize] = true;
            }
            let mut local = Vec::new();
            let mut phase = Phase::Collect { limit, tasks: &mut local };
            search.rec(&mut st, ext, 0, &mut phase, &mut acc0)?;
            budget.charge(std::mem::take(&mut st.local_nodes))?;
            count0 += std::mem::take(&mut st.count);
            tasks.extend(local.into_iter().map(|(sub, ext)| (anchor_rank, sub, ext)));
        }
        let results: Result<Vec<(u64, T)>> = tasks
            .into_par_iter()
            .map(|(anchor_rank, sub, ext)| {
                let mut st = SiteState::new(&region);
                st.install(&region, anchor_rank, &sub);
                let mut acc = init();
                let mut phase = Phase::Run;
                search.rec(&mut st, ext, 0, &mut phase, &mut acc)?;
                budget.charge(st.local_nodes)?;
                Ok((st.count, acc))
            })
            .collect();
        for (c, a) in results? {
            count0 += c;
            acc0 = merge(acc0, a);
        }
    } else {
        let (max_sites, max_bonds) = match task.measure {
            SizeMeasure::Sites => (n as usize, (n as usize * max_deg) / 2 + 1),
            SizeMeasure::Bonds => (n as usize + 1, n as usize),
        };
        let max_bonds =
            if task.class.is_tree() { max_bonds.min(n as usize) } else { max_bonds };
        let search = BondSearch {
            region: &region,
            class: task.class,
            measure: task.measure,
            target: n,
            max_sites,
            max_bonds,
            budget: &budget,
            emit: &emit,
        };
        let mut tasks: Vec<(u64, Vec<u32>, Vec<u32>)> = Vec::new();
        let mut st = BondState::new(&region);
        for &anchor in &region.anchors {
            let anchor_rank = region.lex_rank[anchor as usize];
            for &(far, b0) in &region.site_adj[anchor as usize] {
                if region.lex_rank[far as usize] <= anchor_rank {
                    continue;
                }
                let b0_rank = region.bond_rank[b0 as usize];
                st.install(&region, b0_rank, &[b0]);
                let ext: Vec<u32> = region.bond_adj[b0 as usize]
                    .iter()
                    .filter(|&&nb| region.bond_rank[nb as usize] > b0_rank)
                    .copied()
                    .collect();
                for &nb in &ext {
                    st.seen[nb as usize] = true;
                }
                let mut local = Vec::new();
                let mut phase = Phase::Collect { limit, tasks: &mut local };
                search.rec(&mut st, ext, 0, &mut phase, &mut acc0)?;
                budget.charge(std::mem::take(&mut st.local_nodes))?;
                count0 += std::mem::take(&mut st.count);
                tasks.extend(local.into_iter().map(|(sub, ext)| (b0_rank, sub, ext)));
            }
        }
        let results: Result<Vec<(u64, T)>> = tasks
            .into_par_iter()
            .map(|(b0_rank, sub, ext)| {
                let mut st = BondState::new(&region);
                st.install(&region, b0_rank, &sub);
                let mut acc = init();
                let mut phase = Phase::Run;
                search.rec(&mut st, ext, 0, &mut phase, &mut acc)?;
                budget.charge(st.local_nodes)?;
                Ok((st.count, acc))
            })
            .collect();
        for (c, a) in results? {
            count0 += c;
            acc0 = merge(acc0, a);
        }
    }

    Ok((count0, acc0))
}

/// The number of canonical clusters of each size 1..=n.
pub fn count_series(task: &EnumTask, n: u32, cfg: &EnumConfig) -> Result<Vec<(u32, u64)>> {
    (1..=n)
        .map(|k| enumerate_clusters(task, k, cfg, |_| ()).map(|c| (k, c)))
        .collect()
}

// ---------------------------------------------------------------------------
// Independent oracle: breadth-first growth with canonical deduplication
// ---------------------------------------------------------------------------

/// Exhaustively enumerate the canonical keys of all clusters of size `n` by
/// breadth-first growth with canonical-key deduplication. Every stored
/// intermediate is a validated cluster; completeness follows from
/// single-element removal chains (non-cut site, leaf bond, non-tree bond, or
/// maximal-height site for directed classes). Intended for small n — soft
/// cap around 10 on the square lattice.
pub fn oracle_enumerate(task: &EnumTask, n: u32, cfg: &EnumConfig) -> Result<BTreeSet<Vec<u8>>> {
    if n == 0 || n > task.n_max {
        return Err(Error::InvalidParam(format!("size {n} outside task bound")));
    }
    let lattice = &task.lattice;
    let mut stored = 0usize;
    let budget = cfg.oracle_item_budget;
    let store =
        |map: &mut HashMap<Vec<u8>, Cluster>, g: Cluster, stored: &mut usize| -> Result<bool> {
            let (c, _) = g.canonicalize();
            if c.validate().is_err() {
                return Ok(false);
            }
            let key = c.canonical_key()?;
            if map.contains_key(&key) {
                return Ok(false);
            }
            *stored += 1;
            if *stored > budget {
                return Err(Error::MemoryBudget { limit: budget });
            }
            map.insert(key, c);
            Ok(true)
        };

    let mut result = BTreeSet::new();
    let collect = |result: &mut BTreeSet<Vec<u8>>, level: &HashMap<Vec<u8>, Cluster>| {
        for (key, g) in level {
            if g.size(task.measure) == n as u64 {
                result.insert(key.clone());
            }
        }
    };

    if task.class.is_site_determined() {
        // Grow site sets one adjacent site at a time.
        let s_max = match task.measure {
            SizeMeasure::Sites => n,
            SizeMeasure::Bonds => n + 1,
        };
        let mut level: HashMap<Vec<u8>, Cluster> = HashMap::new();
        for off in 0..lattice.offset_count() as u32 {
            let g = Cluster::single_site(
                lattice.clone(),
                task.class,
                SiteRef::new(off, vec![0; lattice.dimension()]),
            );
            store(&mut level, g, &mut stored)?;
        }
        collect(&mut result, &level);
        for _ in 1..s_max {
            let mut next: HashMap<Vec<u8>, Cluster> = HashMap::new();
            for g in level.values() {
                for s in g.sites() {
                    for (far, _) in lattice.neighbors(s) {
                        if g.contains_site(&far) {
                            continue;
                        }
                        let mut sites: Vec<SiteRef> = g.sites().to_vec();
                        sites.push(far);
                        let cand =
                            Cluster::site_animal_from_sites(lattice.clone(), task.class, sites);
                        store(&mut next, cand, &mut stored)?;
                    }
                }
            }
            collect(&mut result, &next);
            level = next;
        }
    } else {
        // Grow bond sets level by level in site count, closing each level
        // under internal-bond additions (which keep the site count fixed).
        let mut level: HashMap<Vec<u8>, Cluster> = HashMap::new();
        for off in 0..lattice.offset_count() as u32 {
            let g = Cluster::single_site(
                lattice.clone(),
                task.class,
                SiteRef::new(off, vec![0; lattice.dimension()]),
            );
            store(&mut level, g, &mut stored)?;
        }
        let levels = match task.measure {
            SizeMeasure::Sites => n,
            SizeMeasure::Bonds => n + 1,
        };
        for lvl in 1..=levels {
            if !task.class.is_tree() {
                let mut queue: VecDeque<Cluster> = level.values().cloned().collect();
                while let Some(g) = queue.pop_front() {
                    if task.measure == SizeMeasure::Bonds && g.bonds().len() as u32 >= n {
                        continue;
                    }
                    for s in g.sites() {
                        for (far, bond) in lattice.neighbors(s) {
                            if !g.contains_site(&far) || g.contains_bond(&bond) {
                                continue;
                            }
                            let mut bonds = g.bonds().to_vec();
                            bonds.push(bond);
                            let cand = Cluster::new(
                                lattice.clone(),
                                task.class,
                                g.sites().to_vec(),
                                bonds,
                            );
                            if store(&mut level, cand.clone(), &mut stored)? {
                                queue.push_back(cand);
                            }
                        }
                    }
                }
            }
            collect(&mut result, &level);
            if lvl == levels {
                break;
            }
            let mut next: HashMap<Vec<u8>, Cluster> = HashMap::new();
            for g in level.values() {
                if task.measure == SizeMeasure::Bonds && g.bonds().len() as u32 >= n {
                    continue;
                }
                for s in g.sites() {
                    for (far, bond) in lattice.neighbors(s) {
                        if g.contains_site(&far) {
                            continue;
                        }
                        let mut sites = g.sites().to_vec();
                        sites.push(far);
                        let mut bonds = g.bonds().to_vec();
                        bonds.push(bond);
                        let cand = Cluster::new(lattice.clone(), task.class, sites, bonds);
                        store(&mut next, cand, &mut stored)?;
                    }
                }
            }
            level = next;
        }
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// Seeded random clusters (biased growth; test fixtures)
// ---------------------------------------------------------------------------

/// Grow a pseudo-random valid canonical cluster of the requested size.
/// Deterministic given the seed; the growth distribution is biased and makes
/// no uniformity claim.
pub fn random_cluster(task: &EnumTask, n: u32, seed: u64) -> Result<Cluster> {
    if n == 0 {
        return Err(Error::InvalidParam("size must be at least 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let attempts = 2000u64;
    for _ in 0..attempts {
        if let Some(g) = try_grow(task, n, &mut rng) {
            let (c, _) = g.canonicalize();
            if c.validate().is_ok() && c.size(task.measure) == n as u64 {
                return Ok(c);
            }
        }
    }
    Err(Error::GenerationFailed(attempts))
}

fn try_grow(task: &EnumTask, n: u32, rng: &mut ChaCha12Rng) -> Option<Cluster> {
    let lattice = &task.lattice;
    let off = rng.gen_range(0..lattice.offset_count() as u32);
    let origin = SiteRef::new(off, vec![0; lattice.dimension()]);
    let directed = task.class.is_directed();
    let height = |s: &SiteRef| lattice.direction_height(s).expect("direction set");

    if task.class.is_site_determined() {
        let mut sites: Vec<SiteRef> = vec![origin];
        loop {
            let g = Cluster::site_animal_from_sites(lattice.clone(), task.class, sites.clone());
            match task.measure {
                SizeMeasure::Sites if sites.len() == n as usize => return Some(g),
                SizeMeasure::Bonds => {
                    use std::cmp::Ordering::*;
                    match (g.bonds().len() as u32).cmp(&n) {
                        Equal => return Some(g),
                        Greater => return None,
                        Less => {}
                    }
                }
                _ => {}
            }
            let mut candidates: Vec<SiteRef> = Vec::new();
            for s in &sites {
                for (far, _) in lattice.neighbors(s) {
                    if sites.contains(&far) || candidates.contains(&far) {
                        continue;
                    }
                    if directed && height(&far) <= height(s) {
                        continue;
                    }
                    candidates.push(far);
                }
            }
            if candidates.is_empty() {
                return None;
            }
            let pick = candidates.swap_remove(rng.gen_range(0..candidates.len()));
            sites.push(pick);
        }
    } else {
        let mut sites: Vec<SiteRef> = vec![origin];
        let mut bonds: Vec<crate::lattice::BondRef> = Vec::new();
        let (target_sites, target_bonds) = match task.measure {
            SizeMeasure::Sites => (n as usize, usize::MAX),
            SizeMeasure::Bonds => (usize::MAX, n as usize),
        };
        loop {
            if sites.len() == target_sites || bonds.len() == target_bonds {
                return Some(Cluster::new(lattice.clone(), task.class, sites, bonds));
            }
            // External candidates bring a new site; internal ones close a
            // cycle (animals only).
            let mut cand: Vec<(crate::lattice::BondRef, Option<SiteRef>)> = Vec::new();
            for s in &sites {
                for (far, bond) in lattice.neighbors(s) {
                    if bonds.contains(&bond) {
                        continue;
                    }
                    let is_new = !sites.contains(&far);
                    if is_new {
                        if sites.len() + 1 > target_sites {
                            continue;
                        }
                        if directed && height(&far) <= height(s) {
                            continue;
                        }
                        cand.push((bond, Some(far)));
                    } else if !task.class.is_tree() && !cand.iter().any(|(b, _)| *b == bond) {
                        cand.push((bond, None));
                    }
                }
            }
            if cand.is_empty() {
                return None;
            }
            let (bond, new_site) = cand.swap_remove(rng.gen_range(0..cand.len()));
            if let Some(s) = new_site {
                sites.push(s);
            }
            bonds.push(bond);
        }
    }
}
