//! Finite clusters: class validation, canonicalization up to translation,
//! local contact statistics, and an injective canonical key.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{BondRef, LatticeSpec, Rat, SiteRef};

/// The cluster families supported by the enumeration machinery.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum ClusterClass {
    BondAnimal,
    SiteAnimal,
    BondTree,
    DirectedBondAnimal,
    DirectedSiteAnimal,
    DirectedBondTree,
}

impl ClusterClass {
    pub const ALL: [ClusterClass; 6] = [
        ClusterClass::BondAnimal,
        ClusterClass::SiteAnimal,
        ClusterClass::BondTree,
        ClusterClass::DirectedBondAnimal,
        ClusterClass::DirectedSiteAnimal,
        ClusterClass::DirectedBondTree,
    ];

    pub fn is_directed(self) -> bool {
        matches!(
            self,
            ClusterClass::DirectedBondAnimal
                | ClusterClass::DirectedSiteAnimal
                | ClusterClass::DirectedBondTree
        )
    }

    pub fn is_tree(self) -> bool {
        matches!(self, ClusterClass::BondTree | ClusterClass::DirectedBondTree)
    }

    /// Site animals: the bond set is induced by the site set.
    pub fn is_site_determined(self) -> bool {
        matches!(self, ClusterClass::SiteAnimal | ClusterClass::DirectedSiteAnimal)
    }

    pub fn undirected(self) -> ClusterClass {
        match self {
            ClusterClass::DirectedBondAnimal => ClusterClass::BondAnimal,
            ClusterClass::DirectedSiteAnimal => ClusterClass::SiteAnimal,
            ClusterClass::DirectedBondTree => ClusterClass::BondTree,
            c => c,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClusterClass::BondAnimal => "bond-animal",
            ClusterClass::SiteAnimal => "site-animal",
            ClusterClass::BondTree => "bond-tree",
            ClusterClass::DirectedBondAnimal => "directed-bond-animal",
            ClusterClass::DirectedSiteAnimal => "directed-site-animal",
            ClusterClass::DirectedBondTree => "directed-bond-tree",
        }
    }

    pub fn parse(s: &str) -> Result<ClusterClass> {
        let t = s.trim().to_ascii_lowercase().replace('_', "-");
        ClusterClass::ALL
            .into_iter()
            .find(|c| c.name() == t)
            .ok_or_else(|| Error::Parse(format!("unknown cluster class {s:?}")))
    }

    fn tag(self) -> u8 {
        match self {
            ClusterClass::BondAnimal => 0,
            ClusterClass::SiteAnimal => 1,
            ClusterClass::BondTree => 2,
            ClusterClass::DirectedBondAnimal => 3,
            ClusterClass::DirectedSiteAnimal => 4,
            ClusterClass::DirectedBondTree => 5,
        }
    }

    fn from_tag(t: u8) -> Result<ClusterClass> {
        ClusterClass::ALL
            .into_iter()
            .find(|c| c.tag() == t)
            .ok_or_else(|| Error::Parse(format!("bad class tag {t}")))
    }
}

/// Whether cluster size counts sites or bonds.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum SizeMeasure {
    Sites,
    Bonds,
}

impl SizeMeasure {
    pub fn name(self) -> &'static str {
        match self {
            SizeMeasure::Sites => "sites",
            SizeMeasure::Bonds => "bonds",
        }
    }

    pub fn parse(s: &str) -> Result<SizeMeasure> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sites" | "site" => Ok(SizeMeasure::Sites),
            "bonds" | "bond" => Ok(SizeMeasure::Bonds),
            other => Err(Error::Parse(format!("unknown size measure {other:?}"))),
        }
    }
}

/// Local contact statistics of a cluster.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LocalStats {
    pub n_sites: u64,
    pub n_bonds: u64,
    /// Lattice bonds absent from the cluster with both endpoints in it.
    pub mono: u64,
    /// Lattice bonds absent from the cluster with exactly one endpoint in it.
    pub solv: u64,
    /// Independent cycles: bonds - sites + 1.
    pub cyc: u64,
}

/// A named invariant violation with a witness element.
#[derive(Clone, Debug)]
pub struct ViolationReport {
    pub invariant: &'static str,
    pub witness: String,
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (witness: {})", self.invariant, self.witness)
    }
}

/// A finite cluster on a shared lattice. Immutable after construction.
#[derive(Clone)]
pub struct Cluster {
    lattice: Arc<LatticeSpec>,
    class: ClusterClass,
    sites: Vec<SiteRef>,
    bonds: Vec<BondRef>,
    canonical: bool,
}

impl PartialEq for Cluster {
    fn eq(&self, other: &Self) -> bool {
        self.class == other.class && self.sites == other.sites && self.bonds == other.bonds
    }
}
impl Eq for Cluster {}

impl fmt::Debug for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Cluster({}, {} sites, {} bonds)",
            self.class.name(),
            self.sites.len(),
            self.bonds.len()
        )
    }
}

impl Cluster {
    /// Assemble a cluster value. Sites and bonds are sorted and deduplicated;
    /// no class invariants are checked here (see [`Cluster::validate`]).
    pub fn new(
        lattice: Arc<LatticeSpec>,
        class: ClusterClass,
        sites: impl IntoIterator<Item = SiteRef>,
        bonds: impl IntoIterator<Item = BondRef>,
    ) -> Cluster {
        let mut sites: Vec<SiteRef> = sites.into_iter().collect();
        sites.sort();
        sites.dedup();
        let mut bonds: Vec<BondRef> = bonds.into_iter().collect();
        bonds.sort();
        bonds.dedup();
        Cluster { lattice, class, sites, bonds, canonical: false }
    }

    /// Single-site cluster (valid in every class).
    pub fn single_site(lattice: Arc<LatticeSpec>, class: ClusterClass, site: SiteRef) -> Cluster {
        Cluster { lattice, class, sites: vec![site], bonds: Vec::new(), canonical: false }
    }

    /// Site animal from its site set: bonds are filled in by induction.
    pub fn site_animal_from_sites(
        lattice: Arc<LatticeSpec>,
        class: ClusterClass,
        sites: impl IntoIterator<Item = SiteRef>,
    ) -> Cluster {
        let sites: BTreeSet<SiteRef> = sites.into_iter().collect();
        let mut bonds = Vec::new();
        for s in &sites {
            for (far, bond) in lattice.neighbors(s) {
                if far > *s && sites.contains(&far) {
                    bonds.push(bond);
                }
            }
        }
        Cluster::new(lattice, class, sites, bonds)
    }

    pub fn lattice(&self) -> &Arc<LatticeSpec> {
        &self.lattice
    }

    pub fn class(&self) -> ClusterClass {
        self.class
    }

    pub fn sites(&self) -> &[SiteRef] {
        &self.sites
    }

    pub fn bonds(&self) -> &[BondRef] {
        &self.bonds
    }

    pub fn is_canonical_flagged(&self) -> bool {
        self.canonical
    }

    pub fn size(&self, measure: SizeMeasure) -> u64 {
        match measure {
            SizeMeasure::Sites => self.sites.len() as u64,
            SizeMeasure::Bonds => self.bonds.len() as u64,
        }
    }

    pub fn contains_site(&self, s: &SiteRef) -> bool {
        self.sites.binary_search(s).is_ok()
    }

    pub fn contains_bond(&self, b: &BondRef) -> bool {
        self.bonds.binary_search(b).is_ok()
    }

    /// Translate the whole cluster by the group element `u`.
    pub fn translated(&self, u: &[i64]) -> Cluster {
        Cluster {
            lattice: self.lattice.clone(),
            class: self.class,
            sites: self.sites.iter().map(|s| s.translated(u)).collect(),
            bonds: self.bonds.iter().map(|b| b.translated(u)).collect(),
            canonical: false,
        }
    }

    /// The lexicographically smallest site (by embedded coordinates).
    pub fn lex_min_site(&self) -> &SiteRef {
        self.sites
            .iter()
            .min_by(|a, b| self.lattice.site_cmp(a, b))
            .expect("cluster has at least one site")
    }

    /// Shift so the lex-min site lands on its offset representative.
    /// Returns the canonical cluster and the translation `u` with
    /// `self = canonical + A·u`. Idempotent.
    pub fn canonicalize(&self) -> (Cluster, Vec<i64>) {
        let u = self.lex_min_site().cell.clone();
        if u.iter().all(|c| *c == 0) {
            let mut g = self.clone();
            g.canonical = true;
            return (g, u);
        }
        let neg: Vec<i64> = u.iter().map(|c| -c).collect();
        let mut g = self.translated(&neg);
        g.canonical = true;
        (g, u)
    }

    /// Check every class invariant; the report names the first violated
    /// invariant and a witness element.
    pub fn validate(&self) -> std::result::Result<(), ViolationReport> {
        let fail = |invariant: &'static str, witness: String| Err(ViolationReport { invariant, witness });

        if self.sites.is_empty() {
            return fail("nonempty", "cluster has no sites".into());
        }
        let site_set: HashSet<&SiteRef> = self.sites.iter().collect();

        // Bond endpoints are sites, and every bond is a lattice bond.
        for b in &self.bonds {
            let (lo, hi) = b.endpoints();
            if !site_set.contains(lo) || !site_set.contains(hi) {
                return fail("bond endpoints in sites", format!("{b:?}"));
            }
            if !self.lattice.are_adjacent(lo, hi) {
                return fail("bond is a lattice bond", format!("{b:?}"));
            }
        }

        // Connectivity over the cluster's own bonds.
        if self.sites.len() > 1 {
            let mut adj: HashMap<&SiteRef, Vec<&SiteRef>> = HashMap::new();
            for b in &self.bonds {
                let (lo, hi) = b.endpoints();
                adj.entry(lo).or_default().push(hi);
                adj.entry(hi).or_default().push(lo);
            }
            let mut seen: HashSet<&SiteRef> = HashSet::new();
            let mut queue = VecDeque::new();
            seen.insert(&self.sites[0]);
            queue.push_back(&self.sites[0]);
            while let Some(s) = queue.pop_front() {
                if let Some(list) = adj.get(s) {
                    for t in list {
                        if seen.insert(t) {
                            queue.push_back(t);
                        }
                    }
                }
            }
            if let Some(unreached) = self.sites.iter().find(|s| !seen.contains(*s)) {
                return fail("connected", format!("{unreached:?}"));
            }
        }

        // Site animals: bonds are exactly the induced lattice bonds.
        if self.class.is_site_determined() {
            for s in &self.sites {
                for (far, bond) in self.lattice.neighbors(s) {
                    if site_set.contains(&far) && !self.contains_bond(&bond) {
                        return fail("site animal bonds induced by sites", format!("{bond:?}"));
                    }
                }
            }
        }

        // Trees: exactly sites - 1 bonds (with connectivity this rules out
        // cycles).
        if self.class.is_tree() && self.bonds.len() + 1 != self.sites.len() {
            return fail(
                "tree has sites - 1 bonds",
                format!("{} sites, {} bonds", self.sites.len(), self.bonds.len()),
            );
        }

        // Directed classes: unique minimal site in the direction order, and
        // every site reachable from it along strictly rising bonds.
        if self.class.is_directed() {
            let heights: Vec<Rat> = match self
                .sites
                .iter()
                .map(|s| self.lattice.direction_height(s))
                .collect::<Result<Vec<_>>>()
            {
                Ok(h) => h,
                Err(_) => {
                    return fail("directed class requires a lattice direction", String::new())
                }
            };
            let min_h = heights.iter().min().unwrap().clone();
            let roots: Vec<usize> = (0..self.sites.len()).filter(|i| heights[*i] == min_h).collect();
            if roots.len() != 1 {
                return fail("unique directed root", format!("{:?}", self.sites[roots[1]]));
            }
            let index: HashMap<&SiteRef, usize> =
                self.sites.iter().enumerate().map(|(i, s)| (s, i)).collect();
            let mut up_adj: Vec<Vec<usize>> = vec![Vec::new(); self.sites.len()];
            for b in &self.bonds {
                let (lo, hi) = b.endpoints();
                let (i, j) = (index[lo], index[hi]);
                match heights[i].cmp(&heights[j]) {
                    Ordering::Less => up_adj[i].push(j),
                    Ordering::Greater => up_adj[j].push(i),
                    Ordering::Equal => {
                        return fail("direction not orthogonal to any bond", format!("{b:?}"))
                    }
                }
            }
            let mut seen = vec![false; self.sites.len()];
            let mut queue = VecDeque::new();
            seen[roots[0]] = true;
            queue.push_back(roots[0]);
            while let Some(i) = queue.pop_front() {
                for &j in &up_adj[i] {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            if let Some(i) = (0..self.sites.len()).find(|i| !seen[*i]) {
                return fail("all sites reachable from root by rising paths", format!("{:?}", self.sites[i]));
            }
        }

        // Canonical flag: the lex-min site must sit at cell zero.
        if self.canonical {
            let m = self.lex_min_site();
            if m.cell.iter().any(|c| *c != 0) {
                return fail("canonical lex-min site at an offset", format!("{m:?}"));
            }
        }

        Ok(())
    }

    /// The unique directed root (minimal direction height). Only meaningful
    /// for validated directed clusters.
    pub fn directed_root(&self) -> Result<&SiteRef> {
        let mut best: Option<(&SiteRef, Rat)> = None;
        for s in &self.sites {
            let h = self.lattice.direction_height(s)?;
            best = match best {
                None => Some((s, h)),
                Some((bs, bh)) => {
                    if h < bh {
                        Some((s, h))
                    } else {
                        Some((bs, bh))
                    }
                }
            };
        }
        Ok(best.expect("nonempty").0)
    }

    /// Count sites, bonds, monomer contacts, solvent contacts, and cycles.
    /// Neighbor queries go to the lattice on the fly; nothing is cached.
    pub fn local_statistics(&self) -> LocalStats {
        let mut mono2 = 0u64; // internal non-bonds, counted from both ends
        let mut solv = 0u64;
        for s in &self.sites {
            for (far, bond) in self.lattice.neighbors(s) {
                if self.contains_bond(&bond) {
                    continue;
                }
                if self.contains_site(&far) {
                    mono2 += 1;
                } else {
                    solv += 1;
                }
            }
        }
        let n_sites = self.sites.len() as u64;
        let n_bonds = self.bonds.len() as u64;
        LocalStats {
            n_sites,
            n_bonds,
            mono: mono2 / 2,
            solv,
            cyc: n_bonds + 1 - n_sites,
        }
    }

    /// Injective byte encoding of (class, sites, bonds). Requires the
    /// canonical flag; equal clusters have equal keys.
    pub fn canonical_key(&self) -> Result<Vec<u8>> {
        if !self.canonical {
            return Err(Error::InvalidParam("canonical_key requires a canonical cluster".into()));
        }
        let d = self.lattice.dimension();
        let mut out = Vec::with_capacity(2 + self.sites.len() * (1 + 8 * d));
        out.push(self.class.tag());
        out.push(d as u8);
        push_u32(&mut out, self.sites.len() as u32);
        for s in &self.sites {
            push_site(&mut out, s);
        }
        push_u32(&mut out, self.bonds.len() as u32);
        for b in &self.bonds {
            push_site(&mut out, b.lo());
            push_site(&mut out, b.hi());
        }
        Ok(out)
    }

    /// Decode a canonical key back into a cluster on the given lattice.
    pub fn from_canonical_key(lattice: Arc<LatticeSpec>, key: &[u8]) -> Result<Cluster> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > key.len() {
                return Err(Error::Parse("truncated canonical key".into()));
            }
            let s = &key[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let class = ClusterClass::from_tag(take(&mut pos, 1)?[0])?;
        let d = take(&mut pos, 1)?[0] as usize;
        if d != lattice.dimension() {
            return Err(Error::Parse("canonical key dimension mismatch".into()));
        }
        let n_sites = read_u32(take(&mut pos, 4)?) as usize;
        let mut sites = Vec::with_capacity(n_sites);
        for _ in 0..n_sites {
            sites.push(read_site(&mut pos, d, &take)?);
        }
        let n_bonds = read_u32(take(&mut pos, 4)?) as usize;
        let mut bonds = Vec::with_capacity(n_bonds);
        for _ in 0..n_bonds {
            let a = read_site(&mut pos, d, &take)?;
            let b = read_site(&mut pos, d, &take)?;
            bonds.push(BondRef::new(&lattice, a, b)?);
        }
        let mut g = Cluster::new(lattice, class, sites, bonds);
        g.canonical = true;
        Ok(g)
    }

    /// One-line text form: `class;site(i,c..);...;bond(i,c..|j,c..);...`
    /// with 1-based offset indices.
    pub fn to_text(&self) -> String {
        let mut parts = vec![self.class.name().to_string()];
        for s in &self.sites {
            parts.push(format!("site({})", site_fields(s)));
        }
        for b in &self.bonds {
            parts.push(format!("bond({}|{})", site_fields(b.lo()), site_fields(b.hi())));
        }
        parts.join(";")
    }

    pub fn from_text(lattice: Arc<LatticeSpec>, line: &str) -> Result<Cluster> {
        let mut items = line.trim().split(';');
        let class = ClusterClass::parse(
            items.next().ok_or_else(|| Error::Parse("empty cluster line".into()))?,
        )?;
        let mut sites = Vec::new();
        let mut bonds = Vec::new();
        for item in items {
            let item = item.trim();
            if let Some(body) = item.strip_prefix("site(").and_then(|s| s.strip_suffix(')')) {
                sites.push(parse_site_fields(body, lattice.dimension())?);
            } else if let Some(body) = item.strip_prefix("bond(").and_then(|s| s.strip_suffix(')')) {
                let (a, b) = body
                    .split_once('|')
                    .ok_or_else(|| Error::Parse(format!("bad bond item {item:?}")))?;
                let sa = parse_site_fields(a, lattice.dimension())?;
                let sb = parse_site_fields(b, lattice.dimension())?;
                bonds.push(BondRef::new(&lattice, sa, sb)?);
            } else if !item.is_empty() {
                return Err(Error::Parse(format!("bad cluster item {item:?}")));
            }
        }
        Ok(Cluster::new(lattice, class, sites, bonds))
    }

    /// Internal: mark as canonical without re-deriving (used by the
    /// enumerator, which pins the lex-min site by construction).
    pub(crate) fn flag_canonical(mut self) -> Cluster {
        self.canonical = true;
        self
    }
}

fn site_fields(s: &SiteRef) -> String {
    let mut f = vec![(s.offset + 1).to_string()];
    f.extend(s.cell.iter().map(|c| c.to_string()));
    f.join(",")
}

fn parse_site_fields(body: &str, d: usize) -> Result<SiteRef> {
    let nums: Vec<i64> = body
        .split(',')
        .map(|t| t.trim().parse::<i64>().map_err(|e| Error::Parse(format!("bad site field {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if nums.len() != d + 1 || nums[0] < 1 {
        return Err(Error::Parse(format!("bad site fields {body:?}")));
    }
    Ok(SiteRef::new((nums[0] - 1) as u32, nums[1..].to_vec()))
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn push_site(out: &mut Vec<u8>, s: &SiteRef) {
    push_u32(out, s.offset);
    for c in &s.cell {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

fn read_site<'a>(
    pos: &mut usize,
    d: usize,
    take: impl Fn(&mut usize, usize) -> Result<&'a [u8]>,
) -> Result<SiteRef> {
    let offset = read_u32(take(pos, 4)?);
    let mut cell = Vec::with_capacity(d);
    for _ in 0..d {
        let b = take(pos, 8)?;
        cell.push(i64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]));
    }
    Ok(SiteRef::new(offset, cell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{builtin_lattice, rat};

    fn z2() -> Arc<LatticeSpec> {
        builtin_lattice("hypercubic", &[2]).unwrap()
    }

    fn z2_dir() -> Arc<LatticeSpec> {
        z2().with_direction(vec![rat(1), rat(1)]).unwrap()
    }

    fn site(x: i64, y: i64) -> SiteRef {
        SiteRef::new(0, vec![x, y])
    }

    fn bond(l: &Arc<LatticeSpec>, a: (i64, i64), b: (i64, i64)) -> BondRef {
        BondRef::new(l, site(a.0, a.1), site(b.0, b.1)).unwrap()
    }

    #[test]
    fn single_site_is_valid_bond_animal() {
        let l = z2();
        let g = Cluster::single_site(l, ClusterClass::BondAnimal, site(0, 0));
        assert!(g.validate().is_ok());
    }

    #[test]
    fn four_cycle_is_not_a_tree() {
        let l = z2();
        let sites = [site(0, 0), site(1, 0), site(0, 1), site(1, 1)];
        let bonds = [
            bond(&l, (0, 0), (1, 0)),
            bond(&l, (0, 0), (0, 1)),
            bond(&l, (1, 0), (1, 1)),
            bond(&l, (0, 1), (1, 1)),
        ];
        let g = Cluster::new(l, ClusterClass::BondTree, sites, bonds);
        let report = g.validate().unwrap_err();
        assert_eq!(report.invariant, "tree has sites - 1 bonds");
    }

    #[test]
    fn directed_domino_is_valid() {
        let l = z2_dir();
        let g = Cluster::site_animal_from_sites(
            l,
            ClusterClass::DirectedSiteAnimal,
            [site(0, 0), site(1, 0)],
        );
        assert!(g.validate().is_ok());
        assert_eq!(g.directed_root().unwrap(), &site(0, 0));
    }

    #[test]
    fn directed_tie_rejected() {
        let l = z2_dir();
        // Sites (1,0) and (0,1) have equal height; connect through (1,1).
        let g = Cluster::site_animal_from_sites(
            l,
            ClusterClass::DirectedSiteAnimal,
            [site(1, 0), site(0, 1), site(1, 1)],
        );
        let report = g.validate().unwrap_err();
        assert_eq!(report.invariant, "unique directed root");
    }

    #[test]
    fn disconnected_rejected() {
        let l = z2();
        let g = Cluster::new(l, ClusterClass::BondAnimal, [site(0, 0), site(5, 5)], []);
        assert_eq!(g.validate().unwrap_err().invariant, "connected");
    }

    #[test]
    fn canonicalize_domino() {
        let l = z2();
        let g = Cluster::site_animal_from_sites(
            l,
            ClusterClass::SiteAnimal,
            [site(5, 7), site(6, 7)],
        );
        let (g0, u) = g.canonicalize();
        assert_eq!(u, vec![5, 7]);
        assert_eq!(g0.sites(), &[site(0, 0), site(1, 0)]);
        // Idempotent.
        let (g1, u1) = g0.canonicalize();
        assert_eq!(u1, vec![0, 0]);
        assert_eq!(g1, g0);
    }

    #[test]
    fn canonicalize_hexagonal_second_offset() {
        let l = builtin_lattice("hexagonal", &[]).unwrap();
        // Two-site cluster whose lex-min site is a_2 + A·(3,3).
        let a2 = SiteRef::new(1, vec![3, 3]);
        let other = SiteRef::new(0, vec![4, 4]); // east neighbor of a2+(3,3)
        assert!(l.are_adjacent(&a2, &other));
        let g = Cluster::new(
            l.clone(),
            ClusterClass::BondAnimal,
            [a2.clone(), other.clone()],
            [BondRef::new(&l, a2, other).unwrap()],
        );
        let (g0, u) = g.canonicalize();
        assert_eq!(u, vec![3, 3]);
        let min = g0.lex_min_site();
        assert_eq!(min, &SiteRef::new(1, vec![0, 0]));
        assert!(g0.validate().is_ok());
    }

    #[test]
    fn canonicalize_commutes_with_translation() {
        let l = z2();
        let g = Cluster::site_animal_from_sites(
            l,
            ClusterClass::SiteAnimal,
            [site(0, 0), site(1, 0), site(1, 1)],
        );
        let (g0, _) = g.canonicalize();
        let (g1, u) = g.translated(&[4, -2]).canonicalize();
        assert_eq!(g0, g1);
        assert_eq!(u, vec![4, -2]);
    }

    #[test]
    fn local_statistics_examples() {
        let l = z2();
        // Single site: 4 solvent contacts.
        let g = Cluster::single_site(l.clone(), ClusterClass::BondAnimal, site(0, 0));
        let st = g.local_statistics();
        assert_eq!((st.n_sites, st.n_bonds, st.mono, st.solv, st.cyc), (1, 0, 0, 4, 0));
        // Domino bond animal: 6 solvent contacts.
        let g = Cluster::new(
            l.clone(),
            ClusterClass::BondAnimal,
            [site(0, 0), site(1, 0)],
            [bond(&l, (0, 0), (1, 0))],
        );
        let st = g.local_statistics();
        assert_eq!((st.n_sites, st.n_bonds, st.mono, st.solv, st.cyc), (2, 1, 0, 6, 0));
        // 2x2 square site animal: 8 solvent contacts, one cycle.
        let g = Cluster::site_animal_from_sites(
            l,
            ClusterClass::SiteAnimal,
            [site(0, 0), site(1, 0), site(0, 1), site(1, 1)],
        );
        let st = g.local_statistics();
        assert_eq!((st.n_sites, st.n_bonds, st.mono, st.solv, st.cyc), (4, 4, 0, 8, 1));
    }

    #[test]
    fn coordination_identity_on_samples() {
        // 2·d·sites = 2·bonds + 2·mono + solv on hypercubic lattices.
        let l = z2();
        for sites in [
            vec![site(0, 0)],
            vec![site(0, 0), site(1, 0), site(1, 1)],
            vec![site(0, 0), site(1, 0), site(2, 0), site(2, 1), site(1, 1)],
        ] {
            let g = Cluster::site_animal_from_sites(l.clone(), ClusterClass::SiteAnimal, sites);
            let st = g.local_statistics();
            assert_eq!(4 * st.n_sites, 2 * st.n_bonds + 2 * st.mono + st.solv);
        }
    }

    #[test]
    fn canonical_key_round_trip_and_distinctness() {
        let l = z2();
        let horiz = Cluster::site_animal_from_sites(
            l.clone(),
            ClusterClass::SiteAnimal,
            [site(0, 0), site(1, 0)],
        )
        .canonicalize()
        .0;
        let vert = Cluster::site_animal_from_sites(
            l.clone(),
            ClusterClass::SiteAnimal,
            [site(0, 0), site(0, 1)],
        )
        .canonicalize()
        .0;
        let kh = horiz.canonical_key().unwrap();
        let kv = vert.canonical_key().unwrap();
        assert_ne!(kh, kv);
        assert_eq!(horiz.canonical_key().unwrap(), kh);
        let back = Cluster::from_canonical_key(l, &kh).unwrap();
        assert_eq!(back, horiz);
        // Non-canonical input is rejected.
        assert!(horiz.translated(&[1, 1]).canonical_key().is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let l = z2();
        let g = Cluster::new(
            l.clone(),
            ClusterClass::BondAnimal,
            [site(0, 0), site(1, 0), site(1, 1)],
            [bond(&l, (0, 0), (1, 0)), bond(&l, (1, 0), (1, 1))],
        );
        let line = g.to_text();
        let back = Cluster::from_text(l, &line).unwrap();
        assert_eq!(back, g);
        assert!(line.starts_with("bond-animal;site(1,0,0);"));
    }
}
