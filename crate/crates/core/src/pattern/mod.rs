//! Patterns (required-present / required-absent element sets), occurrence
//! counting, the size-changing flip pair with its exact weight factor, the
//! pattern-insertion transform, occupancy tables with the flip identity
//! check, and low-occurrence tail sums.

pub mod transform;
pub mod window;

pub use transform::{
    insert_pattern, simple_witness, spanning_completion, Frame, TransformSpec, TransformVariant,
};
pub use window::{
    occupancy_table, verify_flip_identity, verify_flip_identity_range, Ensemble, OccupancyTable,
    Residual, TableMeta, WindowBox,
};

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, ClusterClass, LocalStats};
use crate::enumerate::{EnumConfig, EnumTask};
use crate::error::{Error, Result};
use crate::lattice::{BondRef, LatticeSpec, Rat, SiteRef};
use crate::weights::{partition_sum, ExactScalar, WeightModel};

/// A lattice element: a site or a bond.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Element {
    Site(SiteRef),
    Bond(BondRef),
}

impl Element {
    pub fn translated(&self, u: &[i64]) -> Element {
        match self {
            Element::Site(s) => Element::Site(s.translated(u)),
            Element::Bond(b) => Element::Bond(b.translated(u)),
        }
    }

    pub fn is_in(&self, g: &Cluster) -> bool {
        match self {
            Element::Site(s) => g.contains_site(s),
            Element::Bond(b) => g.contains_bond(b),
        }
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Site(s) => write!(f, "{s:?}"),
            Element::Bond(b) => write!(f, "{b:?}"),
        }
    }
}

/// A pattern: a nonempty set of required elements and a disjoint set of
/// excluded elements. A cluster contains the pattern at shift x when all of
/// `p1 + x` is present and none of `p2 + x` is.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Pattern {
    p1: BTreeSet<Element>,
    p2: BTreeSet<Element>,
}

impl Pattern {
    pub fn new(
        p1: impl IntoIterator<Item = Element>,
        p2: impl IntoIterator<Item = Element>,
    ) -> Result<Pattern> {
        let p1: BTreeSet<Element> = p1.into_iter().collect();
        let p2: BTreeSet<Element> = p2.into_iter().collect();
        if p1.is_empty() {
            return Err(Error::InvalidParam("pattern requires a nonempty present set".into()));
        }
        if p1.intersection(&p2).next().is_some() {
            return Err(Error::InvalidParam("pattern sets must be disjoint".into()));
        }
        Ok(Pattern { p1, p2 })
    }

    pub fn p1(&self) -> &BTreeSet<Element> {
        &self.p1
    }

    pub fn p2(&self) -> &BTreeSet<Element> {
        &self.p2
    }

    pub fn translated(&self, u: &[i64]) -> Pattern {
        Pattern {
            p1: self.p1.iter().map(|e| e.translated(u)).collect(),
            p2: self.p2.iter().map(|e| e.translated(u)).collect(),
        }
    }

    /// Stable digest for table metadata.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for (tag, set) in [(1u8, &self.p1), (2u8, &self.p2)] {
            eat(tag);
            for e in set {
                match e {
                    Element::Site(s) => {
                        eat(0);
                        eat(s.offset as u8);
                        for c in &s.cell {
                            for byte in c.to_le_bytes() {
                                eat(byte);
                            }
                        }
                    }
                    Element::Bond(b) => {
                        eat(1);
                        for s in [b.lo(), b.hi()] {
                            eat(s.offset as u8);
                            for c in &s.cell {
                                for byte in c.to_le_bytes() {
                                    eat(byte);
                                }
                            }
                        }
                    }
                }
            }
        }
        format!("{h:016x}")
    }

    pub fn to_json(&self) -> String {
        let dto = PatternDto {
            p1: self.p1.iter().map(element_to_dto).collect(),
            p2: self.p2.iter().map(element_to_dto).collect(),
        };
        serde_json::to_string(&dto).expect("pattern serialization cannot fail")
    }

    pub fn from_json(lattice: &Arc<LatticeSpec>, json: &str) -> Result<Pattern> {
        let dto: PatternDto =
            serde_json::from_str(json).map_err(|e| Error::Parse(format!("pattern: {e}")))?;
        let p1 = dto
            .p1
            .iter()
            .map(|e| element_from_dto(lattice, e))
            .collect::<Result<Vec<_>>>()?;
        let p2 = dto
            .p2
            .iter()
            .map(|e| element_from_dto(lattice, e))
            .collect::<Result<Vec<_>>>()?;
        Pattern::new(p1, p2)
    }
}

#[derive(Serialize, Deserialize)]
struct PatternDto {
    p1: Vec<ElementDto>,
    p2: Vec<ElementDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ElementDto {
    Site(u32, Vec<i64>),
    Bond((u32, Vec<i64>), (u32, Vec<i64>)),
}

fn element_to_dto(e: &Element) -> ElementDto {
    match e {
        Element::Site(s) => ElementDto::Site(s.offset + 1, s.cell.clone()),
        Element::Bond(b) => ElementDto::Bond(
            (b.lo().offset + 1, b.lo().cell.clone()),
            (b.hi().offset + 1, b.hi().cell.clone()),
        ),
    }
}

fn element_from_dto(lattice: &Arc<LatticeSpec>, e: &ElementDto) -> Result<Element> {
    let site = |off: u32, cell: &Vec<i64>| -> Result<SiteRef> {
        if off == 0 || off as usize > lattice.offset_count() || cell.len() != lattice.dimension() {
            return Err(Error::Parse(format!("bad pattern site ({off}, {cell:?})")));
        }
        Ok(SiteRef::new(off - 1, cell.clone()))
    };
    match e {
        ElementDto::Site(off, cell) => Ok(Element::Site(site(*off, cell)?)),
        ElementDto::Bond(a, b) => {
            let sa = site(a.0, &a.1)?;
            let sb = site(b.0, &b.1)?;
            Ok(Element::Bond(BondRef::new(lattice, sa, sb)?))
        }
    }
}

/// Does `g` contain `p + x`?
pub fn pattern_occurs_at(g: &Cluster, p: &Pattern, x: &[i64]) -> bool {
    p.p1.iter().all(|e| e.translated(x).is_in(g)) && !p.p2.iter().any(|e| e.translated(x).is_in(g))
}

/// All shifts x with `p1 + x ⊆ g` and `(p2 + x) ∩ g = ∅`, sorted. Candidate
/// shifts are generated as differences against the first required element,
/// which guarantees completeness because `p1` is nonempty.
pub fn occurrences(g: &Cluster, p: &Pattern) -> Vec<Vec<i64>> {
    let anchor = p.p1.iter().next().expect("p1 nonempty");
    let mut out: Vec<Vec<i64>> = Vec::new();
    match anchor {
        Element::Site(s) => {
            for gs in g.sites() {
                if gs.offset != s.offset {
                    continue;
                }
                let x: Vec<i64> = gs.cell.iter().zip(&s.cell).map(|(a, b)| a - b).collect();
                if pattern_occurs_at(g, p, &x) {
                    out.push(x);
                }
            }
        }
        Element::Bond(b) => {
            for gb in g.bonds() {
                if gb.lo().offset != b.lo().offset || gb.hi().offset != b.hi().offset {
                    continue;
                }
                let x: Vec<i64> =
                    gb.lo().cell.iter().zip(&b.lo().cell).map(|(a, c)| a - c).collect();
                if &b.translated(&x) == gb && pattern_occurs_at(g, p, &x) {
                    out.push(x);
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Direction of a flip: growing replaces an occurrence of the small pattern
/// by the large one (size +1), shrinking is the inverse.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FlipDirection {
    Grow,
    Shrink,
}

/// A pair of patterns covering the same frame of elements and differing by
/// one site and one bond, together with the exact weight factor a growing
/// flip multiplies in.
#[derive(Clone, Debug)]
pub struct FlipPair {
    pub small: Pattern,
    pub large: Pattern,
    /// wt(grown) / wt(original) for a growing flip.
    pub weight_ratio: ExactScalar,
    /// Classes the pair is constructed for.
    pub classes: Vec<ClusterClass>,
    /// The frame both patterns decompose (small.p1 ∪ small.p2 =
    /// large.p1 ∪ large.p2 = frame elements).
    pub frame: Frame,
    /// The site and bond a growing flip adds.
    pub added_site: SiteRef,
    pub added_bond: BondRef,
    /// Escape ray used to build witnesses (first element is the added site).
    ray: Vec<SiteRef>,
    lattice: Arc<LatticeSpec>,
}

impl FlipPair {
    pub fn pattern(&self, dir: FlipDirection) -> &Pattern {
        match dir {
            FlipDirection::Grow => &self.small,
            FlipDirection::Shrink => &self.large,
        }
    }

    pub fn digest(&self) -> String {
        format!("{}/{}", self.small.digest(), self.large.digest())
    }

    /// A witness cluster containing the small pattern, escaping any frame of
    /// the given radius; used to build insertion transforms for the pair's
    /// patterns. Directed classes escape by a strictly descending path from
    /// the frame's low corner, so the root leaves the frame.
    pub fn small_pattern_witness(&self, class: ClusterClass, beyond: &Rat) -> Result<Cluster> {
        let lattice = &self.lattice;
        let mut sites: BTreeSet<SiteRef> = BTreeSet::new();
        let mut bonds: BTreeSet<BondRef> = BTreeSet::new();
        for e in self.small.p1() {
            match e {
                Element::Site(s) => {
                    sites.insert(s.clone());
                }
                Element::Bond(b) => {
                    sites.insert(b.lo().clone());
                    sites.insert(b.hi().clone());
                    bonds.insert(b.clone());
                }
            }
        }
        if class.is_directed() {
            let corner = self
                .frame
                .low_corner
                .clone()
                .ok_or_else(|| Error::Construction("directed frame lacks a low corner".into()))?;
            let path = descending_escape(lattice, &corner, beyond, &self.frame.outer_radius)?;
            for w in path.windows(2) {
                sites.insert(w[1].clone());
                bonds.insert(BondRef::new_unchecked(lattice, w[0].clone(), w[1].clone()));
            }
        } else {
            let ray = extend_ray(lattice, &self.ray, beyond)?;
            // Attach the ray past the frame: sites inside it already belong
            // to the template.
            let mut prev: Option<SiteRef> = None;
            for s in &ray {
                if sites.contains(s) || lattice.sup_norm(s) <= self.frame.outer_radius {
                    prev = Some(s.clone());
                    continue;
                }
                if let Some(p) = prev {
                    if lattice.are_adjacent(&p, s) {
                        sites.insert(s.clone());
                        bonds.insert(BondRef::new_unchecked(lattice, p, s.clone()));
                    }
                }
                prev = Some(s.clone());
            }
        }
        let witness = if class.is_site_determined() {
            Cluster::site_animal_from_sites(lattice.clone(), class, sites)
        } else {
            Cluster::new(lattice.clone(), class, sites, bonds)
        };
        witness
            .validate()
            .map_err(|v| Error::Construction(format!("flip-pair witness invalid: {v}")))?;
        if !pattern_occurs_at(&witness, &self.small, &vec![0; lattice.dimension()]) {
            return Err(Error::Construction("flip-pair witness lost the pattern".into()));
        }
        Ok(witness)
    }
}

/// Replace one occurrence of a flip-pair pattern by the other at shift `x`.
/// The occurrence is checked; the result is validated (a failure is an
/// axiom-violation finding, not a silent state).
pub fn flip(g: &Cluster, x: &[i64], pair: &FlipPair, dir: FlipDirection) -> Result<Cluster> {
    let from = pair.pattern(dir);
    let to = match dir {
        FlipDirection::Grow => &pair.large,
        FlipDirection::Shrink => &pair.small,
    };
    if !pattern_occurs_at(g, from, x) {
        return Err(Error::InvalidParam(format!("no occurrence at {x:?}")));
    }
    let mut sites: BTreeSet<SiteRef> = g.sites().iter().cloned().collect();
    let mut bonds: BTreeSet<BondRef> = g.bonds().iter().cloned().collect();
    for e in from.p1() {
        match e.translated(x) {
            Element::Site(s) => {
                sites.remove(&s);
            }
            Element::Bond(b) => {
                bonds.remove(&b);
            }
        }
    }
    for e in to.p1() {
        match e.translated(x) {
            Element::Site(s) => {
                sites.insert(s);
            }
            Element::Bond(b) => {
                bonds.insert(b);
            }
        }
    }
    let result = Cluster::new(g.lattice().clone(), g.class(), sites, bonds);
    result
        .validate()
        .map_err(|v| Error::AxiomViolation(format!("flip produced an invalid cluster: {v}")))?;
    let result = if result.lex_min_site().cell.iter().all(|c| *c == 0) {
        result.flag_canonical()
    } else {
        result
    };
    Ok(result)
}

/// Build the builtin flip pair for a lattice, class, and weight model: an
/// escape ray from the origin fixes an attachment site; the small pattern is
/// the frame template, the large one adds the origin site and its bond to
/// the attachment site. The weight factor is `z_s^(|N|-1)` where N is the
/// set of other neighbors of the added site.
pub fn builtin_flip_pair(
    lattice: &Arc<LatticeSpec>,
    class: ClusterClass,
    w: &WeightModel,
) -> Result<FlipPair> {
    let directed = class.is_directed();
    if directed && lattice.direction().is_none() {
        return Err(Error::InvalidParam("directed flip pair needs a lattice direction".into()));
    }
    let origin = SiteRef::new(0, vec![0; lattice.dimension()]);

    // Pattern radius: origin, its neighbors, and the attachment site all sit
    // within one bond reach of the origin.
    let radius: Rat = lattice
        .neighbors(&origin)
        .iter()
        .map(|(far, _)| lattice.sup_norm(far))
        .max()
        .unwrap_or_else(|| crate::lattice::rat(1));
    let inner = radius.floor() + crate::lattice::rat(1);

    // Build the escape ray well past any frame the search may settle on.
    let generous = &inner + &crate::lattice::rat(8);
    let ray = build_ray(lattice, &generous, directed)?;
    let added_site = ray[0].clone();
    let attach_site = ray[1].clone();
    let added_bond = BondRef::new_unchecked(lattice, added_site.clone(), attach_site.clone());

    let (frame, template) = transform::build_frame_with_template(
        lattice,
        inner,
        &ray[1..],
        directed,
    )?;

    // Blocked neighbors of the added site (everything except the attachment).
    let blocked: Vec<SiteRef> = lattice
        .neighbors(&added_site)
        .into_iter()
        .map(|(far, _)| far)
        .filter(|far| *far != attach_site)
        .collect();
    for z in &blocked {
        if template.contains(&Element::Site(z.clone())) {
            return Err(Error::Construction(
                "escape ray construction left a blocked neighbor in the template".into(),
            ));
        }
    }

    // Small/large present sets.
    let mut small_p1 = template.clone();
    let mut large_p1 = template.clone();
    large_p1.insert(Element::Site(added_site.clone()));
    large_p1.insert(Element::Bond(added_bond.clone()));

    if class.is_tree() {
        // The large present set must itself be a tree; take its deterministic
        // spanning tree (the added site keeps degree one) and derive the
        // small set by removing the added site and bond.
        let (sites, bonds) = split_template(&large_p1);
        let tree = if directed {
            let host = Cluster::new(
                lattice.clone(),
                ClusterClass::DirectedBondAnimal,
                sites.clone(),
                bonds.clone(),
            );
            host.validate()
                .map_err(|v| Error::Construction(format!("directed template invalid: {v}")))?;
            let partial =
                Cluster::new(lattice.clone(), ClusterClass::DirectedBondTree, sites.clone(), []);
            transform::spanning_completion(&partial, &host)?
        } else {
            let host =
                Cluster::new(lattice.clone(), ClusterClass::BondAnimal, sites.clone(), bonds.clone());
            let partial = Cluster::new(lattice.clone(), ClusterClass::BondTree, sites.clone(), []);
            transform::spanning_completion(&partial, &host)?
        };
        large_p1 = tree
            .sites()
            .iter()
            .cloned()
            .map(Element::Site)
            .chain(tree.bonds().iter().cloned().map(Element::Bond))
            .collect();
        if !large_p1.contains(&Element::Bond(added_bond.clone())) {
            return Err(Error::Construction("tree template lost the added bond".into()));
        }
        small_p1 = large_p1.clone();
        small_p1.remove(&Element::Site(added_site.clone()));
        small_p1.remove(&Element::Bond(added_bond.clone()));
    }

    // Site classes: a site animal's bonds are forced by its sites, so the
    // present sets must be closed under induced bonds or the pattern could
    // never occur. The closure only adds frame-internal bonds.
    if class.is_site_determined() {
        small_p1 = induced_closure(lattice, &small_p1);
        large_p1 = induced_closure(lattice, &large_p1);
    }

    let frame_elements = frame.elements();
    let small_p2: BTreeSet<Element> = frame_elements.difference(&small_p1).cloned().collect();
    let large_p2: BTreeSet<Element> = frame_elements.difference(&large_p1).cloned().collect();
    let small = Pattern::new(small_p1.clone(), small_p2)?;
    let large = Pattern::new(large_p1.clone(), large_p2)?;

    if class.is_site_determined() {
        for pat in [&small, &large] {
            check_site_induced(lattice, pat)?;
        }
    }

    // Both present sets must be valid clusters of the class, and the frame
    // must keep the added site away from the lexicographic minimum so flips
    // never move the canonical anchor.
    for (p1, name) in [(&small_p1, "small"), (&large_p1, "large")] {
        let (sites, bonds) = split_template(p1);
        let g = Cluster::new(lattice.clone(), class, sites, bonds);
        g.validate().map_err(|v| {
            Error::Construction(format!("{name} present set is not a valid cluster: {v}"))
        })?;
        let min = g.lex_min_site().clone();
        for s in [&added_site, &attach_site] {
            if lattice.site_cmp(&min, s) != std::cmp::Ordering::Less {
                return Err(Error::Construction(
                    "frame minimum does not precede the flip sites".into(),
                ));
            }
        }
    }

    // Weight factor: one solvent contact becomes the added bond, |N| new
    // solvent contacts appear. Computed as eval(solv=|N|)/eval(solv=1) so
    // radical weights stay exact.
    let stats_n = LocalStats { n_sites: 0, n_bonds: 0, mono: 0, solv: blocked.len() as u64, cyc: 0 };
    let stats_1 = LocalStats { n_sites: 0, n_bonds: 0, mono: 0, solv: 1, cyc: 0 };
    let weight_ratio = &w.eval_stats(&stats_n) / &w.eval_stats(&stats_1);

    // The site-closure step can make the site-animal pair differ from the
    // bond-animal one (extra diagonal adjacencies on e.g. the triangular
    // lattice), so tag exactly the class the pair was built for.
    let classes = vec![class];

    Ok(FlipPair {
        small,
        large,
        weight_ratio,
        classes,
        frame,
        added_site,
        added_bond,
        ray,
        lattice: lattice.clone(),
    })
}

fn split_template(elements: &BTreeSet<Element>) -> (Vec<SiteRef>, Vec<BondRef>) {
    let mut sites = Vec::new();
    let mut bonds = Vec::new();
    for e in elements {
        match e {
            Element::Site(s) => sites.push(s.clone()),
            Element::Bond(b) => bonds.push(b.clone()),
        }
    }
    (sites, bonds)
}

fn induced_closure(lattice: &LatticeSpec, elements: &BTreeSet<Element>) -> BTreeSet<Element> {
    let mut out = elements.clone();
    let sites: BTreeSet<SiteRef> = elements
        .iter()
        .filter_map(|e| match e {
            Element::Site(s) => Some(s.clone()),
            Element::Bond(_) => None,
        })
        .collect();
    for s in &sites {
        for (far, bond) in lattice.neighbors(s) {
            if sites.contains(&far) {
                out.insert(Element::Bond(bond));
            }
        }
    }
    out
}

fn check_site_induced(lattice: &LatticeSpec, pat: &Pattern) -> Result<()> {
    let (sites, bonds) = split_template(pat.p1());
    let site_set: BTreeSet<&SiteRef> = sites.iter().collect();
    let bond_set: BTreeSet<&BondRef> = bonds.iter().collect();
    for s in &sites {
        for (far, bond) in lattice.neighbors(s) {
            if site_set.contains(&far) && !bond_set.contains(&bond) {
                return Err(Error::Construction(format!(
                    "present set is not closed under induced bonds at {bond:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Escape ray from the origin: consecutive sites are adjacent, all distinct,
/// and no site after the first is a lattice neighbor of the origin. The
/// directed variant descends strictly in the direction order. Returns
/// [origin, attach, ...] reaching past the given radius.
fn build_ray(lattice: &Arc<LatticeSpec>, beyond: &Rat, directed: bool) -> Result<Vec<SiteRef>> {
    let origin = SiteRef::new(0, vec![0; lattice.dimension()]);
    if directed {
        let mut ray = vec![origin.clone()];
        let mut guard = 0;
        loop {
            let cur = ray.last().unwrap().clone();
            let h = lattice.direction_height(&cur)?;
            let next = lattice
                .neighbors(&cur)
                .into_iter()
                .map(|(far, _)| far)
                .filter(|far| {
                    lattice.direction_height(far).map(|fh| fh < h).unwrap_or(false)
                })
                .min_by(|a, b| {
                    let ha = lattice.direction_height(a).unwrap();
                    let hb = lattice.direction_height(b).unwrap();
                    ha.cmp(&hb).then_with(|| lattice.site_cmp(a, b))
                })
                .ok_or_else(|| {
                    Error::Construction("no strictly descending neighbor for the escape ray".into())
                })?;
            ray.push(next.clone());
            if ray.len() >= 3 && lattice.sup_norm(&next) > *beyond {
                break;
            }
            guard += 1;
            if guard > 10_000 {
                return Err(Error::Construction("descending escape ray did not leave the frame".into()));
            }
        }
        verify_ray(lattice, &ray)?;
        Ok(ray)
    } else {
        // Depth-first search preferring larger sup norm, then lex order.
        let mut path = vec![origin.clone()];
        let mut visited: BTreeSet<SiteRef> = BTreeSet::new();
        visited.insert(origin.clone());
        let mut budget = 200_000u32;
        if dfs_ray(lattice, &origin, &mut path, &mut visited, beyond, &mut budget) {
            verify_ray(lattice, &path)?;
            Ok(path)
        } else {
            Err(Error::Construction("no qualifying escape ray within the search radius".into()))
        }
    }
}

fn dfs_ray(
    lattice: &Arc<LatticeSpec>,
    origin: &SiteRef,
    path: &mut Vec<SiteRef>,
    visited: &mut BTreeSet<SiteRef>,
    beyond: &Rat,
    budget: &mut u32,
) -> bool {
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    let cur = path.last().unwrap().clone();
    if path.len() >= 3 && lattice.sup_norm(&cur) > *beyond {
        return true;
    }
    let mut candidates: Vec<SiteRef> = lattice
        .neighbors(&cur)
        .into_iter()
        .map(|(far, _)| far)
        .filter(|far| !visited.contains(far))
        .filter(|far| path.len() == 1 || !lattice.are_adjacent(origin, far))
        .collect();
    candidates.sort_by(|a, b| {
        lattice
            .sup_norm(b)
            .cmp(&lattice.sup_norm(a))
            .then_with(|| lattice.site_cmp(a, b))
    });
    for cand in candidates {
        visited.insert(cand.clone());
        path.push(cand.clone());
        if dfs_ray(lattice, origin, path, visited, beyond, budget) {
            return true;
        }
        path.pop();
        // Leave the candidate visited: revisiting it on another branch would
        // re-create the same dead end.
    }
    false
}

/// Continue an undirected escape ray until it passes the given radius.
fn extend_ray(lattice: &Arc<LatticeSpec>, ray: &[SiteRef], beyond: &Rat) -> Result<Vec<SiteRef>> {
    let mut path = ray.to_vec();
    if path.len() >= 3 && lattice.sup_norm(path.last().unwrap()) > *beyond {
        return Ok(path);
    }
    let origin = path[0].clone();
    let mut visited: BTreeSet<SiteRef> = path.iter().cloned().collect();
    let mut budget = 200_000u32;
    if dfs_ray(lattice, &origin, &mut path, &mut visited, beyond, &mut budget) {
        verify_ray(lattice, &path)?;
        Ok(path)
    } else {
        Err(Error::Construction("escape ray extension failed".into()))
    }
}

/// Strictly descending walk from `start` (exclusive of conflicts: every site
/// after the start must stay outside the frame radius) until past `beyond`.
fn descending_escape(
    lattice: &Arc<LatticeSpec>,
    start: &SiteRef,
    beyond: &Rat,
    frame_outer: &Rat,
) -> Result<Vec<SiteRef>> {
    let mut path = vec![start.clone()];
    let mut guard = 0;
    loop {
        let cur = path.last().unwrap().clone();
        if path.len() >= 2 && lattice.sup_norm(&cur) > *beyond {
            return Ok(path);
        }
        let h = lattice.direction_height(&cur)?;
        let next = lattice
            .neighbors(&cur)
            .into_iter()
            .map(|(far, _)| far)
            .filter(|far| lattice.direction_height(far).map(|fh| fh < h).unwrap_or(false))
            .min_by(|a, b| {
                let ha = lattice.direction_height(a).unwrap();
                let hb = lattice.direction_height(b).unwrap();
                ha.cmp(&hb).then_with(|| lattice.site_cmp(a, b))
            })
            .ok_or_else(|| Error::Construction("descending escape is stuck".into()))?;
        if lattice.sup_norm(&next) <= *frame_outer {
            return Err(Error::Construction("descending escape re-enters the frame".into()));
        }
        path.push(next);
        guard += 1;
        if guard > 10_000 {
            return Err(Error::Construction("descending escape did not terminate".into()));
        }
    }
}

fn verify_ray(lattice: &LatticeSpec, ray: &[SiteRef]) -> Result<()> {
    if ray.len() < 3 {
        return Err(Error::Construction("escape ray too short".into()));
    }
    for w in ray.windows(2) {
        if !lattice.are_adjacent(&w[0], &w[1]) {
            return Err(Error::Construction("escape ray not a path".into()));
        }
    }
    let mut seen = BTreeSet::new();
    for s in ray {
        if !seen.insert(s.clone()) {
            return Err(Error::Construction("escape ray revisits a site".into()));
        }
    }
    for s in &ray[2..] {
        if lattice.are_adjacent(&ray[0], s) {
            return Err(Error::Construction("escape ray stays adjacent to its base".into()));
        }
    }
    Ok(())
}

/// Exact weighted sum over clusters of size `n` containing at most `m`
/// occurrences of the pattern.
pub fn tail_sum(
    task: &EnumTask,
    p: &Pattern,
    m: u64,
    w: &WeightModel,
    cfg: &EnumConfig,
    n: u32,
) -> Result<ExactScalar> {
    partition_sum(task, n, w, cfg, Some(&|g: &Cluster| occurrences(g, p).len() as u64 <= m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::SizeMeasure;
    use crate::enumerate::random_cluster;
    use crate::lattice::{builtin_lattice, rat, rat_frac};

    fn z2() -> Arc<LatticeSpec> {
        builtin_lattice("hypercubic", &[2]).unwrap()
    }

    fn z2_dir() -> Arc<LatticeSpec> {
        z2().with_direction(vec![rat(1), rat(1)]).unwrap()
    }

    fn site(x: i64, y: i64) -> SiteRef {
        SiteRef::new(0, vec![x, y])
    }

    fn square_cluster(l: &Arc<LatticeSpec>) -> Cluster {
        Cluster::site_animal_from_sites(
            l.clone(),
            ClusterClass::SiteAnimal,
            [site(0, 0), site(1, 0), site(0, 1), site(1, 1)],
        )
    }

    #[test]
    fn single_site_pattern_occurs_everywhere() {
        let l = z2();
        let p = Pattern::new([Element::Site(site(0, 0))], []).unwrap();
        let g = square_cluster(&l);
        assert_eq!(occurrences(&g, &p).len(), 4);
    }

    #[test]
    fn horizontal_bond_pattern_in_square() {
        let l = z2();
        let b = BondRef::new(&l, site(0, 0), site(1, 0)).unwrap();
        let p = Pattern::new([Element::Bond(b)], []).unwrap();
        let g = square_cluster(&l);
        // Top and bottom edges.
        assert_eq!(occurrences(&g, &p), vec![vec![0, 0], vec![0, 1]]);
    }

    #[test]
    fn excluded_north_neighbor() {
        let l = z2();
        let p = Pattern::new(
            [Element::Site(site(0, 0))],
            [Element::Site(site(0, 1))],
        )
        .unwrap();
        let single = Cluster::single_site(l, ClusterClass::SiteAnimal, site(0, 0));
        assert_eq!(occurrences(&single, &p).len(), 1);
    }

    #[test]
    fn occurrence_translation_equivariance() {
        let l = z2();
        let p = Pattern::new(
            [Element::Site(site(0, 0)), Element::Site(site(1, 0))],
            [Element::Site(site(0, 1))],
        )
        .unwrap();
        let task =
            EnumTask::new(l.clone(), ClusterClass::SiteAnimal, SizeMeasure::Sites, 9).unwrap();
        for seed in 0..10 {
            let g = random_cluster(&task, 9, seed).unwrap();
            let u = vec![3, -2];
            let moved = g.translated(&u);
            let base = occurrences(&g, &p);
            let shifted: Vec<Vec<i64>> = occurrences(&moved, &p)
                .into_iter()
                .map(|x| x.iter().zip(&u).map(|(a, b)| a - b).collect())
                .collect();
            assert_eq!(base, shifted);
        }
    }

    #[test]
    fn pattern_json_round_trip() {
        let l = z2();
        let b = BondRef::new(&l, site(0, 0), site(0, 1)).unwrap();
        let p = Pattern::new(
            [Element::Site(site(1, 1)), Element::Bond(b)],
            [Element::Site(site(2, 2))],
        )
        .unwrap();
        let json = p.to_json();
        let back = Pattern::from_json(&l, &json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn builtin_pair_square_lattice_geometry() {
        let l = z2();
        let pair =
            builtin_flip_pair(&l, ClusterClass::SiteAnimal, &WeightModel::Unit).unwrap();
        // Frame: radius-2 ball; small present set has 17 sites and 17 bonds.
        let (sites, bonds) = split_template(pair.small.p1());
        assert_eq!(sites.len(), 17);
        assert_eq!(bonds.len(), 17);
        let (sites, bonds) = split_template(pair.large.p1());
        assert_eq!(sites.len(), 18);
        assert_eq!(bonds.len(), 18);
        assert_eq!(pair.weight_ratio, ExactScalar::one());
        // Frame element sets coincide.
        let s1: BTreeSet<Element> =
            pair.small.p1().union(pair.small.p2()).cloned().collect();
        let s2: BTreeSet<Element> =
            pair.large.p1().union(pair.large.p2()).cloned().collect();
        assert_eq!(s1, s2);
    }

    #[test]
    fn builtin_pair_weight_ratio() {
        let l = z2();
        let w = WeightModel::collapse(rat(2), rat_frac(1, 2)).unwrap();
        let pair = builtin_flip_pair(&l, ClusterClass::SiteAnimal, &w).unwrap();
        // Three blocked neighbors on the square lattice: z_s^2.
        assert_eq!(pair.weight_ratio, ExactScalar::from_rational(rat_frac(1, 4)));
        let tri = builtin_lattice("triangular", &[]).unwrap();
        let pair = builtin_flip_pair(&tri, ClusterClass::SiteAnimal, &w).unwrap();
        // Five blocked neighbors: z_s^4.
        assert_eq!(pair.weight_ratio, ExactScalar::from_rational(rat_frac(1, 16)));
    }

    #[test]
    fn flip_round_trip_on_template() {
        let l = z2();
        let w = WeightModel::collapse(rat(2), rat_frac(1, 2)).unwrap();
        for class in [ClusterClass::SiteAnimal, ClusterClass::BondAnimal, ClusterClass::BondTree] {
            let pair = builtin_flip_pair(&l, class, &w).unwrap();
            let g = pair.small_pattern_witness(class, &(rat(6))).unwrap();
            let occ = occurrences(&g, &pair.small);
            assert!(!occ.is_empty(), "{class:?} witness contains the small pattern");
            let x = occ[0].clone();
            let grown = flip(&g, &x, &pair, FlipDirection::Grow).unwrap();
            assert_eq!(
                grown.size(SizeMeasure::Sites),
                g.size(SizeMeasure::Sites) + 1,
                "{class:?}"
            );
            assert_eq!(
                grown.size(SizeMeasure::Bonds),
                g.size(SizeMeasure::Bonds) + 1,
                "{class:?}"
            );
            // Exact weight ratio.
            let wg = crate::weights::weight(&g, &w);
            let wgrown = crate::weights::weight(&grown, &w);
            assert_eq!(&wgrown / &wg, pair.weight_ratio, "{class:?}");
            // Occurrence bookkeeping.
            assert_eq!(
                occurrences(&grown, &pair.small).len(),
                occ.len() - 1,
                "{class:?}"
            );
            assert_eq!(
                occurrences(&grown, &pair.large).len(),
                occurrences(&g, &pair.large).len() + 1,
                "{class:?}"
            );
            // Double flip restores the original.
            let back = flip(&grown, &x, &pair, FlipDirection::Shrink).unwrap();
            assert_eq!(back, g, "{class:?}");
        }
    }

    #[test]
    fn directed_flip_round_trip() {
        let l = z2_dir();
        let w = WeightModel::collapse(rat(2), rat_frac(1, 2)).unwrap();
        for class in [
            ClusterClass::DirectedSiteAnimal,
            ClusterClass::DirectedBondAnimal,
            ClusterClass::DirectedBondTree,
        ] {
            let pair = builtin_flip_pair(&l, class, &w).unwrap();
            let g = pair.small_pattern_witness(class, &rat(6)).unwrap();
            let occ = occurrences(&g, &pair.small);
            assert!(!occ.is_empty(), "{class:?}");
            let x = occ[0].clone();
            let grown = flip(&g, &x, &pair, FlipDirection::Grow).unwrap();
            assert!(grown.validate().is_ok());
            let back = flip(&grown, &x, &pair, FlipDirection::Shrink).unwrap();
            assert_eq!(back, g, "{class:?}");
        }
    }

    #[test]
    fn tail_sum_consistency() {
        let l = z2();
        let cfg = EnumConfig::default();
        let task = EnumTask::new(l.clone(), ClusterClass::SiteAnimal, SizeMeasure::Sites, 5).unwrap();
        // Any site pattern occurs exactly n times per n-site animal.
        let p = Pattern::new([Element::Site(site(0, 0))], []).unwrap();
        let s = tail_sum(&task, &p, 5, &WeightModel::Unit, &cfg, 5).unwrap();
        assert_eq!(s, ExactScalar::from_integer(63));
        let s = tail_sum(&task, &p, 4, &WeightModel::Unit, &cfg, 5).unwrap();
        assert!(s.is_zero());
        // The missing-north-neighbor motif occurs at every column top, so a
        // zero-occurrence tail is empty.
        let motif = Pattern::new(
            [Element::Site(site(0, 0))],
            [Element::Site(site(0, 1))],
        )
        .unwrap();
        let s = tail_sum(&task, &motif, 0, &WeightModel::Unit, &cfg, 4).unwrap();
        assert!(s.is_zero());
    }
}
