//! Local pattern-insertion transforms: a frame region around a site is
//! replaced by a pattern-bearing template, leaving everything outside the
//! frame untouched. Tree classes re-grow a spanning tree after the splice;
//! directed classes use per-offset frames whose root lands on the target
//! site.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use num_traits::{Signed, Zero};

use crate::cluster::{Cluster, ClusterClass, SizeMeasure};
use crate::error::{Error, Result};
use crate::lattice::{rat, BondRef, LatticeSpec, Rat, SiteRef};
use crate::pattern::{Element, Pattern};

/// A finite frame region: all lattice elements within an outer sup-norm
/// radius, with a boundary band that is connected, separates inside from
/// outside, and (for directed use) carries rising paths through every
/// boundary site between two corner sites.
#[derive(Clone, Debug)]
pub struct Frame {
    pub sites: BTreeSet<SiteRef>,
    pub bonds: BTreeSet<BondRef>,
    pub boundary_sites: BTreeSet<SiteRef>,
    pub boundary_bonds: BTreeSet<BondRef>,
    pub inner_radius: Rat,
    pub outer_radius: Rat,
    /// Boundary site of minimal direction height (directed frames).
    pub low_corner: Option<SiteRef>,
}

impl Frame {
    pub fn elements(&self) -> BTreeSet<Element> {
        self.sites
            .iter()
            .cloned()
            .map(Element::Site)
            .chain(self.bonds.iter().cloned().map(Element::Bond))
            .collect()
    }

    pub fn boundary_elements(&self) -> BTreeSet<Element> {
        self.boundary_sites
            .iter()
            .cloned()
            .map(Element::Site)
            .chain(self.boundary_bonds.iter().cloned().map(Element::Bond))
            .collect()
    }

    pub fn contains_element(&self, e: &Element) -> bool {
        match e {
            Element::Site(s) => self.sites.contains(s),
            Element::Bond(b) => self.bonds.contains(b),
        }
    }
}

fn max_bond_reach(lattice: &LatticeSpec) -> Rat {
    lattice
        .bond_generators()
        .iter()
        .map(|g| {
            let a = SiteRef::new(g.from_offset, vec![0; lattice.dimension()]);
            let b = SiteRef::new(g.to_offset, g.cell_step.clone());
            let ea = lattice.embed(&a);
            let eb = lattice.embed(&b);
            ea.iter()
                .zip(&eb)
                .map(|(x, y)| (x - y).abs())
                .max()
                .unwrap_or_else(Rat::zero)
        })
        .max()
        .unwrap_or_else(|| rat(1))
}

/// Build a frame with inner radius `inner`, searching outward in thickness
/// until the boundary band is connected and separating (and, when
/// `template_ray` crosses it, until the template stays connected; for
/// directed lattices, until corner-to-corner rising paths cover the band).
/// Returns the frame and the template `H̃ = (ray ∩ D) ∪ ∂D`.
pub fn build_frame_with_template(
    lattice: &Arc<LatticeSpec>,
    inner: Rat,
    ray: &[SiteRef],
    directed: bool,
) -> Result<(Frame, BTreeSet<Element>)> {
    let reach = max_bond_reach(lattice);
    let max_extra = 3i64;
    let mut thickness = Rat::zero();
    let step = reach.clone().max(rat(1));
    for _ in 0..=max_extra {
        let outer = &inner + &thickness;
        if let Some(result) = try_frame(lattice, &inner, &outer, ray, directed)? {
            return Ok(result);
        }
        thickness += &step;
    }
    Err(Error::Construction(format!(
        "no admissible frame band found starting at radius {inner}"
    )))
}

fn try_frame(
    lattice: &Arc<LatticeSpec>,
    inner: &Rat,
    outer: &Rat,
    ray: &[SiteRef],
    directed: bool,
) -> Result<Option<(Frame, BTreeSet<Element>)>> {
    let all_sites = lattice.sites_in_ball(outer);
    let site_set: BTreeSet<SiteRef> = all_sites.iter().cloned().collect();

    // Every offset class must be represented inside the frame.
    let mut offsets_seen = vec![false; lattice.offset_count()];
    for s in &site_set {
        offsets_seen[s.offset as usize] = true;
    }
    if !offsets_seen.iter().all(|x| *x) {
        return Ok(None);
    }

    // Separation: no lattice bond may jump from strictly inside the band to
    // strictly outside it.
    for s in &site_set {
        if lattice.sup_norm(s) < *inner {
            for (far, _) in lattice.neighbors(s) {
                if lattice.sup_norm(&far) > *outer {
                    return Ok(None);
                }
            }
        }
    }

    let mut bonds: BTreeSet<BondRef> = BTreeSet::new();
    for s in &site_set {
        for (far, bond) in lattice.neighbors(s) {
            if site_set.contains(&far) {
                bonds.insert(bond);
            }
        }
    }
    let boundary_sites: BTreeSet<SiteRef> = site_set
        .iter()
        .filter(|s| {
            let n = lattice.sup_norm(s);
            n >= *inner && n <= *outer
        })
        .cloned()
        .collect();
    let boundary_bonds: BTreeSet<BondRef> = bonds
        .iter()
        .filter(|b| boundary_sites.contains(b.lo()) && boundary_sites.contains(b.hi()))
        .cloned()
        .collect();

    // Boundary band must be connected.
    if !band_connected(&boundary_sites, &boundary_bonds) {
        return Ok(None);
    }

    // Template: ray elements inside the frame plus the whole boundary band.
    let mut template: BTreeSet<Element> = boundary_sites
        .iter()
        .cloned()
        .map(Element::Site)
        .chain(boundary_bonds.iter().cloned().map(Element::Bond))
        .collect();
    for w in ray.windows(2) {
        if site_set.contains(&w[0]) {
            template.insert(Element::Site(w[0].clone()));
        }
        if site_set.contains(&w[0]) && site_set.contains(&w[1]) {
            template.insert(Element::Bond(BondRef::new_unchecked(
                lattice,
                w[0].clone(),
                w[1].clone(),
            )));
        }
    }
    if let Some(last) = ray.last() {
        if site_set.contains(last) {
            template.insert(Element::Site(last.clone()));
        }
    }
    if !elements_connected(&template) {
        return Ok(None);
    }

    let mut low_corner = None;
    if directed {
        match directed_band_corners(lattice, &boundary_sites, &boundary_bonds)? {
            Some(corner) => low_corner = Some(corner),
            None => return Ok(None),
        }
    }

    Ok(Some((
        Frame {
            sites: site_set,
            bonds,
            boundary_sites,
            boundary_bonds,
            inner_radius: inner.clone(),
            outer_radius: outer.clone(),
            low_corner,
        },
        template,
    )))
}

fn band_connected(sites: &BTreeSet<SiteRef>, bonds: &BTreeSet<BondRef>) -> bool {
    let Some(start) = sites.iter().next() else { return false };
    let mut adj: HashMap<&SiteRef, Vec<&SiteRef>> = HashMap::new();
    for b in bonds {
        adj.entry(b.lo()).or_default().push(b.hi());
        adj.entry(b.hi()).or_default().push(b.lo());
    }
    let mut seen: HashSet<&SiteRef> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start);
    queue.push_back(start);
    while let Some(s) = queue.pop_front() {
        if let Some(list) = adj.get(s) {
            for t in list {
                if seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
    }
    seen.len() == sites.len()
}

fn elements_connected(elements: &BTreeSet<Element>) -> bool {
    let mut sites: BTreeSet<&SiteRef> = BTreeSet::new();
    for e in elements {
        match e {
            Element::Site(s) => {
                sites.insert(s);
            }
            Element::Bond(b) => {
                sites.insert(b.lo());
                sites.insert(b.hi());
            }
        }
    }
    let Some(&start) = sites.iter().next() else { return false };
    let mut adj: HashMap<&SiteRef, Vec<&SiteRef>> = HashMap::new();
    for e in elements {
        if let Element::Bond(b) = e {
            adj.entry(b.lo()).or_default().push(b.hi());
            adj.entry(b.hi()).or_default().push(b.lo());
        }
    }
    let mut seen: HashSet<&SiteRef> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start);
    queue.push_back(start);
    while let Some(s) = queue.pop_front() {
        if let Some(list) = adj.get(s) {
            for t in list {
                if seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
    }
    seen.len() == sites.len()
}

/// Directed band certification: unique lowest and highest corner, and every
/// band site lies on a rising path corner-to-corner within the band.
fn directed_band_corners(
    lattice: &LatticeSpec,
    sites: &BTreeSet<SiteRef>,
    bonds: &BTreeSet<BondRef>,
) -> Result<Option<SiteRef>> {
    let heights: BTreeMap<&SiteRef, Rat> = sites
        .iter()
        .map(|s| lattice.direction_height(s).map(|h| (s, h)))
        .collect::<Result<_>>()?;
    let min_h = heights.values().min().cloned().expect("nonempty band");
    let max_h = heights.values().max().cloned().expect("nonempty band");
    let lows: Vec<&SiteRef> = sites.iter().filter(|s| heights[s] == min_h).collect();
    let highs: Vec<&SiteRef> = sites.iter().filter(|s| heights[s] == max_h).collect();
    if lows.len() != 1 || highs.len() != 1 {
        return Ok(None);
    }
    let (low, high) = (lows[0], highs[0]);
    // Forward-reachable from the low corner, backward-reachable from the
    // high corner; both must cover the band.
    let mut up: HashMap<&SiteRef, Vec<&SiteRef>> = HashMap::new();
    let mut down: HashMap<&SiteRef, Vec<&SiteRef>> = HashMap::new();
    for b in bonds {
        let (a, c) = (b.lo(), b.hi());
        if heights[a] < heights[c] {
            up.entry(a).or_default().push(c);
            down.entry(c).or_default().push(a);
        } else {
            up.entry(c).or_default().push(a);
            down.entry(a).or_default().push(c);
        }
    }
    let reach = |start: &SiteRef, adj: &HashMap<&SiteRef, Vec<&SiteRef>>| -> HashSet<SiteRef> {
        let mut seen: HashSet<SiteRef> = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start.clone());
        queue.push_back(start.clone());
        while let Some(s) = queue.pop_front() {
            if let Some(list) = adj.get(&s) {
                for t in list {
                    if !seen.contains(*t) {
                        seen.insert((*t).clone());
                        queue.push_back((*t).clone());
                    }
                }
            }
        }
        seen
    };
    let fwd = reach(low, &up);
    let bwd = reach(high, &down);
    if sites.iter().all(|s| fwd.contains(s) && bwd.contains(s)) {
        Ok(Some(low.clone()))
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Transform specification and application
// ---------------------------------------------------------------------------

/// One frame placement rule: the anchor site of the frame is translated
/// onto the target site.
#[derive(Clone, Debug)]
pub struct TransformVariant {
    /// Frame elements D_i (sites and bonds).
    pub frame_sites: BTreeSet<SiteRef>,
    pub frame_bonds: BTreeSet<BondRef>,
    /// Boundary sites of the band (used for the tree splice).
    pub boundary_sites: BTreeSet<SiteRef>,
    /// Template elements H̃_i.
    pub template_sites: BTreeSet<SiteRef>,
    pub template_bonds: BTreeSet<BondRef>,
    /// The frame site that lands on the target: t(y) = cell(y) - cell(anchor).
    pub anchor: SiteRef,
}

/// A pattern-insertion transform for one cluster class.
#[derive(Clone, Debug)]
pub struct TransformSpec {
    pub lattice: Arc<LatticeSpec>,
    pub class: ClusterClass,
    pub pattern: Pattern,
    /// One variant per offset class.
    variants: Vec<TransformVariant>,
    pub kappa_sites: u64,
    pub kappa_bonds: u64,
}

impl TransformSpec {
    /// Build a transform for `pattern` from a witness cluster that contains
    /// the pattern and has a site outside the frame (for directed classes,
    /// a root outside the frame).
    pub fn build(
        lattice: &Arc<LatticeSpec>,
        class: ClusterClass,
        pattern: Pattern,
        witness: &Cluster,
    ) -> Result<TransformSpec> {
        if class.is_directed() && lattice.direction().is_none() {
            return Err(Error::InvalidParam("directed transform needs a direction".into()));
        }
        witness
            .validate()
            .map_err(|v| Error::Construction(format!("witness invalid: {v}")))?;
        if !crate::pattern::pattern_occurs_at(witness, &pattern, &vec![0; lattice.dimension()]) {
            return Err(Error::Construction("witness does not contain the pattern".into()));
        }

        let radius = pattern_radius(lattice, &pattern);
        let inner = radius.floor() + rat(1);

        // Witness elements ordered as a path-ish ray for template assembly:
        // reuse its sites/bonds directly.
        let witness_elements: Vec<SiteRef> = witness.sites().to_vec();

        let directed = class.is_directed();
        let (frame, template) =
            build_frame_with_template_from_cluster(lattice, inner.clone(), witness, directed)?;

        // The witness must actually leave the frame.
        let escapes = if directed {
            let root = witness.directed_root()?;
            lattice.sup_norm(root) > frame.outer_radius
        } else {
            witness_elements.iter().any(|s| lattice.sup_norm(s) > frame.outer_radius)
        };
        if !escapes {
            return Err(Error::Construction(
                "witness does not reach outside the frame".into(),
            ));
        }

        // Pattern must lie strictly inside the band.
        for e in pattern.p1().iter().chain(pattern.p2()) {
            let ok = match e {
                Element::Site(s) => lattice.sup_norm(s) < frame.inner_radius,
                Element::Bond(b) => {
                    lattice.sup_norm(b.lo()) < frame.inner_radius
                        && lattice.sup_norm(b.hi()) < frame.inner_radius
                }
            };
            if !ok {
                return Err(Error::Construction("pattern not inside the frame interior".into()));
            }
        }

        let (t_sites, t_bonds) = split_elements(&template);

        let mut variants = Vec::new();
        if directed {
            // Per offset class: connect a class representative to the band's
            // low corner by a rising path; the representative is the frame
            // anchor (the frame root lands on the target site).
            let low = frame.low_corner.clone().expect("directed frame has a corner");
            for off in 0..lattice.offset_count() as u32 {
                let path = rising_path_to(lattice, off, &low)?;
                let mut fs = frame.sites.clone();
                let mut fb = frame.bonds.clone();
                let mut ts = t_sites.clone();
                let mut tb = t_bonds.clone();
                for s in &path {
                    fs.insert(s.clone());
                    ts.insert(s.clone());
                }
                for w in path.windows(2) {
                    let b = BondRef::new_unchecked(lattice, w[0].clone(), w[1].clone());
                    fb.insert(b.clone());
                    tb.insert(b);
                }
                if let Some(last) = path.last() {
                    let b = BondRef::new_unchecked(lattice, last.clone(), low.clone());
                    fb.insert(b.clone());
                    tb.insert(b);
                }
                let anchor = path.first().cloned().unwrap_or_else(|| low.clone());
                variants.push(TransformVariant {
                    frame_sites: fs,
                    frame_bonds: fb,
                    boundary_sites: frame.boundary_sites.clone(),
                    template_sites: ts,
                    template_bonds: tb,
                    anchor,
                });
            }
        } else {
            // Shared frame; anchor per offset class is the least frame site
            // of that class.
            for off in 0..lattice.offset_count() as u32 {
                let anchor = frame
                    .sites
                    .iter()
                    .filter(|s| s.offset == off)
                    .min_by(|a, b| lattice.site_cmp(a, b))
                    .cloned()
                    .ok_or_else(|| {
                        Error::Construction(format!("frame misses offset class {}", off + 1))
                    })?;
                variants.push(TransformVariant {
                    frame_sites: frame.sites.clone(),
                    frame_bonds: frame.bonds.clone(),
                    boundary_sites: frame.boundary_sites.clone(),
                    template_sites: t_sites.clone(),
                    template_bonds: t_bonds.clone(),
                    anchor,
                });
            }
        }

        let kappa_sites = variants
            .iter()
            .map(|v| v.frame_sites.len().max(v.template_sites.len()) as u64)
            .max()
            .unwrap_or(0);
        let kappa_bonds = variants
            .iter()
            .map(|v| v.frame_bonds.len().max(v.template_bonds.len()) as u64)
            .max()
            .unwrap_or(0);

        Ok(TransformSpec { lattice: lattice.clone(), class, pattern, variants, kappa_sites, kappa_bonds })
    }

    pub fn kappa(&self, measure: SizeMeasure) -> u64 {
        match measure {
            SizeMeasure::Sites => self.kappa_sites,
            SizeMeasure::Bonds => self.kappa_bonds,
        }
    }

    pub fn variant(&self, offset: u32) -> &TransformVariant {
        &self.variants[offset as usize]
    }
}

fn pattern_radius(lattice: &LatticeSpec, pattern: &Pattern) -> Rat {
    pattern
        .p1()
        .iter()
        .chain(pattern.p2())
        .map(|e| match e {
            Element::Site(s) => lattice.sup_norm(s),
            Element::Bond(b) => lattice.sup_norm(b.lo()).max(lattice.sup_norm(b.hi())),
        })
        .max()
        .unwrap_or_else(Rat::zero)
}

fn split_elements(elements: &BTreeSet<Element>) -> (BTreeSet<SiteRef>, BTreeSet<BondRef>) {
    let mut sites = BTreeSet::new();
    let mut bonds = BTreeSet::new();
    for e in elements {
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
    (sites, bonds)
}

/// Frame search driven by a witness cluster instead of a bare ray: the
/// template is (witness ∩ D) ∪ ∂D.
fn build_frame_with_template_from_cluster(
    lattice: &Arc<LatticeSpec>,
    inner: Rat,
    witness: &Cluster,
    directed: bool,
) -> Result<(Frame, BTreeSet<Element>)> {
    let reach = max_bond_reach(lattice);
    let step = reach.max(rat(1));
    let mut thickness = Rat::zero();
    for _ in 0..=3 {
        let outer = &inner + &thickness;
        if let Some((frame, _)) = try_frame(lattice, &inner, &outer, &[], directed)? {
            // Template from the witness restricted to the frame.
            let mut template: BTreeSet<Element> = frame.boundary_elements();
            for s in witness.sites() {
                if frame.sites.contains(s) {
                    template.insert(Element::Site(s.clone()));
                }
            }
            for b in witness.bonds() {
                if frame.bonds.contains(b) {
                    template.insert(Element::Bond(b.clone()));
                }
            }
            if elements_connected(&template) {
                return Ok((frame, template));
            }
        }
        thickness += &step;
    }
    Err(Error::Construction(format!(
        "no admissible frame band found starting at radius {inner}"
    )))
}

/// Deterministic rising path from a site of the given offset class to the
/// target: breadth-first search backwards from the target along strictly
/// descending bonds, stopping at the first class representative
/// (lexicographically least among equally near ones). The path excludes the
/// target itself.
fn rising_path_to(
    lattice: &Arc<LatticeSpec>,
    offset: u32,
    target: &SiteRef,
) -> Result<Vec<SiteRef>> {
    if target.offset == offset {
        return Ok(vec![]);
    }
    let target_h = lattice.direction_height(target)?;
    let mut parents: HashMap<SiteRef, SiteRef> = HashMap::new();
    let mut frontier = vec![target.clone()];
    let mut heights: HashMap<SiteRef, Rat> = HashMap::new();
    heights.insert(target.clone(), target_h);
    for _ in 0..64 {
        let mut next = Vec::new();
        for s in &frontier {
            let h = heights[s].clone();
            for (far, _) in lattice.neighbors(s) {
                let fh = lattice.direction_height(&far)?;
                if fh < h && !parents.contains_key(&far) && far != *target {
                    parents.insert(far.clone(), s.clone());
                    heights.insert(far.clone(), fh);
                    next.push(far);
                }
            }
        }
        next.sort_by(|a, b| lattice.site_cmp(a, b));
        if let Some(hit) = next.iter().find(|s| s.offset == offset) {
            // Walk back up to the target, excluding it.
            let mut path = vec![hit.clone()];
            let mut cur = hit.clone();
            while let Some(p) = parents.get(&cur) {
                if p == target {
                    break;
                }
                path.push(p.clone());
                cur = p.clone();
            }
            return Ok(path);
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Err(Error::Construction(format!(
        "no rising connector path from offset class {} to {target:?}",
        offset + 1
    )))
}

/// Apply the transform at site `y` of `g`: replace the contents of the
/// translated frame with the translated template (splicing a spanning tree
/// back in for tree classes). Returns the new cluster and the translation
/// `t` such that the result contains `pattern + t`.
pub fn insert_pattern(g: &Cluster, y: &SiteRef, spec: &TransformSpec) -> Result<(Cluster, Vec<i64>)> {
    if !g.contains_site(y) {
        return Err(Error::InvalidParam(format!("{y:?} is not a site of the cluster")));
    }
    if g.class() != spec.class {
        return Err(Error::InvalidParam("cluster class does not match the transform".into()));
    }
    let lattice = &spec.lattice;
    let variant = spec.variant(y.offset);
    let t: Vec<i64> =
        y.cell.iter().zip(&variant.anchor.cell).map(|(a, b)| a - b).collect();

    let frame_sites: BTreeSet<SiteRef> =
        variant.frame_sites.iter().map(|s| s.translated(&t)).collect();
    let frame_bonds: BTreeSet<BondRef> =
        variant.frame_bonds.iter().map(|b| b.translated(&t)).collect();

    let mut sites: BTreeSet<SiteRef> =
        g.sites().iter().filter(|s| !frame_sites.contains(*s)).cloned().collect();
    let mut bonds: BTreeSet<BondRef> =
        g.bonds().iter().filter(|b| !frame_bonds.contains(*b)).cloned().collect();
    // Bonds crossing into the frame whose inner endpoint vanished must go:
    // keep exactly those whose endpoints both survive or land on template
    // sites.
    for s in &variant.template_sites {
        sites.insert(s.translated(&t));
    }
    let mut spliced_bonds = bonds.clone();
    for b in &variant.template_bonds {
        spliced_bonds.insert(b.translated(&t));
    }
    spliced_bonds.retain(|b| sites.contains(b.lo()) && sites.contains(b.hi()));
    bonds = spliced_bonds;

    if spec.class.is_site_determined() {
        // Bonds are induced by the sites.
        let result = Cluster::site_animal_from_sites(lattice.clone(), spec.class, sites);
        result
            .validate()
            .map_err(|v| Error::Construction(format!("splice produced an invalid cluster: {v}")))?;
        return Ok((result, t));
    }

    if spec.class.is_tree() {
        // Drop frame bonds touching the boundary band, then re-grow a
        // spanning tree of the animal-splice inside the frame.
        let boundary_sites: BTreeSet<SiteRef> =
            variant.boundary_sites.iter().map(|s| s.translated(&t)).collect();
        let host = Cluster::new(
            lattice.clone(),
            if spec.class.is_directed() {
                ClusterClass::DirectedBondAnimal
            } else {
                ClusterClass::BondAnimal
            },
            sites.iter().cloned(),
            bonds.iter().cloned(),
        );
        let partial_bonds: Vec<BondRef> = bonds
            .iter()
            .filter(|b| {
                let in_frame = frame_bonds.contains(*b)
                    || (variant
                        .template_bonds
                        .iter()
                        .any(|tb| tb.translated(&t) == **b));
                let touches_boundary =
                    boundary_sites.contains(b.lo()) || boundary_sites.contains(b.hi());
                !(in_frame && touches_boundary)
            })
            .cloned()
            .collect();
        let partial = Cluster::new(lattice.clone(), spec.class, sites.iter().cloned(), partial_bonds);
        let result = spanning_completion(&partial, &host)?;
        result
            .validate()
            .map_err(|v| Error::Construction(format!("splice produced an invalid cluster: {v}")))?;
        return Ok((result, t));
    }

    let result = Cluster::new(lattice.clone(), spec.class, sites, bonds);
    result
        .validate()
        .map_err(|v| Error::Construction(format!("splice produced an invalid cluster: {v}")))?;
    Ok((result, t))
}

/// Complete an acyclic partial subgraph to a spanning tree of the host. In
/// the directed case the completion adds incoming bonds until every
/// non-root site has exactly one, producing a rising tree rooted at the
/// host's root.
pub fn spanning_completion(partial: &Cluster, host: &Cluster) -> Result<Cluster> {
    let lattice = host.lattice().clone();
    for s in partial.sites() {
        if !host.contains_site(s) {
            return Err(Error::InvalidParam("partial is not a subgraph of the host".into()));
        }
    }
    for b in partial.bonds() {
        if !host.contains_bond(b) {
            return Err(Error::InvalidParam("partial is not a subgraph of the host".into()));
        }
    }

    let class = partial.class();
    if class.is_directed() {
        // Every partial site must have at most one incoming bond.
        let height = |s: &SiteRef| host.lattice().direction_height(s);
        let mut incoming: BTreeMap<SiteRef, Vec<BondRef>> = BTreeMap::new();
        for s in host.sites() {
            incoming.insert(s.clone(), Vec::new());
        }
        for b in partial.bonds() {
            let (lo, hi) = b.endpoints();
            let upper = if height(lo)? < height(hi)? { hi } else { lo };
            incoming.get_mut(upper).expect("host site").push(b.clone());
        }
        if incoming.values().any(|v| v.len() > 1) {
            return Err(Error::InvalidParam(
                "partial has a site with two incoming bonds".into(),
            ));
        }
        let root = host.directed_root()?.clone();
        // Add a rising incoming bond (least available) to every site that
        // lacks one; chains of incoming bonds strictly descend, so this
        // terminates with a rising spanning tree.
        let mut host_in: BTreeMap<SiteRef, Vec<BondRef>> = BTreeMap::new();
        for b in host.bonds() {
            let (lo, hi) = b.endpoints();
            let upper = if height(lo)? < height(hi)? { hi } else { lo };
            host_in.entry(upper.clone()).or_default().push(b.clone());
        }
        let mut bonds: BTreeSet<BondRef> = partial.bonds().iter().cloned().collect();
        loop {
            let mut missing: Option<SiteRef> = None;
            for s in host.sites() {
                if *s == root {
                    continue;
                }
                if incoming[s].is_empty() {
                    missing = Some(s.clone());
                    break;
                }
            }
            let Some(s) = missing else { break };
            let options = host_in.get(&s).filter(|v| !v.is_empty()).ok_or_else(|| {
                Error::Construction(format!("host site {s:?} has no incoming bond"))
            })?;
            let pick = options.first().expect("nonempty").clone();
            incoming.get_mut(&s).expect("host site").push(pick.clone());
            bonds.insert(pick);
        }
        let result = Cluster::new(lattice, class, host.sites().to_vec(), bonds);
        return Ok(result);
    }

    // Undirected: union-find over host sites, then greedy acyclic closure.
    let sites: Vec<SiteRef> = host.sites().to_vec();
    let index: HashMap<&SiteRef, usize> = sites.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut parent: Vec<usize> = (0..sites.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut bonds: BTreeSet<BondRef> = BTreeSet::new();
    for b in partial.bonds() {
        let (a, c) = (index[b.lo()], index[b.hi()]);
        let (ra, rc) = (find(&mut parent, a), find(&mut parent, c));
        if ra == rc {
            return Err(Error::InvalidParam("partial contains a cycle".into()));
        }
        parent[ra] = rc;
        bonds.insert(b.clone());
    }
    for b in host.bonds() {
        let (a, c) = (index[b.lo()], index[b.hi()]);
        let (ra, rc) = (find(&mut parent, a), find(&mut parent, c));
        if ra != rc {
            parent[ra] = rc;
            bonds.insert(b.clone());
        }
    }
    if bonds.len() + 1 != sites.len() {
        return Err(Error::Construction("host is not connected".into()));
    }
    Ok(Cluster::new(lattice, class, sites, bonds))
}

/// Best-effort witness for a pattern on undirected classes: connect the
/// pattern's required elements and extend a path outside the given radius,
/// avoiding all excluded elements.
pub fn simple_witness(
    lattice: &Arc<LatticeSpec>,
    class: ClusterClass,
    pattern: &Pattern,
    escape_radius: &Rat,
) -> Result<Cluster> {
    if class.is_directed() {
        return Err(Error::Unsupported(
            "automatic witnesses are only built for undirected classes".into(),
        ));
    }
    let mut sites: BTreeSet<SiteRef> = BTreeSet::new();
    let mut bonds: BTreeSet<BondRef> = BTreeSet::new();
    let mut blocked_sites: BTreeSet<SiteRef> = BTreeSet::new();
    let mut blocked_bonds: BTreeSet<BondRef> = BTreeSet::new();
    for e in pattern.p1() {
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
    for e in pattern.p2() {
        match e {
            Element::Site(s) => {
                blocked_sites.insert(s.clone());
            }
            Element::Bond(b) => {
                blocked_bonds.insert(b.clone());
            }
        }
    }
    if sites.iter().any(|s| blocked_sites.contains(s)) {
        return Err(Error::Construction("pattern requires and excludes a site".into()));
    }

    // For site classes the induced closure must not jump an excluded bond.
    let site_safe = |sites: &BTreeSet<SiteRef>, cand: &SiteRef| -> bool {
        if !class.is_site_determined() {
            return true;
        }
        lattice
            .neighbors(cand)
            .into_iter()
            .all(|(far, bond)| !(sites.contains(&far) && blocked_bonds.contains(&bond)))
    };

    // Connect components by breadth-first search, then escape outward.
    let grow_path = |sites: &mut BTreeSet<SiteRef>,
                         bonds: &mut BTreeSet<BondRef>,
                         goal: &dyn Fn(&SiteRef) -> bool|
     -> Result<()> {
        let mut parents: HashMap<SiteRef, (SiteRef, BondRef)> = HashMap::new();
        let mut queue: VecDeque<SiteRef> = sites.iter().cloned().collect();
        let mut seen: HashSet<SiteRef> = sites.iter().cloned().collect();
        while let Some(s) = queue.pop_front() {
            if goal(&s) && !sites.contains(&s) {
                let mut path = Vec::new();
                let mut cur = s.clone();
                while let Some((p, b)) = parents.get(&cur) {
                    path.push((cur.clone(), b.clone()));
                    if sites.contains(p) {
                        break;
                    }
                    cur = p.clone();
                }
                for (site, bond) in path {
                    sites.insert(site);
                    bonds.insert(bond);
                }
                return Ok(());
            }
            for (far, bond) in lattice.neighbors(&s) {
                if seen.contains(&far)
                    || blocked_sites.contains(&far)
                    || blocked_bonds.contains(&bond)
                    || !site_safe(sites, &far)
                {
                    continue;
                }
                seen.insert(far.clone());
                parents.insert(far.clone(), (s.clone(), bond));
                queue.push_back(far);
            }
        }
        Err(Error::Construction("witness search exhausted".into()))
    };

    // Join disconnected pattern components.
    loop {
        let probe = Cluster::new(lattice.clone(), ClusterClass::BondAnimal, sites.iter().cloned(), bonds.iter().cloned());
        if probe.validate().is_ok() {
            break;
        }
        // Components: grow from the first component toward any site of
        // another component.
        let comp = component_of(lattice, &sites, &bonds);
        let target: BTreeSet<SiteRef> = sites.difference(&comp).cloned().collect();
        if target.is_empty() {
            return Err(Error::Construction("pattern component analysis failed".into()));
        }
        let mut comp_sites = comp.clone();
        let mut comp_bonds = bonds.clone();
        grow_path(&mut comp_sites, &mut comp_bonds, &|s| target.contains(s))?;
        sites.extend(comp_sites);
        bonds = comp_bonds
            .iter()
            .cloned()
            .chain(bonds.iter().cloned())
            .collect();
    }

    // Escape outside the radius.
    let r = escape_radius.clone();
    grow_path(&mut sites, &mut bonds, &|s| lattice.sup_norm(s) > r)?;

    let result = if class.is_site_determined() {
        Cluster::site_animal_from_sites(lattice.clone(), class, sites)
    } else if class.is_tree() {
        let host = Cluster::new(lattice.clone(), ClusterClass::BondAnimal, sites.iter().cloned(), bonds.iter().cloned());
        let partial = Cluster::new(lattice.clone(), class, sites.iter().cloned(), pattern_tree_bonds(pattern));
        spanning_completion(&partial, &host)?
    } else {
        Cluster::new(lattice.clone(), class, sites, bonds)
    };
    result
        .validate()
        .map_err(|v| Error::Construction(format!("witness construction failed: {v}")))?;
    if !crate::pattern::pattern_occurs_at(&result, pattern, &vec![0; lattice.dimension()]) {
        return Err(Error::Construction("witness lost the pattern".into()));
    }
    Ok(result)
}

fn pattern_tree_bonds(pattern: &Pattern) -> Vec<BondRef> {
    pattern
        .p1()
        .iter()
        .filter_map(|e| match e {
            Element::Bond(b) => Some(b.clone()),
            Element::Site(_) => None,
        })
        .collect()
}

/// Splice-equality on the complement of the frame: sites outside the frame
/// must match exactly; bonds with both endpoints outside must match; for
/// non-site-determined classes, frame-crossing bonds must match as well
/// (site animals re-derive crossing bonds from their sites).
pub fn agrees_outside(g: &Cluster, h: &Cluster, frame_sites: &BTreeSet<SiteRef>) -> bool {
    let outside = |c: &Cluster| -> (BTreeSet<SiteRef>, BTreeSet<BondRef>) {
        let sites: BTreeSet<SiteRef> =
            c.sites().iter().filter(|s| !frame_sites.contains(*s)).cloned().collect();
        let strict_outside = |b: &BondRef| {
            !frame_sites.contains(b.lo()) && !frame_sites.contains(b.hi())
        };
        let crossing_ok = g.class().is_site_determined();
        let bonds: BTreeSet<BondRef> = c
            .bonds()
            .iter()
            .filter(|b| {
                if crossing_ok {
                    strict_outside(b)
                } else {
                    !frame_sites.contains(b.lo()) || !frame_sites.contains(b.hi())
                }
            })
            .cloned()
            .collect();
        (sites, bonds)
    };
    outside(g) == outside(h)
}

fn component_of(
    lattice: &LatticeSpec,
    sites: &BTreeSet<SiteRef>,
    bonds: &BTreeSet<BondRef>,
) -> BTreeSet<SiteRef> {
    let Some(start) = sites.iter().next() else { return BTreeSet::new() };
    let _ = lattice;
    let mut adj: HashMap<&SiteRef, Vec<&SiteRef>> = HashMap::new();
    for b in bonds {
        adj.entry(b.lo()).or_default().push(b.hi());
        adj.entry(b.hi()).or_default().push(b.lo());
    }
    let mut seen: BTreeSet<SiteRef> = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start.clone());
    queue.push_back(start.clone());
    while let Some(s) = queue.pop_front() {
        if let Some(list) = adj.get(&s) {
            for t in list {
                if !seen.contains(*t) {
                    seen.insert((*t).clone());
                    queue.push_back((*t).clone());
                }
            }
        }
    }
    seen
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::SizeMeasure;
    use crate::enumerate::{random_cluster, EnumTask};
    use crate::lattice::{builtin_lattice, rat};
    use crate::pattern::{builtin_flip_pair, occurrences, pattern_occurs_at};
    use crate::weights::WeightModel;

    fn z2() -> Arc<LatticeSpec> {
        builtin_lattice("hypercubic", &[2]).unwrap()
    }

    fn z2_dir() -> Arc<LatticeSpec> {
        z2().with_direction(vec![rat(1), rat(1)]).unwrap()
    }

    fn site(x: i64, y: i64) -> SiteRef {
        SiteRef::new(0, vec![x, y])
    }

    #[test]
    fn spanning_completion_keeps_a_spanning_tree() {
        let l = z2();
        let b1 = BondRef::new(&l, site(0, 0), site(1, 0)).unwrap();
        let b2 = BondRef::new(&l, site(1, 0), site(1, 1)).unwrap();
        let host = Cluster::new(
            l.clone(),
            ClusterClass::BondAnimal,
            [site(0, 0), site(1, 0), site(1, 1)],
            [b1.clone(), b2.clone()],
        );
        let partial = Cluster::new(
            l.clone(),
            ClusterClass::BondTree,
            [site(0, 0), site(1, 0), site(1, 1)],
            [b1, b2],
        );
        let done = spanning_completion(&partial, &host).unwrap();
        assert_eq!(done.bonds(), partial.bonds());
    }

    #[test]
    fn spanning_completion_of_cycle_host() {
        let l = z2();
        let sq = [site(0, 0), site(1, 0), site(0, 1), site(1, 1)];
        let bonds = [
            BondRef::new(&l, site(0, 0), site(1, 0)).unwrap(),
            BondRef::new(&l, site(0, 0), site(0, 1)).unwrap(),
            BondRef::new(&l, site(1, 0), site(1, 1)).unwrap(),
            BondRef::new(&l, site(0, 1), site(1, 1)).unwrap(),
        ];
        let host = Cluster::new(l.clone(), ClusterClass::BondAnimal, sq.clone(), bonds);
        let partial = Cluster::new(l.clone(), ClusterClass::BondTree, sq, []);
        let done = spanning_completion(&partial, &host).unwrap();
        assert_eq!(done.bonds().len(), 3);
        assert!(done.validate().is_ok());
        // A cyclic partial is rejected.
        let cyclic = Cluster::new(
            l,
            ClusterClass::BondTree,
            host.sites().to_vec(),
            host.bonds().to_vec(),
        );
        assert!(spanning_completion(&cyclic, &host).is_err());
    }

    #[test]
    fn directed_completion_gives_one_incoming_per_site() {
        let l = z2_dir();
        let sq = [site(0, 0), site(1, 0), site(0, 1), site(1, 1)];
        let bonds = [
            BondRef::new(&l, site(0, 0), site(1, 0)).unwrap(),
            BondRef::new(&l, site(0, 0), site(0, 1)).unwrap(),
            BondRef::new(&l, site(1, 0), site(1, 1)).unwrap(),
            BondRef::new(&l, site(0, 1), site(1, 1)).unwrap(),
        ];
        let host = Cluster::new(l.clone(), ClusterClass::DirectedBondAnimal, sq.clone(), bonds);
        assert!(host.validate().is_ok());
        let partial = Cluster::new(l.clone(), ClusterClass::DirectedBondTree, sq, []);
        let done = spanning_completion(&partial, &host).unwrap();
        assert!(done.validate().is_ok());
        let root = done.directed_root().unwrap().clone();
        for s in done.sites() {
            let incoming = done
                .bonds()
                .iter()
                .filter(|b| {
                    b.touches(s)
                        && l.direction_height(b.other(s).unwrap()).unwrap()
                            < l.direction_height(s).unwrap()
                })
                .count();
            if *s == root {
                assert_eq!(incoming, 0);
            } else {
                assert_eq!(incoming, 1, "{s:?}");
            }
        }
    }

    #[test]
    fn insert_pattern_identity_case() {
        // A cluster that already matches the template inside the frame is
        // returned unchanged.
        let l = z2();
        let pair = builtin_flip_pair(&l, ClusterClass::BondAnimal, &WeightModel::Unit).unwrap();
        let witness = pair.small_pattern_witness(ClusterClass::BondAnimal, &rat(7)).unwrap();
        let spec =
            TransformSpec::build(&l, ClusterClass::BondAnimal, pair.small.clone(), &witness)
                .unwrap();
        let variant = spec.variant(0);
        let t = vec![4, -3];
        let g = Cluster::new(
            l.clone(),
            ClusterClass::BondAnimal,
            variant.template_sites.iter().map(|s| s.translated(&t)),
            variant.template_bonds.iter().map(|b| b.translated(&t)),
        );
        assert!(g.validate().is_ok());
        let y = variant.anchor.translated(&t);
        assert!(g.contains_site(&y));
        let (h, shift) = insert_pattern(&g, &y, &spec).unwrap();
        assert_eq!(shift, t);
        assert_eq!(h, g);
    }

    #[test]
    fn insert_pattern_on_random_clusters() {
        for class in [ClusterClass::BondAnimal, ClusterClass::SiteAnimal, ClusterClass::BondTree] {
            let l = z2();
            let pair = builtin_flip_pair(&l, class, &WeightModel::Unit).unwrap();
            let witness = pair.small_pattern_witness(class, &rat(7)).unwrap();
            let spec = TransformSpec::build(&l, class, pair.small.clone(), &witness).unwrap();
            let task = EnumTask::new(l.clone(), class, SizeMeasure::Sites, 24).unwrap();
            for seed in 0..15 {
                let g = random_cluster(&task, 18, seed).unwrap();
                let y = g.sites()[seed as usize % g.sites().len()].clone();
                let (h, t) = insert_pattern(&g, &y, &spec).unwrap();
                assert!(h.validate().is_ok(), "{class:?}");
                assert!(pattern_occurs_at(&h, &spec.pattern, &t), "{class:?}");
                assert!(occurrences(&h, &spec.pattern).contains(&t));
                let frame_sites: BTreeSet<SiteRef> = spec
                    .variant(y.offset)
                    .frame_sites
                    .iter()
                    .map(|s| s.translated(&t))
                    .collect();
                assert!(agrees_outside(&g, &h, &frame_sites), "{class:?}");
                let ds = (g.size(SizeMeasure::Sites) as i64
                    - h.size(SizeMeasure::Sites) as i64)
                    .unsigned_abs();
                assert!(ds <= spec.kappa(SizeMeasure::Sites), "{class:?}");
                let db = (g.size(SizeMeasure::Bonds) as i64
                    - h.size(SizeMeasure::Bonds) as i64)
                    .unsigned_abs();
                assert!(db <= spec.kappa(SizeMeasure::Bonds), "{class:?}");
            }
        }
    }

    #[test]
    fn insert_pattern_directed_classes() {
        for class in [
            ClusterClass::DirectedBondAnimal,
            ClusterClass::DirectedSiteAnimal,
            ClusterClass::DirectedBondTree,
        ] {
            let l = z2_dir();
            let pair = builtin_flip_pair(&l, class, &WeightModel::Unit).unwrap();
            let witness = pair.small_pattern_witness(class, &rat(8)).unwrap();
            let spec = TransformSpec::build(&l, class, pair.small.clone(), &witness).unwrap();
            let task = EnumTask::new(l.clone(), class, SizeMeasure::Sites, 20).unwrap();
            for seed in 0..10 {
                let g = random_cluster(&task, 14, seed).unwrap();
                let y = g.sites()[seed as usize % g.sites().len()].clone();
                let (h, t) = insert_pattern(&g, &y, &spec).unwrap();
                assert!(h.validate().is_ok(), "{class:?} seed {seed}");
                assert!(pattern_occurs_at(&h, &spec.pattern, &t), "{class:?}");
                let frame_sites: BTreeSet<SiteRef> = spec
                    .variant(y.offset)
                    .frame_sites
                    .iter()
                    .map(|s| s.translated(&t))
                    .collect();
                assert!(agrees_outside(&g, &h, &frame_sites), "{class:?}");
            }
        }
    }

    #[test]
    fn simple_witness_for_a_user_pattern() {
        let l = z2();
        let p = crate::pattern::Pattern::new(
            [
                crate::pattern::Element::Site(site(0, 0)),
                crate::pattern::Element::Site(site(2, 0)),
            ],
            [crate::pattern::Element::Site(site(1, 0))],
        )
        .unwrap();
        let w = simple_witness(&l, ClusterClass::SiteAnimal, &p, &rat(4)).unwrap();
        assert!(w.validate().is_ok());
        assert!(pattern_occurs_at(&w, &p, &[0, 0]));
    }
}
