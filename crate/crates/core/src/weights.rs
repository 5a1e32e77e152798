//! Translation-invariant weight models and exact partition sums.
//!
//! Weights are monomials in the contact counts of a cluster. Exact
//! arithmetic is the default; the percolation-derived model needs the square
//! root of the bond probability, which is carried symbolically so that sums
//! stay exact in the extension field. A double-precision fast path mirrors
//! the exact one and is compared against it in tests at 1e-12 relative.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::cluster::{Cluster, LocalStats};
use crate::enumerate::{enumerate_fold, EnumConfig, EnumTask};
use crate::error::{Error, Result};
use crate::lattice::{parse_rat, Rat};

/// An exact scalar: `a + b·√r` with rational `a`, `b` and a fixed positive
/// rational radicand `r` per run. Plain rationals have `b = 0` and no
/// radicand. Mixing two different radicands is a programming error and
/// panics; the library never mixes modes.
#[derive(Clone, PartialEq, Eq)]
pub struct ExactScalar {
    a: Rat,
    b: Rat,
    root: Option<Rat>,
}

impl ExactScalar {
    pub fn zero() -> Self {
        ExactScalar { a: Rat::zero(), b: Rat::zero(), root: None }
    }

    pub fn one() -> Self {
        ExactScalar { a: Rat::one(), b: Rat::zero(), root: None }
    }

    pub fn from_rational(a: Rat) -> Self {
        ExactScalar { a, b: Rat::zero(), root: None }
    }

    pub fn from_integer(n: i64) -> Self {
        Self::from_rational(Rat::from_integer(BigInt::from(n)))
    }

    /// `a + b·√r`; normalizes away the radicand when `b = 0`.
    pub fn with_root(a: Rat, b: Rat, root: Rat) -> Self {
        if b.is_zero() {
            Self::from_rational(a)
        } else {
            ExactScalar { a, b, root: Some(root) }
        }
    }

    /// Parse `"p/q"` or `"p/q+r/s*sqrt(t/u)"` (also `-` between the parts).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(idx) = s.find("sqrt(") {
            let close = s[idx..]
                .find(')')
                .ok_or_else(|| Error::Parse(format!("unclosed sqrt in {s:?}")))?
                + idx;
            let root = parse_rat(&s[idx + 5..close])?;
            let head = &s[..idx];
            let head = head
                .strip_suffix('*')
                .ok_or_else(|| Error::Parse(format!("expected '*sqrt(..)' in {s:?}")))?;
            // Split head into rational part and sqrt coefficient at the last
            // top-level '+'/'-' (skipping a leading sign).
            let mut split = None;
            for (i, ch) in head.char_indices().skip(1) {
                if (ch == '+' || ch == '-') && !head[..i].ends_with('e') {
                    split = Some(i);
                }
            }
            let (a_str, b_str) = match split {
                Some(i) => (&head[..i], &head[i..]),
                None => ("0", head),
            };
            let b_str = b_str.strip_prefix('+').unwrap_or(b_str);
            Ok(ExactScalar::with_root(parse_rat(a_str)?, parse_rat(b_str)?, root))
        } else {
            Ok(ExactScalar::from_rational(parse_rat(s)?))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    pub fn is_rational(&self) -> bool {
        self.b.is_zero()
    }

    /// The rational value, if the scalar has no radical part.
    pub fn as_rational(&self) -> Option<&Rat> {
        if self.b.is_zero() {
            Some(&self.a)
        } else {
            None
        }
    }

    pub fn to_f64(&self) -> f64 {
        let mut v = self.a.to_f64().unwrap_or(f64::NAN);
        if !self.b.is_zero() {
            let r = self.root.as_ref().expect("radical part has a radicand");
            v += self.b.to_f64().unwrap_or(f64::NAN) * r.to_f64().unwrap_or(f64::NAN).sqrt();
        }
        v
    }

    pub fn pow(&self, exp: u32) -> ExactScalar {
        let mut acc = ExactScalar::one();
        for _ in 0..exp {
            acc = &acc * self;
        }
        acc
    }

    /// Exact sign: -1, 0, or 1. Uses only rational arithmetic (the radicand
    /// is positive by construction).
    pub fn sign(&self) -> i8 {
        let sig = |r: &Rat| -> i8 {
            if r.is_zero() {
                0
            } else if r.is_positive() {
                1
            } else {
                -1
            }
        };
        let (sa, sb) = (sig(&self.a), sig(&self.b));
        if sb == 0 {
            return sa;
        }
        if sa == 0 || sa == sb {
            return sb;
        }
        // Opposite signs: compare a² against b²·r.
        let r = self.root.as_ref().expect("radical part has a radicand");
        let lhs = &self.a * &self.a;
        let rhs = &self.b * &self.b * r;
        match lhs.cmp(&rhs) {
            std::cmp::Ordering::Greater => sa,
            std::cmp::Ordering::Less => sb,
            std::cmp::Ordering::Equal => 0,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.sign() > 0
    }

    /// Exact strict comparison.
    pub fn exact_lt(&self, other: &ExactScalar) -> bool {
        (self - other).sign() < 0
    }

    fn common_root(&self, other: &ExactScalar) -> Option<Rat> {
        match (&self.root, &other.root) {
            (Some(r), Some(s)) => {
                assert_eq!(r, s, "mixed radicands in exact arithmetic");
                Some(r.clone())
            }
            (Some(r), None) => Some(r.clone()),
            (None, Some(s)) => Some(s.clone()),
            (None, None) => None,
        }
    }

    /// Multiplicative inverse. Panics on zero.
    pub fn recip(&self) -> ExactScalar {
        if self.b.is_zero() {
            assert!(!self.a.is_zero(), "division by zero");
            return ExactScalar::from_rational(self.a.recip());
        }
        let r = self.root.clone().expect("radical part has a radicand");
        // 1/(a + b√r) = (a - b√r)/(a² - b²r)
        let denom = &self.a * &self.a - &self.b * &self.b * &r;
        assert!(!denom.is_zero(), "division by zero in the radical extension");
        ExactScalar::with_root(&self.a / &denom, -(&self.b / &denom), r)
    }
}

impl fmt::Display for ExactScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.b.is_zero() {
            write!(f, "{}", self.a)
        } else {
            let r = self.root.as_ref().unwrap();
            if self.a.is_zero() {
                write!(f, "{}*sqrt({})", self.b, r)
            } else if self.b.is_negative() {
                write!(f, "{}{}*sqrt({})", self.a, self.b, r)
            } else {
                write!(f, "{}+{}*sqrt({})", self.a, self.b, r)
            }
        }
    }
}

impl fmt::Debug for ExactScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Add for &ExactScalar {
    type Output = ExactScalar;
    fn add(self, rhs: &ExactScalar) -> ExactScalar {
        let root = self.common_root(rhs);
        let a = &self.a + &rhs.a;
        let b = &self.b + &rhs.b;
        match root {
            Some(r) if !b.is_zero() => ExactScalar { a, b, root: Some(r) },
            _ => ExactScalar::from_rational(a),
        }
    }
}

impl Sub for &ExactScalar {
    type Output = ExactScalar;
    fn sub(self, rhs: &ExactScalar) -> ExactScalar {
        self + &(-rhs)
    }
}

impl Neg for &ExactScalar {
    type Output = ExactScalar;
    fn neg(self) -> ExactScalar {
        ExactScalar { a: -&self.a, b: -&self.b, root: self.root.clone() }
    }
}

impl Mul for &ExactScalar {
    type Output = ExactScalar;
    fn mul(self, rhs: &ExactScalar) -> ExactScalar {
        let root = self.common_root(rhs);
        match root {
            None => ExactScalar::from_rational(&self.a * &rhs.a),
            Some(r) => {
                let a = &self.a * &rhs.a + &self.b * &rhs.b * &r;
                let b = &self.a * &rhs.b + &self.b * &rhs.a;
                ExactScalar::with_root(a, b, r)
            }
        }
    }
}

impl Div for &ExactScalar {
    type Output = ExactScalar;
    fn div(self, rhs: &ExactScalar) -> ExactScalar {
        self * &rhs.recip()
    }
}

impl AddAssign<&ExactScalar> for ExactScalar {
    fn add_assign(&mut self, rhs: &ExactScalar) {
        *self = &*self + rhs;
    }
}

fn rat_pow(base: &Rat, exp: u64) -> Rat {
    let mut acc = Rat::one();
    let mut base = base.clone();
    let mut exp = exp;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= &base;
        }
        base = &base * &base;
        exp >>= 1;
    }
    acc
}

/// Translation-invariant cluster weight models.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum WeightModel {
    /// Every cluster weighs 1; partition sums count clusters.
    Unit,
    /// `z_m^mono · z_s^solv` with positive rational parameters.
    Collapse { z_m: Rat, z_s: Rat },
    /// `z^cyc` with positive rational z.
    Cycle { z: Rat },
    /// Collapse weights derived from bond percolation at parameter p:
    /// `z_m = (1-p)/p`, `z_s = (1-p)/√p` carried exactly.
    PercolationDerived { p: Rat },
}

impl WeightModel {
    pub fn collapse(z_m: Rat, z_s: Rat) -> Result<WeightModel> {
        if !z_m.is_positive() || !z_s.is_positive() {
            return Err(Error::InvalidParam("collapse parameters must be positive".into()));
        }
        Ok(WeightModel::Collapse { z_m, z_s })
    }

    pub fn cycle(z: Rat) -> Result<WeightModel> {
        if !z.is_positive() {
            return Err(Error::InvalidParam("cycle parameter must be positive".into()));
        }
        Ok(WeightModel::Cycle { z })
    }

    pub fn percolation_derived(p: Rat) -> Result<WeightModel> {
        if !p.is_positive() || p >= Rat::one() {
            return Err(Error::InvalidParam("p must lie in (0,1)".into()));
        }
        Ok(WeightModel::PercolationDerived { p })
    }

    pub fn describe(&self) -> String {
        match self {
            WeightModel::Unit => "unit".into(),
            WeightModel::Collapse { z_m, z_s } => format!("collapse(zm={z_m},zs={z_s})"),
            WeightModel::Cycle { z } => format!("cycle(z={z})"),
            WeightModel::PercolationDerived { p } => format!("percolation(p={p})"),
        }
    }

    /// Weight as a function of the local statistics only.
    pub fn eval_stats(&self, st: &LocalStats) -> ExactScalar {
        match self {
            WeightModel::Unit => ExactScalar::one(),
            WeightModel::Collapse { z_m, z_s } => ExactScalar::from_rational(
                rat_pow(z_m, st.mono) * rat_pow(z_s, st.solv),
            ),
            WeightModel::Cycle { z } => ExactScalar::from_rational(rat_pow(z, st.cyc)),
            WeightModel::PercolationDerived { p } => {
                // z_m^mono = ((1-p)/p)^mono;
                // z_s^solv = (1-p)^solv · p^(-⌊solv/2⌋) · (√p)^(-(solv mod 2)),
                // and 1/√p = √p / p.
                let one_minus = Rat::one() - p;
                let zm_part = rat_pow(&(&one_minus / p), st.mono);
                let zs_rat = rat_pow(&one_minus, st.solv) / rat_pow(p, st.solv / 2);
                let val = zm_part * zs_rat;
                if st.solv % 2 == 0 {
                    ExactScalar::from_rational(val)
                } else {
                    ExactScalar::with_root(Rat::zero(), val / p, p.clone())
                }
            }
        }
    }

    /// Double-precision mirror of [`WeightModel::eval_stats`].
    pub fn eval_stats_f64(&self, st: &LocalStats) -> f64 {
        match self {
            WeightModel::Unit => 1.0,
            WeightModel::Collapse { z_m, z_s } => {
                z_m.to_f64().unwrap().powi(st.mono as i32) * z_s.to_f64().unwrap().powi(st.solv as i32)
            }
            WeightModel::Cycle { z } => z.to_f64().unwrap().powi(st.cyc as i32),
            WeightModel::PercolationDerived { p } => {
                let p = p.to_f64().unwrap();
                ((1.0 - p) / p).powi(st.mono as i32) * ((1.0 - p) / p.sqrt()).powi(st.solv as i32)
            }
        }
    }

    /// Smallest factor bound for a single-element edit, used by the
    /// bounded-perturbation property test: max(z, 1/z) over all parameters,
    /// raised to the number of contacts one element can touch.
    pub fn single_edit_factor_bound(&self, incident_cap: u32) -> ExactScalar {
        let base: Rat = match self {
            WeightModel::Unit => Rat::one(),
            WeightModel::Collapse { z_m, z_s } => {
                let candidates = [z_m.clone(), z_m.recip(), z_s.clone(), z_s.recip()];
                candidates.into_iter().max().unwrap()
            }
            WeightModel::Cycle { z } => z.clone().max(z.recip()),
            WeightModel::PercolationDerived { p } => {
                // Rational over-estimate: |z_s| ≤ (1-p)/p for p ≤ 1.
                let zm = (Rat::one() - p) / p;
                let zs_bound = (Rat::one() - p) / p;
                [zm.clone(), zm.recip(), zs_bound.clone(), zs_bound.recip()]
                    .into_iter()
                    .max()
                    .unwrap()
            }
        };
        ExactScalar::from_rational(rat_pow(&base, incident_cap as u64))
    }
}

/// Exact weight of a cluster.
pub fn weight(g: &Cluster, w: &WeightModel) -> ExactScalar {
    w.eval_stats(&g.local_statistics())
}

/// Double-precision weight of a cluster.
pub fn weight_f64(g: &Cluster, w: &WeightModel) -> f64 {
    w.eval_stats_f64(&g.local_statistics())
}

/// Exact weighted sum over all canonical clusters of size `n` passing the
/// filter (all clusters when the filter is None).
pub fn partition_sum(
    task: &EnumTask,
    n: u32,
    w: &WeightModel,
    cfg: &EnumConfig,
    filter: Option<&(dyn Fn(&Cluster) -> bool + Sync)>,
) -> Result<ExactScalar> {
    let (_, sum) = enumerate_fold(
        task,
        n,
        cfg,
        ExactScalar::zero,
        |acc, g| {
            if filter.map_or(true, |f| f(g)) {
                *acc += &weight(g, w);
            }
        },
        |a, b| &a + &b,
    )?;
    Ok(sum)
}

/// Double-precision mirror of [`partition_sum`].
pub fn partition_sum_f64(
    task: &EnumTask,
    n: u32,
    w: &WeightModel,
    cfg: &EnumConfig,
    filter: Option<&(dyn Fn(&Cluster) -> bool + Sync)>,
) -> Result<f64> {
    let (_, sum) = enumerate_fold(
        task,
        n,
        cfg,
        || 0.0f64,
        |acc, g| {
            if filter.map_or(true, |f| f(g)) {
                *acc += weight_f64(g, w);
            }
        },
        |a, b| a + b,
    )?;
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Cluster, ClusterClass, SizeMeasure};
    use crate::lattice::{builtin_lattice, rat, rat_frac, SiteRef};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn z2() -> std::sync::Arc<crate::lattice::LatticeSpec> {
        builtin_lattice("hypercubic", &[2]).unwrap()
    }

    fn site(x: i64, y: i64) -> SiteRef {
        SiteRef::new(0, vec![x, y])
    }

    #[test]
    fn unit_weight_is_one() {
        let g = Cluster::single_site(z2(), ClusterClass::BondAnimal, site(0, 0));
        assert_eq!(weight(&g, &WeightModel::Unit), ExactScalar::one());
    }

    #[test]
    fn collapse_weight_single_site() {
        let w = WeightModel::collapse(rat(2), rat_frac(1, 2)).unwrap();
        let g = Cluster::single_site(z2(), ClusterClass::BondAnimal, site(0, 0));
        // solv = 4 → (1/2)^4
        assert_eq!(weight(&g, &w), ExactScalar::from_rational(rat_frac(1, 16)));
    }

    #[test]
    fn cycle_weight_of_tree_is_one() {
        let w = WeightModel::cycle(rat_frac(3, 7)).unwrap();
        let l = z2();
        let b = crate::lattice::BondRef::new(&l, site(0, 0), site(1, 0)).unwrap();
        let g = Cluster::new(l, ClusterClass::BondTree, [site(0, 0), site(1, 0)], [b]);
        assert_eq!(weight(&g, &w), ExactScalar::one());
    }

    #[test]
    fn partition_sum_counts_under_unit_weights() {
        let task = EnumTask::new(z2(), ClusterClass::SiteAnimal, SizeMeasure::Sites, 5).unwrap();
        let cfg = EnumConfig::default();
        let s = partition_sum(&task, 5, &WeightModel::Unit, &cfg, None).unwrap();
        assert_eq!(s, ExactScalar::from_integer(63));
    }

    #[test]
    fn partition_sum_two_dominoes() {
        // Bond animals by sites, n = 2: two dominoes, each with solv = 6.
        let task = EnumTask::new(z2(), ClusterClass::BondAnimal, SizeMeasure::Sites, 2).unwrap();
        let cfg = EnumConfig::default();
        let w = WeightModel::collapse(rat(3), rat_frac(1, 2)).unwrap();
        let s = partition_sum(&task, 2, &w, &cfg, None).unwrap();
        assert_eq!(s, ExactScalar::from_rational(rat_frac(2, 64)));
    }

    #[test]
    fn percolation_weight_single_site() {
        // n = 1 on the square lattice: z_s^4 = (1-p)^4/p^2.
        let p = rat_frac(1, 3);
        let w = WeightModel::percolation_derived(p.clone()).unwrap();
        let task = EnumTask::new(z2(), ClusterClass::BondAnimal, SizeMeasure::Sites, 1).unwrap();
        let s = partition_sum(&task, 1, &w, &EnumConfig::default(), None).unwrap();
        let expect = rat_pow(&(Rat::one() - &p), 4) / rat_pow(&p, 2);
        assert_eq!(s, ExactScalar::from_rational(expect));
    }

    #[test]
    fn percolation_weight_odd_solv_carries_radical() {
        let p = rat_frac(1, 2);
        let w = WeightModel::percolation_derived(p.clone()).unwrap();
        let st = LocalStats { n_sites: 1, n_bonds: 0, mono: 0, solv: 3, cyc: 0 };
        let v = w.eval_stats(&st);
        assert!(!v.is_rational());
        // (1-p)^3 · p^{-1} · (1/√p) = (1/8)·2·(√(1/2)/(1/2)) = (1/2)·√(1/2).
        assert_eq!(
            v,
            ExactScalar::with_root(Rat::zero(), rat_frac(1, 2), rat_frac(1, 2))
        );
        let expected = 0.5f64.powi(3) / 0.5 / 0.5f64.sqrt();
        assert!((v.to_f64() - expected).abs() < 1e-14);
    }

    #[test]
    fn exact_scalar_arithmetic_and_parse() {
        let x = ExactScalar::with_root(rat_frac(1, 2), rat_frac(3, 4), rat_frac(1, 2));
        let y = ExactScalar::from_rational(rat_frac(2, 3));
        let z = &x * &y;
        let w = &z / &y;
        assert_eq!(w, x);
        let s = x.to_string();
        assert_eq!(ExactScalar::parse(&s).unwrap(), x);
        assert_eq!(ExactScalar::parse("5/8").unwrap(), ExactScalar::from_rational(rat_frac(5, 8)));
        let neg = ExactScalar::with_root(rat(1), rat(-2), rat_frac(1, 3));
        assert_eq!(ExactScalar::parse(&neg.to_string()).unwrap(), neg);
    }

    #[test]
    fn exact_sums_are_order_independent() {
        let w = WeightModel::percolation_derived(rat_frac(2, 5)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut terms: Vec<ExactScalar> = (0..30)
            .map(|i| {
                let st = LocalStats {
                    n_sites: 1,
                    n_bonds: 0,
                    mono: i % 4,
                    solv: (i * 7) % 9,
                    cyc: 0,
                };
                w.eval_stats(&st)
            })
            .collect();
        let mut total1 = ExactScalar::zero();
        for t in &terms {
            total1 += t;
        }
        terms.shuffle(&mut rng);
        let mut total2 = ExactScalar::zero();
        for t in &terms {
            total2 += t;
        }
        assert_eq!(total1, total2);
    }

    #[test]
    fn float_path_tracks_exact_path() {
        let cfg = EnumConfig::default();
        let task = EnumTask::new(z2(), ClusterClass::BondAnimal, SizeMeasure::Sites, 6).unwrap();
        for w in [
            WeightModel::Unit,
            WeightModel::collapse(rat(2), rat_frac(1, 2)).unwrap(),
            WeightModel::cycle(rat_frac(3, 2)).unwrap(),
            WeightModel::percolation_derived(rat_frac(9, 20)).unwrap(),
        ] {
            for n in 1..=6 {
                let exact = partition_sum(&task, n, &w, &cfg, None).unwrap().to_f64();
                let float = partition_sum_f64(&task, n, &w, &cfg, None).unwrap();
                assert!(
                    (exact - float).abs() <= 1e-12 * exact.abs().max(1.0),
                    "{} n={n}: {exact} vs {float}",
                    w.describe()
                );
            }
        }
    }

    #[test]
    fn bounded_perturbation_under_single_element_edits() {
        // Adding or removing one site/bond moves the weight by at most the
        // single-edit factor bound.
        let lat = z2();
        let task =
            EnumTask::new(lat.clone(), ClusterClass::BondAnimal, SizeMeasure::Sites, 12).unwrap();
        let incident_cap = 2 * 4u32; // two endpoints of an edited bond, degree 4
        for w in [
            WeightModel::collapse(rat(2), rat_frac(1, 3)).unwrap(),
            WeightModel::cycle(rat_frac(5, 4)).unwrap(),
        ] {
            let bound = w.single_edit_factor_bound(incident_cap);
            let bound = bound.as_rational().unwrap().clone();
            for seed in 0..40u64 {
                let g = crate::enumerate::random_cluster(&task, 8, seed).unwrap();
                // Edit: remove one non-cut bond if possible, else add one.
                let mut edited = None;
                for drop in g.bonds() {
                    let bonds: Vec<_> = g.bonds().iter().filter(|b| *b != drop).cloned().collect();
                    let cand = Cluster::new(
                        lat.clone(),
                        ClusterClass::BondAnimal,
                        g.sites().to_vec(),
                        bonds,
                    );
                    if cand.validate().is_ok() {
                        edited = Some(cand);
                        break;
                    }
                }
                let Some(h) = edited else { continue };
                let wg = weight(&g, &w);
                let wh = weight(&h, &w);
                let ratio = (&wh / &wg).as_rational().unwrap().clone();
                assert!(ratio <= bound && ratio.recip() <= bound, "ratio {ratio} bound {bound}");
            }
        }
    }

    #[test]
    fn free_energy_series_is_finite() {
        let cfg = EnumConfig::default();
        let task = EnumTask::new(z2(), ClusterClass::SiteAnimal, SizeMeasure::Sites, 6).unwrap();
        let w = WeightModel::collapse(rat(2), rat_frac(1, 2)).unwrap();
        for n in 1..=6 {
            let s = partition_sum(&task, n, &w, &cfg, None).unwrap();
            let f = s.to_f64().ln() / n as f64;
            assert!(f.is_finite());
        }
    }
}
