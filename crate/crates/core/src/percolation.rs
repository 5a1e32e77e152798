//! Bond percolation: exact cluster-size probabilities computed along two
//! algebraic routes that must agree exactly, a reproducible Monte Carlo
//! sampler with lazy bond revelation, and the finite-size ratio series.

use std::collections::{HashMap, HashSet, VecDeque};

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::cluster::ClusterClass;
use crate::cluster::SizeMeasure;
use crate::enumerate::{enumerate_fold, EnumConfig, EnumTask};
use crate::error::{Error, Result};
use crate::lattice::{builtin_lattice, rat, LatticeSpec, Rat};
use crate::weights::{ExactScalar, WeightModel};

/// One Monte Carlo size estimate.
#[derive(Clone, Debug)]
pub struct MCEstimate {
    pub n: u32,
    pub count: u64,
    pub p_hat: f64,
    pub std_error: f64,
    pub samples: u64,
    /// Probability mass of clusters that exceeded the size cap.
    pub truncated_mass: f64,
    pub seed: u64,
}

/// Result of a Monte Carlo run; counts are exact tallies.
#[derive(Clone, Debug)]
pub struct MCRun {
    pub estimates: Vec<MCEstimate>,
    pub truncated_count: u64,
    pub samples: u64,
    pub seed: u64,
}

fn stats_tally(
    task: &EnumTask,
    n: u32,
    cfg: &EnumConfig,
) -> Result<HashMap<(u64, u64, u64), u64>> {
    let (_, tally) = enumerate_fold(
        task,
        n,
        cfg,
        HashMap::<(u64, u64, u64), u64>::new,
        |acc, g| {
            let st = g.local_statistics();
            *acc.entry((st.n_bonds, st.mono, st.solv)).or_insert(0) += 1;
        },
        |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        },
    )?;
    Ok(tally)
}

fn rat_pow(base: &Rat, exp: u64) -> Rat {
    let mut acc = Rat::one();
    let mut b = base.clone();
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc *= &b;
        }
        b = &b * &b;
        e >>= 1;
    }
    acc
}

/// Direct form: `n · Σ_G p^bond(G) (1-p)^(mono(G)+solv(G))` over canonical
/// bond animals with `n` sites. Valid on any lattice.
pub fn size_probability_direct(
    lattice: &std::sync::Arc<LatticeSpec>,
    p: &Rat,
    n: u32,
    cfg: &EnumConfig,
) -> Result<Rat> {
    if !(p > &Rat::zero() && p < &Rat::one()) {
        return Err(Error::InvalidParam("p must lie in (0,1)".into()));
    }
    let task = EnumTask::new(lattice.clone(), ClusterClass::BondAnimal, SizeMeasure::Sites, n)?;
    let tally = stats_tally(&task, n, cfg)?;
    let q = Rat::one() - p;
    let mut total = Rat::zero();
    for ((bonds, mono, solv), count) in tally {
        total += rat_pow(p, bonds) * rat_pow(&q, mono + solv) * rat(count as i64);
    }
    Ok(total * rat(n as i64))
}

/// Exact probability that the origin's open cluster has exactly `n` sites
/// on the d-dimensional hypercubic lattice. Computes the direct sum and the
/// partition-function form `n·p^(dn)·G_n` with percolation-derived weights,
/// and requires exact agreement before returning.
pub fn exact_size_probability(d: usize, p: &Rat, n: u32, cfg: &EnumConfig) -> Result<ExactScalar> {
    if !(p > &Rat::zero() && p < &Rat::one()) {
        return Err(Error::InvalidParam("p must lie in (0,1)".into()));
    }
    let lattice = builtin_lattice("hypercubic", &[d as i64])?;
    let task = EnumTask::new(lattice.clone(), ClusterClass::BondAnimal, SizeMeasure::Sites, n)?;
    let tally = stats_tally(&task, n, cfg)?;

    // Route one: per-cluster open/closed bond probabilities.
    let q = Rat::one() - p;
    let mut direct = Rat::zero();
    for ((bonds, mono, solv), count) in &tally {
        direct += rat_pow(p, *bonds) * rat_pow(&q, mono + solv) * rat(*count as i64);
    }
    direct *= rat(n as i64);

    // Route two: percolation-derived weights and the coordination identity.
    let w = WeightModel::percolation_derived(p.clone())?;
    let mut partition = ExactScalar::zero();
    for ((bonds, mono, solv), count) in &tally {
        let st = crate::cluster::LocalStats {
            n_sites: n as u64,
            n_bonds: *bonds,
            mono: *mono,
            solv: *solv,
            cyc: bonds + 1 - n as u64,
        };
        let term = &w.eval_stats(&st) * &ExactScalar::from_integer(*count as i64);
        partition += &term;
    }
    let scale = ExactScalar::from_rational(rat_pow(p, (d as u64) * (n as u64)) * rat(n as i64));
    let via_partition = &scale * &partition;

    let via_rat = via_partition.as_rational().ok_or_else(|| {
        Error::AxiomViolation("partition-form probability has a radical part".into())
    })?;
    if *via_rat != direct {
        return Err(Error::AxiomViolation(format!(
            "size-probability forms disagree: direct {direct} vs partition {via_rat}"
        )));
    }
    Ok(ExactScalar::from_rational(direct))
}

/// Exact size-probability ratios `P(n+1)/P(n)` for n < n_max, plus the
/// n-th-root series `P(n)^(1/n)` for n = 1..=n_max in double precision.
pub struct RatioSeries {
    pub ratios: Vec<(u32, ExactScalar)>,
    pub roots: Vec<(u32, f64)>,
}

pub fn size_ratio_series(d: usize, p: &Rat, n_max: u32, cfg: &EnumConfig) -> Result<RatioSeries> {
    let mut values = Vec::new();
    for n in 1..=n_max {
        values.push(exact_size_probability(d, p, n, cfg)?);
    }
    let mut ratios = Vec::new();
    for n in 1..n_max {
        let r = &values[n as usize] / &values[n as usize - 1];
        ratios.push((n, r));
    }
    let roots = values
        .iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as u32, v.to_f64().powf(1.0 / (i + 1) as f64)))
        .collect();
    Ok(RatioSeries { ratios, roots })
}

// ---------------------------------------------------------------------------
// Monte Carlo sampler
// ---------------------------------------------------------------------------

fn mix(mut z: u64) -> u64 {
    z ^= z >> 33;
    z = z.wrapping_mul(0xff51_afd7_ed55_8ccd);
    z ^= z >> 33;
    z = z.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^= z >> 33;
    z
}

/// Deterministic per-(seed, sample, bond) coin for the bond between `cell`
/// and `cell + e_axis`.
fn bond_open(seed: u64, sample: u64, cell: &[i64], axis: usize, threshold: u64) -> bool {
    let mut h = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix(h ^ sample);
    for &c in cell {
        h = mix(h ^ (c as u64));
    }
    h = mix(h ^ (axis as u64 + 0xabcd));
    h < threshold
}

/// Grow the origin's open cluster for each sample by lazy bond revelation;
/// tally exact size frequencies up to the cap. Bitwise reproducible for a
/// given (seed, samples) regardless of worker count: each bond's state is a
/// pure function of (seed, sample, bond).
pub fn mc_size_distribution(
    d: usize,
    p: f64,
    samples: u64,
    n_cap: u32,
    seed: u64,
) -> Result<MCRun> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParam("p must lie in [0,1]".into()));
    }
    if samples == 0 || n_cap == 0 || d == 0 {
        return Err(Error::InvalidParam("need d ≥ 1, one sample, and a positive cap".into()));
    }
    let threshold = (p * (u64::MAX as f64)) as u64;

    let chunk = 8192u64;
    let chunks: Vec<(u64, u64)> = (0..samples)
        .step_by(chunk as usize)
        .map(|lo| (lo, (lo + chunk).min(samples)))
        .collect();

    let tallies: Vec<(Vec<u64>, u64)> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut counts = vec![0u64; n_cap as usize + 1];
            let mut truncated = 0u64;
            for sample in lo..hi {
                match grow_sample(d, seed, sample, threshold, n_cap) {
                    Some(size) => counts[size as usize] += 1,
                    None => truncated += 1,
                }
            }
            (counts, truncated)
        })
        .collect();

    let mut counts = vec![0u64; n_cap as usize + 1];
    let mut truncated_count = 0u64;
    for (c, t) in tallies {
        for (i, v) in c.into_iter().enumerate() {
            counts[i] += v;
        }
        truncated_count += t;
    }

    let truncated_mass = truncated_count as f64 / samples as f64;
    let estimates = (1..=n_cap)
        .map(|n| {
            let count = counts[n as usize];
            let p_hat = count as f64 / samples as f64;
            MCEstimate {
                n,
                count,
                p_hat,
                std_error: (p_hat * (1.0 - p_hat) / samples as f64).sqrt(),
                samples,
                truncated_mass,
                seed,
            }
        })
        .collect();
    Ok(MCRun { estimates, truncated_count, samples, seed })
}

/// Cluster size for one sample, or None when it exceeds the cap.
fn grow_sample(d: usize, seed: u64, sample: u64, threshold: u64, n_cap: u32) -> Option<u32> {
    let origin = vec![0i64; d];
    let mut cluster: HashSet<Vec<i64>> = HashSet::new();
    cluster.insert(origin.clone());
    let mut queue: VecDeque<Vec<i64>> = VecDeque::new();
    queue.push_back(origin);
    while let Some(site) = queue.pop_front() {
        for axis in 0..d {
            for dir in [1i64, -1] {
                let mut far = site.clone();
                far[axis] += dir;
                // Canonical bond key: the lower endpoint along the axis.
                let key_cell = if dir == 1 { &site } else { &far };
                if !bond_open(seed, sample, key_cell, axis, threshold) {
                    continue;
                }
                if cluster.contains(&far) {
                    continue;
                }
                cluster.insert(far.clone());
                if cluster.len() as u32 > n_cap {
                    return None;
                }
                queue.push_back(far);
            }
        }
    }
    Some(cluster.len() as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::rat_frac;
    use crate::weights::ExactScalar;

    #[test]
    fn closed_forms_small_n() {
        let cfg = EnumConfig::default();
        let p = rat_frac(1, 3);
        let q = Rat::one() - &p;
        // One site: all four incident bonds closed.
        let p1 = exact_size_probability(2, &p, 1, &cfg).unwrap();
        assert_eq!(p1.as_rational().unwrap(), &rat_pow(&q, 4));
        // Two sites: 4·p·(1-p)^6.
        let p2 = exact_size_probability(2, &p, 2, &cfg).unwrap();
        assert_eq!(p2.as_rational().unwrap(), &(rat(4) * &p * rat_pow(&q, 6)));
    }

    #[test]
    fn forms_agree_for_several_p() {
        let cfg = EnumConfig::default();
        for (num, den) in [(3, 10), (1, 2), (7, 10)] {
            let p = rat_frac(num, den);
            for n in 1..=5 {
                exact_size_probability(2, &p, n, &cfg).unwrap();
            }
        }
    }

    #[test]
    fn direct_form_on_other_lattices() {
        let cfg = EnumConfig::default();
        let tri = builtin_lattice("triangular", &[]).unwrap();
        let p = rat_frac(1, 4);
        let v = size_probability_direct(&tri, &p, 2, &cfg).unwrap();
        // Three dominoes on the triangular lattice, each with 10 solvent
        // contacts: 2·3·p·(1-p)^10.
        let q = Rat::one() - &p;
        assert_eq!(v, rat(6) * &p * rat_pow(&q, 10));
    }

    #[test]
    fn ratio_series_shape() {
        let cfg = EnumConfig::default();
        let p = rat_frac(1, 2);
        let rs = size_ratio_series(2, &p, 4, &cfg).unwrap();
        assert_eq!(rs.roots.len(), 4);
        assert_eq!(rs.ratios.len(), 3);
        // P(2)/P(1) = 4p(1-p)^2.
        let expect = rat(4) * &p * rat_pow(&(Rat::one() - &p), 2);
        assert_eq!(rs.ratios[0].1, ExactScalar::from_rational(expect));
        for (_, r) in &rs.ratios {
            assert!(r.to_f64() > 0.0);
        }
    }

    #[test]
    fn mc_is_deterministic_and_conserves_mass() {
        let a = mc_size_distribution(2, 0.3, 20_000, 10, 99).unwrap();
        let b = mc_size_distribution(2, 0.3, 20_000, 10, 99).unwrap();
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert_eq!(x.count, y.count);
            assert_eq!(x.p_hat.to_bits(), y.p_hat.to_bits());
        }
        let total: u64 = a.estimates.iter().map(|e| e.count).sum::<u64>() + a.truncated_count;
        assert_eq!(total, a.samples);
    }

    #[test]
    fn mc_thread_count_invariance() {
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| mc_size_distribution(2, 0.45, 50_000, 8, 7)).unwrap();
        let b = pool4.install(|| mc_size_distribution(2, 0.45, 50_000, 8, 7)).unwrap();
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert_eq!(x.count, y.count);
            assert_eq!(x.p_hat.to_bits(), y.p_hat.to_bits());
        }
    }

    #[test]
    fn mc_small_p_favors_singletons() {
        let run = mc_size_distribution(2, 0.01, 50_000, 6, 3).unwrap();
        assert!(run.estimates[0].p_hat > 0.9);
    }

    #[test]
    fn mc_matches_exact_at_moderate_p() {
        let cfg = EnumConfig::default();
        let p = rat_frac(9, 20);
        let run = mc_size_distribution(2, 0.45, 200_000, 5, 1234).unwrap();
        for est in &run.estimates {
            let exact = exact_size_probability(2, &p, est.n, &cfg).unwrap().to_f64();
            let dev = (est.p_hat - exact).abs();
            assert!(
                dev <= 4.5 * est.std_error.max(1e-9),
                "n={} exact {exact} got {} ± {}",
                est.n,
                est.p_hat,
                est.std_error
            );
        }
    }
}
