//! Exact enumeration, weighted counting, and pattern analysis of lattice
//! clusters (animals, trees, and their directed variants) on general
//! periodic lattices.
//!
//! The crate is organized around a handful of building blocks:
//!
//! * [`lattice`] — periodic lattices as a translation group plus offset
//!   cells and bond generators, with exact rational geometry.
//! * [`cluster`] — finite clusters, class validation, canonicalization up
//!   to translation, and local contact statistics.
//! * [`enumerate`] — exhaustive generation of all clusters of a given size
//!   up to translation, an independent naive oracle, and seeded random
//!   cluster generation.
//! * [`weights`] — translation-invariant weight models and exact partition
//!   sums, including the percolation-derived weights that carry √p
//!   symbolically.
//! * [`pattern`] — pattern occurrence counting, the size-changing flip pair
//!   machinery with its exact occupancy identity, local pattern-insertion
//!   transforms, and low-occurrence tail sums.
//! * [`percolation`] — exact cluster-size probabilities for bond
//!   percolation (two independently computed forms, compared exactly) and a
//!   reproducible Monte Carlo sampler.
//! * [`analysis`] — series post-processing: growth/ratio/free-energy
//!   reports, a ratio-curvature diagnostic, and cross-class comparisons.

pub mod analysis;
pub mod cluster;
pub mod enumerate;
pub mod error;
pub mod lattice;
pub mod pattern;
pub mod percolation;
pub mod weights;

pub use cluster::{Cluster, ClusterClass, LocalStats, SizeMeasure, ViolationReport};
pub use enumerate::{EnumConfig, EnumTask};
pub use error::{Error, Result};
pub use lattice::{BondRef, LatticeSpec, SiteRef};
pub use weights::{ExactScalar, WeightModel};
