//! Series post-processing: growth and ratio reports, the ratio-curvature
//! diagnostic, and exact cross-class comparisons. No extrapolation or
//! fitting happens here; roots and logarithms are taken in double precision
//! from exact values at the last step only.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::ExactScalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub lattice: String,
    pub class: String,
    pub measure: String,
    pub weights: String,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct SeriesRow {
    pub n: u32,
    pub exact: ExactScalar,
    pub float: f64,
}

/// A per-size series of positive values with metadata. Sizes are strictly
/// increasing.
#[derive(Clone, Debug)]
pub struct SeriesTable {
    pub meta: SeriesMeta,
    rows: Vec<SeriesRow>,
}

impl SeriesTable {
    pub fn new(meta: SeriesMeta, rows: Vec<SeriesRow>) -> Result<SeriesTable> {
        for w in rows.windows(2) {
            if w[1].n <= w[0].n {
                return Err(Error::InvalidParam("series sizes must strictly increase".into()));
            }
        }
        if let Some(row) = rows.iter().find(|r| r.exact.sign() <= 0) {
            return Err(Error::InvalidParam(format!("series value at n={} not positive", row.n)));
        }
        Ok(SeriesTable { meta, rows })
    }

    pub fn from_exact(meta: SeriesMeta, values: Vec<(u32, ExactScalar)>) -> Result<SeriesTable> {
        let rows = values
            .into_iter()
            .map(|(n, exact)| {
                let float = exact.to_f64();
                SeriesRow { n, exact, float }
            })
            .collect();
        SeriesTable::new(meta, rows)
    }

    pub fn from_counts(meta: SeriesMeta, counts: &[(u32, u64)]) -> Result<SeriesTable> {
        SeriesTable::from_exact(
            meta,
            counts
                .iter()
                .map(|(n, c)| (*n, ExactScalar::from_integer(*c as i64)))
                .collect(),
        )
    }

    pub fn rows(&self) -> &[SeriesRow] {
        &self.rows
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "#meta: {}",
            serde_json::to_string(&self.meta).expect("meta serializes")
        )?;
        writeln!(out, "n,value_exact,value_float")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.n, r.exact, fmt_float(r.float))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<SeriesTable> {
        let mut meta: Option<SeriesMeta> = None;
        let mut rows = Vec::new();
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#meta:") {
                meta = Some(
                    serde_json::from_str(rest.trim())
                        .map_err(|e| Error::Parse(format!("series meta: {e}")))?,
                );
                continue;
            }
            if line.starts_with('#') || line.starts_with("n,") {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let n: u32 = parts
                .next()
                .ok_or_else(|| Error::Parse("missing n".into()))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad n: {e}")))?;
            let exact = ExactScalar::parse(
                parts.next().ok_or_else(|| Error::Parse("missing exact value".into()))?,
            )?;
            let float: f64 = parts
                .next()
                .map(|t| t.trim().parse::<f64>())
                .transpose()
                .map_err(|e| Error::Parse(format!("bad float: {e}")))?
                .unwrap_or_else(|| exact.to_f64());
            rows.push(SeriesRow { n, exact, float });
        }
        let meta = meta.ok_or_else(|| Error::Parse("series file lacks a #meta: header".into()))?;
        SeriesTable::new(meta, rows)
    }
}

pub(crate) fn fmt_float(v: f64) -> String {
    // Round-trippable float formatting.
    format!("{v:?}")
}

/// Root, ratio, and free-energy series of a positive series.
#[derive(Clone, Debug)]
pub struct GrowthReport {
    /// value(n)^(1/n)
    pub roots: Vec<(u32, f64)>,
    /// value(next)/value(n), exact
    pub ratios: Vec<(u32, ExactScalar)>,
    /// log(value(n))/n
    pub free_energy: Vec<(u32, f64)>,
}

pub fn growth_report(s: &SeriesTable) -> Result<GrowthReport> {
    let rows = s.rows();
    if rows.len() < 2 {
        return Err(Error::InvalidParam("growth report needs at least two rows".into()));
    }
    let roots = rows
        .iter()
        .map(|r| (r.n, r.exact.to_f64().powf(1.0 / r.n as f64)))
        .collect();
    let ratios = rows
        .windows(2)
        .map(|w| (w[0].n, &w[1].exact / &w[0].exact))
        .collect();
    let free_energy = rows
        .iter()
        .map(|r| (r.n, r.exact.to_f64().ln() / r.n as f64))
        .collect();
    Ok(GrowthReport { roots, ratios, free_energy })
}

/// Ratio-curvature rows `R_n = n·[(v(n+1)/v(n))² − v(n+2)/v(n)]`, expected
/// to stay bounded above; the running maximum is reported for inspection,
/// with no threshold asserted.
#[derive(Clone, Debug)]
pub struct RatioDiagnostic {
    pub rows: Vec<(u32, ExactScalar)>,
    pub running_max: f64,
}

pub fn ratio_diagnostic(s: &SeriesTable) -> Result<RatioDiagnostic> {
    let rows = s.rows();
    if rows.len() < 3 {
        return Err(Error::InvalidParam("ratio diagnostic needs at least three rows".into()));
    }
    let mut out = Vec::new();
    let mut running_max = f64::NEG_INFINITY;
    for w in rows.windows(3) {
        let r1 = &w[1].exact / &w[0].exact;
        let r2 = &w[2].exact / &w[0].exact;
        let val = &(&(&r1 * &r1) - &r2) * &ExactScalar::from_integer(w[0].n as i64);
        running_max = running_max.max(val.to_f64());
        out.push((w[0].n, val));
    }
    Ok(RatioDiagnostic { rows: out, running_max })
}

/// One row of a cross-series comparison.
#[derive(Clone, Debug)]
pub struct CompareRow {
    pub n: u32,
    pub value_a: ExactScalar,
    pub value_b: ExactScalar,
    /// value_a < value_b, exactly.
    pub strict_less: bool,
    /// value_a / value_b, exact.
    pub ratio: ExactScalar,
}

/// Per-size exact comparisons of two series over matching size ranges.
pub fn compare_classes(a: &SeriesTable, b: &SeriesTable) -> Result<Vec<CompareRow>> {
    if a.rows().len() != b.rows().len()
        || a.rows().iter().zip(b.rows()).any(|(x, y)| x.n != y.n)
    {
        return Err(Error::InvalidParam("series ranges do not match".into()));
    }
    Ok(a.rows()
        .iter()
        .zip(b.rows())
        .map(|(x, y)| CompareRow {
            n: x.n,
            value_a: x.exact.clone(),
            value_b: y.exact.clone(),
            strict_less: x.exact.exact_lt(&y.exact),
            ratio: &x.exact / &y.exact,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterClass, SizeMeasure};
    use crate::enumerate::{count_series, EnumConfig, EnumTask};
    use crate::lattice::builtin_lattice;

    fn meta(label: &str) -> SeriesMeta {
        SeriesMeta {
            lattice: "hypercubic(2)".into(),
            class: "site-animal".into(),
            measure: "sites".into(),
            weights: "unit".into(),
            label: label.into(),
        }
    }

    fn series_of(values: &[u64]) -> SeriesTable {
        SeriesTable::from_counts(
            meta("test"),
            &values.iter().enumerate().map(|(i, v)| ((i + 1) as u32, *v)).collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn constant_series_has_unit_ratios() {
        let s = series_of(&[7, 7, 7, 7]);
        let rep = growth_report(&s).unwrap();
        for (_, r) in rep.ratios {
            assert_eq!(r, ExactScalar::one());
        }
    }

    #[test]
    fn geometric_series_has_constant_root_and_ratio() {
        let s = series_of(&[3, 9, 27, 81, 243]);
        let rep = growth_report(&s).unwrap();
        for (_, r) in &rep.ratios {
            assert_eq!(*r, ExactScalar::from_integer(3));
        }
        for (_, root) in &rep.roots {
            assert!((root - 3.0).abs() < 1e-9);
        }
        let diag = ratio_diagnostic(&s).unwrap();
        for (_, v) in diag.rows {
            assert!(v.is_zero());
        }
    }

    #[test]
    fn site_animal_ratios_at_least_one() {
        let lat = builtin_lattice("hypercubic", &[2]).unwrap();
        let task = EnumTask::new(lat, ClusterClass::SiteAnimal, SizeMeasure::Sites, 8).unwrap();
        let counts = count_series(&task, 8, &EnumConfig::default()).unwrap();
        let s = SeriesTable::from_counts(meta("count"), &counts).unwrap();
        let rep = growth_report(&s).unwrap();
        for (n, r) in rep.ratios {
            assert!(!r.exact_lt(&ExactScalar::one()), "ratio at n={n}");
        }
        let diag = ratio_diagnostic(&s).unwrap();
        assert!(diag.running_max.is_finite());
    }

    #[test]
    fn compare_hand_counts_at_n4() {
        let lat = builtin_lattice("hypercubic", &[2]).unwrap();
        let cfg = EnumConfig::default();
        let mut tables = Vec::new();
        for class in [ClusterClass::SiteAnimal, ClusterClass::BondTree, ClusterClass::BondAnimal] {
            let task = EnumTask::new(lat.clone(), class, SizeMeasure::Sites, 4).unwrap();
            let counts = count_series(&task, 4, &cfg).unwrap();
            tables.push(SeriesTable::from_counts(meta(class.name()), &counts).unwrap());
        }
        let sa_bt = compare_classes(&tables[0], &tables[1]).unwrap();
        let bt_ba = compare_classes(&tables[1], &tables[2]).unwrap();
        let at4 = |rows: &[CompareRow]| rows.iter().find(|r| r.n == 4).unwrap().clone();
        let r = at4(&sa_bt);
        assert_eq!(r.value_a, ExactScalar::from_integer(19));
        assert_eq!(r.value_b, ExactScalar::from_integer(22));
        assert!(r.strict_less);
        let r = at4(&bt_ba);
        assert_eq!(r.value_b, ExactScalar::from_integer(23));
        assert!(r.strict_less);
    }

    #[test]
    fn sublattice_comparison_n2() {
        let cfg = EnumConfig::default();
        let z2 = builtin_lattice("hypercubic", &[2]).unwrap();
        let tri = builtin_lattice("triangular", &[]).unwrap();
        let mk = |lat| {
            let task = EnumTask::new(lat, ClusterClass::BondAnimal, SizeMeasure::Sites, 2).unwrap();
            let counts = count_series(&task, 2, &cfg).unwrap();
            SeriesTable::from_counts(meta("ba"), &counts).unwrap()
        };
        let rows = compare_classes(&mk(z2), &mk(tri)).unwrap();
        assert_eq!(rows[1].value_a, ExactScalar::from_integer(2));
        assert_eq!(rows[1].value_b, ExactScalar::from_integer(3));
        assert!(rows[1].strict_less);
        // Equal series compare not-strictly-less everywhere.
        let s = series_of(&[5, 10]);
        for r in compare_classes(&s, &s).unwrap() {
            assert!(!r.strict_less);
            assert_eq!(r.ratio, ExactScalar::one());
        }
    }

    #[test]
    fn csv_round_trip() {
        let lat = builtin_lattice("hypercubic", &[2]).unwrap();
        let task = EnumTask::new(lat, ClusterClass::SiteAnimal, SizeMeasure::Sites, 5).unwrap();
        let counts = count_series(&task, 5, &EnumConfig::default()).unwrap();
        let s = SeriesTable::from_counts(meta("count"), &counts).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = SeriesTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back.meta, s.meta);
        assert_eq!(back.rows().len(), s.rows().len());
        for (a, b) in back.rows().iter().zip(s.rows()) {
            assert_eq!(a.n, b.n);
            assert_eq!(a.exact, b.exact);
        }
    }

    #[test]
    fn mismatched_ranges_rejected() {
        let a = series_of(&[1, 2, 3]);
        let b = series_of(&[1, 2]);
        assert!(compare_classes(&a, &b).is_err());
    }
}
