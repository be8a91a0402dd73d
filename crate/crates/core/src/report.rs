//! JSON and CSV artifacts. Floats in CSV files carry 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::aggregation::{AggregatedFit, DynamicEffects};
use crate::engine::DmlFit;
use crate::error::Result;
use crate::simulation::{estimator_name, McReport, ESTIMATORS};

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// A header and string rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn per_rep_table(fits: &[DmlFit]) -> Table {
    let mut t = Table::new(&["rep", "seed", "theta", "se", "ci_lo", "ci_hi", "weak_identification"]);
    for (i, f) in fits.iter().enumerate() {
        t.push(vec![
            (i + 1).to_string(),
            f.seed.map_or(String::new(), |s| s.to_string()),
            fmt_f64(f.theta),
            fmt_f64(f.se),
            fmt_f64(f.ci[0]),
            fmt_f64(f.ci[1]),
            f.weak_identification.to_string(),
        ]);
    }
    t
}

/// Per-observation score values of one fit.
pub fn psi_table(fit: &DmlFit) -> Table {
    let mut t = Table::new(&["obs", "fold", "psi_a", "psi_b", "psi"]);
    for i in 0..fit.n {
        t.push(vec![
            (i + 1).to_string(),
            fit.folds
                .as_ref()
                .map_or(String::new(), |f| (f.fold_of(i) + 1).to_string()),
            fmt_f64(fit.components.psi_a[i]),
            fmt_f64(fit.components.psi_b[i]),
            fmt_f64(fit.psi[i]),
        ]);
    }
    t
}

/// One row per `(g, t)`: each repetition's estimate and SE, then the median
/// aggregate.
pub fn attgt_table(rows: &[(f64, f64, AggregatedFit)]) -> Table {
    let s = rows.first().map_or(0, |r| r.2.repetitions);
    let mut header = vec!["group".to_string(), "time".to_string()];
    for i in 1..=s {
        header.push(format!("theta_{i}"));
        header.push(format!("se_{i}"));
    }
    for h in ["theta_median", "se_median", "ci_lo", "ci_hi"] {
        header.push(h.into());
    }
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for (g, time, agg) in rows {
        let mut r = vec![fmt_f64(*g), fmt_f64(*time)];
        for (th, se) in agg.member_theta.iter().zip(&agg.member_se) {
            r.push(fmt_f64(*th));
            r.push(fmt_f64(*se));
        }
        r.extend([agg.theta, agg.se, agg.ci[0], agg.ci[1]].map(fmt_f64));
        t.push(r);
    }
    t
}

pub fn event_study_table(effects: &DynamicEffects) -> Table {
    let mut t = Table::new(&["e", "estimate", "se", "ci_lo", "ci_hi"]);
    for h in &effects.horizons {
        t.push([h.e, h.estimate, h.se, h.ci[0], h.ci[1]].map(fmt_f64).to_vec());
    }
    t
}

pub fn mc_summary_table(report: &McReport) -> Table {
    let mut t = Table::new(&[
        "estimator",
        "mean_bias",
        "median_bias",
        "mad",
        "sd",
        "mean_se",
        "coverage",
        "coverage_se",
        "replications",
    ]);
    for m in &report.summaries {
        t.push(vec![
            m.estimator.clone(),
            fmt_f64(m.mean_bias),
            fmt_f64(m.median_bias),
            fmt_f64(m.mad),
            fmt_f64(m.sd),
            fmt_f64(m.mean_se),
            fmt_f64(m.coverage),
            fmt_f64(m.coverage_se),
            m.replications.to_string(),
        ]);
    }
    t
}

/// Every replication's estimate per estimator, for histograms.
pub fn mc_estimates_table(report: &McReport) -> Table {
    let mut header = vec!["rep".to_string()];
    for &(k, cf) in &ESTIMATORS {
        let name = estimator_name(k, cf);
        header.push(format!("{name}_theta"));
        header.push(format!("{name}_se"));
    }
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for (s, row) in report.estimates.iter().enumerate() {
        let mut r = vec![(s + 1).to_string()];
        for e in row {
            r.push(fmt_f64(e.theta));
            r.push(fmt_f64(e.se));
        }
        t.push(r);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6889.123456789012] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }
}
