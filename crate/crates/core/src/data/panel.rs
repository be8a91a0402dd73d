use std::collections::BTreeMap;

use crate::error::{DmlError, Result};
use crate::matrix::Matrix;

use super::{Dataset, Role};

/// A balanced unit-by-period view of a long-format dataset.
///
/// Units are ordered by their id and periods ascending; `row(u, t)` gives the
/// row of the underlying dataset that holds unit `u` in period index `t`.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    base: Dataset,
    unit_ids: Vec<f64>,
    periods: Vec<f64>,
    rows: Vec<usize>,
}

fn key(v: f64) -> i64 {
    // ids are whole numbers in practice; bit patterns keep fractional ids distinct
    if v.fract() == 0.0 && v.abs() < 1e15 {
        v as i64
    } else {
        v.to_bits() as i64
    }
}

/// Reshapes a long panel into a balanced wide layout.
pub fn build_panel(ds: &Dataset) -> Result<PanelDataset> {
    if !(ds.schema().has(Role::Unit) && ds.schema().has(Role::Time)) {
        return Err(DmlError::validation("roles unit,time required"));
    }
    let unit = ds.unit()?;
    let time = ds.time()?;

    let mut periods: Vec<f64> = time.to_vec();
    periods.sort_by(f64::total_cmp);
    periods.dedup();
    let t_index: BTreeMap<i64, usize> = periods.iter().enumerate().map(|(i, &t)| (key(t), i)).collect();

    let mut by_unit: BTreeMap<i64, (f64, Vec<Option<usize>>)> = BTreeMap::new();
    for (row, (&u, &t)) in unit.iter().zip(time).enumerate() {
        let entry = by_unit
            .entry(key(u))
            .or_insert_with(|| (u, vec![None; periods.len()]));
        let ti = t_index[&key(t)];
        if entry.1[ti].is_some() {
            return Err(DmlError::validation(format!(
                "unit {u} appears more than once in period {t}"
            )));
        }
        entry.1[ti] = Some(row);
    }

    let mut offending = Vec::new();
    let mut unit_ids = Vec::with_capacity(by_unit.len());
    let mut rows = Vec::with_capacity(by_unit.len() * periods.len());
    for (u, slots) in by_unit.values() {
        if slots.iter().any(Option::is_none) {
            offending.push(format!("{u}"));
            continue;
        }
        unit_ids.push(*u);
        rows.extend(slots.iter().map(|s| s.unwrap()));
    }
    if !offending.is_empty() {
        return Err(DmlError::validation(format!(
            "unbalanced panel: units {} are not observed in all {} periods",
            offending.join(","),
            periods.len()
        )));
    }
    if let Some(g) = ds.schema().group.as_deref() {
        let gv = ds.column(g).unwrap();
        for (ui, &u) in unit_ids.iter().enumerate() {
            let first = gv[rows[ui * periods.len()]];
            for t in 0..periods.len() {
                let v = gv[rows[ui * periods.len() + t]];
                if v != first {
                    return Err(DmlError::validation(format!(
                        "group of unit {u} changes over time"
                    )));
                }
            }
        }
    }
    Ok(PanelDataset {
        base: ds.clone(),
        unit_ids,
        periods,
        rows,
    })
}

impl PanelDataset {
    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn unit_ids(&self) -> &[f64] {
        &self.unit_ids
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn row(&self, unit: usize, period: usize) -> usize {
        self.rows[unit * self.periods.len() + period]
    }

    /// Unit index of every row in the base dataset.
    pub fn unit_of_row(&self) -> Vec<usize> {
        let mut out = vec![0; self.base.n()];
        for u in 0..self.n_units() {
            for t in 0..self.n_periods() {
                out[self.row(u, t)] = u;
            }
        }
        out
    }

    /// `units x periods` matrix of a column.
    pub fn wide(&self, column: &str) -> Result<Matrix> {
        let values = self
            .base
            .column(column)
            .ok_or_else(|| DmlError::Schema(format!("column '{column}' not found")))?;
        let data = self.rows.iter().map(|&r| values[r]).collect();
        Ok(Matrix::new(self.n_units(), self.n_periods(), data))
    }

    /// `units x (periods - 1)` matrix with entry `(i, t-1) = A_it - A_i,t-1`.
    pub fn first_differences(&self, column: &str) -> Result<Matrix> {
        let w = self.wide(column)?;
        let tt = self.n_periods();
        let mut data = Vec::with_capacity(self.n_units() * tt.saturating_sub(1));
        for u in 0..self.n_units() {
            let r = w.row(u);
            for t in 1..tt {
                data.push(r[t] - r[t - 1]);
            }
        }
        Ok(Matrix::new(self.n_units(), tt.saturating_sub(1), data))
    }

    /// Control columns at a given period, one row per unit.
    pub fn controls_at(&self, period: usize) -> Matrix {
        let x = self.base.controls();
        let idx: Vec<usize> = (0..self.n_units()).map(|u| self.row(u, period)).collect();
        x.select_rows(&idx)
    }

    /// Per-unit first-treatment period (`+inf` for never treated).
    pub fn groups(&self) -> Result<Vec<f64>> {
        let g = self.base.group()?;
        Ok((0..self.n_units()).map(|u| g[self.row(u, 0)]).collect())
    }

    /// Per-unit values of a column at one period.
    pub fn at_period(&self, column: &str, period: usize) -> Result<Vec<f64>> {
        let w = self.wide(column)?;
        Ok((0..self.n_units()).map(|u| w.get(u, period)).collect())
    }
}
