//! Tabular input, column roles, validation and sample partitioning.

mod folds;
mod panel;

pub use folds::{make_folds, FoldPartition};
pub use panel::{build_panel, PanelDataset};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DmlError, Result};
use crate::matrix::Matrix;
use crate::scores::ScoreKind;

/// The part a column plays in a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Outcome,
    Treatment,
    Instrument,
    Controls,
    Unit,
    Time,
    Group,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Outcome => "outcome",
            Role::Treatment => "treatment",
            Role::Instrument => "instrument",
            Role::Controls => "controls",
            Role::Unit => "unit",
            Role::Time => "time",
            Role::Group => "group",
        };
        f.write_str(s)
    }
}

/// Mapping from roles to column names, as written in the run config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument: Option<String>,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<String>,
    /// First-treatment period; never-treated units are coded `0` or `inf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl Schema {
    /// Every (role, column) pair named by the schema.
    pub fn columns(&self) -> Vec<(Role, &str)> {
        let mut out = Vec::new();
        let singles = [
            (Role::Outcome, &self.outcome),
            (Role::Treatment, &self.treatment),
            (Role::Instrument, &self.instrument),
            (Role::Unit, &self.unit),
            (Role::Time, &self.time),
            (Role::Group, &self.group),
        ];
        for (role, col) in singles {
            if let Some(c) = col {
                out.push((role, c.as_str()));
            }
        }
        for c in &self.controls {
            out.push((Role::Controls, c.as_str()));
        }
        out
    }

    pub fn has(&self, role: Role) -> bool {
        match role {
            Role::Outcome => self.outcome.is_some(),
            Role::Treatment => self.treatment.is_some(),
            Role::Instrument => self.instrument.is_some(),
            Role::Controls => !self.controls.is_empty(),
            Role::Unit => self.unit.is_some(),
            Role::Time => self.time.is_some(),
            Role::Group => self.group.is_some(),
        }
    }
}

/// A rectangular numeric sample with column roles.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    columns: BTreeMap<String, Vec<f64>>,
    schema: Schema,
}

impl Dataset {
    /// Builds a dataset from named columns. All columns must share one length,
    /// every schema column must be present and role columns must be finite
    /// (the group column may hold `+inf` for never-treated units).
    pub fn new(columns: Vec<(String, Vec<f64>)>, schema: Schema) -> Result<Self> {
        let n = columns.first().map_or(0, |(_, v)| v.len());
        let mut map = BTreeMap::new();
        for (name, values) in columns {
            if values.len() != n {
                return Err(DmlError::validation(format!(
                    "column '{name}' has {} rows, expected {n}",
                    values.len()
                )));
            }
            map.insert(name, values);
        }
        for (role, col) in schema.columns() {
            let values = map.get(col).ok_or_else(|| {
                DmlError::Schema(format!("{role} column '{col}' not found"))
            })?;
            for (i, v) in values.iter().enumerate() {
                let ok = v.is_finite() || (role == Role::Group && *v == f64::INFINITY);
                if !ok {
                    return Err(DmlError::validation(format!(
                        "non-finite value in {role} column '{col}' at row {}",
                        i + 1
                    )));
                }
            }
        }
        if let Some(g) = &schema.group {
            // never-treated may be coded as 0; store them as +inf
            if let Some(v) = map.get_mut(g) {
                for x in v.iter_mut() {
                    if *x <= 0.0 {
                        *x = f64::INFINITY;
                    }
                }
            }
        }
        Ok(Self {
            n,
            columns: map,
            schema,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    fn role_column(&self, role: Role, name: &Option<String>) -> Result<&[f64]> {
        let col = name
            .as_deref()
            .ok_or_else(|| DmlError::Schema(format!("role {role} required")))?;
        self.column(col)
            .ok_or_else(|| DmlError::Schema(format!("{role} column '{col}' not found")))
    }

    pub fn outcome(&self) -> Result<&[f64]> {
        self.role_column(Role::Outcome, &self.schema.outcome)
    }

    pub fn treatment(&self) -> Result<&[f64]> {
        self.role_column(Role::Treatment, &self.schema.treatment)
    }

    pub fn instrument(&self) -> Result<&[f64]> {
        self.role_column(Role::Instrument, &self.schema.instrument)
    }

    pub fn unit(&self) -> Result<&[f64]> {
        self.role_column(Role::Unit, &self.schema.unit)
    }

    pub fn time(&self) -> Result<&[f64]> {
        self.role_column(Role::Time, &self.schema.time)
    }

    pub fn group(&self) -> Result<&[f64]> {
        self.role_column(Role::Group, &self.schema.group)
    }

    /// Control columns as an `n x p` matrix (possibly `p = 0`).
    pub fn controls(&self) -> Matrix {
        let cols: Vec<&[f64]> = self
            .schema
            .controls
            .iter()
            .map(|c| self.columns[c].as_slice())
            .collect();
        Matrix::from_columns(self.n, &cols)
    }

    /// A copy restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|(k, v)| (k.clone(), rows.iter().map(|&i| v[i]).collect()))
            .collect();
        Dataset {
            n: rows.len(),
            columns,
            schema: self.schema.clone(),
        }
    }

    /// Replaces (or adds) a column.
    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Dataset> {
        if values.len() != self.n {
            return Err(DmlError::validation(format!(
                "column '{name}' has {} rows, expected {}",
                values.len(),
                self.n
            )));
        }
        self.columns.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn with_schema(mut self, schema: Schema) -> Result<Dataset> {
        let columns = std::mem::take(&mut self.columns).into_iter().collect();
        Dataset::new(columns, schema)
    }

    /// Writes all columns to a CSV file (shortest round-trip float formatting).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let names: Vec<&String> = self.columns.keys().collect();
        w.write_record(names.iter().map(|s| s.as_str()))?;
        for i in 0..self.n {
            w.write_record(names.iter().map(|k| format_cell(self.columns[*k][i])))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn format_cell(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Reads a comma-delimited file with a header row.
///
/// Only columns named by `schema` are parsed; other columns are ignored. Row
/// numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    load_csv_with(path, schema, &[])
}

/// Like [`load_csv`], also keeping the named `extra` columns (for example a
/// weight column) under the same missing-value and parse rules.
pub fn load_csv_with(path: impl AsRef<Path>, schema: &Schema, extra: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut wanted: Vec<(String, String, usize)> = Vec::new();
    let named = schema
        .columns()
        .into_iter()
        .map(|(role, col)| (role.to_string(), col))
        .chain(extra.iter().map(|c| ("extra".to_string(), c.as_str())));
    for (role, col) in named {
        let idx = headers.iter().position(|h| h == col).ok_or_else(|| {
            DmlError::Schema(format!(
                "{role} column '{col}' not found in {}",
                path.display()
            ))
        })?;
        if !wanted.iter().any(|(_, c, _)| c == col) {
            wanted.push((role, col.to_string(), idx));
        }
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        for (k, (role, col, idx)) in wanted.iter().enumerate() {
            let cell = record.get(*idx).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
            {
                return Err(DmlError::validation(format!(
                    "missing value in {role} column '{col}' at row {row}"
                )));
            }
            let v: f64 = cell.parse().map_err(|_| DmlError::Parse {
                row,
                column: col.clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            values[k].push(v);
        }
    }
    let columns = wanted
        .into_iter()
        .zip(values)
        .map(|((_, col, _), v)| (col, v))
        .collect();
    Dataset::new(columns, schema.clone())
}

fn require(ds: &Dataset, role: Role) -> Result<()> {
    if ds.schema.has(role) {
        Ok(())
    } else {
        Err(DmlError::validation(format!("role {role} required")))
    }
}

fn require_binary(ds: &Dataset, role: Role, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(DmlError::validation(format!(
            "{role} must be binary (0/1); row {} has value {}",
            i + 1,
            values[i]
        )));
    }
    let _ = ds;
    Ok(())
}

/// Checks that `ds` provides every role the score needs, with binary roles
/// holding only 0/1.
pub fn validate(ds: &Dataset, kind: ScoreKind) -> Result<()> {
    use ScoreKind::*;
    match kind {
        AteDr | AteIpw | AteRa | AttDr => {
            require(ds, Role::Outcome)?;
            require(ds, Role::Treatment)?;
            require_binary(ds, Role::Treatment, ds.treatment()?)?;
        }
        Wapo => {
            require(ds, Role::Outcome)?;
            require(ds, Role::Treatment)?;
        }
        LateDr => {
            require(ds, Role::Outcome)?;
            require(ds, Role::Treatment)?;
            require(ds, Role::Instrument)?;
            require_binary(ds, Role::Instrument, ds.instrument()?)?;
        }
        Plr => {
            require(ds, Role::Outcome)?;
            require(ds, Role::Treatment)?;
        }
        Pliv | PlivFlex => {
            require(ds, Role::Outcome)?;
            require(ds, Role::Treatment)?;
            require(ds, Role::Instrument)?;
        }
        FePlr => {
            if !(ds.schema.has(Role::Unit) && ds.schema.has(Role::Time)) {
                return Err(DmlError::validation("roles unit,time required"));
            }
            require(ds, Role::Outcome)?;
            require(ds, Role::Treatment)?;
        }
        GtAtt => {
            if !(ds.schema.has(Role::Unit) && ds.schema.has(Role::Time) && ds.schema.has(Role::Group))
            {
                return Err(DmlError::validation("roles unit,time,group required"));
            }
            require(ds, Role::Outcome)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn schema_ydx() -> Schema {
        Schema {
            outcome: Some("y".into()),
            treatment: Some("d".into()),
            controls: vec!["x".into()],
            ..Default::default()
        }
    }

    #[test]
    fn loads_four_rows() {
        let f = write_tmp("y,d,x\n1,0,0.5\n2,1,1.5\n3,0,2.5\n4,1,3.5\n");
        let ds = load_csv(f.path(), &schema_ydx()).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.outcome().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ds.controls().row(2), &[2.5]);
    }

    #[test]
    fn non_binary_treatment_fails_validation_not_load() {
        let f = write_tmp("y,d,x\n1,0,0\n2,1,1\n3,2,2\n");
        let ds = load_csv(f.path(), &schema_ydx()).unwrap();
        let err = validate(&ds, ScoreKind::AteDr).unwrap_err();
        assert!(err.to_string().contains("binary"), "{err}");
        assert!(validate(&ds, ScoreKind::Plr).is_ok());
    }

    #[test]
    fn blank_cell_names_row() {
        let f = write_tmp("y,d,x\n1,0,0\n,1,1\n");
        let err = load_csv(f.path(), &schema_ydx()).unwrap_err();
        assert!(matches!(err, DmlError::Validation(_)));
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn non_numeric_cell_is_parse_error() {
        let f = write_tmp("y,d,x\n1,0,abc\n");
        match load_csv(f.path(), &schema_ydx()).unwrap_err() {
            DmlError::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "x");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_tmp("y,x\n1,0\n");
        let err = load_csv(f.path(), &schema_ydx()).unwrap_err();
        assert!(matches!(err, DmlError::Schema(_)), "{err}");
    }

    #[test]
    fn role_requirements() {
        let ds = Dataset::new(
            vec![("y".into(), vec![1.0, 2.0]), ("x".into(), vec![0.0, 1.0])],
            Schema {
                outcome: Some("y".into()),
                controls: vec!["x".into()],
                ..Default::default()
            },
        )
        .unwrap();
        let err = validate(&ds, ScoreKind::AteDr).unwrap_err();
        assert!(err.to_string().contains("role treatment required"), "{err}");
        let err = validate(&ds, ScoreKind::GtAtt).unwrap_err();
        assert!(err.to_string().contains("roles unit,time,group required"), "{err}");

        let ds = Dataset::new(
            vec![
                ("y".into(), vec![1.0, 2.0]),
                ("d".into(), vec![0.3, 1.0]),
                ("z".into(), vec![0.0, 1.0]),
                ("x".into(), vec![0.0, 1.0]),
            ],
            Schema {
                outcome: Some("y".into()),
                treatment: Some("d".into()),
                instrument: Some("z".into()),
                controls: vec!["x".into()],
                ..Default::default()
            },
        )
        .unwrap();
        assert!(validate(&ds, ScoreKind::Pliv).is_ok());
    }

    #[test]
    fn never_treated_coded_zero_becomes_infinite() {
        let ds = Dataset::new(
            vec![("y".into(), vec![1.0, 2.0]), ("g".into(), vec![0.0, 3.0])],
            Schema {
                outcome: Some("y".into()),
                group: Some("g".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.group().unwrap(), &[f64::INFINITY, 3.0]);
    }
}
