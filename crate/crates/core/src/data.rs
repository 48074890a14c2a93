//! Canonical in-memory dataset and CSV ingestion.
//!
//! A [`Dataset`] is immutable after construction: a covariate matrix with
//! retained column names, a treatment vector, an optional response vector,
//! and strictly positive sampling weights (all ones by default).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column selection for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub treatment_col: String,
    pub response_col: Option<String>,
    pub weight_col: Option<String>,
    pub covariate_cols: Vec<String>,
    /// Subset of `covariate_cols` to expand into indicator columns.
    pub factor_cols: Vec<String>,
}

impl ColumnSpec {
    pub fn new(treatment: &str, response: Option<&str>, covariates: &[&str]) -> Self {
        ColumnSpec {
            treatment_col: treatment.to_string(),
            response_col: response.map(|s| s.to_string()),
            weight_col: None,
            covariate_cols: covariates.iter().map(|s| s.to_string()).collect(),
            factor_cols: Vec::new(),
        }
    }

    pub fn with_weights(mut self, col: &str) -> Self {
        self.weight_col = Some(col.to_string());
        self
    }

    pub fn with_factors(mut self, cols: &[&str]) -> Self {
        self.factor_cols = cols.iter().map(|s| s.to_string()).collect();
        self
    }

    fn validate(&self) -> Result<()> {
        if self.covariate_cols.is_empty() {
            return Err(Error::InvalidArgument(
                "covariate_cols must be non-empty".into(),
            ));
        }
        let mut names = vec![self.treatment_col.clone()];
        if let Some(r) = &self.response_col {
            names.push(r.clone());
        }
        if let Some(w) = &self.weight_col {
            names.push(w.clone());
        }
        names.extend(self.covariate_cols.iter().cloned());
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::InvalidArgument(
                "column selection names must be disjoint".into(),
            ));
        }
        for f in &self.factor_cols {
            if !self.covariate_cols.contains(f) {
                return Err(Error::InvalidArgument(format!(
                    "factor column '{}' is not among covariate_cols",
                    f
                )));
            }
        }
        Ok(())
    }
}

/// Immutable rectangular dataset; safe to share read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariate_names: Vec<String>,
    covariates: DMatrix<f64>,
    treatment: Vec<f64>,
    response: Option<Vec<f64>>,
    weights: Vec<f64>,
}

impl Dataset {
    pub fn new(
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
        treatment: Vec<f64>,
        response: Option<Vec<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 rows, got {}",
                n
            )));
        }
        if covariates.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariates have {} rows, treatment has {}",
                covariates.nrows(),
                n
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        if let Some(r) = &response {
            if r.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "response has {} rows, treatment has {}",
                    r.len(),
                    n
                )));
            }
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "weights have {} rows, treatment has {}",
                weights.len(),
                n
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidData(
                "weights must be strictly positive and finite".into(),
            ));
        }
        let all_finite = treatment.iter().all(|v| v.is_finite())
            && covariates.iter().all(|v| v.is_finite())
            && response
                .as_ref()
                .is_none_or(|r| r.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::InvalidData(
                "non-finite value in a retained column".into(),
            ));
        }
        Ok(Dataset {
            covariate_names,
            covariates,
            treatment,
            response,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn covariate_column(&self, j: usize) -> Vec<f64> {
        self.covariates.column(j).iter().copied().collect()
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }

    /// Response vector, or an error when the dataset was loaded without one.
    pub fn response_required(&self) -> Result<&[f64]> {
        self.response
            .as_deref()
            .ok_or_else(|| Error::InvalidData("dataset has no response column".into()))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// New dataset formed by the given row indices (with repetition allowed);
    /// all weights reset to one. Used by resampling.
    pub fn select_rows_unit_weights(&self, idx: &[usize]) -> Dataset {
        let m = idx.len();
        let p = self.p();
        let mut cov = DMatrix::zeros(m, p);
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..p {
                cov[(r, j)] = self.covariates[(i, j)];
            }
        }
        Dataset {
            covariate_names: self.covariate_names.clone(),
            covariates: cov,
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            response: self
                .response
                .as_ref()
                .map(|y| idx.iter().map(|&i| y[i]).collect()),
            weights: vec![1.0; m],
        }
    }

    /// Writes the dataset as CSV with columns: covariates, `t`, `y` (when
    /// present), `w`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = self.covariate_names.clone();
        header.push("t".into());
        if self.response.is_some() {
            header.push("y".into());
        }
        header.push("w".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut fields: Vec<String> = (0..self.p())
                .map(|j| format!("{}", self.covariates[(i, j)]))
                .collect();
            fields.push(format!("{}", self.treatment[i]));
            if let Some(y) = &self.response {
                fields.push(format!("{}", y[i]));
            }
            fields.push(format!("{}", self.weights[i]));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Column spec matching the layout produced by [`Dataset::write_csv`].
    pub fn written_column_spec(&self) -> ColumnSpec {
        ColumnSpec {
            treatment_col: "t".into(),
            response_col: self.response.as_ref().map(|_| "y".to_string()),
            weight_col: Some("w".into()),
            covariate_cols: self.covariate_names.clone(),
            factor_cols: Vec::new(),
        }
    }
}

/// Result of CSV ingestion: the dataset plus the number of rows dropped by
/// the complete-case filter.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "NA"
}

fn parse_numeric(field: &str, column: &str, row: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
        column: column.to_string(),
        value: field.to_string(),
        row,
    })
}

/// Loads an RFC 4180 CSV file with a header row. Rows with a missing value
/// (empty field or `NA`) in any selected column are dropped; factor columns
/// expand into one indicator per non-reference level, the reference being
/// the lexicographically first level.
pub fn load_dataset(path: &Path, spec: &ColumnSpec) -> Result<LoadedData> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let t_idx = col_index(&spec.treatment_col)?;
    let y_idx = spec
        .response_col
        .as_ref()
        .map(|c| col_index(c))
        .transpose()?;
    let w_idx = spec.weight_col.as_ref().map(|c| col_index(c)).transpose()?;
    let cov_idx: Vec<usize> = spec
        .covariate_cols
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let is_factor: Vec<bool> = spec
        .covariate_cols
        .iter()
        .map(|c| spec.factor_cols.contains(c))
        .collect();

    let mut kept: Vec<csv::StringRecord> = Vec::new();
    let mut dropped = 0usize;
    let selected: Vec<usize> = {
        let mut s = vec![t_idx];
        s.extend(y_idx);
        s.extend(w_idx);
        s.extend(cov_idx.iter().copied());
        s
    };
    for record in reader.records() {
        let record = record?;
        if selected.iter().any(|&i| is_missing(record.get(i).unwrap_or(""))) {
            dropped += 1;
        } else {
            kept.push(record);
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidData(
            "zero rows remain after the complete-case filter".into(),
        ));
    }

    // Collect factor levels across kept rows; reference level is the
    // lexicographically first.
    let mut factor_levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (k, &ci) in cov_idx.iter().enumerate() {
        if !is_factor[k] {
            continue;
        }
        let mut levels: Vec<String> = kept
            .iter()
            .map(|r| r.get(ci).unwrap().trim().to_string())
            .collect();
        levels.sort();
        levels.dedup();
        factor_levels.insert(k, levels);
    }

    let mut out_names: Vec<String> = Vec::new();
    for (k, name) in spec.covariate_cols.iter().enumerate() {
        match factor_levels.get(&k) {
            Some(levels) => {
                for level in levels.iter().skip(1) {
                    out_names.push(format!("{}={}", name, level));
                }
            }
            None => out_names.push(name.clone()),
        }
    }

    let n = kept.len();
    let p = out_names.len();
    let mut covariates = DMatrix::zeros(n, p);
    let mut treatment = Vec::with_capacity(n);
    let mut response = y_idx.map(|_| Vec::with_capacity(n));
    let mut weights = w_idx.map(|_| Vec::with_capacity(n));

    for (row, record) in kept.iter().enumerate() {
        treatment.push(parse_numeric(
            record.get(t_idx).unwrap(),
            &spec.treatment_col,
            row,
        )?);
        if let (Some(resp), Some(yi)) = (&mut response, y_idx) {
            resp.push(parse_numeric(
                record.get(yi).unwrap(),
                spec.response_col.as_ref().unwrap(),
                row,
            )?);
        }
        if let (Some(wv), Some(wi)) = (&mut weights, w_idx) {
            wv.push(parse_numeric(
                record.get(wi).unwrap(),
                spec.weight_col.as_ref().unwrap(),
                row,
            )?);
        }
        let mut col = 0usize;
        for (k, &ci) in cov_idx.iter().enumerate() {
            let field = record.get(ci).unwrap();
            match factor_levels.get(&k) {
                Some(levels) => {
                    let value = field.trim();
                    for level in levels.iter().skip(1) {
                        covariates[(row, col)] = if value == level { 1.0 } else { 0.0 };
                        col += 1;
                    }
                }
                None => {
                    covariates[(row, col)] =
                        parse_numeric(field, &spec.covariate_cols[k], row)?;
                    col += 1;
                }
            }
        }
    }

    let dataset = Dataset::new(out_names, covariates, treatment, response, weights)?;
    Ok(LoadedData {
        dataset,
        dropped_rows: dropped,
    })
}
