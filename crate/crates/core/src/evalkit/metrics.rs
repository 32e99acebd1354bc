//! MAE / RMSE / accuracy restricted to masked entries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ndcore::{Mask, Matrix};
use crate::tabular::{Cell, ColumnKind, Standardization, TabularDataset};
use crate::{Error, Result};

fn masked_errors(pred: &Matrix, truth: &Matrix, mask: &Mask) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() || mask.shape() != pred.shape() {
        return Err(Error::shape(
            "metric",
            format!("pred {:?}, truth {:?}, mask {:?}", pred.shape(), truth.shape(), mask.shape()),
        ));
    }
    let errs: Vec<f64> = pred
        .data()
        .iter()
        .zip(truth.data())
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|((p, t), _)| p - t)
        .collect();
    if errs.is_empty() {
        return Err(Error::InvalidArgument("no masked entries to evaluate".into()));
    }
    Ok(errs)
}

fn mean_abs(errs: &[f64]) -> f64 {
    errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64
}

fn root_mean_sq(errs: &[f64]) -> f64 {
    (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
}

/// Mean absolute error over the entries flagged in `mask`.
pub fn mae(pred: &Matrix, truth: &Matrix, mask: &Mask) -> Result<f64> {
    masked_errors(pred, truth, mask).map(|e| mean_abs(&e))
}

/// Root mean squared error over the entries flagged in `mask`.
pub fn rmse(pred: &Matrix, truth: &Matrix, mask: &Mask) -> Result<f64> {
    masked_errors(pred, truth, mask).map(|e| root_mean_sq(&e))
}

fn check_pair(pred: &TabularDataset, truth: &TabularDataset, mask: &Mask) -> Result<()> {
    if pred.specs != truth.specs {
        return Err(Error::Data("imputed and ground-truth schemas differ".into()));
    }
    if pred.n_rows() != truth.n_rows() || mask.shape() != (truth.n_rows(), truth.n_cols()) {
        return Err(Error::shape(
            "metric",
            format!(
                "pred {} rows, truth {} rows, mask {:?}",
                pred.n_rows(),
                truth.n_rows(),
                mask.shape()
            ),
        ));
    }
    Ok(())
}

/// Fraction of masked categorical cells whose category matches the truth.
pub fn accuracy(pred: &TabularDataset, truth: &TabularDataset, mask: &Mask) -> Result<f64> {
    check_pair(pred, truth, mask)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (c, spec) in truth.specs.iter().enumerate() {
        if spec.kind != ColumnKind::Categorical {
            continue;
        }
        for r in 0..truth.n_rows() {
            if mask.is_missing(r, c) {
                total += 1;
                hit += usize::from(pred.rows[r][c] == truth.rows[r][c]);
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no masked categorical cells to evaluate".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Numeric errors are divided by the column's standard deviation in
/// `Standardized` scale and reported as-is in `Raw` scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Standardized,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMetrics {
    pub kind: ColumnKind,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scale: Scale,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub accuracy: Option<f64>,
    pub n_continuous: usize,
    pub n_categorical: usize,
    pub columns: BTreeMap<String, ColumnMetrics>,
}

/// Full report over the cells flagged in the cell-level `mask`. Numeric
/// errors are scaled by the column std from `stats` in standardized scale.
pub fn evaluate(
    pred: &TabularDataset,
    truth: &TabularDataset,
    mask: &Mask,
    stats: &Standardization,
    scale: Scale,
) -> Result<MetricReport> {
    check_pair(pred, truth, mask)?;
    if stats.spans.len() != truth.n_cols() {
        return Err(Error::Data("standardization does not match the schema".into()));
    }
    let mut all_errs = Vec::new();
    let (mut hits, mut n_cat) = (0usize, 0usize);
    let mut columns = BTreeMap::new();
    for (c, spec) in truth.specs.iter().enumerate() {
        let rows: Vec<usize> = (0..truth.n_rows()).filter(|&r| mask.is_missing(r, c)).collect();
        if rows.is_empty() {
            continue;
        }
        let metrics = match spec.kind {
            ColumnKind::Numeric => {
                let div = match scale {
                    Scale::Standardized => stats.col_stds[stats.spans[c].start],
                    Scale::Raw => 1.0,
                };
                let errs = rows
                    .iter()
                    .map(|&r| match (pred.rows[r][c], truth.rows[r][c]) {
                        (Cell::Numeric(p), Cell::Numeric(t)) => Ok((p - t) / div),
                        (p, t) => Err(Error::Data(format!(
                            "row {r}, column '{}': cannot compare {p:?} with {t:?}",
                            spec.name
                        ))),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let m = ColumnMetrics {
                    kind: spec.kind,
                    count: errs.len(),
                    mae: Some(mean_abs(&errs)),
                    rmse: Some(root_mean_sq(&errs)),
                    accuracy: None,
                };
                all_errs.extend(errs);
                m
            }
            ColumnKind::Categorical => {
                let mut h = 0;
                for &r in &rows {
                    if truth.rows[r][c].is_missing() {
                        return Err(Error::Data(format!(
                            "row {r}, column '{}': ground truth is missing",
                            spec.name
                        )));
                    }
                    h += usize::from(pred.rows[r][c] == truth.rows[r][c]);
                }
                hits += h;
                n_cat += rows.len();
                ColumnMetrics {
                    kind: spec.kind,
                    count: rows.len(),
                    mae: None,
                    rmse: None,
                    accuracy: Some(h as f64 / rows.len() as f64),
                }
            }
        };
        columns.insert(spec.name.clone(), metrics);
    }
    if all_errs.is_empty() && n_cat == 0 {
        return Err(Error::InvalidArgument(
            "mask flags no cells, so there is nothing to evaluate".into(),
        ));
    }
    let cont = (!all_errs.is_empty()).then_some(&all_errs);
    Ok(MetricReport {
        scale,
        mae: cont.map(|e| mean_abs(e)),
        rmse: cont.map(|e| root_mean_sq(e)),
        accuracy: (n_cat > 0).then(|| hits as f64 / n_cat as f64),
        n_continuous: all_errs.len(),
        n_categorical: n_cat,
        columns,
    })
}
