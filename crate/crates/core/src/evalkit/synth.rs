//! Gaussian and Gaussian-mixture benchmarks whose conditional means are
//! known in closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ndcore::{Mask, Matrix};
use crate::rng::{derived, standard_normal};
use crate::tabular::{Cell, ColumnSpec, TabularDataset};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    GaussianMixture { components: Vec<Component> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub family: Family,
    pub rows: usize,
    pub seed: u64,
}

fn equicorrelated(dim: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

impl SyntheticSpec {
    /// Zero-mean, unit-marginal Gaussian with every pairwise correlation `rho`.
    pub fn gaussian(dim: usize, rho: f64, rows: usize, seed: u64) -> Self {
        Self {
            family: Family::Gaussian {
                mean: vec![0.0; dim],
                cov: equicorrelated(dim, rho),
            },
            rows,
            seed,
        }
    }

    /// Equal-weight two-component 4D mixture with opposite-sign means and
    /// differently correlated components, so the conditional mean is
    /// strongly nonlinear.
    pub fn two_component_mixture(rows: usize, seed: u64) -> Self {
        Self {
            family: Family::GaussianMixture {
                components: vec![
                    Component {
                        weight: 0.5,
                        mean: vec![2.0, -2.0, 2.0, -2.0],
                        cov: equicorrelated(4, 0.6),
                    },
                    Component {
                        weight: 0.5,
                        mean: vec![-2.0, 2.0, -2.0, 2.0],
                        cov: equicorrelated(4, -0.2),
                    },
                ],
            },
            rows,
            seed,
        }
    }

    pub fn components(&self) -> Vec<Component> {
        match &self.family {
            Family::Gaussian { mean, cov } => vec![Component {
                weight: 1.0,
                mean: mean.clone(),
                cov: cov.clone(),
            }],
            Family::GaussianMixture { components } => components.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components().first().map_or(0, |c| c.mean.len())
    }
}

struct Prepared {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

fn prepare(components: &[Component]) -> Result<Vec<Prepared>> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("synthetic spec has no components".into()));
    }
    let d = components[0].mean.len();
    if d == 0 {
        return Err(Error::InvalidArgument("synthetic dimension must be positive".into()));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 || components.iter().any(|c| !(c.weight > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "mixture weights must be positive and sum to 1, got sum {total}"
        )));
    }
    components
        .iter()
        .enumerate()
        .map(|(k, c)| {
            if c.mean.len() != d || c.cov.len() != d || c.cov.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidArgument(format!("component {k}: inconsistent dimensions")));
            }
            let cov = DMatrix::from_fn(d, d, |i, j| c.cov[i][j]);
            if (&cov - cov.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidArgument(format!("component {k}: covariance is not symmetric")));
            }
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("component {k}: covariance is not positive definite"))
                })?
                .l();
            Ok(Prepared {
                weight: c.weight,
                mean: DVector::from_vec(c.mean.clone()),
                cov,
                chol,
            })
        })
        .collect()
}

/// Analytic conditional-mean oracle for a synthetic spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub components: Vec<Component>,
    /// Per-column std of `x_j` given all other columns (single Gaussian only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_std: Option<Vec<f64>>,
    /// `residual_std · √(2/π)`, the MAE of the exact conditional mean.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mae: Option<Vec<f64>>,
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn subvec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

impl Oracle {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let prepared = prepare(&components)?;
        let residual_std = (prepared.len() == 1).then(|| {
            let prec = prepared[0]
                .cov
                .clone()
                .cholesky()
                .expect("validated positive definite")
                .inverse();
            (0..prec.nrows()).map(|j| (1.0 / prec[(j, j)]).sqrt()).collect::<Vec<f64>>()
        });
        let oracle_mae = residual_std
            .as_ref()
            .map(|s| s.iter().map(|s| s * (2.0 / std::f64::consts::PI).sqrt()).collect());
        Ok(Self {
            components,
            residual_std,
            oracle_mae,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// `x` with its `missing` coordinates replaced by `E[x_mis | x_obs]`:
    /// per component `μ_m + Σ_mo Σ_oo⁻¹ (x_o − μ_o)`, weighted by the
    /// posterior responsibilities of the observed coordinates.
    pub fn conditional_mean(&self, x: &[f64], missing: &[bool]) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d || missing.len() != d {
            return Err(Error::shape("Oracle::conditional_mean", format!("expected {d} coordinates")));
        }
        let mis: Vec<usize> = (0..d).filter(|&j| missing[j]).collect();
        let obs: Vec<usize> = (0..d).filter(|&j| !missing[j]).collect();
        let mut out = x.to_vec();
        if mis.is_empty() {
            return Ok(out);
        }
        let prepared = prepare(&self.components)?;
        let xo = DVector::from_fn(obs.len(), |i, _| x[obs[i]]);
        let mut log_w = Vec::with_capacity(prepared.len());
        let mut cond = Vec::with_capacity(prepared.len());
        for p in &prepared {
            let mu_m = subvec(&p.mean, &mis);
            if obs.is_empty() {
                log_w.push(p.weight.ln());
                cond.push(mu_m);
                continue;
            }
            let s_oo = sub(&p.cov, &obs, &obs);
            let chol = s_oo.cholesky().expect("principal minor of a PD matrix");
            let diff = &xo - subvec(&p.mean, &obs);
            let solved = chol.solve(&diff);
            let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
            log_w.push(p.weight.ln() - 0.5 * (diff.dot(&solved) + log_det));
            cond.push(mu_m + sub(&p.cov, &mis, &obs) * solved);
        }
        let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        for (k, &j) in mis.iter().enumerate() {
            out[j] = w.iter().zip(&cond).map(|(wi, c)| wi * c[k]).sum::<f64>() / z;
        }
        Ok(out)
    }

    /// Row-wise [`Oracle::conditional_mean`] over a matrix and mask.
    pub fn conditional_mean_matrix(&self, x: &Matrix, mask: &Mask) -> Result<Matrix> {
        if mask.shape() != x.shape() {
            return Err(Error::shape("Oracle::conditional_mean_matrix", "mask and data differ"));
        }
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = self.conditional_mean(x.row(r), mask.row(r))?;
            out.row_mut(r).copy_from_slice(&row);
        }
        Ok(out)
    }
}

/// Samples `spec.rows` rows (columns `x1..xd`) and returns them with the
/// oracle for the generating distribution.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<(TabularDataset, Oracle)> {
    let components = spec.components();
    let prepared = prepare(&components)?;
    if spec.rows == 0 {
        return Err(Error::InvalidArgument("synthetic spec needs at least one row".into()));
    }
    let d = prepared[0].mean.len();
    let mut rng = derived(spec.seed, "synth", &[]);
    let mut rows = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = prepared.len() - 1;
        for (k, p) in prepared.iter().enumerate() {
            acc += p.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let p = &prepared[pick];
        let z = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
        let x = &p.mean + &p.chol * z;
        rows.push(x.iter().map(|&v| Cell::Numeric(v)).collect());
    }
    let specs = (1..=d).map(|j| ColumnSpec::numeric(format!("x{j}"))).collect();
    Ok((TabularDataset::new(specs, rows)?, Oracle::new(components)?))
}
