//! Missingness masks under MCAR, MAR and MNAR.
//!
//! `true` marks a missing entry. MAR and MNAR use one logistic model per
//! maskable column, with weights drawn from N(0, I) and an intercept found
//! by bisection so the column's expected missing probability equals `r`.
//! All randomness comes from streams derived from the spec seed, one per
//! column, so masks are reproducible and independent of evaluation order.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ndcore::{Mask, Matrix};
use crate::rng::{derive_seed, derived, normal_matrix};
use crate::{Error, Result};

/// Intercept calibration tolerance, in probability.
pub const CALIBRATION_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub seed: u64,
    /// Always-observed conditioning columns (MAR only).
    #[serde(default)]
    pub observed_cols: Vec<usize>,
    /// Keep one entry observed in rows that would otherwise be fully masked.
    #[serde(default = "default_true")]
    pub ensure_observed: bool,
}

fn default_true() -> bool {
    true
}

impl MaskSpec {
    pub fn new(mechanism: Mechanism, ratio: f64, seed: u64) -> Self {
        Self {
            mechanism,
            ratio,
            seed,
            observed_cols: Vec::new(),
            ensure_observed: true,
        }
    }

    pub fn validate(&self, cols: usize) -> Result<()> {
        let r = self.ratio;
        let in_range = match self.mechanism {
            Mechanism::Mcar => (0.0..=1.0).contains(&r),
            _ => r > 0.0 && r < 1.0,
        };
        if !in_range {
            return Err(Error::InvalidArgument(format!(
                "missing ratio {r} out of range for {:?}",
                self.mechanism
            )));
        }
        if self.mechanism == Mechanism::Mar {
            check_observed_cols(&self.observed_cols, cols)?;
        }
        Ok(())
    }
}

/// Generated mask plus the number of rows the ensure-observed guard touched.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedMask {
    pub mask: Mask,
    pub guarded_rows: usize,
}

fn check_observed_cols(observed: &[usize], cols: usize) -> Result<()> {
    if observed.is_empty() || observed.len() >= cols {
        return Err(Error::InvalidArgument(format!(
            "MAR needs a nonempty proper subset of the {cols} columns as observed_cols, got {observed:?}"
        )));
    }
    for (i, &c) in observed.iter().enumerate() {
        if c >= cols || observed[..i].contains(&c) {
            return Err(Error::InvalidArgument(format!(
                "observed_cols {observed:?} has an invalid or repeated index for {cols} columns"
            )));
        }
    }
    Ok(())
}

/// Every entry missing independently with probability `r`. Never reads data.
pub fn mcar(rows: usize, cols: usize, r: f64, seed: u64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("MCAR ratio {r} outside [0, 1]")));
    }
    let mut rng = derived(seed, "mcar", &[]);
    let bits = (0..rows * cols).map(|_| rng.random::<f64>() < r).collect();
    Mask::from_vec(rows, cols, bits)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn mean_probability(logits: &[f64], b: f64) -> f64 {
    logits.iter().map(|z| sigmoid(z + b)).sum::<f64>() / logits.len() as f64
}

/// Intercept `b` with `mean(sigmoid(logits + b))` within the calibration
/// tolerance of `r`, found by bisection.
pub fn calibrate_intercept(logits: &[f64], r: f64) -> Result<f64> {
    if logits.is_empty() || !(r > 0.0 && r < 1.0) {
        return Err(Error::Calibration(format!(
            "cannot calibrate to ratio {r} over {} rows",
            logits.len()
        )));
    }
    let spread = logits.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let logit_r = (r / (1.0 - r)).ln();
    let (mut lo, mut hi) = (logit_r - spread - 40.0, logit_r + spread + 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = mean_probability(logits, mid);
        if (p - r).abs() <= CALIBRATION_TOL {
            return Ok(mid);
        }
        if p < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not reach ratio {r} within {CALIBRATION_TOL} (last {:.6})",
        mean_probability(logits, 0.5 * (lo + hi))
    )))
}

/// Column-standardized copy; NaN entries become 0 (the column mean).
fn standardize_columns(data: &Matrix) -> Matrix {
    let (n, d) = data.shape();
    let mut out = data.clone();
    for c in 0..d {
        let vals: Vec<f64> = (0..n).map(|r| data.get(r, c)).filter(|v| v.is_finite()).collect();
        let m = vals.len().max(1) as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        let std = if std > 0.0 { std } else { 1.0 };
        for r in 0..n {
            let v = data.get(r, c);
            out.set(r, c, if v.is_finite() { (v - mean) / std } else { 0.0 });
        }
    }
    out
}

/// Per-column logistic weights, `inputs × targets`, from N(0, 1).
pub fn draw_logistic_weights(n_inputs: usize, targets: &[usize], tag: &str, seed: u64) -> Matrix {
    let mut w = Matrix::zeros(n_inputs, targets.len());
    for (k, &c) in targets.iter().enumerate() {
        let col = normal_matrix(n_inputs, 1, 1.0, &mut derived(seed, tag, &[c as u64]));
        for i in 0..n_inputs {
            w.set(i, k, col.get(i, 0));
        }
    }
    w
}

/// Logistic masking of the `targets` columns of a `rows × cols` mask: column
/// `targets[k]` is missing with probability `sigmoid(inputs·w[:, k] + b_k)`,
/// each `b_k` calibrated to `r`.
pub fn logistic_mask(inputs: &Matrix, weights: &Matrix, targets: &[usize], cols: usize, r: f64, seed: u64) -> Result<Mask> {
    if weights.rows() != inputs.cols() || weights.cols() != targets.len() {
        return Err(Error::shape(
            "logistic_mask",
            format!(
                "weights {:?} for {} inputs and {} targets",
                weights.shape(),
                inputs.cols(),
                targets.len()
            ),
        ));
    }
    let rows = inputs.rows();
    let logits = inputs.matmul(weights)?;
    let columns: Vec<(usize, Vec<bool>)> = targets
        .par_iter()
        .enumerate()
        .map(|(k, &c)| {
            let z: Vec<f64> = (0..rows).map(|i| logits.get(i, k)).collect();
            let b = calibrate_intercept(&z, r)?;
            let mut rng = derived(seed, "logistic-draw", &[c as u64]);
            let bits = z.iter().map(|zi| rng.random::<f64>() < sigmoid(zi + b)).collect();
            Ok((c, bits))
        })
        .collect::<Result<_>>()?;
    let mut mask = Mask::none(rows, cols);
    for (c, bits) in columns {
        for (i, m) in bits.into_iter().enumerate() {
            mask.set(i, c, m);
        }
    }
    Ok(mask)
}

/// MAR: `observed_cols` stay observed; every other column is masked by a
/// logistic model of the standardized observed columns.
pub fn mar(data: &Matrix, r: f64, observed_cols: &[usize], seed: u64) -> Result<Mask> {
    check_observed_cols(observed_cols, data.cols())?;
    let z = standardize_columns(data);
    let mut inputs = Matrix::zeros(data.rows(), observed_cols.len());
    for i in 0..data.rows() {
        for (k, &c) in observed_cols.iter().enumerate() {
            inputs.set(i, k, z.get(i, c));
        }
    }
    let targets: Vec<usize> = (0..data.cols()).filter(|c| !observed_cols.contains(c)).collect();
    let weights = draw_logistic_weights(inputs.cols(), &targets, "mar-weights", seed);
    logistic_mask(&inputs, &weights, &targets, data.cols(), r, derive_seed(seed, "mar", &[]))
}

/// MNAR: an MCAR self-mask at rate `r` hides entries, the hidden entries
/// are zeroed in the standardized data, and every column is then masked by
/// a logistic model of that self-masked input.
pub fn mnar(data: &Matrix, r: f64, seed: u64) -> Result<Mask> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!("MNAR ratio {r} outside (0, 1)")));
    }
    let self_mask = mcar(data.rows(), data.cols(), r, derive_seed(seed, "mnar-self", &[]))?;
    let mut inputs = standardize_columns(data);
    for i in 0..data.rows() {
        for c in 0..data.cols() {
            if self_mask.is_missing(i, c) {
                inputs.set(i, c, 0.0);
            }
        }
    }
    let targets: Vec<usize> = (0..data.cols()).collect();
    let weights = draw_logistic_weights(data.cols(), &targets, "mnar-weights", seed);
    logistic_mask(&inputs, &weights, &targets, data.cols(), r, derive_seed(seed, "mnar", &[]))
}

/// Unmasks one uniformly chosen entry in every fully masked row; returns
/// the number of rows changed.
pub fn ensure_observed(mask: &mut Mask, seed: u64) -> usize {
    if mask.cols() == 0 {
        return 0;
    }
    let mut guarded = 0;
    for i in 0..mask.rows() {
        if mask.row(i).iter().all(|&m| m) {
            let c = derived(seed, "ensure-observed", &[i as u64]).random_range(0..mask.cols());
            mask.set(i, c, false);
            guarded += 1;
        }
    }
    guarded
}

/// Mask for `data` under `spec`, with the ensure-observed guard applied
/// when enabled. MCAR only uses the shape of `data`.
pub fn generate(spec: &MaskSpec, data: &Matrix) -> Result<GeneratedMask> {
    spec.validate(data.cols())?;
    let mut mask = match spec.mechanism {
        Mechanism::Mcar => mcar(data.rows(), data.cols(), spec.ratio, spec.seed)?,
        Mechanism::Mar => mar(data, spec.ratio, &spec.observed_cols, spec.seed)?,
        Mechanism::Mnar => mnar(data, spec.ratio, spec.seed)?,
    };
    let guarded_rows = if spec.ensure_observed {
        ensure_observed(&mut mask, spec.seed)
    } else {
        0
    };
    if guarded_rows > 0 {
        log::warn!("ensure-observed guard kept one entry in {guarded_rows} fully masked rows");
    }
    Ok(GeneratedMask { mask, guarded_rows })
}
