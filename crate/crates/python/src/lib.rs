//! Python bindings. Data crosses the boundary as lists of rows of floats,
//! with NaN marking a missing entry.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tabimpute::diffusion::{NoiseSchedule, SamplerConfig};
use tabimpute::emloop::{impute_out_of_sample, run_em, CheckpointOptions, EmConfig};
use tabimpute::evalkit;
use tabimpute::missingness::{self, MaskSpec, Mechanism};
use tabimpute::ndcore::{DenoiserParams, Mask, Matrix};
use tabimpute::tabular::{self, decode, encode, encode_with, Standardization, TabularDataset};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Err(err("expected at least one row"));
    }
    Matrix::from_rows(rows).map_err(err)
}

fn mask(rows: &[Vec<bool>]) -> PyResult<Mask> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(err("mask rows have different lengths"));
    }
    Mask::from_vec(rows.len(), cols, rows.concat()).map_err(err)
}

/// Decoded output with observed entries taken verbatim from the input, so
/// they survive without standardization round-off.
fn with_observed(input: &Matrix, decoded: Matrix) -> Vec<Vec<f64>> {
    let mut out = decoded;
    for (o, &v) in out.data_mut().iter_mut().zip(input.data()) {
        if !v.is_nan() {
            *o = v;
        }
    }
    out.to_rows()
}

fn column_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Analog-bit code of category `index` among `c` categories.
#[pyfunction]
fn analog_bits(index: usize, c: usize) -> PyResult<Vec<f64>> {
    tabular::analog_bits(index, c).map_err(err)
}

/// Category index of an analog-bit vector (threshold 0.5, clamped to c - 1).
#[pyfunction]
fn analog_bits_decode(bits: Vec<f64>, c: usize) -> usize {
    tabular::analog_bits_decode(&bits, c)
}

/// Descending sampler times, `steps + 1` values from T down to 0.
#[pyfunction]
#[pyo3(signature = (steps = 50, rho = 7.0))]
fn timestep_schedule(steps: usize, rho: f64) -> PyResult<Vec<f64>> {
    let cfg = SamplerConfig {
        steps,
        rho,
        ..SamplerConfig::default()
    };
    tabimpute::diffusion::timestep_schedule(&cfg, &NoiseSchedule::default()).map_err(err)
}

/// Boolean mask (True = missing) for `data` under MCAR, MAR or MNAR.
#[pyfunction]
#[pyo3(signature = (data, mechanism = "MCAR", ratio = 0.3, seed = 0, observed_cols = Vec::new(), ensure_observed = true))]
fn generate_mask(
    data: Vec<Vec<f64>>,
    mechanism: &str,
    ratio: f64,
    seed: u64,
    observed_cols: Vec<usize>,
    ensure_observed: bool,
) -> PyResult<Vec<Vec<bool>>> {
    let mechanism = match mechanism.to_ascii_uppercase().as_str() {
        "MCAR" => Mechanism::Mcar,
        "MAR" => Mechanism::Mar,
        "MNAR" => Mechanism::Mnar,
        other => return Err(err(format!("unknown mechanism '{other}'"))),
    };
    let x = matrix(&data)?;
    let spec = MaskSpec {
        mechanism,
        ratio,
        seed,
        observed_cols,
        ensure_observed,
    };
    let m = missingness::generate(&spec, &x).map_err(err)?.mask;
    Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
}

/// Mean absolute error over entries where `mask` is True.
#[pyfunction]
fn mae(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> PyResult<f64> {
    evalkit::mae(&matrix(&pred)?, &matrix(&truth)?, &self::mask(&mask)?).map_err(err)
}

/// Root mean squared error over entries where `mask` is True.
#[pyfunction]
fn rmse(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> PyResult<f64> {
    evalkit::rmse(&matrix(&pred)?, &matrix(&truth)?, &self::mask(&mask)?).map_err(err)
}

struct Fitted {
    params: DenoiserParams,
    stats: Standardization,
    cols: usize,
}

/// EM imputer for numeric tables. `fit_transform` learns the model on the
/// table it imputes; `transform` reuses the frozen model on new rows.
#[pyclass]
struct Imputer {
    cfg: EmConfig,
    fitted: Option<Fitted>,
    losses: Vec<Vec<f64>>,
}

#[pymethods]
impl Imputer {
    #[new]
    #[pyo3(signature = (profile = "desk", iterations = None, epochs = None, hidden_dim = None, repeats = None, seed = 0))]
    fn new(
        profile: &str,
        iterations: Option<usize>,
        epochs: Option<usize>,
        hidden_dim: Option<usize>,
        repeats: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let mut cfg = match profile {
            "desk" => EmConfig::desk(),
            "paper" => EmConfig::paper(),
            other => return Err(err(format!("unknown profile '{other}'"))),
        };
        cfg.iterations = iterations.unwrap_or(cfg.iterations);
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        cfg.hidden_dim = hidden_dim.unwrap_or(cfg.hidden_dim);
        cfg.sampler.repeats = repeats.unwrap_or(cfg.sampler.repeats);
        cfg.seed = seed;
        cfg.validate().map_err(err)?;
        Ok(Self {
            cfg,
            fitted: None,
            losses: Vec::new(),
        })
    }

    fn fit_transform(&mut self, data: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&data)?;
        let ds = TabularDataset::from_numeric(&column_names(x.cols()), &x).map_err(err)?;
        let enc = encode(&ds).map_err(err)?;
        let res = run_em(&enc, &self.cfg, &CheckpointOptions::default()).map_err(err)?;
        let out = decode(&res.imputed, &ds.specs).map_err(err)?.numeric_view();
        let out = with_observed(&x, out);
        self.losses = res.history.iter().map(|h| h.epoch_losses.clone()).collect();
        self.fitted = Some(Fitted {
            params: res.params,
            stats: enc.stats,
            cols: x.cols(),
        });
        Ok(out)
    }

    fn transform(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let f = self
            .fitted
            .as_ref()
            .ok_or_else(|| err("call fit_transform before transform"))?;
        let x = matrix(&data)?;
        if x.cols() != f.cols {
            return Err(err(format!("expected {} columns, got {}", f.cols, x.cols())));
        }
        let ds = TabularDataset::from_numeric(&column_names(x.cols()), &x).map_err(err)?;
        let enc = encode_with(&ds, &f.stats).map_err(err)?;
        let out = impute_out_of_sample(&f.params, &enc, &self.cfg).map_err(err)?;
        Ok(with_observed(&x, decode(&out, &ds.specs).map_err(err)?.numeric_view()))
    }

    /// Per-iteration M-step epoch losses of the last fit.
    #[getter]
    fn loss_history(&self) -> Vec<Vec<f64>> {
        self.losses.clone()
    }
}

#[pymodule]
fn tabimpute_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(analog_bits, m)?)?;
    m.add_function(wrap_pyfunction!(analog_bits_decode, m)?)?;
    m.add_function(wrap_pyfunction!(timestep_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(generate_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_class::<Imputer>()?;
    Ok(())
}
