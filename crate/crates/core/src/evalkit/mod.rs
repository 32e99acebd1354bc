//! Metrics over masked entries, train/test splitting and synthetic
//! benchmarks with analytic conditional-mean oracles.

mod metrics;
mod synth;

pub use metrics::{accuracy, evaluate, mae, rmse, ColumnMetrics, MetricReport, Scale};
pub use synth::{synth_generate, Component, Family, Oracle, SyntheticSpec};

use rand::seq::SliceRandom;

use crate::rng::derived;
use crate::tabular::TabularDataset;
use crate::{Error, Result};

/// Seeded shuffle of `0..n` split into `⌊n·fraction⌋` train indices and the
/// remainder. Both sides must be nonempty.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} outside (0, 1)")));
    }
    // The small slack keeps e.g. 10 × 0.7 at 7 despite rounding.
    let n_train = (n as f64 * fraction + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} rows at {fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived(seed, "split", &[]));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split_train_test(ds: &TabularDataset, fraction: f64, seed: u64) -> Result<(TabularDataset, TabularDataset)> {
    let (train, test) = split_indices(ds.n_rows(), fraction, seed)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}
