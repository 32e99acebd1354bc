//! The `impute` pipeline: load, split, mask, run EM on the training rows,
//! impute the test rows with frozen parameters, decode and report.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, MaskModel, MaskSource};
use crate::emloop::{impute_out_of_sample, run_em, CheckpointOptions};
use crate::evalkit::{evaluate, split_indices, synth_generate, MetricReport};
use crate::missingness::{generate, MaskSpec};
use crate::ndcore::checkpoint::{params_fingerprint, save_params};
use crate::ndcore::Mask;
use crate::rng::derive_seed;
use crate::tabular::{
    decode, encode, encode_with, read_csv, read_mask_csv, read_schema, write_csv, write_mask_csv, Cell,
    EncodedMatrix, TabularDataset,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: String,
    pub report: String,
    pub imputed_train: String,
    pub imputed_test: String,
    pub train_mask: String,
    pub test_mask: String,
    pub checkpoints: String,
    pub final_params: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub total_secs: f64,
    pub m_step_secs: Vec<f64>,
    pub e_step_secs: Vec<f64>,
    pub out_of_sample_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Rows where the ensure-observed guard kept one cell, per split.
    pub guarded_rows: [usize; 2],
    /// In-sample metrics for `x^(0), …, x^(K)`; empty without ground truth.
    pub in_sample: Vec<MetricReport>,
    pub out_of_sample: Option<MetricReport>,
    /// Per-epoch mean loss for each M-step.
    pub loss_traces: Vec<Vec<f64>>,
    pub params_fingerprint: String,
    pub artifacts: Artifacts,
    /// Wall-clock timings; the only part of the report that varies between
    /// replays.
    pub runtime: Runtime,
}

fn load(cfg: &ExperimentConfig) -> anyhow::Result<TabularDataset> {
    let schema = match &cfg.schema {
        Some(p) => Some(read_schema(p).with_context(|| format!("tabular: reading schema {}", p.display()))?),
        None => None,
    };
    match &cfg.data {
        DataSource::Csv(p) => {
            read_csv(p, schema.as_deref()).with_context(|| format!("tabular: reading data {}", p.display()))
        }
        DataSource::Synthetic(spec) => Ok(synth_generate(spec).context("evalkit: synthetic data")?.0),
    }
}

fn mask_spec(model: &MaskModel, ds: &TabularDataset, seed: u64) -> anyhow::Result<MaskSpec> {
    let observed_cols = model
        .observed_cols
        .iter()
        .map(|n| ds.column_index(n).with_context(|| format!("missingness: unknown column '{n}'")))
        .collect::<anyhow::Result<_>>()?;
    Ok(MaskSpec {
        mechanism: model.mechanism,
        ratio: model.ratio,
        seed,
        observed_cols,
        ensure_observed: model.ensure_observed,
    })
}

fn or_mask(a: &Mask, b: &Mask) -> Mask {
    let bits = a.bits().iter().zip(b.bits()).map(|(x, y)| *x || *y).collect();
    Mask::from_vec(a.rows(), a.cols(), bits).expect("same shape")
}

/// Cells to score: masked by the experiment and present in the truth.
fn eval_mask(generated: &Mask, truth: &TabularDataset) -> Mask {
    let existing = truth.missing_mask();
    let bits = generated
        .bits()
        .iter()
        .zip(existing.bits())
        .map(|(g, e)| *g && !*e)
        .collect();
    Mask::from_vec(generated.rows(), generated.cols(), bits).expect("same shape")
}

/// Decoded imputation with every observed cell copied verbatim from `input`.
fn finish(em: &EncodedMatrix, input: &TabularDataset) -> anyhow::Result<TabularDataset> {
    let mut out = decode(em, &input.specs).context("tabular: decoding imputed values")?;
    for (row, src) in out.rows.iter_mut().zip(&input.rows) {
        for (cell, s) in row.iter_mut().zip(src) {
            if !matches!(s, Cell::Missing) {
                *cell = *s;
            }
        }
    }
    Ok(out)
}

fn metrics(
    pred: &EncodedMatrix,
    input: &TabularDataset,
    truth: &TabularDataset,
    mask: &Mask,
    cfg: &ExperimentConfig,
) -> anyhow::Result<Option<MetricReport>> {
    if mask.count_missing() == 0 {
        return Ok(None);
    }
    let ds = finish(pred, input)?;
    Ok(Some(
        evaluate(&ds, truth, mask, &pred.stats, cfg.metric_scale).context("evalkit: metrics")?,
    ))
}

/// Runs the whole experiment and writes every artifact into `out`.
pub fn cmd_impute(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<RunReport> {
    let started = Instant::now();
    std::fs::create_dir_all(out.join("masks"))?;
    let truth = load(cfg)?;
    let (train_idx, test_idx) =
        split_indices(truth.n_rows(), cfg.split_fraction, derive_seed(cfg.seed, "split", &[]))
            .context("evalkit: train/test split")?;
    let train_truth = truth.select_rows(&train_idx);
    let test_truth = truth.select_rows(&test_idx);

    let mut guarded = [0usize; 2];
    let (gen_train, gen_test) = match &cfg.mask {
        MaskSource::Generate(model) => {
            let mut masks = Vec::new();
            for (i, part) in [&train_truth, &test_truth].into_iter().enumerate() {
                let spec = mask_spec(model, part, derive_seed(cfg.seed, "mask", &[i as u64]))?;
                let g = generate(&spec, &part.numeric_view()).context("missingness: generating mask")?;
                guarded[i] = g.guarded_rows;
                masks.push(g.mask);
            }
            let test = masks.pop().expect("two masks");
            (masks.pop().expect("two masks"), test)
        }
        MaskSource::File(p) => {
            let (header, m) = read_mask_csv(p).with_context(|| format!("tabular: reading mask {}", p.display()))?;
            if header != truth.column_names() || m.rows() != truth.n_rows() {
                bail!("mask file {} does not match the data's header and row count", p.display());
            }
            (m.select_rows(&train_idx), m.select_rows(&test_idx))
        }
        MaskSource::Existing => (
            Mask::none(train_truth.n_rows(), truth.n_cols()),
            Mask::none(test_truth.n_rows(), truth.n_cols()),
        ),
    };
    let header = truth.column_names();
    write_mask_csv(&out.join("masks/train_mask.csv"), &header, &gen_train)?;
    write_mask_csv(&out.join("masks/test_mask.csv"), &header, &gen_test)?;

    let train_in = train_truth.with_missing(&or_mask(&gen_train, &train_truth.missing_mask()))?;
    let test_in = test_truth.with_missing(&or_mask(&gen_test, &test_truth.missing_mask()))?;
    let train_eval = eval_mask(&gen_train, &train_truth);
    let test_eval = eval_mask(&gen_test, &test_truth);

    let encoded = encode(&train_in).context("tabular: encoding training rows")?;
    let ckpt_dir = out.join("checkpoints");
    let result = run_em(
        &encoded,
        &cfg.em,
        &CheckpointOptions {
            dir: Some(ckpt_dir.clone()),
            resume: cfg.resume,
        },
    )
    .context("emloop: EM run")?;
    save_params(ckpt_dir.join("final_params.json"), &result.params)?;

    let oos_started = Instant::now();
    let test_encoded = encode_with(&test_in, &encoded.stats).context("tabular: encoding test rows")?;
    let test_imputed =
        impute_out_of_sample(&result.params, &test_encoded, &cfg.em).context("emloop: out-of-sample")?;
    let oos_secs = oos_started.elapsed().as_secs_f64();

    write_csv(&out.join("imputed_train.csv"), &finish(&result.imputed, &train_in)?)?;
    write_csv(&out.join("imputed_test.csv"), &finish(&test_imputed, &test_in)?)?;

    let mut in_sample = Vec::new();
    for snap in &result.snapshots {
        if let Some(m) = metrics(&encoded.with_values(snap.clone())?, &train_in, &train_truth, &train_eval, cfg)? {
            in_sample.push(m);
        }
    }
    let report = RunReport {
        config: cfg.clone(),
        train_rows: train_truth.n_rows(),
        test_rows: test_truth.n_rows(),
        guarded_rows: guarded,
        in_sample,
        out_of_sample: metrics(&test_imputed, &test_in, &test_truth, &test_eval, cfg)?,
        loss_traces: result.history.iter().map(|h| h.epoch_losses.clone()).collect(),
        params_fingerprint: params_fingerprint(&result.params),
        artifacts: Artifacts {
            config: "config.json".into(),
            report: "report.json".into(),
            imputed_train: "imputed_train.csv".into(),
            imputed_test: "imputed_test.csv".into(),
            train_mask: "masks/train_mask.csv".into(),
            test_mask: "masks/test_mask.csv".into(),
            checkpoints: "checkpoints".into(),
            final_params: "checkpoints/final_params.json".into(),
        },
        runtime: Runtime {
            total_secs: started.elapsed().as_secs_f64(),
            m_step_secs: result.history.iter().map(|h| h.m_step_secs).collect(),
            e_step_secs: result.history.iter().map(|h| h.e_step_secs).collect(),
            out_of_sample_secs: oos_secs,
        },
    };
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
