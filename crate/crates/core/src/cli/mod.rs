//! Command-line interface: `impute`, `genmask`, `eval` and `synth`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime errors.

mod config;
mod impute;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{
    merge_json, resolve, DataSource, ExperimentConfig, MaskModel, MaskSource, Overrides, Profile,
};
pub use impute::{cmd_impute, Artifacts, RunReport, Runtime};

use crate::evalkit::{evaluate, synth_generate, MetricReport, Scale, SyntheticSpec};
use crate::missingness::{generate, MaskSpec, Mechanism};
use crate::rng::derive_seed;
use crate::tabular::{encode, read_csv, read_mask_csv, read_schema, write_csv, write_mask_csv, write_schema};
use impute::write_json;

#[derive(Debug, Parser)]
#[command(name = "tabimpute", version, about = "Missing-data imputation with EM over a diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment or spec file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; every other seed is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for row-parallel work (results do not depend on it).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Hyperparameter preset.
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an imputation experiment.
    Impute {
        #[command(flatten)]
        common: Common,
        /// Data CSV (overrides the config's data source).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Column schema JSON.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// EM iterations K.
        #[arg(long)]
        iterations: Option<usize>,
        /// Epochs per M-step.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate missingness masks for a data CSV.
    Genmask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mcar")]
        mechanism: MechanismArg,
        #[arg(long, default_value_t = 0.3)]
        ratio: f64,
        /// Always-observed columns for MAR (comma separated names).
        #[arg(long, value_delimiter = ',')]
        observed_cols: Vec<String>,
        /// Number of masks, each with its own derived seed.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Allow fully masked rows.
        #[arg(long)]
        no_guard: bool,
    },
    /// Score an imputed CSV against ground truth on masked cells.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        imputed: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "standardized")]
        scale: ScaleArg,
    },
    /// Write a synthetic dataset with its schema and oracle.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "gaussian")]
        family: FamilyArg,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Pairwise correlation of the Gaussian family.
        #[arg(long, default_value_t = 0.8)]
        rho: f64,
        #[arg(long, default_value_t = 5000)]
        rows: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MechanismArg {
    Mcar,
    Mar,
    Mnar,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Mcar => Mechanism::Mcar,
            MechanismArg::Mar => Mechanism::Mar,
            MechanismArg::Mnar => Mechanism::Mnar,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScaleArg {
    Standardized,
    Raw,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    GaussianMixture,
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn workers(common: &Common) -> anyhow::Result<rayon::ThreadPool> {
    let n = common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        bail!("--workers must be at least 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Impute {
            common,
            data,
            schema,
            iterations,
            epochs,
        } => {
            let cfg = resolve(
                common.config.as_deref(),
                &Overrides {
                    seed: common.seed,
                    profile: common.profile,
                    data,
                    schema,
                    iterations,
                    epochs,
                },
            )?;
            let out = out_dir(&common, "run");
            let report = workers(&common)?.install(|| cmd_impute(&cfg, &out))?;
            if let Some(m) = report.in_sample.last() {
                println!("in-sample MAE {:?}, RMSE {:?}, accuracy {:?}", m.mae, m.rmse, m.accuracy);
            }
            if let Some(m) = &report.out_of_sample {
                println!("out-of-sample MAE {:?}, RMSE {:?}, accuracy {:?}", m.mae, m.rmse, m.accuracy);
            }
            println!("wrote {}", out.join("report.json").display());
            Ok(())
        }
        Command::Genmask {
            common,
            data,
            schema,
            mechanism,
            ratio,
            observed_cols,
            count,
            no_guard,
        } => {
            let out = out_dir(&common, "masks");
            let files = workers(&common)?.install(|| {
                cmd_genmask(
                    &data,
                    schema.as_deref(),
                    &GenmaskOptions {
                        mechanism: mechanism.into(),
                        ratio,
                        observed_cols,
                        count,
                        ensure_observed: !no_guard,
                        seed: common.seed.unwrap_or(0),
                    },
                    &out,
                )
            })?;
            println!("wrote {} mask files to {}", files.len(), out.display());
            Ok(())
        }
        Command::Eval {
            common,
            imputed,
            truth,
            mask,
            schema,
            scale,
        } => {
            let scale = match scale {
                ScaleArg::Standardized => Scale::Standardized,
                ScaleArg::Raw => Scale::Raw,
            };
            let report = cmd_eval(&imputed, &truth, &mask, schema.as_deref(), scale)?;
            let text = serde_json::to_string_pretty(&report)?;
            match &common.out {
                Some(p) => {
                    std::fs::create_dir_all(p)?;
                    std::fs::write(p.join("metrics.json"), text + "\n")?;
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Synth {
            common,
            family,
            dim,
            rho,
            rows,
        } => {
            let seed = common.seed.unwrap_or(0);
            let spec = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).context("evalkit: invalid synthetic spec")?
                }
                None => match family {
                    FamilyArg::Gaussian => SyntheticSpec::gaussian(dim, rho, rows, seed),
                    FamilyArg::GaussianMixture => SyntheticSpec::two_component_mixture(rows, seed),
                },
            };
            let out = out_dir(&common, "synth");
            cmd_synth(&spec, &out)?;
            println!("wrote {} rows to {}", spec.rows, out.join("data.csv").display());
            Ok(())
        }
    }
}

/// Options of [`cmd_genmask`].
#[derive(Clone, Debug)]
pub struct GenmaskOptions {
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub observed_cols: Vec<String>,
    pub count: usize,
    pub ensure_observed: bool,
    pub seed: u64,
}

#[derive(Serialize)]
struct MaskRecord<'a> {
    #[serde(flatten)]
    spec: &'a MaskSpec,
    columns: Vec<String>,
    guarded_rows: usize,
    missing_ratio: f64,
}

/// Writes `mask_XXX.csv` plus `mask_XXX.json` (the spec) for each of
/// `count` masks; mask `i` uses seed `derive(seed, "genmask", i)`.
pub fn cmd_genmask(data: &Path, schema: Option<&Path>, opts: &GenmaskOptions, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let schema = schema.map(read_schema).transpose().context("tabular: reading schema")?;
    let ds = read_csv(data, schema.as_deref()).context("tabular: reading data")?;
    let observed_cols = opts
        .observed_cols
        .iter()
        .map(|n| ds.column_index(n).with_context(|| format!("missingness: unknown column '{n}'")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if opts.count == 0 {
        bail!("--count must be at least 1");
    }
    std::fs::create_dir_all(out)?;
    let values = ds.numeric_view();
    let mut files = Vec::new();
    for i in 0..opts.count {
        let spec = MaskSpec {
            mechanism: opts.mechanism,
            ratio: opts.ratio,
            seed: derive_seed(opts.seed, "genmask", &[i as u64]),
            observed_cols: observed_cols.clone(),
            ensure_observed: opts.ensure_observed,
        };
        let g = generate(&spec, &values).context("missingness: generating mask")?;
        let csv = out.join(format!("mask_{i:03}.csv"));
        write_mask_csv(&csv, &ds.column_names(), &g.mask)?;
        write_json(
            &out.join(format!("mask_{i:03}.json")),
            &MaskRecord {
                spec: &spec,
                columns: ds.column_names(),
                guarded_rows: g.guarded_rows,
                missing_ratio: g.mask.missing_ratio(),
            },
        )?;
        files.push(csv);
    }
    Ok(files)
}

/// Metrics of `imputed` against `truth` on the cells flagged in `mask`.
/// Standardization uses the truth's unmasked cells.
pub fn cmd_eval(imputed: &Path, truth: &Path, mask: &Path, schema: Option<&Path>, scale: Scale) -> anyhow::Result<MetricReport> {
    let schema = match schema {
        Some(p) => read_schema(p).context("tabular: reading schema")?,
        None => read_csv(truth, None).context("tabular: reading truth")?.specs,
    };
    let truth = read_csv(truth, Some(&schema)).context("tabular: reading truth")?;
    let pred = read_csv(imputed, Some(&schema)).context("tabular: reading imputed data")?;
    let (header, mask) = read_mask_csv(mask).context("tabular: reading mask")?;
    if header != truth.column_names() {
        bail!("mask header {header:?} does not match the data header {:?}", truth.column_names());
    }
    if pred.n_rows() != truth.n_rows() || mask.rows() != truth.n_rows() {
        bail!(
            "row counts differ: imputed {}, truth {}, mask {}",
            pred.n_rows(),
            truth.n_rows(),
            mask.rows()
        );
    }
    if mask.count_missing() == 0 {
        bail!("the mask flags no cells, so there is nothing to evaluate");
    }
    let stats = encode(&truth.with_missing(&mask)?).context("tabular: standardization")?.stats;
    evaluate(&pred, &truth, &mask, &stats, scale).context("evalkit: metrics")
}

/// Writes `data.csv`, `schema.json`, `spec.json` and `oracle.json`.
pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> anyhow::Result<()> {
    let (ds, oracle) = synth_generate(spec).context("evalkit: synthetic data")?;
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("data.csv"), &ds)?;
    write_schema(&out.join("schema.json"), &ds.specs)?;
    write_json(&out.join("spec.json"), spec)?;
    write_json(&out.join("oracle.json"), &oracle)?;
    Ok(())
}
