//! The EM loop: alternate an M-step (fit the denoiser to the current
//! complete-data estimate) and an E-step (re-impute missing entries by
//! conditional inpainting), starting from mean imputation.

mod inpaint;
mod train;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, Parameterization, SamplerConfig, ScoreNet};
use crate::ndcore::checkpoint::ParamsCheckpoint;
use crate::ndcore::{DenoiserParams, Matrix};
use crate::rng::{derive_seed, derived};
use crate::tabular::EncodedMatrix;
use crate::{Error, Result};

pub use inpaint::{average_draws, e_step, e_step_draws, inpaint_once};
pub use train::{m_step, EarlyStop, LrDecay, MStepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// EM iterations K.
    pub iterations: usize,
    /// Passes over the data per M-step.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: LrDecay,
    pub early_stop: Option<EarlyStop>,
    pub hidden_dim: usize,
    pub parameterization: Parameterization,
    /// Start each M-step from the previous parameters instead of a fresh init.
    pub warm_start: bool,
    pub sampler: SamplerConfig,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            epochs: 500,
            batch_size: 256,
            lr: 1e-4,
            lr_decay: LrDecay::Cosine,
            early_stop: None,
            hidden_dim: 1024,
            parameterization: Parameterization::Preconditioned,
            warm_start: true,
            sampler: SamplerConfig::default(),
            schedule: NoiseSchedule::default(),
            seed: 0,
        }
    }
}

impl EmConfig {
    /// Full-size settings: hidden 1024, N = 10, lr 1e-4, K = 5.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Laptop-scale settings: hidden 128, N = 5, lr 1e-3.
    pub fn desk() -> Self {
        Self {
            hidden_dim: 128,
            lr: 1e-3,
            sampler: SamplerConfig {
                repeats: 5,
                ..SamplerConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.hidden_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden_dim must be a positive even number, got {}",
                self.hidden_dim
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        self.sampler.validate()?;
        self.schedule.validate()
    }

    /// Freshly initialized denoiser for iteration `k` (k = 0 is the first init).
    pub fn init_params(&self, data_dim: usize, k: usize) -> Result<DenoiserParams> {
        DenoiserParams::new(data_dim, self.hidden_dim, &mut derived(self.seed, "init", &[k as u64]))
    }
}

/// Per-iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub epoch_losses: Vec<f64>,
    pub final_loss: Option<f64>,
    pub m_step_secs: f64,
    pub e_step_secs: f64,
}

/// Loop state after iteration `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    pub k: usize,
    pub x_k: Matrix,
    pub params_k: ParamsCheckpoint,
    pub history: Vec<IterationRecord>,
}

#[derive(Clone, Debug)]
pub struct ImputationResult {
    pub imputed: EncodedMatrix,
    /// `x^(0), …, x^(K)`.
    pub snapshots: Vec<Matrix>,
    pub params: DenoiserParams,
    pub history: Vec<IterationRecord>,
}

/// Where to write per-iteration checkpoints and whether to resume from them.
#[derive(Clone, Debug, Default)]
pub struct CheckpointOptions {
    pub dir: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: EmConfig,
    state: EmState,
}

pub fn checkpoint_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("iter_{k:03}.json"))
}

fn save_state(dir: &Path, cfg: &EmConfig, state: &EmState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = CheckpointFile {
        config: cfg.clone(),
        state: state.clone(),
    };
    let tmp = dir.join(format!(".iter_{:03}.json.tmp", state.k));
    std::fs::write(&tmp, serde_json::to_vec(&file)?)?;
    std::fs::rename(&tmp, checkpoint_path(dir, state.k))?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<(EmConfig, EmState)> {
    let file: CheckpointFile = serde_json::from_slice(&std::fs::read(path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok((file.config, file.state))
}

/// Loads snapshots `x^(0..=k)` for the latest checkpoint in `dir` whose
/// config matches `cfg`; `None` when nothing usable is there.
fn resume_from(dir: &Path, cfg: &EmConfig, encoded: &EncodedMatrix) -> Result<Option<(EmState, Vec<Matrix>)>> {
    let mut latest = None;
    for k in (0..=cfg.iterations).rev() {
        if checkpoint_path(dir, k).exists() {
            latest = Some(k);
            break;
        }
    }
    let Some(k) = latest else { return Ok(None) };
    let mut snapshots = Vec::with_capacity(k + 1);
    let mut last = None;
    for i in 0..=k {
        let (c, s) = load_state(&checkpoint_path(dir, i))?;
        if &c != cfg {
            return Err(Error::Checkpoint(format!(
                "checkpoint {} was written with a different configuration",
                checkpoint_path(dir, i).display()
            )));
        }
        if s.x_k.shape() != encoded.values.shape() {
            return Err(Error::Checkpoint("checkpoint data shape differs from the input".into()));
        }
        snapshots.push(s.x_k.clone());
        last = Some(s);
    }
    Ok(last.map(|s| (s, snapshots)))
}

/// Runs K EM iterations from the mean-imputed `encoded` matrix.
///
/// Every random stream is derived from `cfg.seed` and the iteration index,
/// so a resumed run continues exactly as an uninterrupted one would.
pub fn run_em(encoded: &EncodedMatrix, cfg: &EmConfig, ckpt: &CheckpointOptions) -> Result<ImputationResult> {
    cfg.validate()?;
    let d = encoded.width();
    let mask = &encoded.mask;
    let resumed = match (&ckpt.dir, ckpt.resume) {
        (Some(dir), true) => resume_from(dir, cfg, encoded)?,
        _ => None,
    };
    let (mut state, mut snapshots) = match resumed {
        Some((state, snaps)) => {
            log::info!("resuming EM from iteration {}", state.k);
            (state, snaps)
        }
        None => {
            let state = EmState {
                k: 0,
                x_k: encoded.values.clone(),
                params_k: ParamsCheckpoint::from(&cfg.init_params(d, 0)?),
                history: Vec::new(),
            };
            if let Some(dir) = &ckpt.dir {
                save_state(dir, cfg, &state)?;
            }
            (state, vec![encoded.values.clone()])
        }
    };
    let mut params = DenoiserParams::try_from(state.params_k.clone())?;
    while state.k < cfg.iterations {
        let k = state.k + 1;
        let init = if cfg.warm_start { params.clone() } else { cfg.init_params(d, k)? };
        let started = Instant::now();
        let trained = m_step(&state.x_k, cfg, &init, &mut derived(cfg.seed, "m-step", &[k as u64]))?;
        let m_secs = started.elapsed().as_secs_f64();
        params = trained.params;
        let started = Instant::now();
        let model = ScoreNet::new(&params, cfg.parameterization);
        let x_next = e_step(
            &encoded.values,
            mask,
            &model,
            &cfg.schedule,
            &cfg.sampler,
            derive_seed(cfg.seed, "e-step", &[k as u64]),
        )?;
        let e_secs = started.elapsed().as_secs_f64();
        log::info!(
            "EM iteration {k}/{}: final epoch loss {:?}, M-step {m_secs:.1}s, E-step {e_secs:.1}s",
            cfg.iterations,
            trained.epoch_losses.last()
        );
        state.history.push(IterationRecord {
            k,
            final_loss: trained.epoch_losses.last().copied(),
            epoch_losses: trained.epoch_losses,
            m_step_secs: m_secs,
            e_step_secs: e_secs,
        });
        state.k = k;
        state.x_k = x_next;
        state.params_k = ParamsCheckpoint::from(&params);
        snapshots.push(state.x_k.clone());
        if let Some(dir) = &ckpt.dir {
            save_state(dir, cfg, &state)?;
        }
    }
    Ok(ImputationResult {
        imputed: encoded.with_values(state.x_k)?,
        snapshots,
        params,
        history: state.history,
    })
}

/// Imputes unseen rows with frozen parameters: one E-step, no training.
pub fn impute_out_of_sample(params: &DenoiserParams, test: &EncodedMatrix, cfg: &EmConfig) -> Result<EncodedMatrix> {
    cfg.validate()?;
    let model = ScoreNet::new(params, cfg.parameterization);
    let x = e_step(
        &test.values,
        &test.mask,
        &model,
        &cfg.schedule,
        &cfg.sampler,
        derive_seed(cfg.seed, "out-of-sample", &[]),
    )?;
    test.with_values(x)
}
