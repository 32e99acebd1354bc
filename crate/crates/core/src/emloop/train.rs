//! M-step: mini-batch Adam on the denoising score-matching loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EmConfig;
use crate::diffusion::sm_loss;
use crate::ndcore::{AdamState, DenoiserParams, Matrix};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Learning-rate schedule within one M-step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    /// Half-cosine from `lr` down to 0 over the epoch budget.
    #[default]
    Cosine,
    Constant,
}

/// Stop when the mean loss of the last `window` epochs improves on the
/// window before it by less than `min_improvement` (relative).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub window: usize,
    pub min_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 50,
            min_improvement: 1e-3,
        }
    }
}

impl EarlyStop {
    fn should_stop(&self, epoch_losses: &[f64]) -> bool {
        let w = self.window;
        if w == 0 || epoch_losses.len() < 2 * w {
            return false;
        }
        let n = epoch_losses.len();
        let recent = epoch_losses[n - w..].iter().sum::<f64>() / w as f64;
        let before = epoch_losses[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
        (before - recent) / before.abs().max(f64::MIN_POSITIVE) < self.min_improvement
    }
}

/// Trained parameters and the per-epoch mean loss.
#[derive(Clone, Debug)]
pub struct MStepOutcome {
    pub params: DenoiserParams,
    pub epoch_losses: Vec<f64>,
}

/// Fits the denoiser to `x` (every entry treated as observed) starting from
/// `params_init`. Rows are reshuffled each epoch; Adam state starts fresh.
pub fn m_step(x: &Matrix, cfg: &EmConfig, params_init: &DenoiserParams, rng: &mut SeededRng) -> Result<MStepOutcome> {
    if x.cols() != params_init.data_dim() {
        return Err(Error::shape(
            "m_step",
            format!("data has {} cols, denoiser expects {}", x.cols(), params_init.data_dim()),
        ));
    }
    let mut params = params_init.clone();
    if cfg.epochs == 0 || x.rows() == 0 {
        return Ok(MStepOutcome {
            params,
            epoch_losses: Vec::new(),
        });
    }
    let batch = cfg.batch_size.min(x.rows()).max(1);
    let per_epoch = x.rows().div_ceil(batch);
    let total = (cfg.epochs * per_epoch) as f64;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(batch).enumerate() {
            let xb = x.select_rows(idx);
            let out = sm_loss(&params, cfg.parameterization, &xb, &cfg.schedule, rng).map_err(|e| {
                Error::NonFinite(format!("M-step diverged at epoch {epoch}, batch {b}: {e}"))
            })?;
            adam.lr = match cfg.lr_decay {
                LrDecay::Cosine => {
                    let progress = adam.step as f64 / total;
                    0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * progress).cos())
                }
                LrDecay::Constant => cfg.lr,
            };
            adam.step(&mut params, &out.grads)?;
            sum += out.loss * idx.len() as f64;
        }
        epoch_losses.push(sum / x.rows() as f64);
        if let Some(es) = cfg.early_stop {
            if es.should_stop(&epoch_losses) {
                log::info!("M-step early stop after {} epochs", epoch + 1);
                break;
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("M-step produced non-finite parameters".into()));
    }
    Ok(MStepOutcome { params, epoch_losses })
}
