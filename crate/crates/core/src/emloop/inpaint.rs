//! E-step: conditional inpainting and N-draw averaging.
//!
//! Each reverse step takes the missing coordinates from the Euler–Maruyama
//! update and the observed coordinates from a fresh forward perturbation
//! of the known data at the next time. Plain replacement is biased because
//! the observed branch never sees the sampled missing values; at steps
//! with `t <= resample_below` the merged iterate is therefore re-noised
//! back to the current time and the step is repeated `resample` times,
//! which lets the two branches harmonize before moving on.

use rayon::prelude::*;

use crate::diffusion::{reverse_step, timestep_schedule, NoiseSchedule, SamplerConfig, ScoreModel};
use crate::ndcore::{Mask, Matrix};
use crate::rng::{derived, normal_matrix, standard_normal, SeededRng};
use crate::{Error, Result};

/// Rows handled together in one score evaluation.
const ROW_BLOCK: usize = 512;

/// Noise for a batch: one stream for the whole matrix, or one per row so
/// each row's draws do not depend on which rows share its batch.
enum Noise<'a> {
    Shared(&'a mut SeededRng),
    PerRow(&'a mut [SeededRng]),
}

impl Noise<'_> {
    fn normal(&mut self, rows: usize, cols: usize, scale: f64) -> Matrix {
        match self {
            Noise::Shared(rng) => normal_matrix(rows, cols, scale, *rng),
            Noise::PerRow(rngs) => {
                let mut m = Matrix::zeros(rows, cols);
                for (r, rng) in rngs.iter_mut().enumerate() {
                    for v in m.row_mut(r) {
                        *v = scale * standard_normal(rng);
                    }
                }
                m
            }
        }
    }
}

fn check_inputs(x_hat: &Matrix, mask: &Mask, model: &dyn ScoreModel) -> Result<()> {
    if mask.shape() != x_hat.shape() {
        return Err(Error::shape(
            "inpaint",
            format!("mask {:?} vs data {:?}", mask.shape(), x_hat.shape()),
        ));
    }
    if model.data_dim() != x_hat.cols() {
        return Err(Error::shape(
            "inpaint",
            format!("model dim {} vs data {}", model.data_dim(), x_hat.cols()),
        ));
    }
    Ok(())
}

/// Missing entries from `x`, observed entries from `obs` (bit-exact copy).
fn merge_observed(x: &mut Matrix, obs: &Matrix, mask: &Mask) {
    for ((v, o), &m) in x.data_mut().iter_mut().zip(obs.data()).zip(mask.bits()) {
        if !m {
            *v = *o;
        }
    }
}

fn inpaint_with(
    x_hat: &Matrix,
    mask: &Mask,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    noise: &mut Noise<'_>,
) -> Result<Matrix> {
    cfg.validate()?;
    let (n, d) = x_hat.shape();
    let times = timestep_schedule(cfg, sched)?;
    let mut x = noise.normal(n, d, sched.sigma(sched.t_max));
    for w in times.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let passes = cfg.passes_at(t);
        let renoise = (sched.sigma(t).powi(2) - sched.sigma(t_next).powi(2)).sqrt();
        for pass in 0..passes {
            let score = model.score(&x, t)?;
            let z = noise.normal(n, d, 1.0);
            let mut next = reverse_step(&x, t, t_next, &score, &z)?;
            let eps = noise.normal(n, d, 1.0);
            let s_next = sched.sigma(t_next);
            let forward = x_hat.zip_with(&eps, "inpaint forward", |a, e| a + s_next * e)?;
            merge_observed(&mut next, &forward, mask);
            x = next;
            if pass + 1 < passes {
                let back = noise.normal(n, d, renoise);
                x = x.add(&back)?;
            }
        }
    }
    merge_observed(&mut x, x_hat, mask);
    if !x.is_finite() {
        return Err(Error::NonFinite("inpainting diverged".into()));
    }
    Ok(x)
}

/// One conditional draw: starts from `N(0, σ²(T) I)`, walks the timestep
/// ladder merging forward-noised observations (mask `false`) with reverse
/// updates (mask `true`), and returns `x̃_0` whose observed entries equal
/// `x_hat`'s exactly.
pub fn inpaint_once(
    x_hat: &Matrix,
    mask: &Mask,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<Matrix> {
    check_inputs(x_hat, mask, model)?;
    inpaint_with(x_hat, mask, model, sched, cfg, &mut Noise::Shared(rng))
}

/// All `N` raw inpainting draws of the E-step (`cfg.repeats` of them).
///
/// Only rows with at least one missing entry are sampled; other rows are
/// copied. Row `r` in repetition `j` uses its own stream derived from
/// `(seed, r, j)`, so the draws do not depend on blocking or worker count.
pub fn e_step_draws(
    x_hat: &Matrix,
    mask: &Mask,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Matrix>> {
    check_inputs(x_hat, mask, model)?;
    cfg.validate()?;
    let rows = mask.rows_with_missing();
    let blocks: Vec<&[usize]> = rows.chunks(ROW_BLOCK).collect();
    let units: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|j| (0..blocks.len()).map(move |b| (j, b)))
        .collect();
    let results: Vec<Matrix> = units
        .par_iter()
        .map(|&(j, b)| {
            let idx = blocks[b];
            let xb = x_hat.select_rows(idx);
            let mb = mask.select_rows(idx);
            let mut rngs: Vec<SeededRng> = idx
                .iter()
                .map(|&r| derived(seed, "e-step", &[r as u64, j as u64]))
                .collect();
            inpaint_with(&xb, &mb, model, sched, cfg, &mut Noise::PerRow(&mut rngs))
        })
        .collect::<Result<_>>()?;
    let mut draws = vec![x_hat.clone(); cfg.repeats];
    for (&(j, b), block) in units.iter().zip(results) {
        for (k, &r) in blocks[b].iter().enumerate() {
            draws[j].row_mut(r).copy_from_slice(block.row(k));
        }
    }
    Ok(draws)
}

/// E-step: the coordinate-wise mean of `N` inpainting draws on missing
/// entries; observed entries are copied from `x_hat` unchanged.
pub fn e_step(
    x_hat: &Matrix,
    mask: &Mask,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Matrix> {
    let draws = e_step_draws(x_hat, mask, model, sched, cfg, seed)?;
    Ok(average_draws(x_hat, mask, &draws))
}

/// Mean of `draws` on missing entries, `x_hat` elsewhere. Summation runs
/// in draw order, so the result is deterministic.
pub fn average_draws(x_hat: &Matrix, mask: &Mask, draws: &[Matrix]) -> Matrix {
    let mut out = x_hat.clone();
    let n = draws.len() as f64;
    for (i, (v, &m)) in out.data_mut().iter_mut().zip(mask.bits()).enumerate() {
        if m {
            *v = draws.iter().map(|d| d.data()[i]).sum::<f64>() / n;
        }
    }
    out
}
