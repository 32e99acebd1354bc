//! Variance-exploding diffusion with σ(t) = t: forward perturbation,
//! denoising score matching, the descending timestep ladder and the
//! Euler–Maruyama reverse step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ndcore::{DenoiserParams, EmbedTime, ForwardTrace, Matrix};
use crate::rng::normal_matrix;
use crate::{Error, Result};

/// σ(t) = t on `[0, t_max]`; training and sampling never go below `t_min`
/// except for the final step to 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: f64,
    pub t_min: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            t_max: 80.0,
            t_min: 0.002,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise schedule needs 0 < t_min < t_max, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn sigma(&self, t: f64) -> f64 {
        t
    }

    #[inline]
    pub fn sigma_dot(&self, _t: f64) -> f64 {
        1.0
    }

    /// Training time: log-uniform on `[t_min, t_max]`.
    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (self.t_min.ln(), self.t_max.ln());
        (lo + (hi - lo) * rng.random::<f64>()).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    /// `t_i = (t_min^{1/ρ} + u_i (T^{1/ρ} − t_min^{1/ρ}))^ρ`.
    Warped,
    Linear,
}

/// Discretization and repetition settings of the samplers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of reverse steps M.
    pub steps: usize,
    /// Inpainting draws averaged per E-step, N.
    pub repeats: usize,
    pub rho: f64,
    pub spacing: Spacing,
    /// Harmonization passes per inpainting step (1 = plain replacement).
    pub resample: usize,
    /// Resampling only applies to steps starting at `t <= resample_below`.
    pub resample_below: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            repeats: 10,
            rho: 7.0,
            spacing: Spacing::Warped,
            resample: 20,
            resample_below: 5.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.repeats == 0 || self.resample == 0 {
            return Err(Error::InvalidArgument(
                "sampler steps, repeats and resample must all be >= 1".into(),
            ));
        }
        if !(self.rho >= 1.0) {
            return Err(Error::InvalidArgument(format!("rho must be >= 1, got {}", self.rho)));
        }
        Ok(())
    }

    /// Resampling passes for the step that starts at `t`.
    pub fn passes_at(&self, t: f64) -> usize {
        if t <= self.resample_below {
            self.resample
        } else {
            1
        }
    }
}

/// How the MLP output is turned into a score, and how the loss is weighted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// `score = MLP(x/√(1+σ²), emb(ln σ / 4)) / σ`, loss weighted by σ².
    #[default]
    Preconditioned,
    /// `score = MLP(x, emb(t))`, unweighted loss.
    Raw,
}

impl Parameterization {
    fn input_scale(self, sigma: f64) -> f64 {
        match self {
            Self::Preconditioned => 1.0 / (1.0 + sigma * sigma).sqrt(),
            Self::Raw => 1.0,
        }
    }

    fn embed_time(self, t: f64, sigma: f64) -> f64 {
        match self {
            Self::Preconditioned => sigma.ln() / 4.0,
            Self::Raw => t,
        }
    }

    fn output_scale(self, sigma: f64) -> f64 {
        match self {
            Self::Preconditioned => 1.0 / sigma,
            Self::Raw => 1.0,
        }
    }

    /// Per-sample weight λ(t) of the squared score error.
    pub fn loss_weight(self, sigma: f64) -> f64 {
        match self {
            Self::Preconditioned => sigma * sigma,
            Self::Raw => 1.0,
        }
    }
}

/// `x_t = x0 + σ(t)·ε`.
pub fn perturb(x0: &Matrix, t: f64, eps: &Matrix, sched: &NoiseSchedule) -> Result<Matrix> {
    if !(0.0..=sched.t_max).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "perturb: t = {t} outside [0, {}]",
            sched.t_max
        )));
    }
    let s = sched.sigma(t);
    x0.zip_with(eps, "perturb", |x, e| x + s * e)
}

/// Conditional score `∇ log p(x_t | x0) = −ε/σ(t)`.
pub fn score_target(eps: &Matrix, t: f64, sched: &NoiseSchedule) -> Result<Matrix> {
    if !(t >= sched.t_min) {
        return Err(Error::InvalidArgument(format!(
            "score_target: t = {t} below t_min = {}",
            sched.t_min
        )));
    }
    let s = sched.sigma(t);
    Ok(eps.map(|e| -e / s))
}

/// Anything that can evaluate a score `∇ log p_t(x)` for a batch at one time.
pub trait ScoreModel: Sync {
    fn data_dim(&self) -> usize;
    fn score(&self, x: &Matrix, t: f64) -> Result<Matrix>;
}

/// The denoiser network read as a score model.
#[derive(Clone, Copy, Debug)]
pub struct ScoreNet<'a> {
    pub params: &'a DenoiserParams,
    pub parameterization: Parameterization,
}

impl<'a> ScoreNet<'a> {
    pub fn new(params: &'a DenoiserParams, parameterization: Parameterization) -> Self {
        Self {
            params,
            parameterization,
        }
    }
}

impl ScoreModel for ScoreNet<'_> {
    fn data_dim(&self) -> usize {
        self.params.data_dim()
    }

    fn score(&self, x: &Matrix, t: f64) -> Result<Matrix> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("score evaluated at t = {t}")));
        }
        let p = self.parameterization;
        let sigma = t;
        let input = x.scale(p.input_scale(sigma));
        let out = self
            .params
            .forward(&input, EmbedTime::Shared(p.embed_time(t, sigma)))?;
        Ok(out.scale(p.output_scale(sigma)))
    }
}

/// Closed-form score of `N(μ, Σ)` convolved with `N(0, σ²(t) I)`:
/// `−(Σ + σ²I)⁻¹ (x − μ)`.
#[derive(Clone, Debug)]
pub struct GaussianScore {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianScore {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::shape("GaussianScore::new", "covariance must be d×d"));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        if cov.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("covariance is not positive definite".into()));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
        })
    }
}

impl ScoreModel for GaussianScore {
    fn data_dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, x: &Matrix, t: f64) -> Result<Matrix> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(Error::shape("GaussianScore::score", format!("{} cols vs d = {d}", x.cols())));
        }
        let perturbed = &self.cov + DMatrix::identity(d, d) * (t * t);
        let chol = perturbed
            .cholesky()
            .ok_or_else(|| Error::NonFinite("perturbed covariance lost definiteness".into()))?;
        let mut out = Matrix::zeros(x.rows(), d);
        for r in 0..x.rows() {
            let centered = DVector::from_iterator(d, x.row(r).iter().zip(self.mean.iter()).map(|(a, m)| a - m));
            let s = chol.solve(&centered);
            for (o, v) in out.row_mut(r).iter_mut().zip(s.iter()) {
                *o = -v;
            }
        }
        Ok(out)
    }
}

/// Per-row training draws of the score-matching loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossDraws {
    pub times: Vec<f64>,
    pub noise: Matrix,
}

impl LossDraws {
    pub fn sample<R: Rng + ?Sized>(rows: usize, cols: usize, sched: &NoiseSchedule, rng: &mut R) -> Self {
        let times = (0..rows).map(|_| sched.sample_time(rng)).collect();
        let noise = normal_matrix(rows, cols, 1.0, rng);
        Self { times, noise }
    }
}

/// Weighted squared error `mean_{rows,cols} λ_r (pred − target)²` and its
/// gradient with respect to `pred`.
pub fn weighted_score_loss(pred: &Matrix, target: &Matrix, row_weights: &[f64]) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() || row_weights.len() != pred.rows() {
        return Err(Error::shape(
            "weighted_score_loss",
            format!(
                "pred {:?}, target {:?}, {} weights",
                pred.shape(),
                target.shape(),
                row_weights.len()
            ),
        ));
    }
    let n = (pred.rows() * pred.cols()).max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for r in 0..pred.rows() {
        let w = row_weights[r];
        for c in 0..pred.cols() {
            let diff = pred.get(r, c) - target.get(r, c);
            loss += w * diff * diff;
            grad.set(r, c, 2.0 * w * diff / n);
        }
    }
    Ok((loss / n, grad))
}

/// Loss value, parameter gradients and the draws that produced them.
#[derive(Clone, Debug)]
pub struct SmLoss {
    pub loss: f64,
    pub grads: DenoiserParams,
    pub draws: LossDraws,
}

/// Denoising score-matching loss on a batch: draws `t ~ p(t)` and `ε` per
/// row, then scores the network against `−ε/σ(t)`.
pub fn sm_loss<R: Rng + ?Sized>(
    params: &DenoiserParams,
    parameterization: Parameterization,
    x0: &Matrix,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<SmLoss> {
    if x0.rows() == 0 {
        return Err(Error::InvalidArgument("sm_loss on an empty batch".into()));
    }
    let draws = LossDraws::sample(x0.rows(), x0.cols(), sched, rng);
    sm_loss_with_draws(params, parameterization, x0, draws, sched)
}

/// [`sm_loss`] with caller-supplied draws.
pub fn sm_loss_with_draws(
    params: &DenoiserParams,
    parameterization: Parameterization,
    x0: &Matrix,
    draws: LossDraws,
    sched: &NoiseSchedule,
) -> Result<SmLoss> {
    let (rows, cols) = x0.shape();
    if rows == 0 {
        return Err(Error::InvalidArgument("sm_loss on an empty batch".into()));
    }
    if draws.times.len() != rows || draws.noise.shape() != (rows, cols) {
        return Err(Error::shape("sm_loss", "draws do not match the batch"));
    }
    let p = parameterization;
    let mut net_in = Matrix::zeros(rows, cols);
    let mut target = Matrix::zeros(rows, cols);
    let mut embed_times = Vec::with_capacity(rows);
    let mut weights = Vec::with_capacity(rows);
    let mut out_scales = Vec::with_capacity(rows);
    for r in 0..rows {
        let t = draws.times[r];
        if !(t >= sched.t_min && t <= sched.t_max) {
            return Err(Error::InvalidArgument(format!("sm_loss: drawn t = {t} outside [t_min, T]")));
        }
        let sigma = sched.sigma(t);
        let in_scale = p.input_scale(sigma);
        for c in 0..cols {
            let e = draws.noise.get(r, c);
            net_in.set(r, c, in_scale * (x0.get(r, c) + sigma * e));
            target.set(r, c, -e / sigma);
        }
        embed_times.push(p.embed_time(t, sigma));
        weights.push(p.loss_weight(sigma));
        out_scales.push(p.output_scale(sigma));
    }
    let trace: ForwardTrace = params.forward_trace(&net_in, EmbedTime::PerRow(&embed_times))?;
    let mut pred = trace.output.clone();
    for r in 0..rows {
        for v in pred.row_mut(r) {
            *v *= out_scales[r];
        }
    }
    let (loss, mut dpred) = weighted_score_loss(&pred, &target, &weights)?;
    if !loss.is_finite() {
        let bad = (0..rows)
            .find(|&r| pred.row(r).iter().chain(target.row(r)).any(|v| !v.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFinite(format!(
            "score-matching loss is {loss}; first offending row {bad} at t = {}",
            draws.times[bad]
        )));
    }
    for r in 0..rows {
        for v in dpred.row_mut(r) {
            *v *= out_scales[r];
        }
    }
    let grads = params.backward(&trace, &dpred)?;
    Ok(SmLoss { loss, grads, draws })
}

/// Descending times `t_M = T, …, t_1 = t_min, t_0 = 0` (M + 1 values).
pub fn timestep_schedule(cfg: &SamplerConfig, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.validate()?;
    let m = cfg.steps;
    if m == 0 {
        return Err(Error::InvalidArgument("timestep_schedule needs M >= 1".into()));
    }
    if m == 1 {
        return Ok(vec![sched.t_max, 0.0]);
    }
    let mut ascending = Vec::with_capacity(m + 1);
    ascending.push(0.0);
    for i in 1..=m {
        let u = (i - 1) as f64 / (m - 1) as f64;
        let t = match cfg.spacing {
            Spacing::Warped => {
                let inv = 1.0 / cfg.rho;
                let lo = sched.t_min.powf(inv);
                let hi = sched.t_max.powf(inv);
                (lo + u * (hi - lo)).powf(cfg.rho)
            }
            Spacing::Linear => sched.t_min + u * (sched.t_max - sched.t_min),
        };
        ascending.push(t);
    }
    // Pin the endpoints against powf round-off.
    ascending[1] = sched.t_min;
    ascending[m] = sched.t_max;
    ascending.reverse();
    Ok(ascending)
}

/// One Euler–Maruyama step of the reverse SDE from `t` down to `t_next`
/// (σ(t) = t, so g² = 2t): `x + 2t·score·Δt + √(2tΔt)·z`.
pub fn reverse_step(x_t: &Matrix, t: f64, t_next: f64, score: &Matrix, z: &Matrix) -> Result<Matrix> {
    if !(t_next >= 0.0 && t_next < t) {
        return Err(Error::InvalidArgument(format!(
            "reverse_step needs 0 <= t_next < t, got t = {t}, t_next = {t_next}"
        )));
    }
    if score.shape() != x_t.shape() || z.shape() != x_t.shape() {
        return Err(Error::shape(
            "reverse_step",
            format!("x {:?}, score {:?}, z {:?}", x_t.shape(), score.shape(), z.shape()),
        ));
    }
    let dt = t - t_next;
    let drift = 2.0 * t * dt;
    let diffusion = (2.0 * t * dt).sqrt();
    let mut out = x_t.clone();
    for ((o, s), n) in out.data_mut().iter_mut().zip(score.data()).zip(z.data()) {
        *o += drift * s + diffusion * n;
    }
    Ok(out)
}

/// Draws `n` samples: `x_T ~ N(0, σ²(T) I)`, then reverse steps down the ladder.
pub fn sample_unconditional<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    n: usize,
    rng: &mut R,
) -> Result<Matrix> {
    cfg.validate()?;
    let d = model.data_dim();
    let times = timestep_schedule(cfg, sched)?;
    let mut x = normal_matrix(n, d, sched.sigma(sched.t_max), rng);
    for w in times.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let score = model.score(&x, t)?;
        let z = normal_matrix(n, d, 1.0, rng);
        x = reverse_step(&x, t, t_next, &score, &z)?;
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("unconditional sample diverged".into()));
    }
    Ok(x)
}
