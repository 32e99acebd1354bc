//! The denoiser MLP: `FC_in → + time embedding → 3 SiLU layers (h→2h→2h→h)
//! → FC_out`, with a hand-written backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

/// `y = x·W + b` per row. `w` is `in × out`.
pub fn linear_forward(w: &Matrix, b: &[f64], x: &Matrix) -> Result<Matrix> {
    if x.cols() != w.rows() || b.len() != w.cols() {
        return Err(Error::shape(
            "linear_forward",
            format!(
                "x {:?}, W {:?}, b [{}]: x.cols must equal W.rows and b must have W.cols entries",
                x.shape(),
                w.shape(),
                b.len()
            ),
        ));
    }
    let mut y = x.matmul(w)?;
    y.add_row_vector(b)?;
    Ok(y)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad_scalar(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Elementwise `x · sigmoid(x)`.
pub fn silu(x: &Matrix) -> Matrix {
    x.map(silu_scalar)
}

/// Sinusoidal embedding: `dim/2` sines followed by `dim/2` cosines of
/// `t · ω_j`, `ω_j = exp(−ln(10000) · j / (dim/2))`.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        let (s, c) = (t * freq).sin_cos();
        out[j] = s;
        out[half + j] = c;
    }
    Ok(out)
}

/// Time input of a forward pass: one value for the whole batch, or one per row.
#[derive(Clone, Copy, Debug)]
pub enum EmbedTime<'a> {
    Shared(f64),
    PerRow(&'a [f64]),
}

/// One fully connected layer, weight stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Weights uniform in `±1/√fan_in`, zero biases.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction"),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        linear_forward(&self.weight, &self.bias, x)
    }
}

/// Weights of the denoiser. The same type doubles as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub input: Linear,
    pub hidden: [Linear; 3],
    pub output: Linear,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    x: Matrix,
    h_in: Matrix,
    pre: [Matrix; 3],
    post: [Matrix; 3],
    pub output: Matrix,
}

impl DenoiserParams {
    pub fn new<R: Rng + ?Sized>(data_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        Self::check_dims(data_dim, hidden_dim)?;
        let h = hidden_dim;
        Ok(Self {
            input: Linear::init(data_dim, h, rng),
            hidden: [
                Linear::init(h, 2 * h, rng),
                Linear::init(2 * h, 2 * h, rng),
                Linear::init(2 * h, h, rng),
            ],
            output: Linear::init(h, data_dim, rng),
        })
    }

    pub fn zeros(data_dim: usize, hidden_dim: usize) -> Result<Self> {
        Self::check_dims(data_dim, hidden_dim)?;
        let h = hidden_dim;
        Ok(Self {
            input: Linear::zeros(data_dim, h),
            hidden: [
                Linear::zeros(h, 2 * h),
                Linear::zeros(2 * h, 2 * h),
                Linear::zeros(2 * h, h),
            ],
            output: Linear::zeros(h, data_dim),
        })
    }

    fn check_dims(data_dim: usize, hidden_dim: usize) -> Result<()> {
        if data_dim == 0 {
            return Err(Error::InvalidArgument("data dimension must be positive".into()));
        }
        if hidden_dim == 0 || hidden_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden dimension must be even and positive, got {hidden_dim}"
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.data_dim(), self.hidden_dim()).expect("dims came from a valid net")
    }

    pub fn data_dim(&self) -> usize {
        self.input.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.out_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.hidden_dim()
    }

    pub fn layers(&self) -> [&Linear; 5] {
        [
            &self.input,
            &self.hidden[0],
            &self.hidden[1],
            &self.hidden[2],
            &self.output,
        ]
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [a, b, c] = &mut self.hidden;
        [&mut self.input, a, b, c, &mut self.output]
            .into_iter()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Checks that layer shapes chain `d → h → 2h → 2h → h → d`.
    pub fn validate(&self) -> Result<()> {
        let d = self.data_dim();
        let h = self.hidden_dim();
        Self::check_dims(d, h)?;
        let expected = [(d, h), (h, 2 * h), (2 * h, 2 * h), (2 * h, h), (h, d)];
        for (i, (layer, (fi, fo))) in self.layers().into_iter().zip(expected).enumerate() {
            if layer.weight.shape() != (fi, fo) || layer.bias.len() != fo {
                return Err(Error::shape(
                    "DenoiserParams::validate",
                    format!(
                        "layer {i}: weight {:?}, bias [{}], expected ({fi}, {fo})",
                        layer.weight.shape(),
                        layer.bias.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    fn embedding(&self, rows: usize, time: EmbedTime<'_>) -> Result<Matrix> {
        let h = self.embed_dim();
        match time {
            EmbedTime::Shared(t) => {
                let e = sinusoidal_embed(t, h)?;
                let mut m = Matrix::zeros(rows, h);
                for r in 0..rows {
                    m.row_mut(r).copy_from_slice(&e);
                }
                Ok(m)
            }
            EmbedTime::PerRow(ts) => {
                if ts.len() != rows {
                    return Err(Error::shape(
                        "denoiser_forward",
                        format!("{} times for {rows} rows", ts.len()),
                    ));
                }
                let mut m = Matrix::zeros(rows, h);
                for (r, &t) in ts.iter().enumerate() {
                    m.row_mut(r).copy_from_slice(&sinusoidal_embed(t, h)?);
                }
                Ok(m)
            }
        }
    }

    pub fn forward(&self, x: &Matrix, time: EmbedTime<'_>) -> Result<Matrix> {
        Ok(self.forward_trace(x, time)?.output)
    }

    pub fn forward_trace(&self, x: &Matrix, time: EmbedTime<'_>) -> Result<ForwardTrace> {
        if x.cols() != self.data_dim() {
            return Err(Error::shape(
                "denoiser_forward",
                format!("input has {} columns, network expects {}", x.cols(), self.data_dim()),
            ));
        }
        let emb = self.embedding(x.rows(), time)?;
        let h_in = self.input.forward(x)?.add(&emb)?;
        let a1 = self.hidden[0].forward(&h_in)?;
        let h1 = silu(&a1);
        let a2 = self.hidden[1].forward(&h1)?;
        let h2 = silu(&a2);
        let a3 = self.hidden[2].forward(&h2)?;
        let h3 = silu(&a3);
        let output = self.output.forward(&h3)?;
        Ok(ForwardTrace {
            x: x.clone(),
            h_in,
            pre: [a1, a2, a3],
            post: [h1, h2, h3],
            output,
        })
    }

    /// Parameter gradients of `Σ upstream ⊙ output` given a forward trace.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<DenoiserParams> {
        if upstream.shape() != trace.output.shape() {
            return Err(Error::shape(
                "denoiser_backward",
                format!(
                    "upstream {:?} vs output {:?}",
                    upstream.shape(),
                    trace.output.shape()
                ),
            ));
        }
        let layer_grad = |input: &Matrix, delta: &Matrix| -> Result<Linear> {
            Ok(Linear {
                weight: input.t_matmul(delta)?,
                bias: delta.col_sums(),
            })
        };

        let output = layer_grad(&trace.post[2], upstream)?;
        let mut dh = upstream.matmul_t(&self.output.weight)?;
        let mut hidden_grads: Vec<Linear> = Vec::with_capacity(3);
        for i in (0..3).rev() {
            let da = trace.pre[i].zip_with(&dh, "silu_backward", |a, g| g * silu_grad_scalar(a))?;
            let layer_input = if i == 0 { &trace.h_in } else { &trace.post[i - 1] };
            hidden_grads.push(layer_grad(layer_input, &da)?);
            dh = da.matmul_t(&self.hidden[i].weight)?;
        }
        // The embedding is additive, so dL/dh_in flows straight into FC_in.
        let input = layer_grad(&trace.x, &dh)?;
        hidden_grads.reverse();
        let [g1, g2, g3]: [Linear; 3] = hidden_grads
            .try_into()
            .map_err(|_| Error::shape("denoiser_backward", "hidden layer count"))?;
        Ok(DenoiserParams {
            input,
            hidden: [g1, g2, g3],
            output,
        })
    }
}

/// Forward pass with one time value shared by every row.
pub fn denoiser_forward(params: &DenoiserParams, x_t: &Matrix, t: f64) -> Result<Matrix> {
    params.forward(x_t, EmbedTime::Shared(t))
}

/// Parameter gradients of the scalar `Σ upstream_grad ⊙ denoiser_forward(params, x_t, t)`.
pub fn denoiser_backward(
    params: &DenoiserParams,
    x_t: &Matrix,
    t: f64,
    upstream_grad: &Matrix,
) -> Result<DenoiserParams> {
    let trace = params.forward_trace(x_t, EmbedTime::Shared(t))?;
    params.backward(&trace, upstream_grad)
}
