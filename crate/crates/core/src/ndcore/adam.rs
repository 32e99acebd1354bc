use serde::{Deserialize, Serialize};

use super::DenoiserParams;
use crate::{Error, Result};

/// Anything exposing its parameters as an ordered list of flat tensors.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamTensors for DenoiserParams {
    fn tensors(&self) -> Vec<&[f64]> {
        DenoiserParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        DenoiserParams::tensors_mut(self)
    }
}

impl ParamTensors for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// Adam moments plus hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    /// Zeroed accumulators shaped like `params`, β1 = 0.9, β2 = 0.999, eps = 1e-8.
    pub fn new<P: ParamTensors>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            second_moment: zeros.clone(),
            first_moment: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }

    fn check_shapes<P: ParamTensors>(&self, params: &P, grads: &P) -> Result<()> {
        let p = params.tensors();
        let g = grads.tensors();
        let same = p.len() == g.len()
            && p.len() == self.first_moment.len()
            && p.iter()
                .zip(&g)
                .zip(&self.first_moment)
                .all(|((a, b), m)| a.len() == b.len() && a.len() == m.len());
        if !same {
            return Err(Error::shape(
                "adam_update",
                "gradients, parameters and moments must have identical tensor shapes",
            ));
        }
        Ok(())
    }

    /// One bias-corrected Adam step, in place.
    pub fn step<P: ParamTensors>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        self.check_shapes(params, grads)?;
        for (ti, g) in grads.tensors().iter().enumerate() {
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {ti} entry {k} is {} at Adam step {}",
                    g[k],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Value-returning form of [`AdamState::step`].
pub fn adam_update<P: ParamTensors + Clone>(
    params: &P,
    grads: &P,
    state: &AdamState,
) -> Result<(P, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let p = vec![1.0, -2.0, 3.5];
        let s = AdamState::new(&p, 0.1);
        let (q, s2) = adam_update(&p, &vec![0.0; 3], &s).unwrap();
        assert_eq!(q, p);
        assert_eq!(s2.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        let p = vec![0.0];
        let s = AdamState::new(&p, 0.1);
        let (q, _) = adam_update(&p, &vec![1.0], &s).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((q[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let mut w = vec![0.0];
        let mut s = AdamState::new(&w, 0.1);
        for _ in 0..200 {
            let g = vec![2.0 * (w[0] - 3.0)];
            s.step(&mut w, &g).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn rejects_non_finite_and_shape_mismatch() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(&p, 0.1);
        let err = s.step(&mut p, &vec![f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(s.step, 0);
        assert!(s.step(&mut p, &vec![0.0]).is_err());
    }
}
