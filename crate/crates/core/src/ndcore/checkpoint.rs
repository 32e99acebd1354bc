//! Parameter checkpoint files.
//!
//! Layout (JSON, one object):
//!
//! ```text
//! {
//!   "format": "tabimpute-denoiser",
//!   "format_version": 1,
//!   "data_dim": d,
//!   "hidden_dim": h,
//!   "layers": [
//!     {"name": "input",    "in": d,  "out": h,  "weight": [...], "bias": [...]},
//!     {"name": "hidden1",  "in": h,  "out": 2h, ...},
//!     {"name": "hidden2",  "in": 2h, "out": 2h, ...},
//!     {"name": "hidden3",  "in": 2h, "out": h,  ...},
//!     {"name": "output",   "in": h,  "out": d,  ...}
//!   ]
//! }
//! ```
//!
//! Weights are row-major `in × out`. Floats are written in shortest
//! round-trip form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DenoiserParams, Linear, Matrix};
use crate::{Error, Result};

pub const FORMAT_NAME: &str = "tabimpute-denoiser";
pub const FORMAT_VERSION: u32 = 1;

const LAYER_NAMES: [&str; 5] = ["input", "hidden1", "hidden2", "hidden3", "output"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsCheckpoint {
    pub format: String,
    pub format_version: u32,
    pub data_dim: usize,
    pub hidden_dim: usize,
    pub layers: Vec<LayerRecord>,
}

impl From<&DenoiserParams> for ParamsCheckpoint {
    fn from(p: &DenoiserParams) -> Self {
        let layers = p
            .layers()
            .into_iter()
            .zip(LAYER_NAMES)
            .map(|(l, name)| LayerRecord {
                name: name.to_string(),
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                weight: l.weight.data().to_vec(),
                bias: l.bias.clone(),
            })
            .collect();
        Self {
            format: FORMAT_NAME.to_string(),
            format_version: FORMAT_VERSION,
            data_dim: p.data_dim(),
            hidden_dim: p.hidden_dim(),
            layers,
        }
    }
}

impl TryFrom<ParamsCheckpoint> for DenoiserParams {
    type Error = Error;

    fn try_from(c: ParamsCheckpoint) -> Result<Self> {
        if c.format != FORMAT_NAME {
            return Err(Error::Checkpoint(format!("unknown format {:?}", c.format)));
        }
        if c.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                c.format_version
            )));
        }
        if c.layers.len() != 5 {
            return Err(Error::Checkpoint(format!("{} layers, expected 5", c.layers.len())));
        }
        let mut layers = Vec::with_capacity(5);
        for (rec, name) in c.layers.into_iter().zip(LAYER_NAMES) {
            if rec.name != name {
                return Err(Error::Checkpoint(format!("layer {:?} where {name:?} expected", rec.name)));
            }
            let weight = Matrix::from_vec(rec.in_dim, rec.out_dim, rec.weight)
                .map_err(|e| Error::Checkpoint(format!("layer {name}: {e}")))?;
            layers.push(Linear {
                weight,
                bias: rec.bias,
            });
        }
        let mut it = layers.into_iter();
        let mut next = || it.next().expect("five layers checked above");
        let params = DenoiserParams {
            input: next(),
            hidden: [next(), next(), next()],
            output: next(),
        };
        params.validate()?;
        if params.data_dim() != c.data_dim || params.hidden_dim() != c.hidden_dim {
            return Err(Error::Checkpoint("header dims disagree with layer shapes".into()));
        }
        Ok(params)
    }
}

pub fn params_to_json(p: &DenoiserParams) -> Result<String> {
    Ok(serde_json::to_string(&ParamsCheckpoint::from(p))?)
}

pub fn params_from_json(s: &str) -> Result<DenoiserParams> {
    let c: ParamsCheckpoint = serde_json::from_str(s)?;
    c.try_into()
}

pub fn save_params(path: impl AsRef<Path>, p: &DenoiserParams) -> Result<()> {
    std::fs::write(path, params_to_json(p)?)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<DenoiserParams> {
    params_from_json(&std::fs::read_to_string(path)?)
}

/// SHA-256 over the little-endian bytes of every parameter, hex encoded.
pub fn params_fingerprint(p: &DenoiserParams) -> String {
    let mut h = Sha256::new();
    for t in p.tensors() {
        for v in t {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let p = DenoiserParams::new(3, 6, &mut seeded(4)).unwrap();
        let q = params_from_json(&params_to_json(&p).unwrap()).unwrap();
        assert_eq!(p, q);
        assert_eq!(params_fingerprint(&p), params_fingerprint(&q));
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let p = DenoiserParams::new(2, 4, &mut seeded(4)).unwrap();
        let mut c = ParamsCheckpoint::from(&p);
        c.format_version = 9;
        assert!(DenoiserParams::try_from(c).is_err());
        let mut c = ParamsCheckpoint::from(&p);
        c.layers[2].out_dim = 3;
        c.layers[2].weight.truncate(24);
        assert!(DenoiserParams::try_from(c).is_err());
    }
}
