//! Checkpoint container.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! {
//!   "format": "mvpose-checkpoint/1",
//!   "meta": { ... free-form, e.g. the model config ... },
//!   "tensors": [ { "name": "layer0.g_theta.0.weight", "shape": [32, 16], "data": [ ... ] }, ... ]
//! }
//! ```
//!
//! Tensors appear in the parameter visiting order; `data` is row-major.
//! Floats are written in shortest round-trip form, so save → load is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mvpose-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture<P: Parameters + ?Sized>(params: &P, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        params.for_each("", &mut |name, shape, data| {
            tensors.push(NamedTensor {
                name,
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        Self {
            format: CHECKPOINT_FORMAT.into(),
            meta,
            tensors,
        }
    }

    /// Copies tensors into `params`, which must have the same layout.
    pub fn restore<P: Parameters + ?Sized>(&self, params: &mut P) -> Result<()> {
        let mut expected = Vec::new();
        params.for_each("", &mut |name, shape, _| {
            expected.push((name, shape.to_vec()))
        });
        if expected.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if name != &t.name
                || shape != &t.shape
                || t.data.len() != shape.iter().product::<usize>()
            {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
        }
        let mut it = self.tensors.iter();
        params.for_each_mut(&mut |d| d.copy_from_slice(&it.next().expect("counted").data));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::field(
                "format",
                format!("expected {CHECKPOINT_FORMAT}, got {}", ck.format),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, DenseParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let p = DenseParams::residual_block(5, 7, &mut r);
        let ck = Checkpoint::capture(&p, serde_json::json!({"kind": "test"}));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let mut q = DenseParams::residual_block(5, 7, &mut ChaCha8Rng::seed_from_u64(2));
        back.restore(&mut q).unwrap();
        let (a, b) = (flatten(&p), flatten(&q));
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.to_json(), ck.to_json());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let p = DenseParams::mlp(&[3, 4, 2], &mut r);
        let ck = Checkpoint::capture(&p, serde_json::Value::Null);
        let mut q = DenseParams::mlp(&[3, 5, 2], &mut r);
        assert!(matches!(ck.restore(&mut q), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            Checkpoint::load("/nonexistent/ckpt.json"),
            Err(Error::MissingCheckpoint(_))
        ));
    }
}
