use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Attention projection `W_a`.
    pub w_att: Array2<f64>,
    /// Message projection `W_m`.
    pub w_msg: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w: Array2<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub entity_head: HeadParams,
    pub evidence_head: HeadParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Matrix,
    Bias,
}

fn uniform(rng: &mut impl Rng, d: usize) -> Array2<f64> {
    let bound = 1.0 / (d as f64).sqrt();
    Array2::from_shape_fn((d, d), |_| rng.gen_range(-bound..bound))
}

impl ModelParams {
    /// Every projection drawn from `U(-1/√d, 1/√d)`; biases start at zero.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.dim;
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                w_att: uniform(rng, d),
                w_msg: uniform(rng, d),
            })
            .collect();
        ModelParams {
            layers,
            entity_head: HeadParams {
                w: uniform(rng, d),
                bias: 0.0,
            },
            evidence_head: HeadParams {
                w: uniform(rng, d),
                bias: 0.0,
            },
        }
    }

    pub fn zeros(dim: usize, num_layers: usize) -> Self {
        let z = || Array2::zeros((dim, dim));
        ModelParams {
            layers: (0..num_layers)
                .map(|_| LayerParams {
                    w_att: z(),
                    w_msg: z(),
                })
                .collect(),
            entity_head: HeadParams { w: z(), bias: 0.0 },
            evidence_head: HeadParams { w: z(), bias: 0.0 },
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dim(), self.layers.len())
    }

    pub fn dim(&self) -> usize {
        self.entity_head.w.nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w_att"), TensorKind::Matrix, layer.w_att.as_slice().unwrap()));
            out.push((format!("layer{l}.w_msg"), TensorKind::Matrix, layer.w_msg.as_slice().unwrap()));
        }
        for (name, head) in [("entity", &self.entity_head), ("evidence", &self.evidence_head)] {
            out.push((format!("{name}.w"), TensorKind::Matrix, head.w.as_slice().unwrap()));
            out.push((format!("{name}.bias"), TensorKind::Bias, std::slice::from_ref(&head.bias)));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out: Vec<(TensorKind, &mut [f64])> = Vec::new();
        for layer in &mut self.layers {
            out.push((TensorKind::Matrix, layer.w_att.as_slice_mut().unwrap()));
            out.push((TensorKind::Matrix, layer.w_msg.as_slice_mut().unwrap()));
        }
        for head in [&mut self.entity_head, &mut self.evidence_head] {
            out.push((TensorKind::Matrix, head.w.as_slice_mut().unwrap()));
            out.push((TensorKind::Bias, std::slice::from_mut(&mut head.bias)));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Checks shapes against a model configuration.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let d = config.dim;
        if self.layers.len() != config.layers {
            return Err(Error::Shape(format!(
                "{} layers in params, {} in config",
                self.layers.len(),
                config.layers
            )));
        }
        let mats = self
            .layers
            .iter()
            .flat_map(|l| [&l.w_att, &l.w_msg])
            .chain([&self.entity_head.w, &self.evidence_head.w]);
        for m in mats {
            if m.dim() != (d, d) {
                return Err(Error::Shape(format!("matrix {:?}, expected ({d}, {d})", m.dim())));
            }
            if !m.is_standard_layout() {
                return Err(Error::Shape("matrix not in row-major layout".into()));
            }
        }
        if !self.is_finite() {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_respects_fan_in_bound() {
        let cfg = ModelConfig::new(16, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(&cfg, &mut rng);
        p.validate(&cfg).unwrap();
        assert_eq!(p.num_parameters(), 8 * 16 * 16 + 2);
        let bound = 0.25;
        for (_, kind, t) in p.tensors() {
            if kind == TensorKind::Matrix {
                assert!(t.iter().all(|x| x.abs() <= bound));
            }
        }
    }

    #[test]
    fn tensor_views_agree_in_order() {
        let cfg = ModelConfig::new(8, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::init(&cfg, &mut rng);
        let lens: Vec<usize> = p.tensors().iter().map(|(_, _, t)| t.len()).collect();
        let lens_mut: Vec<usize> = p.tensors_mut().iter().map(|(_, t)| t.len()).collect();
        assert_eq!(lens, lens_mut);
        p.tensors_mut()[0].1[3] = 42.0;
        assert_eq!(p.layers[0].w_att[[0, 3]], 42.0);
    }
}
