//! Saving and loading model weights.
//!
//! Besides the parameters, three scalar `meta.*` tensors record the input size,
//! width multiplier and fusion mode. Everything else about the configuration
//! is recovered from parameter names and shapes.

use std::path::Path;

use rvf_tensor::{Float, Tensor};

use super::{Fusion, Model, ModelConfig};
use crate::error::{CoreError, Result};
use crate::formats::weights::{decode, encode, NamedTensor, WeightsError};

fn meta(name: &str, v: f32) -> NamedTensor {
    NamedTensor { name: format!("meta.{name}"), dims: vec![1], data: vec![v] }
}

impl Model {
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        let fusion_code = Fusion::ALL.iter().position(|f| *f == self.cfg.fusion).expect("listed") as f32;
        let mut out = vec![
            meta("input_size", self.cfg.input_size as f32),
            meta("width_mult", self.cfg.width_mult as f32),
            meta("fusion", fusion_code),
        ];
        for (name, t) in self.params.names.iter().zip(&self.params.tensors) {
            out.push(NamedTensor {
                name: name.clone(),
                dims: t.shape().to_vec(),
                data: t.data().iter().map(|&v| v as f32).collect(),
            });
        }
        out
    }

    pub fn to_weights_bytes(&self) -> Result<Vec<u8>> {
        Ok(encode(&self.to_named_tensors())?)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let bytes = self.to_weights_bytes()?;
        std::fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
    }

    pub fn from_named_tensors(tensors: &[NamedTensor]) -> Result<Model> {
        let find = |name: &str| tensors.iter().find(|t| t.name == name);
        let scalar = |name: &str| -> Result<f64> {
            let t = find(name).ok_or_else(|| WeightsError::Missing(name.to_string()))?;
            match t.data.as_slice() {
                [v] if v.is_finite() => Ok(*v as f64),
                _ => Err(CoreError::invalid(format!("{name} must hold one finite value"))),
            }
        };
        let input_size = scalar("meta.input_size")?;
        let width_mult = scalar("meta.width_mult")?;
        let fusion_code = scalar("meta.fusion")?;
        let fusion = *Fusion::ALL
            .get(fusion_code as usize)
            .filter(|_| fusion_code.fract() == 0.0 && fusion_code >= 0.0)
            .ok_or_else(|| CoreError::invalid(format!("unknown fusion code {fusion_code}")))?;
        if !(input_size >= 4.0 && input_size <= 1e5 && input_size.fract() == 0.0) {
            return Err(CoreError::invalid(format!("implausible input size {input_size}")));
        }
        if !(width_mult > 0.0 && width_mult <= 16.0) {
            return Err(CoreError::invalid(format!("implausible width multiplier {width_mult}")));
        }
        let mut sac_kernels: Vec<usize> = tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix("fuse.sac.k")?.strip_suffix(".w")?.parse().ok())
            .collect();
        sac_kernels.dedup();
        let count = |f: &dyn Fn(usize) -> String| (0..64).take_while(|&i| find(&f(i)).is_some()).count();
        let head_tower_depth = count(&|i| format!("head.cls_tower.{i}.w"));
        let blocks_per_stage = count(&|i| format!("backbone.c3.block{i}.a.conv.w"));
        let num_classes = find("head.cls.w")
            .and_then(|t| t.dims.first().copied())
            .ok_or_else(|| WeightsError::Missing("head.cls.w".into()))?;
        let cfg = ModelConfig {
            input_size: input_size as usize,
            width_mult,
            fusion,
            sac_kernels,
            head_tower_depth,
            num_classes,
            blocks_per_stage,
            seed: 0,
        };
        let mut model = Model::new(cfg)?;
        let expected = model.params.names.len() + 3;
        if tensors.len() != expected {
            return Err(CoreError::invalid(format!(
                "weights hold {} tensors, configuration implies {expected}",
                tensors.len()
            )));
        }
        for (name, slot) in model.params.names.iter().zip(model.params.tensors.iter_mut()) {
            let t = find(name).ok_or_else(|| WeightsError::Missing(name.clone()))?;
            if t.dims != slot.shape() {
                return Err(CoreError::invalid(format!("{name}: shape {:?}, expected {:?}", t.dims, slot.shape())));
            }
            *slot = Tensor::parameter(&t.dims, t.data.iter().map(|&v| v as Float).collect())?;
        }
        Ok(model)
    }

    pub fn from_weights_bytes(bytes: &[u8]) -> Result<Model> {
        Model::from_named_tensors(&decode(bytes)?)
    }

    pub fn load_weights(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Model::from_weights_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_fusion() {
        for fusion in Fusion::ALL {
            let cfg = ModelConfig { fusion, sac_kernels: vec![3, 5], head_tower_depth: 1, seed: 9, ..ModelConfig::default() };
            let m = Model::new(cfg.clone()).unwrap();
            let back = Model::from_weights_bytes(&m.to_weights_bytes().unwrap()).unwrap();
            assert_eq!(back.cfg, ModelConfig { seed: 0, ..m.cfg.clone() });
            let max_w = m.params.tensors.iter().flat_map(|t| t.data().iter()).fold(0.0f64, |a, &v| a.max((v as f64).abs()));
            for (a, b) in m.params.tensors.iter().zip(&back.params.tensors) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!(((x - y) as f64).abs() <= 2f64.powi(-23) * max_w);
                }
            }
        }
    }

    #[test]
    fn missing_tensor_is_reported() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let mut t = m.to_named_tensors();
        t.retain(|t| t.name != "pan.p7.b");
        assert!(Model::from_named_tensors(&t).is_err());
    }
}
