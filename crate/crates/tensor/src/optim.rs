//! Stochastic gradient descent with momentum and L2 weight decay.

use crate::error::{Result, TensorError};
use crate::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: Float,
    pub momentum: Float,
    pub weight_decay: Float,
}

/// One update of a flat parameter buffer:
/// `v ← momentum·v + grad + weight_decay·param`, then `param ← param − lr·v`.
pub fn sgd_step(param: &mut [Float], grad: &[Float], velocity: &mut [Float], cfg: &SgdConfig) {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), velocity.len());
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
        *p -= cfg.lr * *v;
    }
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: SgdConfig,
    velocity: Vec<Vec<Float>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd { cfg, velocity: Vec::new() }
    }

    /// Applies one step using the gradients accumulated on `params`, replacing
    /// each tensor with a fresh leaf (which also clears its gradient).
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(TensorError::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if v.len() != p.numel() {
                return Err(TensorError::DataLength { len: v.len(), shape: p.shape().to_vec() });
            }
            let grad = p.grad_or_zeros();
            let mut data = p.data().to_vec();
            sgd_step(&mut data, &grad, v, &self.cfg);
            *p = Tensor::parameter(p.shape(), data)?;
        }
        Ok(())
    }
}
