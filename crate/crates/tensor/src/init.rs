//! Parameter initialisation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TensorError};
use crate::{numel, Float, Tensor};

/// He/MSRA initialisation: i.i.d. `N(0, 2/fan_in)` weights.
pub fn msra_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(TensorError::InvalidArgument("msra_init: fan_in must be positive".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..numel(shape)).map(|_| normal.sample(rng) as Float).collect();
    Tensor::parameter(shape, data)
}

/// `N(0, std²)` weights, used for prediction layers.
pub fn normal_init<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Result<Tensor> {
    let normal = Normal::new(0.0, std)
        .map_err(|e| TensorError::InvalidArgument(format!("normal_init: {e}")))?;
    let data = (0..numel(shape)).map(|_| normal.sample(rng) as Float).collect();
    Tensor::parameter(shape, data)
}

pub fn constant_init(shape: &[usize], value: Float) -> Tensor {
    Tensor::parameter(shape, vec![value; numel(shape)]).expect("shape and data agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn variance_matches_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fan_in = 72;
        let t = msra_init(&[1_000_000], fan_in, &mut rng).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / fan_in as f64;
        assert!((var - expect).abs() / expect < 0.02, "var {var} vs {expect}");
    }

    #[test]
    fn zero_fan_in_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(msra_init(&[3], 0, &mut rng).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = msra_init(&[16], 9, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = msra_init(&[16], 9, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
