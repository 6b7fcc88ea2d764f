//! Parameter registry and the small layer vocabulary the network is built from.

use rand::Rng;
use rvf_tensor::init::{constant_init, msra_init, normal_init};
use rvf_tensor::{add, channel_affine, conv2d, relu, ConvSpec, Float, Tensor};

use crate::error::{CoreError, Result};

/// Named parameters in registration order.
#[derive(Debug, Clone, Default)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl Params {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }
}

/// How a new convolution's weights are drawn.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Msra,
    Normal(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: usize,
    pub b: Option<usize>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new<R: Rng>(
        p: &mut Params,
        rng: &mut R,
        name: &str,
        spec: ConvSpec,
        bias: Option<Float>,
        init: Init,
    ) -> Result<Conv> {
        let shape = spec.weight_shape();
        let w = match init {
            Init::Msra => msra_init(&shape, spec.fan_in(), rng)?,
            Init::Normal(std) => normal_init(&shape, std, rng)?,
        };
        let w = p.push(format!("{name}.w"), w);
        let b = bias.map(|v| p.push(format!("{name}.b"), constant_init(&[spec.out_channels], v)));
        Ok(Conv { w, b, spec })
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        Ok(conv2d(x, &p[self.w], self.b.map(|i| &p[i]), self.spec)?)
    }
}

/// Per-channel scale and optional shift.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub gamma: usize,
    pub beta: Option<usize>,
    pub channels: usize,
}

impl Affine {
    pub fn new(p: &mut Params, name: &str, channels: usize, gamma: Float, shift: bool) -> Affine {
        let g = p.push(format!("{name}.gamma"), constant_init(&[channels], gamma));
        let beta = shift.then(|| p.push(format!("{name}.beta"), constant_init(&[channels], 0.0)));
        Affine { gamma: g, beta, channels }
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let zero;
        let beta = match self.beta {
            Some(i) => &p[i],
            None => {
                zero = Tensor::zeros(&[self.channels]);
                &zero
            }
        };
        Ok(channel_affine(x, &p[self.gamma], beta)?)
    }
}

/// Bias-free convolution followed by a per-channel affine.
#[derive(Debug, Clone, Copy)]
pub struct ConvAffine {
    pub conv: Conv,
    pub affine: Affine,
}

impl ConvAffine {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        p: &mut Params,
        rng: &mut R,
        name: &str,
        spec: ConvSpec,
        gamma: Float,
        shift: bool,
    ) -> Result<ConvAffine> {
        let conv = Conv::new(p, rng, &format!("{name}.conv"), spec, None, Init::Msra)?;
        let affine = Affine::new(p, &format!("{name}.affine"), spec.out_channels, gamma, shift);
        Ok(ConvAffine { conv, affine })
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        self.affine.forward(p, &self.conv.forward(p, x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

/// Residual block; the last affine of the residual branch starts at zero so
/// every block is the identity (or its projection) at initialisation.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub branch: Vec<ConvAffine>,
    pub shortcut: Option<ConvAffine>,
}

impl ResBlock {
    pub fn new<R: Rng>(
        p: &mut Params,
        rng: &mut R,
        name: &str,
        kind: BlockKind,
        in_c: usize,
        out_c: usize,
        stride: usize,
        shift: bool,
    ) -> Result<ResBlock> {
        let branch = match kind {
            BlockKind::Basic => vec![
                ConvAffine::new(p, rng, &format!("{name}.a"), ConvSpec::new(in_c, out_c, 3, stride, 1), 1.0, shift)?,
                ConvAffine::new(p, rng, &format!("{name}.b"), ConvSpec::new(out_c, out_c, 3, 1, 1), 0.0, shift)?,
            ],
            BlockKind::Bottleneck => {
                let mid = (out_c / 4).max(1);
                vec![
                    ConvAffine::new(p, rng, &format!("{name}.a"), ConvSpec::new(in_c, mid, 1, 1, 0), 1.0, shift)?,
                    ConvAffine::new(p, rng, &format!("{name}.b"), ConvSpec::new(mid, mid, 3, stride, 1), 1.0, shift)?,
                    ConvAffine::new(p, rng, &format!("{name}.c"), ConvSpec::new(mid, out_c, 1, 1, 0), 0.0, shift)?,
                ]
            }
        };
        let shortcut = if stride != 1 || in_c != out_c {
            Some(ConvAffine::new(p, rng, &format!("{name}.proj"), ConvSpec::new(in_c, out_c, 1, stride, 0), 1.0, shift)?)
        } else {
            None
        };
        Ok(ResBlock { branch, shortcut })
    }

    pub fn forward(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.branch.len() - 1;
        for (i, layer) in self.branch.iter().enumerate() {
            h = layer.forward(p, &h)?;
            if i != last {
                h = relu(&h);
            }
        }
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(p, x)?,
            None => x.clone(),
        };
        Ok(relu(&add(&h, &skip)?))
    }
}

pub fn check_channels(what: &str, x: &Tensor, expected: usize) -> Result<()> {
    match x.shape() {
        [_, c, _, _] if *c == expected => Ok(()),
        shape => Err(CoreError::invalid(format!("{what}: expected [N, {expected}, H, W], got {shape:?}"))),
    }
}
