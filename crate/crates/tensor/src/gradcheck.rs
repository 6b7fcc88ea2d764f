//! Central-difference verification of reverse-mode gradients.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TensorError};
use crate::{no_grad, Float, Tensor};

/// How the input space is probed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    /// One central difference per input coordinate.
    Coordinates,
    /// Random Gaussian directions over all inputs jointly; for inputs too
    /// large to enumerate.
    Directions { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: Float,
    pub probe: Probe,
    /// Skip coordinates with `|x| ≤ factor·step`. Used when the function has a
    /// kink at zero (relu), where central differences straddle the corner.
    pub kink_guard: Option<Float>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            probe: Probe::Coordinates,
            kink_guard: None,
        }
    }
}

impl GradCheckConfig {
    pub fn with_kink_guard(mut self) -> Self {
        self.kink_guard = Some(10.0);
        self
    }

    pub fn directional(count: usize, seed: u64) -> Self {
        GradCheckConfig {
            probe: Probe::Directions { count, seed },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: Float,
    pub checked: usize,
    pub skipped: usize,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: Float, numeric: Float) -> Float {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn scalar_value(t: &Tensor) -> Result<Float> {
    if t.numel() != 1 {
        return Err(TensorError::NonScalar(t.shape().to_vec()));
    }
    Ok(t.item())
}

fn evaluate<F>(f: &F, inputs: &[Tensor], offsets: &[Vec<Float>]) -> Result<Float>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let shifted: Vec<Tensor> = inputs
        .iter()
        .zip(offsets)
        .map(|(x, d)| {
            let data = x.data().iter().zip(d).map(|(a, b)| a + b).collect();
            Tensor::new(x.shape(), data)
        })
        .collect::<Result<_>>()?;
    no_grad(|| f(&shifted)).and_then(|y| scalar_value(&y))
}

/// Compares the gradient of the scalar function `f` at `inputs` computed by
/// [`Tensor::backward`] against central differences.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|x| Tensor::parameter(x.shape(), x.data().to_vec()))
        .collect::<Result<_>>()?;
    let out = f(&leaves)?;
    scalar_value(&out)?;
    out.backward()?;
    let grads: Vec<Vec<Float>> = leaves.iter().map(Tensor::grad_or_zeros).collect();

    let h = cfg.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut offsets: Vec<Vec<Float>> = inputs.iter().map(|x| vec![0.0; x.numel()]).collect();
    match cfg.probe {
        Probe::Coordinates => {
            for (j, x) in inputs.iter().enumerate() {
                for i in 0..x.numel() {
                    if let Some(factor) = cfg.kink_guard {
                        if x.data()[i].abs() <= factor * h {
                            report.skipped += 1;
                            continue;
                        }
                    }
                    offsets[j][i] = h;
                    let plus = evaluate(&f, inputs, &offsets)?;
                    offsets[j][i] = -h;
                    let minus = evaluate(&f, inputs, &offsets)?;
                    offsets[j][i] = 0.0;
                    let numeric = (plus - minus) / (2.0 * h);
                    let err = relative_error(grads[j][i], numeric);
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.checked += 1;
                }
            }
        }
        Probe::Directions { count, seed } => {
            let mut rng = StdRng::seed_from_u64(seed);
            for _ in 0..count {
                let dirs: Vec<Vec<Float>> = inputs
                    .iter()
                    .map(|x| {
                        (0..x.numel())
                            .map(|_| {
                                let v: f64 = StandardNormal.sample(&mut rng);
                                v as Float
                            })
                            .collect()
                    })
                    .collect();
                let analytic: Float = grads
                    .iter()
                    .zip(&dirs)
                    .map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<Float>())
                    .sum();
                for (o, d) in offsets.iter_mut().zip(&dirs) {
                    o.iter_mut().zip(d).for_each(|(o, d)| *o = h * d);
                }
                let plus = evaluate(&f, inputs, &offsets)?;
                for o in offsets.iter_mut() {
                    o.iter_mut().for_each(|v| *v = -*v);
                }
                let minus = evaluate(&f, inputs, &offsets)?;
                let numeric = (plus - minus) / (2.0 * h);
                let err = relative_error(analytic, numeric);
                report.max_rel_error = report.max_rel_error.max(err);
                report.checked += 1;
            }
        }
    }
    Ok(report)
}

/// Outcome of checking one operation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passed(&self, tolerance: Float) -> bool {
        self.report.checked > 0 && self.report.max_rel_error <= tolerance
    }
}

/// Coordinate-wise gradient checks of every differentiable operation on small
/// random inputs. Each operation is reduced to a scalar through a fixed random
/// weighting so no gradient is uniform.
pub fn op_suite(seed: u64) -> Result<Vec<OpCheck>> {
    use crate::conv::{avg_pool2d, conv2d, max_pool2d, ConvSpec, PoolSpec};
    use crate::ops::*;

    let mut rng = StdRng::seed_from_u64(seed);
    let mut randn = |shape: &[usize]| -> Tensor {
        let data = (0..crate::numel(shape))
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v as Float
            })
            .collect();
        Tensor::new(shape, data).expect("shape")
    };
    let x4 = randn(&[2, 3, 5, 5]);
    let y4 = randn(&[2, 3, 5, 5]);
    let m4 = randn(&[2, 1, 5, 5]);
    let s1 = randn(&[1]);
    let r4 = randn(&[2, 3, 5, 5]);
    let r_conv = randn(&[2, 4, 3, 3]);
    let r_pw = randn(&[2, 4, 5, 5]);
    let r_pool = randn(&[2, 3, 3, 3]);
    let r_up = randn(&[2, 3, 10, 10]);
    let r_up_odd = randn(&[2, 3, 9, 9]);
    let r_cat = randn(&[2, 4, 5, 5]);
    let w3 = randn(&[4, 3, 3, 3]);
    let b3 = randn(&[4]);
    let w1 = randn(&[4, 3, 1, 1]);
    let g3 = randn(&[3]);
    let c3 = randn(&[3]);
    let x_cat = randn(&[2, 1, 5, 5]);

    let dot = |y: Tensor, r: &Tensor| -> Result<Tensor> { Ok(sum(&mul(&y, r)?)) };
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    let mut run = |name: &'static str, report: Result<GradCheckReport>| -> Result<()> {
        out.push(OpCheck { name, report: report? });
        Ok(())
    };

    run("add", grad_check(|v| dot(add(&v[0], &v[1])?, &r4), &[x4.clone(), y4.clone()], cfg))?;
    run("add_channel_broadcast", grad_check(|v| dot(add(&v[0], &v[1])?, &r4), &[x4.clone(), m4.clone()], cfg))?;
    run("mul", grad_check(|v| dot(mul(&v[0], &v[1])?, &r4), &[x4.clone(), y4.clone()], cfg))?;
    run("mul_channel_broadcast", grad_check(|v| dot(mul(&v[1], &v[0])?, &r4), &[x4.clone(), m4.clone()], cfg))?;
    run("mul_scalar_broadcast", grad_check(|v| dot(mul(&v[0], &v[1])?, &r4), &[x4.clone(), s1.clone()], cfg))?;
    run("scale", grad_check(|v| dot(scale(&v[0], -1.7), &r4), &[x4.clone()], cfg))?;
    run("relu", grad_check(|v| dot(relu(&v[0]), &r4), &[x4.clone()], cfg.with_kink_guard()))?;
    run("sigmoid", grad_check(|v| dot(sigmoid(&v[0]), &r4), &[x4.clone()], cfg))?;
    run("exp", grad_check(|v| dot(exp(&v[0]), &r4), &[x4.clone()], cfg))?;
    run("mean", grad_check(|v| Ok(mean(&mul(&v[0], &v[0])?)), &[x4.clone()], cfg))?;
    run(
        "conv2d",
        grad_check(
            |v| dot(conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::new(3, 4, 3, 2, 1))?, &r_conv),
            &[x4.clone(), w3.clone(), b3.clone()],
            cfg,
        ),
    )?;
    run(
        "conv2d_pointwise",
        grad_check(
            |v| dot(conv2d(&v[0], &v[1], None, ConvSpec::new(3, 4, 1, 1, 0))?, &r_pw),
            &[x4.clone(), w1.clone()],
            cfg,
        ),
    )?;
    run("max_pool2d", grad_check(|v| dot(max_pool2d(&v[0], PoolSpec::new(3, 2, 1))?, &r_pool), &[x4.clone()], cfg))?;
    run("avg_pool2d", grad_check(|v| dot(avg_pool2d(&v[0], PoolSpec::new(3, 2, 1))?, &r_pool), &[x4.clone()], cfg))?;
    run("upsample2x", grad_check(|v| dot(upsample2x(&v[0])?, &r_up), &[x4.clone()], cfg))?;
    run("upsample_nearest", grad_check(|v| dot(upsample_nearest(&v[0], 9, 9)?, &r_up_odd), &[x4.clone()], cfg))?;
    run(
        "concat_channels",
        grad_check(|v| dot(concat_channels(&[v[0].clone(), v[1].clone()])?, &r_cat), &[x4.clone(), x_cat.clone()], cfg),
    )?;
    run(
        "channel_affine",
        grad_check(|v| dot(channel_affine(&v[0], &v[1], &v[2])?, &r4), &[x4.clone(), g3.clone(), c3.clone()], cfg),
    )?;
    run("reshape", grad_check(|v| dot(v[0].reshape(&[2, 3, 25, 1])?.reshape(&[2, 3, 5, 5])?, &r4), &[x4.clone()], cfg))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{mul, relu, sigmoid, sum};

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(&[5], vec![0.3, -1.2, 2.0, 0.0, 4.5]).unwrap();
        let w = Tensor::new(&[5], vec![1.5, -0.5, 0.25, 3.0, -2.0]).unwrap();
        let report = grad_check(
            move |xs| Ok(sum(&mul(&xs[0], &w)?)),
            &[x],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 5);
        assert!(report.max_rel_error <= 1e-10, "{report:?}");
    }

    #[test]
    fn sigmoid_chain_within_bound() {
        let x = Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let report = grad_check(
            |xs| Ok(sum(&sigmoid(&sigmoid(&xs[0])))),
            &[x],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-7, "{report:?}");
    }

    #[test]
    fn kink_coordinates_are_excluded() {
        let x = Tensor::new(&[3], vec![0.0, 1.0, -2.0]).unwrap();
        let report = grad_check(
            |xs| Ok(sum(&relu(&xs[0]))),
            &[x],
            GradCheckConfig::default().with_kink_guard(),
        )
        .unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error <= 1e-10);
    }
}
