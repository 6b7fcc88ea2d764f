use crate::error::{Result, TensorError};
use crate::{Float, Tensor};

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    /// `[N,1,H,W]` repeated over the channels of `[N,C,H,W]`.
    Channel { n: usize, c: usize, hw: usize },
    Scalar,
}

impl Broadcast {
    fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Channel { c, hw, .. } => {
                let plane = i / hw;
                (plane / c) * hw + i % hw
            }
            Broadcast::Scalar => 0,
        }
    }

    fn reduce(self, g: &[Float], small_len: usize) -> Vec<Float> {
        match self {
            Broadcast::Same => g.to_vec(),
            Broadcast::Scalar => vec![g.iter().sum()],
            Broadcast::Channel { n, c, hw } => {
                let mut out = vec![0.0; small_len];
                for b in 0..n {
                    let dst = &mut out[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        let src = &g[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                out
            }
        }
    }
}

fn broadcast_rule(big: &[usize], small: &[usize]) -> Option<Broadcast> {
    if big == small {
        return Some(Broadcast::Same);
    }
    if small.iter().product::<usize>() == 1 {
        return Some(Broadcast::Scalar);
    }
    if big.len() == 4 && small.len() == 4 && small[1] == 1 && big[0] == small[0] && big[2..] == small[2..] {
        return Some(Broadcast::Channel {
            n: big[0],
            c: big[1],
            hw: big[2] * big[3],
        });
    }
    None
}

/// Orders `(a, b)` as `(big, small)` and resolves the broadcast.
fn resolve<'a>(op: &'static str, a: &'a Tensor, b: &'a Tensor) -> Result<(&'a Tensor, &'a Tensor, Broadcast)> {
    if let Some(rule) = broadcast_rule(a.shape(), b.shape()) {
        if a.numel() >= b.numel() {
            return Ok((a, b, rule));
        }
    }
    if let Some(rule) = broadcast_rule(b.shape(), a.shape()) {
        return Ok((b, a, rule));
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

/// Elementwise sum. `b` may also be a one-channel map broadcast over the
/// channels of `a`, or a single element (and vice versa).
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (big, small, rule) = resolve("add", a, b)?;
    let sd = small.data();
    let data: Vec<Float> = big
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + sd[rule.index(i)])
        .collect();
    let small_len = small.numel();
    Ok(Tensor::from_op(big.shape().to_vec(), data, &[big, small], move |g| {
        vec![Some(g.to_vec()), Some(rule.reduce(g, small_len))]
    }))
}

/// Elementwise product with the same broadcasting rules as [`add`].
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (big, small, rule) = resolve("mul", a, b)?;
    let bd = big.data();
    let sd = small.data();
    let data: Vec<Float> = bd
        .iter()
        .enumerate()
        .map(|(i, v)| v * sd[rule.index(i)])
        .collect();
    let (bt, st) = (big.clone(), small.clone());
    let small_len = small.numel();
    Ok(Tensor::from_op(big.shape().to_vec(), data, &[big, small], move |g| {
        let (bd, sd) = (bt.data(), st.data());
        let gb = if bt.requires_grad() {
            Some(g.iter().enumerate().map(|(i, gi)| gi * sd[rule.index(i)]).collect())
        } else {
            None
        };
        let gs = if st.requires_grad() {
            let prod: Vec<Float> = g.iter().zip(bd).map(|(gi, v)| gi * v).collect();
            Some(rule.reduce(&prod, small_len))
        } else {
            None
        };
        vec![gb, gs]
    }))
}

pub fn scale(x: &Tensor, factor: Float) -> Tensor {
    let data = x.data().iter().map(|v| v * factor).collect();
    Tensor::from_op(x.shape().to_vec(), data, &[x], move |g| {
        vec![Some(g.iter().map(|v| v * factor).collect())]
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    let xt = x.clone();
    Tensor::from_op(x.shape().to_vec(), data, &[x], move |g| {
        let gx = g
            .iter()
            .zip(xt.data())
            .map(|(gi, &v)| if v > 0.0 { *gi } else { 0.0 })
            .collect();
        vec![Some(gx)]
    })
}

pub(crate) fn sigmoid_scalar(v: Float) -> Float {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data: Vec<Float> = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    let y = data.clone();
    Tensor::from_op(x.shape().to_vec(), data, &[x], move |g| {
        vec![Some(g.iter().zip(&y).map(|(gi, s)| gi * s * (1.0 - s)).collect())]
    })
}

pub fn exp(x: &Tensor) -> Tensor {
    let data: Vec<Float> = x.data().iter().map(|v| v.exp()).collect();
    let y = data.clone();
    Tensor::from_op(x.shape().to_vec(), data, &[x], move |g| {
        vec![Some(g.iter().zip(&y).map(|(gi, e)| gi * e).collect())]
    })
}

pub fn sum(x: &Tensor) -> Tensor {
    let total: Float = x.data().iter().sum();
    let n = x.numel();
    Tensor::from_op(vec![1], vec![total], &[x], move |g| vec![Some(vec![g[0]; n])])
}

pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel().max(1);
    scale(&sum(x), 1.0 / n as Float)
}

pub(crate) fn expect_rank4(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::Rank {
            op,
            expected: 4,
            shape: x.shape().to_vec(),
        }),
    }
}


/// Concatenates `NCHW` tensors along the channel axis, in argument order.
pub fn concat_channels(xs: &[Tensor]) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::InvalidArgument("concat_channels of zero tensors".into()))?;
    let (n, _, h, w) = expect_rank4("concat_channels", first)?;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let (xn, xc, xh, xw) = expect_rank4("concat_channels", x)?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        channels.push(xc);
    }
    let total: usize = channels.iter().sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for (x, &c) in xs.iter().zip(&channels) {
            data.extend_from_slice(&x.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    let parents: Vec<&Tensor> = xs.iter().collect();
    Ok(Tensor::from_op(vec![n, total, h, w], data, &parents, move |g| {
        let mut grads: Vec<Vec<Float>> = channels.iter().map(|&c| Vec::with_capacity(n * c * hw)).collect();
        for b in 0..n {
            let mut offset = b * total * hw;
            for (gx, &c) in grads.iter_mut().zip(&channels) {
                gx.extend_from_slice(&g[offset..offset + c * hw]);
                offset += c * hw;
            }
        }
        grads.into_iter().map(Some).collect()
    }))
}

/// Nearest-neighbour resize of the spatial axes to exactly `out_h × out_w`.
///
/// Output pixel `(y, x)` reads input pixel `(⌊y·H/out_h⌋, ⌊x·W/out_w⌋)`, so an
/// integer factor replicates each input pixel into a block.
pub fn upsample_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = expect_rank4("upsample_nearest", x)?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(TensorError::InvalidArgument(format!(
            "upsample_nearest: cannot map {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let src: Vec<usize> = (0..out_h)
        .flat_map(|oy| {
            let sy = oy * h / out_h;
            (0..out_w).map(move |ox| sy * w + ox * w / out_w)
        })
        .collect();
    let (hw, ohw) = (h * w, out_h * out_w);
    let xd = x.data();
    let mut data = Vec::with_capacity(n * c * ohw);
    for plane in 0..n * c {
        let base = plane * hw;
        data.extend(src.iter().map(|&s| xd[base + s]));
    }
    Ok(Tensor::from_op(vec![n, c, out_h, out_w], data, &[x], move |g| {
        let mut gx = vec![0.0; n * c * hw];
        for plane in 0..n * c {
            let gp = &g[plane * ohw..(plane + 1) * ohw];
            let dst = &mut gx[plane * hw..(plane + 1) * hw];
            for (gi, &s) in gp.iter().zip(&src) {
                dst[s] += gi;
            }
        }
        vec![Some(gx)]
    }))
}

pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = expect_rank4("upsample2x", x)?;
    upsample_nearest(x, 2 * h, 2 * w)
}

/// Per-channel `gamma·x + beta`, the normalisation-free stand-in for batch norm.
pub fn channel_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = expect_rank4("channel_affine", x)?;
    for p in [gamma, beta] {
        if p.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "channel_affine",
                lhs: x.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let hw = h * w;
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let mut data = Vec::with_capacity(xd.len());
    for b in 0..n {
        for ch in 0..c {
            let src = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            data.extend(src.iter().map(|v| gd[ch] * v + bd[ch]));
        }
    }
    let (xt, gt) = (x.clone(), gamma.clone());
    Ok(Tensor::from_op(x.shape().to_vec(), data, &[x, gamma, beta], move |g| {
        let (xd, gd) = (xt.data(), gt.data());
        let mut gx = vec![0.0; g.len()];
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for ((gxi, gi), xi) in gx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xd[r]) {
                    *gxi = gi * gd[ch];
                    ggamma[ch] += gi * xi;
                    gbeta[ch] += gi;
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<Float>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn add_zeros_and_mul_ones_are_identities() {
        let x = t(&[1, 2, 2, 2], (0..8).map(|v| v as Float - 3.5).collect());
        assert_eq!(add(&x, &Tensor::zeros(&[1, 2, 2, 2])).unwrap().data(), x.data());
        assert_eq!(mul(&x, &Tensor::full(&[1, 2, 2, 2], 1.0)).unwrap().data(), x.data());
    }

    #[test]
    fn channel_broadcast_repeats_the_map() {
        let x = t(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let m = t(&[1, 1, 1, 2], vec![10.0, 100.0]);
        assert_eq!(mul(&x, &m).unwrap().data(), &[10.0, 200.0, 30.0, 400.0]);
        assert_eq!(mul(&m, &x).unwrap().data(), &[10.0, 200.0, 30.0, 400.0]);
        assert_eq!(add(&x, &m).unwrap().data(), &[11.0, 102.0, 13.0, 104.0]);
    }

    #[test]
    fn incompatible_shapes_are_reported() {
        let err = add(&Tensor::zeros(&[1, 2, 2, 2]), &Tensor::zeros(&[1, 2, 3, 2])).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "add", .. }));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid(&Tensor::scalar(0.0)).item(), 0.5);
        assert!(sigmoid(&Tensor::scalar(-800.0)).item() >= 0.0);
    }

    #[test]
    fn simple_gradients() {
        let x = Tensor::parameter(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        sum(&x).backward().unwrap();
        assert_eq!(&*x.grad().unwrap(), &vec![1.0; 3]);

        let x = Tensor::parameter(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        scale(&sum(&mul(&x, &x).unwrap()), 0.5).backward().unwrap();
        assert_eq!(&*x.grad().unwrap(), x.data());
    }

    #[test]
    fn concat_is_ordered_and_identity_on_one() {
        let a = t(&[1, 1, 1, 2], vec![1.0, 2.0]);
        let b = t(&[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let ab = concat_channels(&[a.clone(), b.clone()]).unwrap();
        let ba = concat_channels(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(ab.shape(), &[1, 3, 1, 2]);
        assert_ne!(ab.data(), ba.data());
        assert_eq!(concat_channels(&[a.clone()]).unwrap().data(), a.data());
    }

    #[test]
    fn upsample_sizes() {
        let x = t(&[1, 1, 1, 1], vec![7.0]);
        assert_eq!(upsample2x(&x).unwrap().data(), &[7.0; 4]);
        let y = Tensor::zeros(&[1, 3, 13, 13]);
        assert_eq!(upsample_nearest(&y, 25, 25).unwrap().shape(), &[1, 3, 25, 25]);
    }
}
