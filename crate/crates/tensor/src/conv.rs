use crate::error::{Result, TensorError};
use crate::gemm::{gemm, Layout};
use crate::ops::expect_rank4 as rank4;
use crate::{Float, Tensor};

/// Convolution hyper-parameters, written `in, out, k×k, stride, padding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel, stride, padding }
    }

    /// `k×k` convolution with "same" padding at the given stride.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self::new(in_channels, out_channels, kernel, stride, kernel / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "conv spec fields must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// `⌊(size + 2p − k)/s⌋ + 1`, or `None` when the kernel does not fit.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        window_output(size, self.kernel, self.stride, self.padding)
    }
}

fn window_output(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }

    /// Unfolds one sample `[C,H,W]` into `[C·k·k, oh·ow]`.
    fn im2col(&self, x: &[Float], cols: &mut [Float]) {
        let (k, s, p) = (self.k, self.s as isize, self.p as isize);
        let ohw = self.oh * self.ow;
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..self.oh {
                        let iy = oy as isize * s + ky as isize - p;
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            *d = if ix < 0 || ix >= self.w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`], accumulating into `x`.
    fn col2im(&self, cols: &[Float], x: &mut [Float]) {
        let (k, s, p) = (self.k, self.s as isize, self.p as isize);
        let ohw = self.oh * self.ow;
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..self.oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in row[oy * self.ow..(oy + 1) * self.ow].iter().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of `x: [N,Cin,H,W]` with `w: [Cout,Cin,k,k]` plus an
/// optional per-output-channel bias.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let (n, c, h, wd) = rank4("conv2d", x)?;
    if c != spec.in_channels {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d input",
            lhs: x.shape().to_vec(),
            rhs: spec.weight_shape().to_vec(),
        });
    }
    if w.shape() != spec.weight_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d weight",
            lhs: w.shape().to_vec(),
            rhs: spec.weight_shape().to_vec(),
        });
    }
    if let Some(b) = b {
        if b.numel() != spec.out_channels {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![spec.out_channels],
            });
        }
    }
    let (Some(oh), Some(ow)) = (spec.output_size(h), spec.output_size(wd)) else {
        return Err(TensorError::InvalidArgument(format!(
            "conv2d: kernel {} does not fit input {h}x{wd} with padding {}",
            spec.kernel, spec.padding
        )));
    };
    let geo = Geometry { c, h, w: wd, k: spec.kernel, s: spec.stride, p: spec.padding, oh, ow };
    let (cout, kk, ohw, chw) = (spec.out_channels, spec.fan_in(), oh * ow, c * h * wd);

    let mut out = vec![0.0; n * cout * ohw];
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; kk * ohw] };
    for s in 0..n {
        let xs = &x.data()[s * chw..(s + 1) * chw];
        let src: &[Float] = if geo.is_pointwise() {
            xs
        } else {
            geo.im2col(xs, &mut cols);
            &cols
        };
        let dst = &mut out[s * cout * ohw..(s + 1) * cout * ohw];
        gemm(1.0, w.data(), Layout::row_major(cout, kk), src, Layout::row_major(kk, ohw), 0.0, dst);
        if let Some(b) = b {
            for (co, bias) in b.data().iter().enumerate() {
                dst[co * ohw..(co + 1) * ohw].iter_mut().for_each(|v| *v += bias);
            }
        }
    }

    let (xt, wt) = (x.clone(), w.clone());
    let has_bias = b.is_some();
    let mut parents = vec![x, w];
    if let Some(b) = b {
        parents.push(b);
    }
    Ok(Tensor::from_op(vec![n, cout, oh, ow], out, &parents, move |g| {
        let mut gw = vec![0.0; cout * kk];
        let mut gx = if xt.requires_grad() { vec![0.0; n * chw] } else { Vec::new() };
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; kk * ohw] };
        let mut gcols = vec![0.0; kk * ohw];
        for s in 0..n {
            let gs = &g[s * cout * ohw..(s + 1) * cout * ohw];
            let xs = &xt.data()[s * chw..(s + 1) * chw];
            let src: &[Float] = if geo.is_pointwise() {
                xs
            } else {
                geo.im2col(xs, &mut cols);
                &cols
            };
            // dW += dY · colsᵀ
            gemm(1.0, gs, Layout::row_major(cout, ohw), src, Layout::transposed(kk, ohw), 1.0, &mut gw);
            if xt.requires_grad() {
                let gxs = &mut gx[s * chw..(s + 1) * chw];
                if geo.is_pointwise() {
                    gemm(1.0, wt.data(), Layout::transposed(cout, kk), gs, Layout::row_major(cout, ohw), 1.0, gxs);
                } else {
                    gemm(1.0, wt.data(), Layout::transposed(cout, kk), gs, Layout::row_major(cout, ohw), 0.0, &mut gcols);
                    geo.col2im(&gcols, gxs);
                }
            }
        }
        let mut grads = vec![if xt.requires_grad() { Some(gx) } else { None }, Some(gw)];
        if has_bias {
            let mut gb = vec![0.0; cout];
            for s in 0..n {
                for (co, acc) in gb.iter_mut().enumerate() {
                    *acc += g[(s * cout + co) * ohw..(s * cout + co + 1) * ohw].iter().sum::<Float>();
                }
            }
            grads.push(Some(gb));
        }
        grads
    }))
}

/// Square pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        PoolSpec { kernel, stride, padding }
    }

    pub fn output_size(&self, size: usize) -> Option<usize> {
        window_output(size, self.kernel, self.stride, self.padding)
    }
}

fn pool_geometry(op: &'static str, x: &Tensor, spec: PoolSpec) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = rank4(op, x)?;
    if spec.kernel == 0 || spec.stride == 0 || 2 * spec.padding > spec.kernel {
        return Err(TensorError::InvalidArgument(format!("{op}: invalid window {spec:?}")));
    }
    match (spec.output_size(h), spec.output_size(w)) {
        (Some(oh), Some(ow)) => Ok((n, c, h, w, oh, ow)),
        _ => Err(TensorError::InvalidArgument(format!("{op}: window {spec:?} does not fit {h}x{w}"))),
    }
}

/// Max pooling; padded positions never win. Ties go to the first maximum in
/// scan order, which also receives the gradient.
pub fn max_pool2d(x: &Tensor, spec: PoolSpec) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pool_geometry("max_pool2d", x, spec)?;
    let (k, s, p) = (spec.kernel as isize, spec.stride as isize, spec.padding as isize);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh as isize {
            for ox in 0..ow as isize {
                let mut best = Float::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..k {
                    let iy = oy * s + ky - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = ox * s + kx - p;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if xd[idx] > best || best_idx == usize::MAX {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let len = xd.len();
    Ok(Tensor::from_op(vec![n, c, oh, ow], out, &[x], move |g| {
        let mut gx = vec![0.0; len];
        for (gi, &idx) in g.iter().zip(&argmax) {
            gx[idx] += gi;
        }
        vec![Some(gx)]
    }))
}

/// Average pooling over the full window (padding counts as zeros).
pub fn avg_pool2d(x: &Tensor, spec: PoolSpec) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pool_geometry("avg_pool2d", x, spec)?;
    let (k, s, p) = (spec.kernel as isize, spec.stride as isize, spec.padding as isize);
    let norm = 1.0 / (spec.kernel * spec.kernel) as Float;
    let xd = x.data();
    let window = move |oy: isize, ox: isize| {
        (0..k).flat_map(move |ky| (0..k).map(move |kx| (oy * s + ky - p, ox * s + kx - p)))
            .filter(move |&(iy, ix)| iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize)
            .map(move |(iy, ix)| iy as usize * w + ix as usize)
    };
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh as isize {
            for ox in 0..ow as isize {
                out.push(window(oy, ox).map(|i| xd[base + i]).sum::<Float>() * norm);
            }
        }
    }
    let len = xd.len();
    Ok(Tensor::from_op(vec![n, c, oh, ow], out, &[x], move |g| {
        let mut gx = vec![0.0; len];
        let mut gi = g.iter();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh as isize {
                for ox in 0..ow as isize {
                    let v = gi.next().unwrap() * norm;
                    window(oy, ox).for_each(|i| gx[base + i] += v);
                }
            }
        }
        vec![Some(gx)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let x = Tensor::new(&[1, 1, 3, 3], (0..9).map(|v| v as Float).collect()).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, None, ConvSpec::new(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, ConvSpec::new(1, 1, 3, 1, 1)).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn stem_output_size() {
        let spec = ConvSpec::new(3, 64, 7, 2, 3);
        assert_eq!(spec.output_size(800), Some(400));
        assert_eq!(PoolSpec::new(3, 2, 1).output_size(400), Some(200));
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &w, None, ConvSpec::new(3, 1, 3, 1, 1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn max_pool_ramp() {
        let x = Tensor::new(&[1, 1, 4, 4], (0..16).map(|v| v as Float).collect()).unwrap();
        let y = max_pool2d(&x, PoolSpec::new(2, 2, 0)).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        let again = max_pool2d(&y, PoolSpec::new(1, 1, 0)).unwrap();
        assert_eq!(again.data(), y.data());
    }

    #[test]
    fn max_pool_of_constant_is_constant() {
        let x = Tensor::full(&[1, 2, 5, 5], 3.0);
        let y = max_pool2d(&x, PoolSpec::new(3, 2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }
}
