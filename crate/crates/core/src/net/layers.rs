//! Layers with hand-written backward passes. Each layer caches what its
//! backward pass needs during `forward_train`; `apply` is the pure inference
//! path.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{gemm, View};
use super::tensor::Tensor4;
use super::Scalar;
use crate::error::{invalid, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub dims: Vec<usize>,
    pub value: Vec<Scalar>,
    pub grad: Vec<Scalar>,
    /// Running statistics are stored with the weights but not optimized.
    pub trainable: bool,
}

impl Param {
    fn new(dims: Vec<usize>, fill: Scalar, trainable: bool) -> Self {
        let n = dims.iter().product();
        Self { dims, value: vec![fill; n], grad: vec![0.0; n], trainable }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    fn he_normal<R: Rng + ?Sized>(&mut self, fan_in: usize, rng: &mut R) {
        let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
        let normal = Normal::new(0.0, std).expect("positive deviation");
        self.value.iter_mut().for_each(|v| *v = normal.sample(rng) as Scalar);
    }
}

/// Visits parameters in a fixed topology order with dotted names.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.into()
    } else {
        format!("{prefix}.{name}")
    }
}

fn missing_cache(layer: &str) -> crate::Error {
    invalid!("{layer} backward called without a cached training forward pass")
}

/// Output size of a convolution along one axis.
pub fn conv_out(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Unfolds `src` (`c x h x w`) into `(c*k*k) x (oh*ow)` patch columns.
pub(crate) fn im2col(src: &[Scalar], [c, h, w]: [usize; 3], k: usize, s: usize, p: usize, [oh, ow]: [usize; 2], dst: &mut [Scalar]) {
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut dst[((ci * k + ky) * k + kx) * ohw..][..ohw];
                let (lo, hi) = valid_range(kx, s, p, w, ow);
                for oy in 0..oh {
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    out[..lo].iter_mut().for_each(|v| *v = 0.0);
                    out[hi..].iter_mut().for_each(|v| *v = 0.0);
                    if s == 1 {
                        let ix0 = lo + kx - p;
                        out[lo..hi].copy_from_slice(&line[ix0..ix0 + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = line[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch columns back into `dst`.
pub(crate) fn col2im(cols: &[Scalar], [c, h, w]: [usize; 3], k: usize, s: usize, p: usize, [oh, ow]: [usize; 2], dst: &mut [Scalar]) {
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * ohw..][..ohw];
                let (lo, hi) = valid_range(kx, s, p, w, ow);
                if lo >= hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for ox in lo..hi {
                        line[ox * s + kx - p] += src[ox];
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose tap `kx` lands inside `0..w`.
fn valid_range(kx: usize, s: usize, p: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    let hi = if w + p > kx { ((w - 1 + p - kx) / s + 1).min(ow) } else { 0 };
    (lo.min(ow), hi.max(lo.min(ow)))
}

/// 2D cross-correlation with zero padding. Kernel layout
/// `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernel: Param,
    pub bias: Param,
    stride: usize,
    pad: usize,
    input: Option<Tensor4>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if k == 0 || !(1..=2).contains(&stride) || in_channels == 0 || out_channels == 0 {
            return Err(invalid!("unsupported convolution {in_channels}->{out_channels} k={k} stride={stride}"));
        }
        Ok(Self {
            kernel: Param::new(vec![out_channels, in_channels, k, k], 0.0, true),
            bias: Param::new(vec![out_channels], 0.0, true),
            stride,
            pad,
            input: None,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.dims[2]
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.kernel_size();
        self.kernel.he_normal(self.in_channels() * k * k, rng);
        self.bias.value.iter_mut().for_each(|v| *v = 0.0);
    }

    fn geometry(&self, x: &Tensor4) -> Result<[usize; 2]> {
        x.require_channels(self.in_channels(), "convolution")?;
        let k = self.kernel_size();
        match (conv_out(x.height(), k, self.stride, self.pad), conv_out(x.width(), k, self.stride, self.pad)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok([oh, ow]),
            _ => Err(invalid!("input {}x{} is smaller than the {k}x{k} kernel", x.height(), x.width())),
        }
    }

    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        let [oh, ow] = self.geometry(x)?;
        let [n, c, h, w] = x.dims();
        let (k, oc) = (self.kernel_size(), self.out_channels());
        let (ck2, ohw) = (c * k * k, oh * ow);
        let mut out = Tensor4::zeros([n, oc, oh, ow]);
        let mut col = vec![0.0; ck2 * ohw];
        for b in 0..n {
            let y = out.item_mut(b);
            for (o, &bias) in self.bias.value.iter().enumerate() {
                y[o * ohw..(o + 1) * ohw].iter_mut().for_each(|v| *v = bias);
            }
            if k == 1 && self.stride == 1 && self.pad == 0 {
                gemm(&self.kernel.value, View::rm(oc, ck2), x.item(b), View::rm(ck2, ohw), 1.0, y);
            } else {
                im2col(x.item(b), [c, h, w], k, self.stride, self.pad, [oh, ow], &mut col);
                gemm(&self.kernel.value, View::rm(oc, ck2), &col, View::rm(ck2, ohw), 1.0, y);
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let x = self.input.take().ok_or_else(|| missing_cache("convolution"))?;
        let [oh, ow] = self.geometry(&x)?;
        let [n, c, h, w] = x.dims();
        if dy.dims() != [n, self.out_channels(), oh, ow] {
            return Err(invalid!("convolution gradient {:?} does not match output", dy.dims()));
        }
        let (k, oc) = (self.kernel_size(), self.out_channels());
        let (ck2, ohw) = (c * k * k, oh * ow);
        let pointwise = k == 1 && self.stride == 1 && self.pad == 0;
        let mut dx = Tensor4::zeros(x.dims());
        let mut col = vec![0.0; if pointwise { 0 } else { ck2 * ohw }];
        let flip = !pointwise && self.stride == 1 && self.pad < k;
        let flipped = flip.then(|| flip_kernel(&self.kernel.value, oc, c, k));
        let dcol_len = if pointwise { 0 } else if flip { oc * k * k * h * w } else { ck2 * ohw };
        let mut dcol = vec![0.0; dcol_len];
        for b in 0..n {
            let g = dy.item(b);
            for o in 0..oc {
                self.bias.grad[o] += g[o * ohw..(o + 1) * ohw].iter().sum::<Scalar>();
            }
            if pointwise {
                gemm(g, View::rm(oc, ohw), x.item(b), View::rm_t(ohw, ck2), 1.0, &mut self.kernel.grad);
                gemm(&self.kernel.value, View::rm_t(ck2, oc), g, View::rm(oc, ohw), 0.0, dx.item_mut(b));
            } else {
                im2col(x.item(b), [c, h, w], k, self.stride, self.pad, [oh, ow], &mut col);
                gemm(g, View::rm(oc, ohw), &col, View::rm_t(ohw, ck2), 1.0, &mut self.kernel.grad);
                if let Some(flipped) = &flipped {
                    // Stride 1: the input gradient is a correlation of the
                    // output gradient with the flipped, transposed kernel.
                    let full = k - 1 - self.pad;
                    im2col(g, [oc, oh, ow], k, 1, full, [h, w], &mut dcol);
                    gemm(flipped, View::rm(c, oc * k * k), &dcol, View::rm(oc * k * k, h * w), 0.0, dx.item_mut(b));
                } else {
                    gemm(&self.kernel.value, View::rm_t(ck2, oc), g, View::rm(oc, ohw), 0.0, &mut dcol);
                    col2im(&dcol, [c, h, w], k, self.stride, self.pad, [oh, ow], dx.item_mut(b));
                }
            }
        }
        Ok(dx)
    }
}

impl Parameters for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// `(out, in, k, k)` to `(in, out, k, k)` with both spatial axes reversed.
fn flip_kernel(kernel: &[Scalar], oc: usize, ic: usize, k: usize) -> Vec<Scalar> {
    let mut out = vec![0.0; kernel.len()];
    for o in 0..oc {
        for c in 0..ic {
            for ky in 0..k {
                for kx in 0..k {
                    out[((c * oc + o) * k + (k - 1 - ky)) * k + (k - 1 - kx)] = kernel[((o * ic + c) * k + ky) * k + kx];
                }
            }
        }
    }
    out
}

/// Transposed convolution; kernel layout `(in, out, k, k)`. With the same
/// kernel tensor it is the adjoint of the matching [`Conv2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv2d {
    pub kernel: Param,
    pub bias: Param,
    stride: usize,
    pad: usize,
    input: Option<Tensor4>,
}

impl Deconv2d {
    /// `k = 4, stride = 2, pad = 1` doubles the spatial size.
    pub fn new(in_channels: usize, out_channels: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if k == 0 || stride == 0 || in_channels == 0 || out_channels == 0 || 2 * pad >= k {
            return Err(invalid!("unsupported deconvolution {in_channels}->{out_channels} k={k} stride={stride} pad={pad}"));
        }
        Ok(Self {
            kernel: Param::new(vec![in_channels, out_channels, k, k], 0.0, true),
            bias: Param::new(vec![out_channels], 0.0, true),
            stride,
            pad,
            input: None,
        })
    }

    pub fn upsampling(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, 4, 2, 1)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims[0]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims[1]
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.kernel.dims[2];
        let fan_in = (self.in_channels() * k * k / (self.stride * self.stride)).max(1);
        self.kernel.he_normal(fan_in, rng);
        self.bias.value.iter_mut().for_each(|v| *v = 0.0);
    }

    fn out_hw(&self, x: &Tensor4) -> Result<[usize; 2]> {
        x.require_channels(self.in_channels(), "deconvolution")?;
        let k = self.kernel.dims[2];
        let size = |n: usize| ((n - 1) * self.stride + k).checked_sub(2 * self.pad);
        match (x.height(), x.width()) {
            (h, w) if h > 0 && w > 0 => Ok([size(h).unwrap_or(0), size(w).unwrap_or(0)]),
            _ => Err(invalid!("deconvolution input must be non-empty")),
        }
    }

    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        let [oh, ow] = self.out_hw(x)?;
        let [n, ic, h, w] = x.dims();
        let (k, oc) = (self.kernel.dims[2], self.out_channels());
        let (ok2, hw) = (oc * k * k, h * w);
        let mut out = Tensor4::zeros([n, oc, oh, ow]);
        let mut cols = vec![0.0; ok2 * hw];
        for b in 0..n {
            gemm(&self.kernel.value, View::rm_t(ok2, ic), x.item(b), View::rm(ic, hw), 0.0, &mut cols);
            let y = out.item_mut(b);
            for (o, &bias) in self.bias.value.iter().enumerate() {
                y[o * oh * ow..(o + 1) * oh * ow].iter_mut().for_each(|v| *v = bias);
            }
            col2im(&cols, [oc, oh, ow], k, self.stride, self.pad, [h, w], y);
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let x = self.input.take().ok_or_else(|| missing_cache("deconvolution"))?;
        let [oh, ow] = self.out_hw(&x)?;
        let [n, ic, h, w] = x.dims();
        let (k, oc) = (self.kernel.dims[2], self.out_channels());
        if dy.dims() != [n, oc, oh, ow] {
            return Err(invalid!("deconvolution gradient {:?} does not match output", dy.dims()));
        }
        let (ok2, hw) = (oc * k * k, h * w);
        let mut dx = Tensor4::zeros(x.dims());
        let mut dcols = vec![0.0; ok2 * hw];
        for b in 0..n {
            let g = dy.item(b);
            for o in 0..oc {
                self.bias.grad[o] += g[o * oh * ow..(o + 1) * oh * ow].iter().sum::<Scalar>();
            }
            im2col(g, [oc, oh, ow], k, self.stride, self.pad, [h, w], &mut dcols);
            gemm(&self.kernel.value, View::rm(ic, ok2), &dcols, View::rm(ok2, hw), 0.0, dx.item_mut(b));
            gemm(x.item(b), View::rm(ic, hw), &dcols, View::rm_t(hw, ok2), 1.0, &mut self.kernel.grad);
        }
        Ok(dx)
    }
}

impl Parameters for Deconv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Param,
    pub shift: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Tensor4, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Param::new(vec![channels], 1.0, true),
            shift: Param::new(vec![channels], 0.0, true),
            running_mean: Param::new(vec![channels], 0.0, false),
            running_var: Param::new(vec![channels], 1.0, false),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.dims[0]
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        x.require_channels(self.channels(), "batch norm")?;
        if x.batch() == 0 || x.height() * x.width() == 0 {
            return Err(invalid!("batch norm needs a non-empty batch"));
        }
        Ok(())
    }

    /// Normalizes with the running statistics.
    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let hw = x.height() * x.width();
        let mut y = x.clone();
        for b in 0..x.batch() {
            let item = y.item_mut(b);
            for c in 0..self.channels() {
                let inv = 1.0 / libm::sqrt(self.running_var.value[c] as f64 + BN_EPSILON);
                let a = (self.scale.value[c] as f64 * inv) as Scalar;
                let s = (self.shift.value[c] as f64 - self.running_mean.value[c] as f64 * self.scale.value[c] as f64 * inv) as Scalar;
                item[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = *v * a + s);
            }
        }
        Ok(y)
    }

    /// Normalizes with batch statistics and updates the running statistics.
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let [n, ch, h, w] = x.dims();
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut xhat = Tensor4::zeros(x.dims());
        let mut y = Tensor4::zeros(x.dims());
        let mut inv_std = vec![0.0; ch];
        for c in 0..ch {
            let plane = |b: usize| &x.item(b)[c * hw..(c + 1) * hw];
            let mean = (0..n).map(|b| plane(b).iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / m;
            let var = (0..n)
                .map(|b| plane(b).iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>())
                .sum::<f64>()
                / m;
            let inv = 1.0 / libm::sqrt(var + BN_EPSILON);
            inv_std[c] = inv;
            let (g, s) = (self.scale.value[c], self.shift.value[c]);
            for b in 0..n {
                let src = &x.item(b)[c * hw..(c + 1) * hw];
                let xh = &mut xhat.item_mut(b)[c * hw..(c + 1) * hw];
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = ((v as f64 - mean) * inv) as Scalar;
                }
                let out = &mut y.item_mut(b)[c * hw..(c + 1) * hw];
                for (d, &v) in out.iter_mut().zip(xh.iter()) {
                    *d = g * v + s;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let rm = &mut self.running_mean.value[c];
            *rm = (BN_MOMENTUM * *rm as f64 + (1.0 - BN_MOMENTUM) * mean) as Scalar;
            let rv = &mut self.running_var.value[c];
            *rv = (BN_MOMENTUM * *rv as f64 + (1.0 - BN_MOMENTUM) * unbiased) as Scalar;
        }
        self.cache = Some((xhat, inv_std));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let (xhat, inv_std) = self.cache.take().ok_or_else(|| missing_cache("batch norm"))?;
        if dy.dims() != xhat.dims() {
            return Err(invalid!("batch norm gradient {:?} does not match output", dy.dims()));
        }
        let [n, ch, h, w] = dy.dims();
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut dx = Tensor4::zeros(dy.dims());
        for c in 0..ch {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
            for b in 0..n {
                let g = &dy.item(b)[c * hw..(c + 1) * hw];
                let xh = &xhat.item(b)[c * hw..(c + 1) * hw];
                for (&gv, &xv) in g.iter().zip(xh) {
                    sum_dy += gv as f64;
                    sum_dy_xhat += gv as f64 * xv as f64;
                }
            }
            self.scale.grad[c] += sum_dy_xhat as Scalar;
            self.shift.grad[c] += sum_dy as Scalar;
            let gamma = self.scale.value[c] as f64;
            let k = gamma * inv_std[c] / m;
            for b in 0..n {
                let g = &dy.item(b)[c * hw..(c + 1) * hw];
                let xh = &xhat.item(b)[c * hw..(c + 1) * hw];
                let out = &mut dx.item_mut(b)[c * hw..(c + 1) * hw];
                for ((d, &gv), &xv) in out.iter_mut().zip(g).zip(xh) {
                    *d = (k * (m * gv as f64 - sum_dy - xv as f64 * sum_dy_xhat)) as Scalar;
                }
            }
        }
        Ok(dx)
    }
}

impl Parameters for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "scale"), &self.scale);
        f(&join(prefix, "shift"), &self.shift);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "scale"), &mut self.scale);
        f(&join(prefix, "shift"), &mut self.shift);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient of ReLU given its output `y`.
pub fn relu_backward(y: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    if y.dims() != dy.dims() {
        return Err(invalid!("relu gradient {:?} does not match output {:?}", dy.dims(), y.dims()));
    }
    let data = y.data().iter().zip(dy.data()).map(|(&o, &g)| if o > 0.0 { g } else { 0.0 }).collect();
    Tensor4::new(dy.dims(), data)
}

/// Convolution, batch normalization and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    output: Option<Tensor4>,
}

impl BasicBlock {
    pub fn new(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(in_channels, out_channels, k, stride, k / 2)?,
            bn: BatchNorm::new(out_channels),
            output: None,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv.init(rng);
    }

    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        if x.batch() == 0 {
            return Err(invalid!("basic block needs a non-empty batch"));
        }
        Ok(relu(&self.bn.apply(&self.conv.apply(x)?)?))
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        if x.batch() == 0 {
            return Err(invalid!("basic block needs a non-empty batch"));
        }
        let a = self.conv.forward_train(x)?;
        let y = relu(&self.bn.forward_train(&a)?);
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let y = self.output.take().ok_or_else(|| missing_cache("basic block"))?;
        let g = relu_backward(&y, dy)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }
}

impl Parameters for BasicBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// Three 3x3 basic blocks plus an identity shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual3 {
    pub blocks: [BasicBlock; 3],
}

impl Residual3 {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            blocks: [
                BasicBlock::new(channels, channels, 3, 1)?,
                BasicBlock::new(channels, channels, 3, 1)?,
                BasicBlock::new(channels, channels, 3, 1)?,
            ],
        })
    }

    pub fn channels(&self) -> usize {
        self.blocks[0].out_channels()
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.blocks.iter_mut().for_each(|b| b.init(rng));
    }

    /// The stacked blocks without the shortcut.
    pub fn branch(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.apply(&h)?;
        }
        Ok(h)
    }

    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut h = self.branch(x)?;
        h.add_assign(x)?;
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward_train(&h)?;
        }
        h.add_assign(x)?;
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let mut g = dy.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        g.add_assign(dy)?;
        Ok(g)
    }
}

impl Parameters for Residual3 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("{i}")), f);
        }
    }
}
