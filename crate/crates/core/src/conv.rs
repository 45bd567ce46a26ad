//! Strided convolutional dictionaries.
//!
//! [`analyze`] is a strided, zero-padded correlation of an image with every
//! kernel of a [`DictionaryLayer`] (the `Φᵀ·` operator); [`synthesize`] is its
//! exact adjoint, a transposed convolution that paints each active unit's
//! kernel back into image space (the `Φ·` operator).
//!
//! Padding is symmetric, `(kernel - stride) / 2` per side, so an input of
//! height `h` always maps to an activation map of height `h / stride`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MdcaError, Result};
use crate::tensor::{ImageTensor, Shape};

/// Index arithmetic for one strided layer applied to one input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrideGeometry {
    pub input_h: usize,
    pub input_w: usize,
    pub stride: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl StrideGeometry {
    pub fn new(
        input_h: usize,
        input_w: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    ) -> Result<Self> {
        check_kernel(kernel_h, kernel_w, stride)?;
        if input_h == 0 || input_w == 0 || input_h % stride != 0 || input_w % stride != 0 {
            return Err(MdcaError::InvalidConfig(format!(
                "input {input_h}x{input_w} is not divisible by stride {stride}"
            )));
        }
        Ok(Self {
            input_h,
            input_w,
            stride,
            kernel_h,
            kernel_w,
            pad_h: (kernel_h - stride) / 2,
            pad_w: (kernel_w - stride) / 2,
        })
    }

    pub fn output_h(&self) -> usize {
        self.input_h / self.stride
    }

    pub fn output_w(&self) -> usize {
        self.input_w / self.stride
    }

    /// Top-left input coordinate covered by the window of output `(oi, oj)`;
    /// may be negative inside the padding.
    #[inline]
    pub fn origin(&self, oi: usize, oj: usize) -> (isize, isize) {
        (
            (oi * self.stride) as isize - self.pad_h as isize,
            (oj * self.stride) as isize - self.pad_w as isize,
        )
    }
}

fn check_kernel(kernel_h: usize, kernel_w: usize, stride: usize) -> Result<()> {
    if stride == 0 || kernel_h == 0 || kernel_w == 0 {
        return Err(MdcaError::InvalidConfig(
            "kernel sizes and stride must be positive".into(),
        ));
    }
    if kernel_h < stride || kernel_w < stride {
        return Err(MdcaError::InvalidConfig(format!(
            "kernel {kernel_h}x{kernel_w} smaller than stride {stride}"
        )));
    }
    if (kernel_h - stride) % 2 != 0 || (kernel_w - stride) % 2 != 0 {
        return Err(MdcaError::InvalidConfig(format!(
            "kernel {kernel_h}x{kernel_w} minus stride {stride} must be even for symmetric padding"
        )));
    }
    Ok(())
}

/// A bank of `num_features` kernels of shape `kernel_h x kernel_w x in_channels`
/// with a shared stride. Weights are stored `(feature, kh, kw, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryLayer {
    num_features: usize,
    kernel_h: usize,
    kernel_w: usize,
    in_channels: usize,
    stride: usize,
    weights: Vec<f32>,
}

impl DictionaryLayer {
    pub fn new(
        num_features: usize,
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        stride: usize,
        weights: Vec<f32>,
    ) -> Result<Self> {
        check_kernel(kernel_h, kernel_w, stride)?;
        if num_features == 0 || in_channels == 0 {
            return Err(MdcaError::InvalidConfig(
                "feature and channel counts must be positive".into(),
            ));
        }
        let expected = num_features * kernel_h * kernel_w * in_channels;
        if weights.len() != expected {
            return Err(MdcaError::ShapeMismatch(format!(
                "{} weights supplied, {expected} expected",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(MdcaError::InvalidConfig("non-finite dictionary weight".into()));
        }
        Ok(Self {
            num_features,
            kernel_h,
            kernel_w,
            in_channels,
            stride,
            weights,
        })
    }

    /// Gaussian kernels scaled to unit L2 norm.
    pub fn random<R: Rng + ?Sized>(
        num_features: usize,
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = num_features * kernel_h * kernel_w * in_channels;
        let weights = (0..n)
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f32>>();
        let mut layer = Self::new(num_features, kernel_h, kernel_w, in_channels, stride, weights)?;
        for f in 0..num_features {
            layer.resample_kernel(f, rng);
        }
        Ok(layer)
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn kernel(&self, f: usize) -> &[f32] {
        let n = self.kernel_len();
        &self.weights[f * n..(f + 1) * n]
    }

    pub fn kernel_mut(&mut self, f: usize) -> &mut [f32] {
        let n = self.kernel_len();
        &mut self.weights[f * n..(f + 1) * n]
    }

    pub fn kernel_norm(&self, f: usize) -> f64 {
        self.kernel(f)
            .iter()
            .map(|&w| w as f64 * w as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales kernel `f` to unit norm. Returns `false` (leaving the kernel
    /// untouched) when its norm is zero.
    pub fn normalize_kernel(&mut self, f: usize) -> bool {
        let norm = self.kernel_norm(f);
        if norm <= f64::MIN_POSITIVE || !norm.is_finite() {
            return false;
        }
        for w in self.kernel_mut(f) {
            *w = (*w as f64 / norm) as f32;
        }
        true
    }

    /// Replaces kernel `f` with a fresh unit-norm Gaussian draw.
    pub fn resample_kernel<R: Rng + ?Sized>(&mut self, f: usize, rng: &mut R) {
        loop {
            for w in self.kernel_mut(f) {
                *w = StandardNormal.sample(rng);
            }
            if self.normalize_kernel(f) {
                return;
            }
        }
    }

    pub fn geometry(&self, input_h: usize, input_w: usize) -> Result<StrideGeometry> {
        StrideGeometry::new(input_h, input_w, self.kernel_h, self.kernel_w, self.stride)
    }

    /// Activation-map shape produced by [`analyze`] on an input of this size.
    pub fn activation_shape(&self, input_h: usize, input_w: usize) -> Result<Shape> {
        let g = self.geometry(input_h, input_w)?;
        Ok(Shape::new(g.output_h(), g.output_w(), self.num_features))
    }
}

/// Copies the (zero-padded) input window of output `(oi, oj)` into `patch`,
/// laid out `(kh, kw, c)` like a kernel.
pub(crate) fn extract_patch(
    x: &ImageTensor,
    g: &StrideGeometry,
    oi: usize,
    oj: usize,
    patch: &mut [f32],
) {
    let c = x.channels();
    let (y0, x0) = g.origin(oi, oj);
    let row_len = g.kernel_w * c;
    let (q_lo, q_hi) = col_range(x0, g.kernel_w, x.width());
    patch.fill(0.0);
    for p in 0..g.kernel_h {
        let y = y0 + p as isize;
        if y < 0 || y >= x.height() as isize || q_lo >= q_hi {
            continue;
        }
        let src_start = x.index(y as usize, (x0 + q_lo as isize) as usize, 0);
        let n = (q_hi - q_lo) * c;
        let dst_start = p * row_len + q_lo * c;
        patch[dst_start..dst_start + n].copy_from_slice(&x.data()[src_start..src_start + n]);
    }
}

/// Range of kernel columns `[lo, hi)` that land inside `[0, width)`.
#[inline]
fn col_range(x0: isize, kernel_w: usize, width: usize) -> (usize, usize) {
    let lo = (-x0).max(0) as usize;
    let hi = ((width as isize - x0).min(kernel_w as isize)).max(0) as usize;
    (lo.min(kernel_w), hi)
}

/// Dot product accumulated in f64 with four independent lanes.
#[inline]
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] as f64 * y[0] as f64;
        acc[1] += x[1] as f64 * y[1] as f64;
        acc[2] += x[2] as f64 * y[2] as f64;
        acc[3] += x[3] as f64 * y[3] as f64;
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Strided correlation of `x` with every kernel of `d`.
///
/// Output has shape `(x.h / stride, x.w / stride, num_features)`.
pub fn analyze(x: &ImageTensor, d: &DictionaryLayer) -> Result<ImageTensor> {
    if x.channels() != d.in_channels {
        return Err(MdcaError::ShapeMismatch(format!(
            "analyze: input has {} channels, dictionary expects {}",
            x.channels(),
            d.in_channels
        )));
    }
    let g = d.geometry(x.height(), x.width())?;
    let (oh, ow, nf) = (g.output_h(), g.output_w(), d.num_features);
    let mut out = Vec::with_capacity(oh * ow * nf);
    let mut patch = vec![0.0f32; d.kernel_len()];
    for oi in 0..oh {
        for oj in 0..ow {
            extract_patch(x, &g, oi, oj, &mut patch);
            if patch.iter().all(|&v| v == 0.0) {
                out.extend(std::iter::repeat(0.0).take(nf));
                continue;
            }
            for f in 0..nf {
                out.push(dot_f64(d.kernel(f), &patch) as f32);
            }
        }
    }
    Ok(ImageTensor::from_parts(Shape::new(oh, ow, nf), out))
}

/// Transposed convolution: the adjoint of [`analyze`].
///
/// Output has shape `(a.h * stride, a.w * stride, in_channels)`.
pub fn synthesize(a: &ImageTensor, d: &DictionaryLayer) -> Result<ImageTensor> {
    if a.channels() != d.num_features {
        return Err(MdcaError::ShapeMismatch(format!(
            "synthesize: activation has {} channels, dictionary has {} features",
            a.channels(),
            d.num_features
        )));
    }
    let (h, w, c) = (a.height() * d.stride, a.width() * d.stride, d.in_channels);
    let g = d.geometry(h, w)?;
    let mut acc = vec![0.0f64; h * w * c];
    let mut patch = vec![0.0f64; d.kernel_len()];
    let row_len = g.kernel_w * c;
    for oi in 0..a.height() {
        for oj in 0..a.width() {
            let px = a.pixel(oi, oj);
            if px.iter().all(|&v| v == 0.0) {
                continue;
            }
            patch.fill(0.0);
            for (f, &coef) in px.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                let coef = coef as f64;
                for (p, &wv) in patch.iter_mut().zip(d.kernel(f)) {
                    *p += coef * wv as f64;
                }
            }
            let (y0, x0) = g.origin(oi, oj);
            let (q_lo, q_hi) = col_range(x0, g.kernel_w, w);
            if q_lo >= q_hi {
                continue;
            }
            for p in 0..g.kernel_h {
                let y = y0 + p as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                let dst_start = ((y as usize) * w + (x0 + q_lo as isize) as usize) * c;
                let src_start = p * row_len + q_lo * c;
                let n = (q_hi - q_lo) * c;
                for (o, s) in acc[dst_start..dst_start + n]
                    .iter_mut()
                    .zip(&patch[src_start..src_start + n])
                {
                    *o += *s;
                }
            }
        }
    }
    let data = acc.into_iter().map(|v| v as f32).collect();
    Ok(ImageTensor::from_parts(Shape::new(h, w, c), data))
}
