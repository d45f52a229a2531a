//! Dense numeric arrays and the differentiable primitives.
//!
//! A [`Tensor`] is a flat row-major `(channel, row, column)` array. Image
//! tensors keep pixel magnitudes on the 0–255 scale. All operations here are
//! pure functions: they take references and return fresh values, so tensors
//! are safe to share across threads once built.
//!
//! Convolution is plain correlation (no kernel flip), stride 1, no padding;
//! an input of `H×W` convolved with a `kh×kw` kernel yields
//! `(H−kh+1)×(W−kw+1)`. Summation order within one output element is fixed
//! (channel-major over the kernel window), so results are reproducible
//! bit-for-bit.

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type for tensors.
///
/// Training and inference run in `f32`; gradient checks and oracle tests
/// instantiate the same code in `f64`.
pub trait Scalar:
    Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense array with explicit `(channels, height, width)` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Wrap existing data; `data.len()` must equal `channels * height * width`
    /// and every shape component must be at least 1.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "tensor shape components must be >= 1, got ({channels}, {height}, {width})"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "tensor data length {} does not match shape ({channels}, {height}, {width}) = {expected}",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![T::zero(); channels * height * width])
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Build element-wise from `(channel, row, column)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: T) {
        let i = self.offset(c, y, x);
        self.data[i] = value;
    }

    /// Contiguous pixel row `(c, y, ..)`.
    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[T] {
        let start = self.offset(c, y, 0);
        &self.data[start..start + self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [T] {
        let start = self.offset(c, y, 0);
        let w = self.width;
        &mut self.data[start..start + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combine with another tensor of the same shape.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "tensor shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn clamp_values(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Re-instantiate in another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64().expect("finite element")))
                .collect(),
        }
    }
}

/// Filter bank of a convolutional layer: `out_channels` kernels of shape
/// `in_channels × kernel_h × kernel_w`, plus one bias per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// `weights` is `(k, c, u, v)` row-major with length
    /// `out_channels * in_channels * kernel_h * kernel_w`; `bias` has one
    /// entry per output channel. Kernel dims must be odd and >= 1.
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::Argument(format!(
                "channel counts must be >= 1, got out={out_channels} in={in_channels}"
            )));
        }
        if kernel_h == 0 || kernel_w == 0 || kernel_h.is_multiple_of(2) || kernel_w.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "kernel dims must be odd and >= 1, got {kernel_h}x{kernel_w}"
            )));
        }
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != expected {
            return Err(Error::Dimension(format!(
                "weight length {} does not match {out_channels}x{in_channels}x{kernel_h}x{kernel_w} = {expected}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Dimension(format!(
                "bias length {} does not match out_channels {out_channels}",
                bias.len()
            )));
        }
        Ok(ConvParams {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            vec![T::zero(); out_channels * in_channels * kernel_h * kernel_w],
            vec![T::zero(); out_channels],
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Flat length of one kernel: `in_channels * kernel_h * kernel_w`.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Contiguous weights of output channel `k`, laid out `(c, u, v)`.
    #[inline]
    pub fn filter(&self, k: usize) -> &[T] {
        let len = self.filter_len();
        &self.weights[k * len..(k + 1) * len]
    }

    #[inline]
    pub fn weight(&self, k: usize, c: usize, u: usize, v: usize) -> T {
        self.weights[((k * self.in_channels + c) * self.kernel_h + u) * self.kernel_w + v]
    }

    /// Kernel row `(k, c, u, ..)` of length `kernel_w`.
    #[inline]
    fn kernel_row(&self, k: usize, c: usize, u: usize) -> &[T] {
        let start = ((k * self.in_channels + c) * self.kernel_h + u) * self.kernel_w;
        &self.weights[start..start + self.kernel_w]
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.out_channels == other.out_channels
            && self.in_channels == other.in_channels
            && self.kernel_h == other.kernel_h
            && self.kernel_w == other.kernel_w
    }

    /// `self += factor * other`, element-wise over weights and bias.
    pub fn add_scaled(&mut self, other: &Self, factor: T) -> Result<()> {
        if !self.same_geometry(other) {
            return Err(Error::Dimension(format!(
                "parameter geometry differs: {}x{}x{}x{} vs {}x{}x{}x{}",
                self.out_channels,
                self.in_channels,
                self.kernel_h,
                self.kernel_w,
                other.out_channels,
                other.in_channels,
                other.kernel_h,
                other.kernel_w
            )));
        }
        for (w, &g) in self.weights.iter_mut().zip(&other.weights) {
            *w = *w + factor * g;
        }
        for (b, &g) in self.bias.iter_mut().zip(&other.bias) {
            *b = *b + factor * g;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            weights: self
                .weights
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64().expect("finite weight")))
                .collect(),
            bias: self
                .bias
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64().expect("finite bias")))
                .collect(),
        }
    }
}

/// Spatial output dims of a valid convolution, or an error if the input is
/// smaller than the kernel.
fn valid_output_dims<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<(usize, usize)> {
    if input.channels() != params.in_channels() {
        return Err(Error::Dimension(format!(
            "input has {} channels but kernels expect {} (input {:?}, kernel {}x{}x{}x{})",
            input.channels(),
            params.in_channels(),
            input.shape(),
            params.out_channels,
            params.in_channels,
            params.kernel_h,
            params.kernel_w
        )));
    }
    if input.height() < params.kernel_h() || input.width() < params.kernel_w() {
        return Err(Error::Dimension(format!(
            "input {}x{} is smaller than kernel {}x{}",
            input.height(),
            input.width(),
            params.kernel_h(),
            params.kernel_w()
        )));
    }
    Ok((
        input.height() - params.kernel_h() + 1,
        input.width() - params.kernel_w() + 1,
    ))
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Valid (unpadded, stride-1) cross-correlation of `input` with the filter
/// bank, plus bias: `out[k,i,j] = b_k + Σ_{c,u,v} w[k,c,u,v] · in[c,i+u,j+v]`.
///
/// Rows of input patches are gathered into a reusable buffer so each output
/// element reduces to one contiguous dot product; the reduction order over
/// `(c, u, v)` matches the naive nested-loop definition exactly.
pub fn conv2d_valid<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let (out_h, out_w) = valid_output_dims(input, params)?;
    let k_out = params.out_channels();
    let (kh, kw) = (params.kernel_h(), params.kernel_w());
    let channels = params.in_channels();
    let flen = params.filter_len();

    let mut out = Tensor::zeros(k_out, out_h, out_w)?;
    // Patch buffer for one output row: out_w patches of (c, u, v) windows.
    let mut patches = vec![T::zero(); out_w * flen];
    for i in 0..out_h {
        for c in 0..channels {
            for u in 0..kh {
                let src = input.row(c, i + u);
                let base = (c * kh + u) * kw;
                for j in 0..out_w {
                    patches[j * flen + base..j * flen + base + kw]
                        .copy_from_slice(&src[j..j + kw]);
                }
            }
        }
        for k in 0..k_out {
            let filter = params.filter(k);
            let bias = params.bias()[k];
            let row = out.row_mut(k, i);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = bias + dot(filter, &patches[j * flen..(j + 1) * flen]);
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss through [`conv2d_valid`].
///
/// Given the loss cotangent `grad_output` on the forward output, returns the
/// cotangent on the input together with parameter gradients of the same
/// geometry as `params`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_output: &Tensor<T>,
) -> Result<(Tensor<T>, ConvParams<T>)> {
    let (out_h, out_w) = valid_output_dims(input, params)?;
    if grad_output.shape() != (params.out_channels(), out_h, out_w) {
        return Err(Error::Dimension(format!(
            "grad_output shape {:?} does not match forward output ({}, {out_h}, {out_w})",
            grad_output.shape(),
            params.out_channels()
        )));
    }
    let (kh, kw) = (params.kernel_h(), params.kernel_w());
    let channels = params.in_channels();
    let k_out = params.out_channels();

    let mut grad_weights = vec![T::zero(); k_out * channels * kh * kw];
    let mut grad_bias = vec![T::zero(); k_out];
    let mut grad_input = Tensor::zeros(input.channels(), input.height(), input.width())?;

    for (k, bias_slot) in grad_bias.iter_mut().enumerate() {
        let mut bias_acc = T::zero();
        for i in 0..out_h {
            let g_row = grad_output.row(k, i);
            for &g in g_row {
                bias_acc = bias_acc + g;
            }
            for c in 0..channels {
                for u in 0..kh {
                    let x_row = input.row(c, i + u);
                    // d/dw[k,c,u,v] accumulates g[k,i,j] * x[c,i+u,j+v].
                    let wbase = ((k * channels + c) * kh + u) * kw;
                    for v in 0..kw {
                        grad_weights[wbase + v] =
                            grad_weights[wbase + v] + dot(g_row, &x_row[v..v + out_w]);
                    }
                    // d/dx[c,i+u,j+v] accumulates g[k,i,j] * w[k,c,u,v].
                    let k_row = params.kernel_row(k, c, u);
                    let gx_row = grad_input.row_mut(c, i + u);
                    for (j, &g) in g_row.iter().enumerate() {
                        for (v, &w) in k_row.iter().enumerate() {
                            gx_row[j + v] = gx_row[j + v] + g * w;
                        }
                    }
                }
            }
        }
        *bias_slot = bias_acc;
    }
    let grad_params = ConvParams::new(k_out, channels, kh, kw, grad_weights, grad_bias)?;
    Ok((grad_input, grad_params))
}

/// Rectified linear unit, element-wise `max(v, 0)`.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Backward pass of [`relu`]: the cotangent passes where `input > 0` and is
/// zero elsewhere (including exactly at zero).
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_output, |x, g| if x > T::zero() { g } else { T::zero() })
}

/// Bilinear resize with corner-aligned sampling.
///
/// Output dims are `round(dim * scale)`, which must stay >= 1. A scale of 1
/// returns an exact copy.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Argument(format!(
            "resize scale must be a positive finite number, got {scale}"
        )));
    }
    if scale == 1.0 {
        return Ok(input.clone());
    }
    let out_h = (input.height() as f64 * scale).round() as usize;
    let out_w = (input.width() as f64 * scale).round() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "resize scale {scale} collapses {}x{} to a zero dimension",
            input.height(),
            input.width()
        )));
    }

    let src_pos = |i: usize, out_len: usize, in_len: usize| -> f64 {
        if out_len == 1 {
            0.0
        } else {
            i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
        }
    };

    Tensor::from_fn(input.channels(), out_h, out_w, |c, y, x| {
        let sy = src_pos(y, out_h, input.height());
        let sx = src_pos(x, out_w, input.width());
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(input.height() - 1);
        let x1 = (x0 + 1).min(input.width() - 1);
        let fy = sy - y0 as f64;
        let fx = sx - x0 as f64;
        let v00 = input.at(c, y0, x0).to_f64().unwrap();
        let v01 = input.at(c, y0, x1).to_f64().unwrap();
        let v10 = input.at(c, y1, x0).to_f64().unwrap();
        let v11 = input.at(c, y1, x1).to_f64().unwrap();
        let top = v00 * (1.0 - fx) + v01 * fx;
        let bottom = v10 * (1.0 - fx) + v11 * fx;
        T::from_f64_lossy(top * (1.0 - fy) + bottom * fy)
    })
}
