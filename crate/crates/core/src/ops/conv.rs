//! 2-D convolution and transposed convolution on `[H, W, C]` feature maps.
//!
//! Both directions are lowered to GEMM through an im2col buffer. The
//! convolution is a cross-correlation (the kernel is not flipped). The
//! transposed convolution is the exact adjoint of the convolution's linear
//! map: with weights `W` of shape `[kh, kw, A, B]`, `conv2d` maps `A -> B`
//! channels and `tconv2d` maps `B -> A`.
//!
//! Large im2col buffers are materialised a band of output rows at a time so
//! the 140x140 layers never hold more than `COL_BUDGET` scalars of scratch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const COL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(in / stride)`; odd overhang goes to the bottom/right.
    Same,
    /// Only full windows.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
    /// Extra rows/columns appended to a transposed convolution's output.
    pub output_padding: usize,
}

impl ConvSpec {
    /// Square kernel, unit stride.
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, padding: Padding) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            out_channels,
            stride_h: 1,
            stride_w: 1,
            padding,
            output_padding: 0,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride_h = stride;
        self.stride_w = stride;
        self
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("stride_h", self.stride_h),
            ("stride_w", self.stride_w),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::InvalidArgument(format!("conv spec {name} must be positive")));
            }
        }
        Ok(())
    }

    /// `[kh, kw, in, out]`.
    pub fn conv_weight_shape(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }

    /// `[kh, kw, out, in]`: the weights of the convolution this layer is the adjoint of.
    pub fn tconv_weight_shape(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.out_channels, self.in_channels]
    }

    pub fn conv_output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let g = self.conv_geometry(h, w)?;
        Ok((g.small_h, g.small_w))
    }

    pub fn tconv_output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let g = self.tconv_geometry(h, w)?;
        Ok((g.big_h, g.big_w))
    }

    fn conv_geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        let (oh, pad_top) = conv_axis(h, self.kernel_h, self.stride_h, self.padding, "height")?;
        let (ow, pad_left) = conv_axis(w, self.kernel_w, self.stride_w, self.padding, "width")?;
        Ok(Geometry {
            big_h: h,
            big_w: w,
            small_h: oh,
            small_w: ow,
            kh: self.kernel_h,
            kw: self.kernel_w,
            sh: self.stride_h,
            sw: self.stride_w,
            pad_top,
            pad_left,
        })
    }

    fn tconv_geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        if self.padding != Padding::Valid {
            return Err(Error::InvalidArgument("transposed convolution supports VALID padding only".into()));
        }
        if h == 0 || w == 0 {
            return Err(Error::Shape("transposed convolution input has a zero extent".into()));
        }
        Ok(Geometry {
            big_h: (h - 1) * self.stride_h + self.kernel_h + self.output_padding,
            big_w: (w - 1) * self.stride_w + self.kernel_w + self.output_padding,
            small_h: h,
            small_w: w,
            kh: self.kernel_h,
            kw: self.kernel_w,
            sh: self.stride_h,
            sw: self.stride_w,
            pad_top: 0,
            pad_left: 0,
        })
    }
}

fn conv_axis(input: usize, kernel: usize, stride: usize, padding: Padding, axis: &str) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                return Err(Error::Shape(format!(
                    "VALID output {axis} < 1: input {axis} {input} is smaller than kernel {kernel}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

/// Index relation shared by both directions: small-grid pixel `(y, x)` and
/// kernel tap `(ky, kx)` touch big-grid pixel `(y*sh + ky - pad_top, x*sw + kx - pad_left)`.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    big_h: usize,
    big_w: usize,
    small_h: usize,
    small_w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn big_coord(&self, y: usize, ky: usize, x: usize, kx: usize) -> Option<(usize, usize)> {
        let by = (y * self.sh + ky).checked_sub(self.pad_top)?;
        let bx = (x * self.sw + kx).checked_sub(self.pad_left)?;
        (by < self.big_h && bx < self.big_w).then_some((by, bx))
    }

    fn rows_per_band(&self, row_len: usize) -> usize {
        (COL_BUDGET / (self.small_w * row_len).max(1)).clamp(1, self.small_h)
    }
}

/// Gather `[rows * small_w, kh * kw * ch]` patches for small rows `r0..r1`.
fn im2col<T: Scalar>(big: &[T], ch: usize, g: &Geometry, r0: usize, r1: usize, cols: &mut Vec<T>) {
    let k = g.kh * g.kw * ch;
    cols.clear();
    cols.resize((r1 - r0) * g.small_w * k, T::zero());
    for y in r0..r1 {
        for x in 0..g.small_w {
            let row = &mut cols[((y - r0) * g.small_w + x) * k..][..k];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    if let Some((by, bx)) = g.big_coord(y, ky, x, kx) {
                        let src = &big[(by * g.big_w + bx) * ch..][..ch];
                        row[(ky * g.kw + kx) * ch..][..ch].copy_from_slice(src);
                    }
                }
            }
        }
    }
}

/// Scatter-add the patches of small rows `r0..r1` back onto the big grid.
fn col2im<T: Scalar>(cols: &[T], ch: usize, g: &Geometry, r0: usize, r1: usize, big: &mut [T]) {
    let k = g.kh * g.kw * ch;
    for y in r0..r1 {
        for x in 0..g.small_w {
            let row = &cols[((y - r0) * g.small_w + x) * k..][..k];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    if let Some((by, bx)) = g.big_coord(y, ky, x, kx) {
                        let dst = &mut big[(by * g.big_w + bx) * ch..][..ch];
                        let src = &row[(ky * g.kw + kx) * ch..][..ch];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

fn check_channels<T: Scalar>(input: &Tensor<T>, expected: usize, what: &str) -> Result<(usize, usize)> {
    let (h, w, c) = input.hwc()?;
    if c != expected {
        return Err(Error::Shape(format!("{what}: channel dimension is {c}, spec expects {expected}")));
    }
    Ok((h, w))
}

fn check_params<T: Scalar>(
    weights: &Tensor<T>,
    wshape: [usize; 4],
    bias: Option<&Tensor<T>>,
    cout: usize,
) -> Result<()> {
    if weights.shape() != wshape {
        let axis = weights
            .shape()
            .iter()
            .zip(wshape)
            .position(|(&a, b)| a != b)
            .map(|i| ["kernel_h", "kernel_w", "channel 2", "channel 3"][i.min(3)])
            .unwrap_or("rank");
        return Err(Error::Shape(format!(
            "weights have shape {:?}, spec implies {wshape:?} (mismatch in {axis})",
            weights.shape()
        )));
    }
    if let Some(bias) = bias {
        bias.expect_shape(&[cout], "bias")?;
    }
    Ok(())
}

/// Gradients of a (transposed) convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn bias_grad<T: Scalar>(grad_out: &[T], ch: usize) -> Tensor<T> {
    let mut gb = vec![T::zero(); ch];
    for px in grad_out.chunks_exact(ch) {
        for (b, &g) in gb.iter_mut().zip(px) {
            *b = *b + g;
        }
    }
    Tensor::from_vec(&[ch], gb).expect("positive channel count")
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (h, w) = check_channels(input, spec.in_channels, "conv2d input")?;
    check_params(weights, spec.conv_weight_shape(), Some(bias), spec.out_channels)?;
    let g = spec.conv_geometry(h, w)?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let k = g.kh * g.kw * cin;

    let mut out = vec![T::zero(); g.small_h * g.small_w * cout];
    for px in out.chunks_exact_mut(cout) {
        px.copy_from_slice(bias.data());
    }
    let band = g.rows_per_band(k);
    let mut cols = Vec::new();
    for r0 in (0..g.small_h).step_by(band) {
        let r1 = (r0 + band).min(g.small_h);
        im2col(input.data(), cin, &g, r0, r1, &mut cols);
        let p = (r1 - r0) * g.small_w;
        let dst = &mut out[r0 * g.small_w * cout..][..p * cout];
        T::gemm(
            p,
            k,
            cout,
            T::one(),
            &cols,
            k as isize,
            1,
            weights.data(),
            cout as isize,
            1,
            T::one(),
            dst,
            cout as isize,
            1,
        );
    }
    Tensor::from_vec(&[g.small_h, g.small_w, cout], out)
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    spec.validate()?;
    let (h, w) = check_channels(cached_input, spec.in_channels, "conv2d cached input")?;
    check_params(weights, spec.conv_weight_shape(), None, spec.out_channels)?;
    let g = spec.conv_geometry(h, w)?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    grad_out.expect_shape(&[g.small_h, g.small_w, cout], "conv2d grad_out")?;
    let k = g.kh * g.kw * cin;

    let mut grad_in = vec![T::zero(); h * w * cin];
    let mut grad_w = vec![T::zero(); k * cout];
    let band = g.rows_per_band(k);
    let mut cols = Vec::new();
    let mut grad_cols = Vec::new();
    for r0 in (0..g.small_h).step_by(band) {
        let r1 = (r0 + band).min(g.small_h);
        let p = (r1 - r0) * g.small_w;
        let go = &grad_out.data()[r0 * g.small_w * cout..][..p * cout];

        im2col(cached_input.data(), cin, &g, r0, r1, &mut cols);
        // dW[k, co] += cols^T[k, p] * dY[p, co]
        T::gemm(
            k,
            p,
            cout,
            T::one(),
            &cols,
            1,
            k as isize,
            go,
            cout as isize,
            1,
            T::one(),
            &mut grad_w,
            cout as isize,
            1,
        );

        // dcols[p, k] = dY[p, co] * W^T[co, k]
        grad_cols.clear();
        grad_cols.resize(p * k, T::zero());
        T::gemm(
            p,
            cout,
            k,
            T::one(),
            go,
            cout as isize,
            1,
            weights.data(),
            1,
            cout as isize,
            T::zero(),
            &mut grad_cols,
            k as isize,
            1,
        );
        col2im(&grad_cols, cin, &g, r0, r1, &mut grad_in);
    }

    Ok(ConvGrads {
        input: Tensor::from_vec(cached_input.shape(), grad_in)?,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: bias_grad(grad_out.data(), cout),
    })
}

/// Transposed convolution: scatter-add of each input pixel times the kernel.
///
/// `weights` has shape `[kh, kw, out_channels, in_channels]`; only VALID
/// padding is supported. Output extent is `(in - 1) * stride + kernel + output_padding`.
pub fn tconv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (h, w) = check_channels(input, spec.in_channels, "tconv2d input")?;
    check_params(weights, spec.tconv_weight_shape(), Some(bias), spec.out_channels)?;
    let g = spec.tconv_geometry(h, w)?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let k = g.kh * g.kw * cout;

    let mut out = vec![T::zero(); g.big_h * g.big_w * cout];
    let band = g.rows_per_band(k);
    let mut cols = Vec::new();
    for r0 in (0..g.small_h).step_by(band) {
        let r1 = (r0 + band).min(g.small_h);
        let p = (r1 - r0) * g.small_w;
        let x = &input.data()[r0 * g.small_w * cin..][..p * cin];
        cols.clear();
        cols.resize(p * k, T::zero());
        // cols[p, k] = X[p, ci] * Wm^T[ci, k], Wm = weights viewed as [k, ci]
        T::gemm(
            p,
            cin,
            k,
            T::one(),
            x,
            cin as isize,
            1,
            weights.data(),
            1,
            cin as isize,
            T::zero(),
            &mut cols,
            k as isize,
            1,
        );
        col2im(&cols, cout, &g, r0, r1, &mut out);
    }
    for px in out.chunks_exact_mut(cout) {
        for (o, &b) in px.iter_mut().zip(bias.data()) {
            *o = *o + b;
        }
    }
    Tensor::from_vec(&[g.big_h, g.big_w, cout], out)
}

/// Backward of [`tconv2d_forward`]. The input gradient is a forward
/// convolution of `grad_out` with the same weights.
pub fn tconv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    spec.validate()?;
    let (h, w) = check_channels(cached_input, spec.in_channels, "tconv2d cached input")?;
    check_params(weights, spec.tconv_weight_shape(), None, spec.out_channels)?;
    let g = spec.tconv_geometry(h, w)?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    grad_out.expect_shape(&[g.big_h, g.big_w, cout], "tconv2d grad_out")?;
    let k = g.kh * g.kw * cout;

    let mut grad_in = vec![T::zero(); h * w * cin];
    let mut grad_w = vec![T::zero(); k * cin];
    let band = g.rows_per_band(k);
    let mut cols = Vec::new();
    for r0 in (0..g.small_h).step_by(band) {
        let r1 = (r0 + band).min(g.small_h);
        let p = (r1 - r0) * g.small_w;
        im2col(grad_out.data(), cout, &g, r0, r1, &mut cols);
        let x = &cached_input.data()[r0 * g.small_w * cin..][..p * cin];
        let gi = &mut grad_in[r0 * g.small_w * cin..][..p * cin];
        // dX[p, ci] = dcols[p, k] * Wm[k, ci]
        T::gemm(
            p,
            k,
            cin,
            T::one(),
            &cols,
            k as isize,
            1,
            weights.data(),
            cin as isize,
            1,
            T::zero(),
            gi,
            cin as isize,
            1,
        );
        // dWm[k, ci] += dcols^T[k, p] * X[p, ci]
        T::gemm(k, p, cin, T::one(), &cols, 1, k as isize, x, cin as isize, 1, T::one(), &mut grad_w, cin as isize, 1);
    }

    Ok(ConvGrads {
        input: Tensor::from_vec(cached_input.shape(), grad_in)?,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: bias_grad(grad_out.data(), cout),
    })
}
