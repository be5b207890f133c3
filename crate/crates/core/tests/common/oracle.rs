//! Independent references: a direct-loop convolution and the adjoint identity.

use demnet::ops::{self, ConvSpec, Padding};
use demnet::Tensor;
use rand::Rng;

use super::{dot, naive_conv, rng, uniform};

/// Random conv instances with extents up to 7x7x3 and their max relative deviation
/// from the loop oracle.
pub fn conv_vs_oracle(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let h = r.random_range(1..=7);
        let w = r.random_range(1..=7);
        let cin = r.random_range(1..=3);
        let cout = r.random_range(1..=3);
        let padding = if r.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let kmax = if padding == Padding::Valid { h.min(w).min(5) } else { 5 };
        let k = r.random_range(1..=kmax);
        let stride = r.random_range(1..=3);
        let spec = ConvSpec::new(k, cin, cout, padding).with_stride(stride);
        let x = uniform(&mut r, &[h, w, cin]);
        let wt = uniform(&mut r, &spec.conv_weight_shape());
        let b = uniform(&mut r, &[cout]);
        let fast = ops::conv2d_forward(&x, &wt, &b, &spec).unwrap();
        let slow = naive_conv(&x, &wt, &b, &spec);
        assert_eq!(fast.shape(), slow.shape(), "{spec:?} on {h}x{w}");
        let scale = slow.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let dev = fast.data().iter().zip(slow.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(dev / scale);
    }
    worst
}

/// Worst relative gap in `<conv(x), y> = <x, tconv(y)>` over random geometries.
pub fn adjoint_gap(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let k = r.random_range(1..=4);
        let stride = r.random_range(1..=4);
        let h = r.random_range(k..=k + 8);
        // the transposed layer pads back the rows/cols the stride skipped; both axes share one padding
        let op = (h - k) % stride;
        let w = k + r.random_range(0..=8 / stride) * stride + op;
        let (a, b) = (r.random_range(1..=3), r.random_range(1..=3));
        let conv = ConvSpec::new(k, a, b, Padding::Valid).with_stride(stride);
        let x = uniform(&mut r, &[h, w, a]);
        let wt = uniform(&mut r, &conv.conv_weight_shape());
        let y_shape = {
            let (oh, ow) = conv.conv_output_dims(h, w).unwrap();
            [oh, ow, b]
        };
        let y = uniform(&mut r, &y_shape);
        let tconv_h = ConvSpec::new(k, b, a, Padding::Valid).with_stride(stride).with_output_padding(op);
        let zeros_a = Tensor::zeros(&[a]).unwrap();
        let zeros_b = Tensor::zeros(&[b]).unwrap();
        let cx = ops::conv2d_forward(&x, &wt, &zeros_b, &conv).unwrap();
        let ty = ops::tconv2d_forward(&y, &wt, &zeros_a, &tconv_h).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs = dot(&cx, &y);
        let rhs = dot(&x, &ty);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    worst
}
