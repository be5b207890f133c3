#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use demnet::ops::{ConvSpec, Padding};
use demnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Uniform values kept at least `gap` away from zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .unwrap()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut g = x.zeros_like();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.sum_sq().sqrt().max(b.sum_sq().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.dot(b).unwrap()
}

/// Direct convolution by explicit loops over output pixel, output channel,
/// kernel tap and input channel.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let (h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, cout) = (spec.kernel_h, spec.kernel_w, spec.out_channels);
    let (sh, sw) = (spec.stride_h, spec.stride_w);
    let (oh, ow, pt, pl) = match spec.padding {
        Padding::Valid => ((h - kh) / sh + 1, (wd - kw) / sw + 1, 0, 0),
        Padding::Same => {
            let oh = h.div_ceil(sh);
            let ow = wd.div_ceil(sw);
            let th = ((oh - 1) * sh + kh).saturating_sub(h);
            let tw = ((ow - 1) * sw + kw).saturating_sub(wd);
            (oh, ow, th / 2, tw / 2)
        }
    };
    let mut out = Tensor::zeros(&[oh, ow, cout]).unwrap();
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b.data()[co];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * sh + ky) as isize - pt as isize;
                        let ix = (ox * sw + kx) as isize - pl as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = x.data()[(iy as usize * wd + ix as usize) * cin + ci];
                            let wv = w.data()[((ky * kw + kx) * cin + ci) * cout + co];
                            acc += xv * wv;
                        }
                    }
                }
                out.data_mut()[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    out
}

/// One line per acceptance criterion, greppable as `[PASS]` / `[FAIL]`.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id}: {name} ({detail})");
}
