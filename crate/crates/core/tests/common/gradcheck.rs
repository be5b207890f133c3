//! Finite-difference checks for each layer primitive. Every function returns
//! the largest norm-wise relative error over the gradients it checks.
//!
//! Scalar losses are projections `<y, r>` onto a fixed random cotangent `r`,
//! so the analytic gradient is the primitive's backward applied to `r`.

use demnet::metrics::{mse, mse_grad};
use demnet::model::l2_penalty;
use demnet::ops::{self, ConvSpec, Padding};
use demnet::Tensor;

use super::{away_from_zero, dot, numeric_grad, rel_err, rng, uniform};

pub fn conv(spec: ConvSpec, h: usize, w: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[h, w, spec.in_channels]);
    let wt = uniform(&mut r, &spec.conv_weight_shape());
    let b = uniform(&mut r, &[spec.out_channels]);
    let y = ops::conv2d_forward(&x, &wt, &b, &spec).unwrap();
    let cot = uniform(&mut r, y.shape());
    let g = ops::conv2d_backward(&cot, &x, &wt, &spec).unwrap();
    let fx = numeric_grad(&x, |x| dot(&ops::conv2d_forward(x, &wt, &b, &spec).unwrap(), &cot));
    let fw = numeric_grad(&wt, |wt| dot(&ops::conv2d_forward(&x, wt, &b, &spec).unwrap(), &cot));
    let fb = numeric_grad(&b, |b| dot(&ops::conv2d_forward(&x, &wt, b, &spec).unwrap(), &cot));
    rel_err(&g.input, &fx).max(rel_err(&g.weights, &fw)).max(rel_err(&g.bias, &fb))
}

pub fn tconv(spec: ConvSpec, h: usize, w: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[h, w, spec.in_channels]);
    let wt = uniform(&mut r, &spec.tconv_weight_shape());
    let b = uniform(&mut r, &[spec.out_channels]);
    let y = ops::tconv2d_forward(&x, &wt, &b, &spec).unwrap();
    let cot = uniform(&mut r, y.shape());
    let g = ops::tconv2d_backward(&cot, &x, &wt, &spec).unwrap();
    let fx = numeric_grad(&x, |x| dot(&ops::tconv2d_forward(x, &wt, &b, &spec).unwrap(), &cot));
    let fw = numeric_grad(&wt, |wt| dot(&ops::tconv2d_forward(&x, wt, &b, &spec).unwrap(), &cot));
    let fb = numeric_grad(&b, |b| dot(&ops::tconv2d_forward(&x, &wt, b, &spec).unwrap(), &cot));
    rel_err(&g.input, &fx).max(rel_err(&g.weights, &fw)).max(rel_err(&g.bias, &fb))
}

/// Input is a random permutation of well-separated levels so no window has
/// a near-tie within the finite-difference step.
pub fn maxpool(h: usize, w: usize, c: usize, size: usize, seed: u64) -> f64 {
    use rand::seq::SliceRandom;
    let mut r = rng(seed);
    let n = h * w * c;
    let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * 1e-2).collect();
    levels.shuffle(&mut r);
    let x = Tensor::from_vec(&[h, w, c], levels).unwrap();
    let (y, am) = ops::maxpool_forward(&x, size, size).unwrap();
    let cot = uniform(&mut r, y.shape());
    let g = ops::maxpool_backward(&cot, &am, x.shape()).unwrap();
    let f = numeric_grad(&x, |x| dot(&ops::maxpool_forward(x, size, size).unwrap().0, &cot));
    rel_err(&g, &f)
}

pub fn relu(shape: &[usize], seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = away_from_zero(&mut r, shape, 1e-3);
    let cot = uniform(&mut r, shape);
    let g = ops::relu_backward(&cot, &x).unwrap();
    let f = numeric_grad(&x, |x| dot(&ops::relu(x), &cot));
    rel_err(&g, &f)
}

pub fn prelu(shape: &[usize], seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = away_from_zero(&mut r, shape, 1e-3);
    let a = uniform(&mut r, &[shape[2]]);
    let cot = uniform(&mut r, shape);
    let (gx, ga) = ops::prelu_backward(&cot, &x, &a).unwrap();
    let fx = numeric_grad(&x, |x| dot(&ops::prelu(x, &a).unwrap(), &cot));
    let fa = numeric_grad(&a, |a| dot(&ops::prelu(&x, a).unwrap(), &cot));
    rel_err(&gx, &fx).max(rel_err(&ga, &fa))
}

/// `mse(pred, gt) + l2 * sum(w^2)` with respect to the prediction and one kernel.
pub fn mse_l2(n: usize, seed: u64) -> f64 {
    use demnet::model::{Architecture, ModelParams};
    let mut r = rng(seed);
    let pred = uniform(&mut r, &[n, n, 1]);
    let gt = uniform(&mut r, &[n, n, 1]);
    let gp = mse_grad(&pred, &gt, pred.len()).unwrap();
    let fp = numeric_grad(&pred, |p| mse(p, &gt).unwrap());

    let lambda = 0.01;
    let mut params = ModelParams::<f64>::zeros(&Architecture::reduced());
    let wi = params.weight_indices().next().unwrap();
    params.tensors[wi] = uniform(&mut r, params.tensors[wi].shape());
    let analytic = params.tensors[wi].map(|v| 2.0 * lambda * v);
    let numeric = numeric_grad(&params.tensors[wi].clone(), |w| {
        let mut p = params.clone();
        p.tensors[wi] = w.clone();
        l2_penalty(&p, lambda)
    });
    rel_err(&gp, &fp).max(rel_err(&analytic, &numeric))
}

/// Every primitive configuration named by the gradient acceptance criterion.
pub fn suite() -> Vec<(&'static str, f64)> {
    let same = ConvSpec::new(3, 2, 3, Padding::Same);
    let same5 = ConvSpec::new(5, 2, 2, Padding::Same);
    let valid = ConvSpec::new(3, 3, 2, Padding::Valid);
    let t1 = ConvSpec::new(3, 2, 3, Padding::Valid);
    let t4 = ConvSpec::new(3, 2, 2, Padding::Valid).with_stride(4).with_output_padding(1);
    vec![
        ("conv 3x3 same", conv(same, 6, 5, 1)),
        ("conv 5x5 same", conv(same5, 5, 6, 2)),
        ("conv 3x3 same stride 2", conv(same.with_stride(2), 7, 6, 3)),
        ("conv 3x3 valid", conv(valid, 6, 7, 4)),
        ("tconv stride 1", tconv(t1, 4, 5, 5)),
        ("tconv stride 4 output_padding 1", tconv(t4, 3, 3, 6)),
        ("maxpool 4x4", maxpool(8, 8, 2, 4, 7)),
        ("relu", relu(&[5, 4, 3], 8)),
        ("prelu", prelu(&[5, 4, 3], 9)),
        ("mse + l2", mse_l2(6, 10)),
    ]
}
