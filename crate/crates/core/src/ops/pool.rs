use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat source index (into the pooled input) of every output cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgMax {
    pub indices: Vec<usize>,
    pub output_shape: [usize; 3],
}

/// Max pooling over disjoint `size x size` windows.
///
/// Ties resolve to the lowest flat input index in the window.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, size: usize, stride: usize) -> Result<(Tensor<T>, ArgMax)> {
    if size == 0 || size != stride {
        return Err(Error::InvalidArgument(format!(
            "max pool needs disjoint windows (size == stride > 0), got size {size} stride {stride}"
        )));
    }
    let (h, w, c) = input.hwc()?;
    if h % stride != 0 || w % stride != 0 {
        return Err(Error::Shape(format!("max pool stride {stride} does not divide input extents {h}x{w}")));
    }
    let (oh, ow) = (h / stride, w / stride);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut indices = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (oy * stride * w + ox * stride) * c + ch;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = ((oy * stride + dy) * w + ox * stride + dx) * c + ch;
                        // row-major scan visits indices in increasing order
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                indices.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[oh, ow, c], out)?, ArgMax { indices, output_shape: [oh, ow, c] }))
}

pub fn maxpool_backward<T: Scalar>(grad_out: &Tensor<T>, argmax: &ArgMax, input_shape: &[usize]) -> Result<Tensor<T>> {
    grad_out.expect_shape(&argmax.output_shape, "max pool grad_out")?;
    if argmax.indices.len() != grad_out.len() {
        return Err(Error::CorruptCache(format!(
            "argmax holds {} entries for {} output cells",
            argmax.indices.len(),
            grad_out.len()
        )));
    }
    let mut grad_in = Tensor::zeros(input_shape)?;
    let n = grad_in.len();
    let gi = grad_in.data_mut();
    for (&idx, &g) in argmax.indices.iter().zip(grad_out.data()) {
        if idx >= n {
            return Err(Error::CorruptCache(format!("argmax index {idx} out of range for input of {n} elements")));
        }
        gi[idx] = gi[idx] + g;
    }
    Ok(grad_in)
}
