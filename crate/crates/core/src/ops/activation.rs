use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Subgradient at zero is taken as zero.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, cached_input: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(cached_input.shape(), "relu grad_out")?;
    let data = grad_out
        .data()
        .iter()
        .zip(cached_input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

fn channel_count<T: Scalar>(input: &Tensor<T>, slopes: &Tensor<T>) -> Result<usize> {
    let (_, _, c) = input.hwc()?;
    slopes.expect_shape(&[c], "prelu slopes")?;
    Ok(c)
}

/// Parametric ReLU with one learnable negative slope per channel.
pub fn prelu<T: Scalar>(input: &Tensor<T>, slopes: &Tensor<T>) -> Result<Tensor<T>> {
    let c = channel_count(input, slopes)?;
    let a = slopes.data();
    let data = input.data().iter().enumerate().map(|(i, &x)| if x >= T::zero() { x } else { a[i % c] * x }).collect();
    Tensor::from_vec(input.shape(), data)
}

/// Returns `(grad_input, grad_slopes)`.
pub fn prelu_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    slopes: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = channel_count(cached_input, slopes)?;
    grad_out.expect_shape(cached_input.shape(), "prelu grad_out")?;
    if !slopes.all_finite() {
        return Err(Error::NonFinite { what: "prelu slopes".into() });
    }
    let a = slopes.data();
    let mut gs = vec![T::zero(); c];
    let mut gi = Vec::with_capacity(grad_out.len());
    for (i, (&g, &x)) in grad_out.data().iter().zip(cached_input.data()).enumerate() {
        if x >= T::zero() {
            gi.push(g);
        } else {
            gi.push(a[i % c] * g);
            gs[i % c] = gs[i % c] + g * x;
        }
    }
    Ok((Tensor::from_vec(grad_out.shape(), gi)?, Tensor::from_vec(&[c], gs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&t(&[5.0, 7.0]), &t(&[-1.0, 2.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 7.0]);
        let g = relu_backward(&t(&[3.0]), &t(&[0.0])).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn prelu_limits() {
        let x = Tensor::<f64>::from_fn(&[3, 3, 2], |i| i as f64 - 8.5).unwrap();
        let zero = Tensor::zeros(&[2]).unwrap();
        assert_eq!(prelu(&x, &zero).unwrap(), relu(&x));
        let one = Tensor::full(&[2], 1.0).unwrap();
        assert_eq!(prelu(&x, &one).unwrap(), x);
    }

    #[test]
    fn prelu_slope_gradient_sums_negative_positions() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![-1.0, 2.0, -3.0, -4.0]).unwrap();
        let g = Tensor::from_vec(&[1, 2, 2], vec![1.0, 1.0, 2.0, 0.5]).unwrap();
        let a = Tensor::from_vec(&[2], vec![0.25, 0.5]).unwrap();
        let (gi, gs) = prelu_backward(&g, &x, &a).unwrap();
        assert_eq!(gi.data(), &[0.25, 1.0, 0.5, 0.25]);
        assert_eq!(gs.data(), &[-1.0 + 2.0 * -3.0, 0.5 * -4.0]);
    }

    #[test]
    fn prelu_rejects_wrong_slope_count() {
        let x = Tensor::<f64>::zeros(&[2, 2, 3]).unwrap();
        assert!(prelu(&x, &Tensor::zeros(&[2]).unwrap()).is_err());
    }
}
