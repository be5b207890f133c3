//! Training objective and evaluation metrics, all in metres.
//!
//! Reported errors use the linear RMSE `sqrt(sum((gt - pred)^2) / T)` with `T`
//! the pixel count. Training descends the mean squared error instead (same
//! minimiser, bounded derivative at zero).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Number of elevation bins in the error-versus-elevation report.
pub const ELEVATION_BINS: usize = 100;

fn check_pair<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    pred.expect_shape(gt.shape(), "prediction vs ground truth")?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty tensors have no RMSE".into()));
    }
    Ok(())
}

/// Sum of squared differences, accumulated in f64.
pub fn squared_error_sum<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred.data().iter().zip(gt.data()).map(|(&p, &g)| (g.as_f64() - p.as_f64()).powi(2)).sum())
}

pub fn rmse<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    Ok((squared_error_sum(pred, gt)? / pred.len() as f64).sqrt())
}

pub fn mse<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    Ok(squared_error_sum(pred, gt)? / pred.len() as f64)
}

/// `(2 / T) * (pred - gt)`, the gradient of the MSE over `T` pixels.
///
/// `pixels` lets a batch share one denominator; pass `pred.len()` for a single image.
pub fn mse_grad<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, pixels: usize) -> Result<Tensor<T>> {
    check_pair(pred, gt)?;
    if pixels == 0 {
        return Err(Error::InvalidArgument("pixel count must be positive".into()));
    }
    let scale = T::lit(2.0 / pixels as f64);
    let data = pred.data().iter().zip(gt.data()).map(|(&p, &g)| scale * (p - g)).collect();
    Tensor::from_vec(pred.shape(), data)
}

/// Mean absolute error per uniform ground-truth elevation bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedError {
    /// `n_bins + 1` edges from the minimum to the maximum GT elevation.
    pub edges: Vec<f64>,
    /// `None` for empty bins.
    pub mean_abs_error: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

/// Bins are left-closed except the last, which also holds the maximum.
/// A flat ground truth (max == min) yields a single bin.
pub fn binned_error<'a, T: Scalar + 'a>(
    pairs: impl IntoIterator<Item = (&'a Tensor<T>, &'a Tensor<T>)> + Clone,
    n_bins: usize,
) -> Result<BinnedError> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let (mut lo, mut hi, mut any) = (f64::INFINITY, f64::NEG_INFINITY, false);
    for (pred, gt) in pairs.clone() {
        check_pair(pred, gt)?;
        for &g in gt.data() {
            let g = g.as_f64();
            if !g.is_finite() {
                return Err(Error::NonFinite { what: "ground-truth elevation".into() });
            }
            lo = lo.min(g);
            hi = hi.max(g);
            any = true;
        }
    }
    if !any {
        return Err(Error::InvalidArgument("no pixels to bin".into()));
    }
    let n_bins = if hi > lo { n_bins } else { 1 };
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| if i == n_bins { hi } else { lo + width * i as f64 }).collect();

    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0u64; n_bins];
    for (pred, gt) in pairs {
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let g = g.as_f64();
            let bin = if width > 0.0 { (((g - lo) / width) as usize).min(n_bins - 1) } else { 0 };
            sums[bin] += (p.as_f64() - g).abs();
            counts[bin] += 1;
        }
    }
    let mean_abs_error = sums.iter().zip(&counts).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
    Ok(BinnedError { edges, mean_abs_error, counts })
}

/// Elevations along azimuth at one fixed range row of a `[H, W, 1]` map.
pub fn range_profile<T: Scalar>(dem: &Tensor<T>, range_index: usize) -> Result<Vec<f64>> {
    let (h, w, c) = dem.hwc()?;
    if c != 1 {
        return Err(Error::Shape(format!("profile needs a single-channel DEM, got {c} channels")));
    }
    if range_index >= h {
        return Err(Error::InvalidArgument(format!("range index {range_index} outside 0..{h}")));
    }
    Ok(dem.data()[range_index * w..][..w].iter().map(|v| v.as_f64()).collect())
}

/// Test-split evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_image_rmse: Vec<f64>,
    /// Mean of the per-image RMSEs.
    pub mean_rmse: f64,
    pub bins: BinnedError,
}

impl EvalReport {
    pub fn from_predictions<T: Scalar>(preds: &[Tensor<T>], gts: &[Tensor<T>]) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::InvalidArgument(format!("{} predictions for {} targets", preds.len(), gts.len())));
        }
        if preds.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
        }
        let per_image_rmse = preds.iter().zip(gts).map(|(p, g)| rmse(p, g)).collect::<Result<Vec<_>>>()?;
        let mean_rmse = per_image_rmse.iter().sum::<f64>() / per_image_rmse.len() as f64;
        let bins = binned_error(preds.iter().zip(gts), ELEVATION_BINS)?;
        Ok(Self { per_image_rmse, mean_rmse, bins })
    }

    /// `sample,rmse_m` with one row per evaluated image, in evaluation order.
    pub fn per_image_csv(&self, sample_ids: &[usize]) -> String {
        let mut out = String::from("sample,rmse_m\n");
        for (i, r) in self.per_image_rmse.iter().enumerate() {
            let id = sample_ids.get(i).copied().unwrap_or(i);
            let _ = writeln!(out, "{id},{r}");
        }
        out
    }

    /// `bin,lower_m,upper_m,count,mean_abs_error_m`; empty bins leave the last field blank.
    pub fn bins_csv(&self) -> String {
        let mut out = String::from("bin,lower_m,upper_m,count,mean_abs_error_m\n");
        for (i, (count, err)) in self.bins.counts.iter().zip(&self.bins.mean_abs_error).enumerate() {
            let err = err.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{i},{},{},{count},{err}", self.bins.edges[i], self.bins.edges[i + 1]);
        }
        out
    }

    pub fn write_csv(&self, dir: &Path, sample_ids: &[usize]) -> Result<()> {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
        };
        write("eval_per_image.csv", self.per_image_csv(sample_ids))?;
        write("eval_bins.csv", self.bins_csv())
    }
}

/// RMSE of predicting each image's own mean elevation (its population standard deviation).
pub fn constant_mean_baseline<T: Scalar>(gts: &[Tensor<T>]) -> Result<Vec<f64>> {
    gts.iter()
        .map(|g| {
            let mean = g.data().iter().map(|v| v.as_f64()).sum::<f64>() / g.len() as f64;
            let pred = g.map(|_| T::lit(mean));
            rmse(&pred, g)
        })
        .collect()
}
