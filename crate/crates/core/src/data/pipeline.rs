//! From SLC/DEM rasters to normalised `[140, 140, 2]` network samples.
//!
//! Per window: the amplitude `|z|` is area-averaged down to the target size
//! and mapped through `ln(1 + a)`, then z-scored with statistics taken from
//! the training split. The phase is reduced with a circular mean (the
//! argument of the area-averaged unit phasor) and divided by pi. The DEM is
//! area-averaged and kept in metres.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tile::{DemImage, SlcImage};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Share of samples assigned to training.
pub const TRAIN_FRACTION: f64 = 0.65;

/// Amplitude and phase, each `[rows, cols]`. Phase lies in `(-pi, pi]`.
pub fn abs_phase(slc: &SlcImage) -> (Tensor<f64>, Tensor<f64>) {
    let shape = [slc.rows, slc.cols];
    let amp = slc.data.iter().map(|z| (z.re as f64).hypot(z.im as f64)).collect();
    let phase = slc.data.iter().map(|z| phase_of(z.re as f64, z.im as f64)).collect();
    (
        Tensor::from_vec(&shape, amp).expect("SLC extents are positive"),
        Tensor::from_vec(&shape, phase).expect("SLC extents are positive"),
    )
}

/// `atan2(im, re)`, with the negative real axis mapped to `+pi`.
fn phase_of(re: f64, im: f64) -> f64 {
    let p = im.atan2(re);
    if p == -PI {
        PI
    } else {
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub window: usize,
    pub step: usize,
    pub target: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { window: 4000, step: 100, target: 140 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 || self.target == 0 || self.target > self.window {
            return Err(Error::InvalidArgument(format!(
                "window spec needs step >= 1 and 1 <= target <= window, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Row-major `(row, col)` offsets of every full window.
pub fn sliding_windows(rows: usize, cols: usize, spec: &WindowSpec) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    if spec.window > rows || spec.window > cols {
        return Err(Error::InvalidArgument(format!("window {} does not fit in a {rows}x{cols} raster", spec.window)));
    }
    let axis = |extent: usize| (0..=extent - spec.window).step_by(spec.step);
    Ok(axis(rows).flat_map(|r| axis(cols).map(move |c| (r, c))).collect())
}

/// For every output cell along one axis, the source cells it overlaps and
/// the overlap length divided by the box length.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = (i * src) as f64 / dst as f64;
            let hi = ((i + 1) * src) as f64 / dst as f64;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|j| {
                    let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                    (overlap > 0.0).then_some((j, overlap / ratio))
                })
                .collect()
        })
        .collect()
}

/// Area-average resampling of a `rows x cols` field (given by `value`) onto
/// a `target x target` grid. Each output pixel is the mean over its
/// fractional source box, so the global mean is preserved.
pub fn downsample_with(
    rows: usize,
    cols: usize,
    target: usize,
    value: impl Fn(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    if target == 0 || target > rows || target > cols {
        return Err(Error::InvalidArgument(format!("cannot downsample {rows}x{cols} to {target}x{target}")));
    }
    let wr = area_weights(rows, target);
    let wc = area_weights(cols, target);
    // columns first: rows x target
    let mut partial = vec![0.0; rows * target];
    for r in 0..rows {
        let dst = &mut partial[r * target..][..target];
        for (o, taps) in dst.iter_mut().zip(&wc) {
            *o = taps.iter().map(|&(c, w)| w * value(r, c)).sum();
        }
    }
    let mut out = vec![0.0; target * target];
    for (i, taps) in wr.iter().enumerate() {
        let dst = &mut out[i * target..][..target];
        for &(r, w) in taps {
            for (o, &p) in dst.iter_mut().zip(&partial[r * target..][..target]) {
                *o += w * p;
            }
        }
    }
    Ok(out)
}

/// Area-average a rank-2 tensor (or single-channel map) to `target x target`.
pub fn downsample(matrix: &Tensor<f64>, target: usize) -> Result<Tensor<f64>> {
    let (rows, cols, ch) = matrix.hwc()?;
    if ch != 1 {
        return Err(Error::Shape(format!("downsample expects a single channel, got {ch}")));
    }
    let data = matrix.data();
    let out = downsample_with(rows, cols, target, |r, c| data[r * cols + c])?;
    Tensor::from_vec(&[target, target], out)
}

/// Log-amplitude standardisation constants, always fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub amp_mean: f64,
    pub amp_std: f64,
    pub phase_scale: f64,
}

impl NormalizationStats {
    /// Population mean and standard deviation of the given log-amplitude windows.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a RawWindow>) -> Result<Self> {
        let (mut n, mut sum) = (0usize, 0.0);
        let windows: Vec<_> = windows.into_iter().collect();
        for w in &windows {
            n += w.log_amp.len();
            sum += w.log_amp.iter().sum::<f64>();
        }
        if n == 0 {
            return Err(Error::InvalidArgument("no training pixels to fit normalisation on".into()));
        }
        let mean = sum / n as f64;
        let var = windows.iter().flat_map(|w| &w.log_amp).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "log-amplitude spread over the training split is {std}; cannot standardise"
            )));
        }
        Ok(Self { amp_mean: mean, amp_std: std, phase_scale: 1.0 / PI })
    }
}

/// One window reduced to the target grid, before normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub size: usize,
    /// `ln(1 + area-mean |z|)`.
    pub log_amp: Vec<f64>,
    /// Circular-mean phase in `(-pi, pi]`.
    pub phase: Vec<f64>,
    /// Area-mean elevation in metres.
    pub dem: Vec<f64>,
}

/// Reduce the `extent x extent` window at `(row, col)` to `target x target`.
pub fn extract_window(
    slc: &SlcImage,
    dem: &DemImage,
    row: usize,
    col: usize,
    extent: usize,
    target: usize,
) -> Result<RawWindow> {
    if (slc.rows, slc.cols) != (dem.rows, dem.cols) {
        return Err(Error::Shape(format!("SLC is {}x{}, DEM is {}x{}", slc.rows, slc.cols, dem.rows, dem.cols)));
    }
    let (log_amp, phase) = slc_features(slc, row, col, extent, target)?;
    let dem = downsample_with(extent, extent, target, |r, c| dem.at(row + r, col + c) as f64)?;
    Ok(RawWindow { size: target, log_amp, phase, dem })
}

/// Log-amplitude and circular-mean phase of one SLC window on the target grid.
pub fn slc_features(
    slc: &SlcImage,
    row: usize,
    col: usize,
    extent: usize,
    target: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if row + extent > slc.rows || col + extent > slc.cols {
        return Err(Error::InvalidArgument(format!(
            "window {extent} at ({row}, {col}) leaves the {}x{} raster",
            slc.rows, slc.cols
        )));
    }
    let z = |r: usize, c: usize| slc.at(row + r, col + c);
    let amp = downsample_with(extent, extent, target, |r, c| {
        let v = z(r, c);
        (v.re as f64).hypot(v.im as f64)
    })?;
    let cos = downsample_with(extent, extent, target, |r, c| {
        let v = z(r, c);
        phase_of(v.re as f64, v.im as f64).cos()
    })?;
    let sin = downsample_with(extent, extent, target, |r, c| {
        let v = z(r, c);
        phase_of(v.re as f64, v.im as f64).sin()
    })?;
    let log_amp = amp.iter().map(|a| a.ln_1p()).collect();
    let phase = sin.iter().zip(&cos).map(|(&s, &c)| phase_of(c, s)).collect();
    Ok((log_amp, phase))
}

/// Standardised `[n, n, 2]` network input from window features.
pub fn normalize_input<T: Scalar>(log_amp: &[f64], phase: &[f64], stats: &NormalizationStats) -> Result<Tensor<T>> {
    let n = (log_amp.len() as f64).sqrt() as usize;
    if n * n != log_amp.len() || phase.len() != log_amp.len() {
        return Err(Error::Shape(format!(
            "features of {} and {} values do not form a square window",
            log_amp.len(),
            phase.len()
        )));
    }
    let mut input = Vec::with_capacity(n * n * 2);
    for (&a, &p) in log_amp.iter().zip(phase) {
        input.push(T::lit((a - stats.amp_mean) / stats.amp_std));
        input.push(T::lit(p * stats.phase_scale));
    }
    Tensor::from_vec(&[n, n, 2], input)
}

/// Network input and target for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    /// `[size, size, 2]`: standardised log-amplitude, phase / pi.
    pub input: Tensor<T>,
    /// `[size, size, 1]` elevations in metres.
    pub target: Tensor<T>,
}

impl RawWindow {
    pub fn normalize<T: Scalar>(&self, stats: &NormalizationStats) -> Result<Sample<T>> {
        let n = self.size;
        Ok(Sample {
            input: normalize_input(&self.log_amp, &self.phase, stats)?,
            target: Tensor::from_vec(&[n, n, 1], self.dem.iter().map(|&d| T::lit(d)).collect())?,
        })
    }
}

/// Lazily produce one normalised sample per sliding-window offset, in
/// row-major offset order.
pub fn make_samples<'a, T: Scalar>(
    slc: &'a SlcImage,
    dem: &'a DemImage,
    spec: &WindowSpec,
    stats: &'a NormalizationStats,
) -> Result<impl Iterator<Item = Result<Sample<T>>> + 'a> {
    let offsets = sliding_windows(slc.rows, slc.cols, spec)?;
    let (extent, target) = (spec.window, spec.target);
    Ok(offsets.into_iter().map(move |(r, c)| extract_window(slc, dem, r, c, extent, target)?.normalize(stats)))
}

/// Seeded random partition of `0..n`: the first `round(fraction * n)`
/// indices of a ChaCha8 shuffle go to training. Both lists are sorted.
pub fn split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot split an empty sample set".into()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} outside [0, 1]")));
    }
    let n_train = (fraction * n as f64).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    /// Dropped by the block split because it overlaps a training window.
    Excluded,
}

/// Spatially disjoint alternative to [`split`] for the windows of one raster.
///
/// Distinct row offsets are ordered; the first `round(fraction * rows)` of
/// them form the training band (the band sits at the top or bottom of the
/// raster, chosen by `seed`). Remaining windows that overlap any training
/// window become [`SplitTag::Excluded`]. A raster with a single row position
/// is assigned wholesale, to train with probability `fraction`.
pub fn block_split(offsets: &[(usize, usize)], window: usize, fraction: f64, seed: u64) -> Result<Vec<SplitTag>> {
    use rand::Rng;
    if offsets.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty sample set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = offsets.iter().map(|o| o.0).collect();
    rows.sort_unstable();
    rows.dedup();
    if rows.len() == 1 {
        let tag = if rng.random::<f64>() < fraction { SplitTag::Train } else { SplitTag::Test };
        return Ok(vec![tag; offsets.len()]);
    }
    if rng.random::<bool>() {
        rows.reverse();
    }
    let n_train = ((fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
    let train_rows = &rows[..n_train];
    let overlaps = |r: usize| train_rows.iter().any(|&t| r < t + window && t < r + window);
    Ok(offsets
        .iter()
        .map(|&(r, _)| {
            if train_rows.contains(&r) {
                SplitTag::Train
            } else if overlaps(r) {
                SplitTag::Excluded
            } else {
                SplitTag::Test
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex32;

    #[test]
    fn abs_phase_examples() {
        let slc =
            SlcImage::new(1, 3, vec![Complex32::new(3.0, 4.0), Complex32::new(-1.0, 0.0), Complex32::new(-1.0, -0.0)])
                .unwrap();
        let (amp, phase) = abs_phase(&slc);
        assert_eq!(amp.data()[0], 5.0);
        assert!((phase.data()[0] - 0.927_295_218_001_612_2).abs() < 1e-12);
        assert_eq!(phase.data()[1], PI);
        assert_eq!(phase.data()[2], PI);
    }

    #[test]
    fn window_counts() {
        let spec = WindowSpec::default();
        assert_eq!(sliding_windows(4000, 4000, &spec).unwrap(), vec![(0, 0)]);
        assert_eq!(sliding_windows(12000, 20000, &spec).unwrap().len(), 81 * 161);
        assert_eq!(sliding_windows(4099, 4000, &spec).unwrap().len(), 1);
        assert_eq!(sliding_windows(4100, 4000, &spec).unwrap().len(), 2);
        assert!(sliding_windows(3999, 4000, &spec).is_err());
    }

    #[test]
    fn downsample_integer_ratio_is_block_mean() {
        let m = Tensor::from_vec(&[4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let d = downsample(&m, 2).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5, 10.5, 12.5]);
        let c = Tensor::full(&[30, 30], 7.0).unwrap();
        assert!(downsample(&c, 7).unwrap().data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
        assert_eq!(downsample(&m, 4).unwrap(), m);
        assert!(downsample(&m, 5).is_err());
    }

    #[test]
    fn area_weights_sum_to_one_per_output() {
        for (src, dst) in [(4000, 140), (141, 140), (10, 3)] {
            for taps in area_weights(src, dst) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_examples() {
        let (tr, te) = split(100, TRAIN_FRACTION, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (65, 35));
        let (tr, te) = split(3, TRAIN_FRACTION, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (2, 1));
        assert_eq!(split(50, 0.65, 9).unwrap(), split(50, 0.65, 9).unwrap());
        assert!(split(0, 0.65, 1).is_err());
    }

    #[test]
    fn block_split_keeps_bands_apart() {
        let spec = WindowSpec { window: 40, step: 10, target: 10 };
        let offsets = sliding_windows(200, 60, &spec).unwrap();
        let tags = block_split(&offsets, 40, 0.65, 3).unwrap();
        for (i, &(ri, ci)) in offsets.iter().enumerate() {
            for (j, &(rj, cj)) in offsets.iter().enumerate() {
                if tags[i] == SplitTag::Train && tags[j] == SplitTag::Test {
                    let disjoint = ri + 40 <= rj || rj + 40 <= ri || ci + 40 <= cj || cj + 40 <= ci;
                    assert!(disjoint);
                }
            }
        }
        assert!(tags.contains(&SplitTag::Test));
        assert!(tags.contains(&SplitTag::Train));
    }
}
