//! Seeded synthetic terrain and a crude single-look SAR forward model.
//!
//! Terrain comes from diamond-square midpoint displacement on a
//! `2^k + 1` grid (cropped to the requested size) and is rescaled so its
//! minimum and maximum hit the configured elevation range exactly. The
//! displacement standard deviation shrinks by `2^-H` per level with
//! `H = (beta - 2) / 2`, so `beta` plays the role of the spectral exponent of
//! a fractional Brownian surface: larger values give smoother terrain.
//!
//! The renderer uses rows as the range axis (sensor at row 0, looking toward
//! increasing rows) and columns as azimuth. Amplitude is Lambertian shading
//! of the local surface normal toward the sensor times unit-mean exponential
//! speckle; phase is `4 pi h / lambda` wrapped to `(-pi, pi]` plus uniform noise.
//!
//! Every random draw comes from ChaCha8 streams seeded with the values in
//! the configs, so outputs are identical across platforms.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_dem, write_slc, DatasetManifest, DemImage, SlcImage, SourceEntry, WindowSpec};
use crate::error::{Error, Result};

/// C-band carrier wavelength in metres.
pub const C_BAND_WAVELENGTH_M: f64 = 0.0555;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainConfig {
    pub size: usize,
    pub beta: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub seed: u64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self { size: 140, beta: 3.0, elevation_min: 0.0, elevation_max: 100.0, seed: 0 }
    }
}

impl TerrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 140 {
            return Err(Error::InvalidArgument(format!("terrain size {} is below 140", self.size)));
        }
        let finite = self.beta.is_finite() && self.elevation_min.is_finite() && self.elevation_max.is_finite();
        if !finite || self.elevation_max <= self.elevation_min {
            return Err(Error::InvalidArgument(format!(
                "terrain needs finite beta and elevation_max > elevation_min, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Incidence angle of the look direction from vertical, in degrees.
    pub look_angle_deg: f64,
    /// Ground distance between neighbouring pixels in metres.
    pub pixel_spacing_m: f64,
    pub wavelength_m: f64,
    /// Multiply amplitudes by exponential speckle.
    pub speckle: bool,
    /// Half-width of the uniform phase noise in radians.
    pub phase_noise: f64,
    pub noise_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            look_angle_deg: 35.0,
            pixel_spacing_m: 30.0,
            wavelength_m: C_BAND_WAVELENGTH_M,
            speckle: true,
            phase_noise: 0.3,
            noise_seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn noiseless(mut self) -> Self {
        self.speckle = false;
        self.phase_noise = 0.0;
        self
    }
}

/// Diamond-square field on the smallest `2^k + 1` grid covering `size`,
/// cropped to `size x size`, before rescaling.
fn diamond_square(size: usize, beta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (size - 1).next_power_of_two() + 1;
    let mut g = vec![0.0; n * n];
    let mut normal = || -> f64 { StandardNormal.sample(&mut *rng) };
    let decay = 2f64.powf(-(beta - 2.0) / 2.0);
    for &(r, c) in &[(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)] {
        g[r * n + c] = normal();
    }
    let mut step = n - 1;
    let mut scale = 1.0;
    while step > 1 {
        let half = step / 2;
        // diamond: centres of squares
        for r in (half..n).step_by(step) {
            for c in (half..n).step_by(step) {
                let avg = (g[(r - half) * n + c - half]
                    + g[(r - half) * n + c + half]
                    + g[(r + half) * n + c - half]
                    + g[(r + half) * n + c + half])
                    / 4.0;
                g[r * n + c] = avg + scale * normal();
            }
        }
        // square: edge midpoints, averaging the in-bounds neighbours
        for r in (0..n).step_by(half) {
            let start = if (r / half).is_multiple_of(2) { half } else { 0 };
            for c in (start..n).step_by(step) {
                let mut sum = 0.0;
                let mut k = 0.0;
                if r >= half {
                    sum += g[(r - half) * n + c];
                    k += 1.0;
                }
                if r + half < n {
                    sum += g[(r + half) * n + c];
                    k += 1.0;
                }
                if c >= half {
                    sum += g[r * n + c - half];
                    k += 1.0;
                }
                if c + half < n {
                    sum += g[r * n + c + half];
                    k += 1.0;
                }
                g[r * n + c] = sum / k + scale * normal();
            }
        }
        step = half;
        scale *= decay;
    }
    (0..size).flat_map(|r| g[r * n..r * n + size].to_vec()).collect()
}

pub fn gen_terrain(config: &TerrainConfig) -> Result<DemImage> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let field = diamond_square(config.size, config.beta, &mut rng);
    let (lo, hi) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = config.elevation_max - config.elevation_min;
    let data = field
        .iter()
        .map(|&v| {
            let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            (config.elevation_min + u * span) as f32
        })
        .collect();
    DemImage::new(config.size, config.size, data)
}

/// Phase `4 pi h / lambda` before wrapping.
pub fn unwrapped_phase(height_m: f64, wavelength_m: f64) -> f64 {
    4.0 * PI * height_m / wavelength_m
}

/// Wrap into `(-pi, pi]`.
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Height derivatives per metre along range (rows) and azimuth (cols),
/// central differences inside, one-sided at the borders.
pub fn terrain_slopes(dem: &DemImage, spacing: f64) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (dem.rows, dem.cols);
    let h = |r: usize, c: usize| dem.at(r, c) as f64;
    let diff = |lo: f64, hi: f64, steps: usize| if steps == 0 { 0.0 } else { (hi - lo) / (steps as f64 * spacing) };
    let mut gr = Vec::with_capacity(rows * cols);
    let mut ga = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (r0, r1) = (r.saturating_sub(1), (r + 1).min(rows - 1));
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(cols - 1));
            gr.push(diff(h(r0, c), h(r1, c), r1 - r0));
            ga.push(diff(h(r, c0), h(r, c1), c1 - c0));
        }
    }
    (gr, ga)
}

pub fn sar_render(dem: &DemImage, config: &RenderConfig) -> Result<SlcImage> {
    if !(config.pixel_spacing_m > 0.0 && config.wavelength_m > 0.0 && config.phase_noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid render config {config:?}")));
    }
    let theta = config.look_angle_deg.to_radians();
    let (gr, ga) = terrain_slopes(dem, config.pixel_spacing_m);
    let mut rng = ChaCha8Rng::seed_from_u64(config.noise_seed);
    let data = dem
        .data
        .iter()
        .zip(gr.iter().zip(&ga))
        .map(|(&h, (&sr, &sa))| {
            // unit normal (-sr, -sa, 1)/|.| against the direction to the sensor (-sin, 0, cos)
            let shading = ((sr * theta.sin() + theta.cos()) / (1.0 + sr * sr + sa * sa).sqrt()).max(0.0);
            let speckle: f64 = if config.speckle { Exp1.sample(&mut rng) } else { 1.0 };
            let noise =
                if config.phase_noise > 0.0 { rng.random_range(-config.phase_noise..=config.phase_noise) } else { 0.0 };
            let amp = shading * speckle;
            let phase = wrap_phase(unwrapped_phase(h as f64, config.wavelength_m) + noise);
            Complex32::new((amp * phase.cos()) as f32, (amp * phase.sin()) as f32)
        })
        .collect();
    SlcImage::new(dem.rows, dem.cols, data)
}

/// Independent seed for item `index` of stream `tag` (SplitMix64 finaliser).
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One synthetic tile pair.
pub fn gen_pair(terrain: &TerrainConfig, render: &RenderConfig, seed: u64, index: u64) -> Result<(SlcImage, DemImage)> {
    let t = TerrainConfig { seed: derive_seed(seed, 1, index), ..*terrain };
    let r = RenderConfig { noise_seed: derive_seed(seed, 2, index), ..*render };
    let dem = gen_terrain(&t)?;
    let slc = sar_render(&dem, &r)?;
    Ok((slc, dem))
}

/// Write `n_pairs` tile pairs named `pair_NNN.{slc,dem}.sart` into `dir`
/// and a sources-only `manifest.jsonl` listing them.
pub fn gen_dataset(
    dir: &Path,
    n_pairs: usize,
    terrain: &TerrainConfig,
    render: &RenderConfig,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut sources = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let (slc, dem) = gen_pair(terrain, render, seed, i as u64)?;
        let slc_name = format!("pair_{i:03}.slc.sart");
        let dem_name = format!("pair_{i:03}.dem.sart");
        write_slc(&dir.join(&slc_name), &slc)?;
        write_dem(&dir.join(&dem_name), &dem)?;
        sources.push(SourceEntry { id: i, slc: slc_name.into(), dem: dem_name.into() });
    }
    let window = WindowSpec { window: terrain.size, step: terrain.size, target: 140 };
    let manifest = DatasetManifest::sources_only(sources, window);
    manifest.write(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
