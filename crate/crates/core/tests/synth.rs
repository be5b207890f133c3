use std::f64::consts::PI;

use demnet::data::{read_dem, read_slc, DatasetManifest};
use demnet::synth::{
    gen_dataset, gen_terrain, sar_render, terrain_slopes, unwrapped_phase, wrap_phase, RenderConfig, TerrainConfig,
};

fn terrain(beta: f64, seed: u64) -> Vec<f64> {
    let cfg = TerrainConfig { size: 140, beta, seed, ..Default::default() };
    gen_terrain(&cfg).unwrap().data.iter().map(|&v| v as f64).collect()
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Mean absolute difference between horizontally adjacent pixels.
fn roughness(v: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..n {
        for c in 1..n {
            s += (v[r * n + c] - v[r * n + c - 1]).abs();
        }
    }
    s / (n * (n - 1)) as f64
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn larger_beta_gives_smoother_terrain() {
    for seed in 0..4 {
        let rough = terrain(1.0, seed);
        let smooth = terrain(6.0, seed);
        assert!(roughness(&smooth, 140) < 0.25 * roughness(&rough, 140), "seed {seed}");
    }
}

#[test]
fn spread_after_range_rescaling() {
    let d = TerrainConfig::default();
    for beta in [1.0, 3.0, 6.0] {
        for seed in 0..3 {
            let s = std_dev(&terrain(beta, seed)) / (d.elevation_max - d.elevation_min);
            println!("beta {beta} seed {seed}: std / range = {s:.3}");
            assert!(s > 0.0 && s < 0.5);
        }
    }
}

#[test]
fn amplitude_tracks_range_slope_without_speckle() {
    let dem = gen_terrain(&TerrainConfig { seed: 3, ..Default::default() }).unwrap();
    let cfg = RenderConfig::default().noiseless();
    let slc = sar_render(&dem, &cfg).unwrap();
    let amp: Vec<f64> = slc.data.iter().map(|z| z.norm() as f64).collect();
    let (range_slope, _) = terrain_slopes(&dem, cfg.pixel_spacing_m);
    let rho = spearman(&amp, &range_slope);
    assert!(rho > 0.9, "rank correlation {rho}");
}

#[test]
fn rendering_is_seeded_and_bounded() {
    let dem = gen_terrain(&TerrainConfig { seed: 8, ..Default::default() }).unwrap();
    let cfg = RenderConfig { noise_seed: 4, ..Default::default() };
    let a = sar_render(&dem, &cfg).unwrap();
    assert_eq!(a, sar_render(&dem, &cfg).unwrap());
    assert_ne!(a, sar_render(&dem, &RenderConfig { noise_seed: 5, ..cfg }).unwrap());
    for z in &a.data {
        let (amp, p) = (z.norm(), (z.im as f64).atan2(z.re as f64));
        assert!(amp >= 0.0 && amp.is_finite());
        assert!(p > -PI - 1e-6 && p <= PI + 1e-6);
    }
}

#[test]
fn phase_is_linear_in_height() {
    let lambda = RenderConfig::default().wavelength_m;
    for h in [0.0, 0.013, 1.7, 250.0, -40.0] {
        assert_eq!(unwrapped_phase(2.0 * h, lambda), 2.0 * unwrapped_phase(h, lambda));
    }
    // noise-free rendering of a flat DEM carries the wrapped phase of its height
    let dem = demnet::data::DemImage::new(140, 140, vec![0.01; 140 * 140]).unwrap();
    let slc = sar_render(&dem, &RenderConfig::default().noiseless()).unwrap();
    let p = (slc.data[0].im as f64).atan2(slc.data[0].re as f64);
    assert!((p - wrap_phase(unwrapped_phase(0.01f32 as f64, lambda))).abs() < 1e-5);
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let terrain = TerrainConfig { size: 150, ..Default::default() };
    let manifest = gen_dataset(dir.path(), 3, &terrain, &RenderConfig::default(), 7).unwrap();
    assert_eq!(manifest.sources.len(), 3);
    let on_disk = DatasetManifest::read(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(on_disk, manifest);
    let mut dems = Vec::new();
    for (i, src) in manifest.sources.iter().enumerate() {
        let (slc, dem) = demnet::synth::gen_pair(&terrain, &RenderConfig::default(), 7, i as u64).unwrap();
        assert_eq!(read_slc(&dir.path().join(&src.slc)).unwrap(), slc);
        assert_eq!(read_dem(&dir.path().join(&src.dem)).unwrap(), dem);
        dems.push(dem);
    }
    assert_ne!(dems[0], dems[1]);
    let other = tempfile::tempdir().unwrap();
    gen_dataset(other.path(), 1, &terrain, &RenderConfig::default(), 8).unwrap();
    assert_ne!(read_dem(&other.path().join("pair_000.dem.sart")).unwrap(), dems[0]);
}
