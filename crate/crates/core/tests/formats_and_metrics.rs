mod common;

use std::path::Path;

use num_complex::Complex32;
use sha2::{Digest, Sha256};

use demnet::data::{
    decode_dem, decode_slc, encode_dem, encode_slc, make_samples, DemImage, NormalizationStats, RawWindow, SlcImage,
    WindowSpec,
};
use demnet::metrics::{constant_mean_baseline, EvalReport};
use demnet::synth::{gen_pair, RenderConfig, TerrainConfig};
use demnet::{Tensor, TrainConfig};

/// Header written field by field, independent of the library's encoder.
fn golden_header(dtype: u8, rows: u32, cols: u32) -> Vec<u8> {
    let mut b = b"SART".to_vec();
    b.extend_from_slice(&[1, 0, 0, 0, dtype]);
    b.extend_from_slice(&rows.to_le_bytes());
    b.extend_from_slice(&cols.to_le_bytes());
    b
}

#[test]
fn dem_tile_matches_golden_bytes() {
    let golden: [u8; 33] = [
        0x53, 0x41, 0x52, 0x54, 0x01, 0x00, 0x00, 0x00, 0x02, 0x02, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x00,
        0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x80, 0x40,
    ];
    let dem = DemImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(encode_dem(&dem).unwrap(), golden);
    assert_eq!(decode_dem(&golden, Path::new("g")).unwrap(), dem);
}

#[test]
fn slc_tile_matches_golden_bytes() {
    let mut golden = golden_header(1, 1, 2);
    for v in [0.5f32, -1.0, 3.25, 0.0] {
        golden.extend_from_slice(&v.to_le_bytes());
    }
    let slc = SlcImage::new(1, 2, vec![Complex32::new(0.5, -1.0), Complex32::new(3.25, 0.0)]).unwrap();
    assert_eq!(encode_slc(&slc).unwrap(), golden);
    assert_eq!(decode_slc(&golden, Path::new("g")).unwrap(), slc);
}

#[test]
fn tile_corruptions_are_diagnosed() {
    let good = encode_dem(&DemImage::new(2, 2, vec![0.0; 4]).unwrap()).unwrap();
    let p = Path::new("t.sart");
    let err = |b: &[u8]| decode_dem(b, p).unwrap_err().kind();
    assert_eq!(err(&good[..good.len() - 1]), "format");
    assert_eq!(err(&[good.as_slice(), &[0]].concat()), "format");
    assert_eq!(err(&good[..10]), "format");
    assert_eq!(err(b"SA"), "bad_magic");
    // a DEM reader refuses a complex tile
    assert_eq!(decode_dem(&golden_header(1, 1, 1), p).unwrap_err().kind(), "format");
    let mut zero = good.clone();
    zero[9..13].copy_from_slice(&0u32.to_le_bytes());
    assert_eq!(err(&zero), "format");
}

#[test]
fn config_digest_is_sha256_of_documented_json() {
    let text = r#"{"alpha":0.001,"batch_size":128,"beta1":0.9,"beta2":0.999,"epsilon":1e-8,"init_seed":0,"l2":0.01,"shuffle_seed":0}"#;
    let expected: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    assert_eq!(TrainConfig::default().digest(), expected);
}

#[test]
fn normalised_training_inputs_are_standardised() {
    let terrain = TerrainConfig { size: 280, ..TerrainConfig::default() };
    let spec = WindowSpec { window: 140, step: 70, target: 35 };
    let (slc, dem) = gen_pair(&terrain, &RenderConfig::default(), 5, 0).unwrap();
    let raws: Vec<RawWindow> = demnet::data::sliding_windows(280, 280, &spec)
        .unwrap()
        .into_iter()
        .map(|(r, c)| demnet::data::extract_window(&slc, &dem, r, c, 140, 35).unwrap())
        .collect();
    let stats = NormalizationStats::fit(&raws).unwrap();
    let samples: Vec<_> = make_samples::<f64>(&slc, &dem, &spec, &stats).unwrap().map(Result::unwrap).collect();
    assert_eq!(samples.len(), 9);

    let amp: Vec<f64> = samples.iter().flat_map(|s| s.input.data().iter().step_by(2).copied()).collect();
    let mean = amp.iter().sum::<f64>() / amp.len() as f64;
    let std = (amp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / amp.len() as f64).sqrt();
    assert!(mean.abs() < 1e-12, "{mean}");
    assert!((std - 1.0).abs() < 1e-12, "{std}");
    let phase_in_range =
        samples.iter().flat_map(|s| s.input.data().iter().skip(1).step_by(2)).all(|v| *v > -1.0 && *v <= 1.0);
    assert!(phase_in_range);
}

#[test]
fn constant_mean_baseline_is_population_std() {
    let mut rng = common::rng(3);
    let gts: Vec<Tensor<f64>> =
        (0..4).map(|_| common::uniform(&mut rng, &[6, 5, 1]).map(|v| 40.0 * v + 300.0)).collect();
    let baseline = constant_mean_baseline(&gts).unwrap();
    for (g, b) in gts.iter().zip(baseline) {
        let n = g.len() as f64;
        let (s, s2) = g.data().iter().fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
        let std = (s2 / n - (s / n).powi(2)).sqrt();
        assert!((b - std).abs() < 1e-9 * std, "{b} vs {std}");
    }
}

#[test]
fn report_has_one_row_per_image_and_averages_per_image() {
    let gts: Vec<Tensor<f64>> = (0..3).map(|k| Tensor::full(&[2, 2, 1], k as f64).unwrap()).collect();
    let preds: Vec<Tensor<f64>> =
        (0..3).map(|k| Tensor::full(&[2, 2, 1], k as f64 + (k + 1) as f64).unwrap()).collect();
    let report = EvalReport::from_predictions(&preds, &gts).unwrap();
    assert_eq!(report.per_image_rmse, vec![1.0, 2.0, 3.0]);
    assert_eq!(report.mean_rmse, 2.0);
    let csv = report.per_image_csv(&[10, 11, 12]);
    assert_eq!(csv, "sample,rmse_m\n10,1\n11,2\n12,3\n");
}
