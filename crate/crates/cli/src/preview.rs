use std::path::Path;

use anyhow::Context;
use demnet::data::DemImage;
use image::{GrayImage, Luma};

/// 8-bit grayscale with a min/max stretch; a flat map renders mid-gray.
pub fn write_png(dem: &DemImage, path: &Path) -> anyhow::Result<()> {
    let (lo, hi) = dem.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let img = GrayImage::from_fn(dem.cols as u32, dem.rows as u32, |x, y| {
        let v = dem.at(y as usize, x as usize);
        let level = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
        Luma([level.clamp(0.0, 255.0) as u8])
    });
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
