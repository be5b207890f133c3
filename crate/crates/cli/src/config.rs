//! Structured config file. Each subcommand reads its own table; unknown
//! tables and keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use demnet::data::TRAIN_FRACTION;
use demnet::synth::{RenderConfig, TerrainConfig};
use demnet::train::TrainConfig;

#[derive(Debug, Default)]
pub struct FileConfig {
    pub generate: Option<GenerateSection>,
    pub ingest: Option<IngestSection>,
    pub train: Option<TrainSection>,
    pub eval: Option<EvalSection>,
    pub predict: Option<PredictSection>,
    pub profile: Option<ProfileSection>,
}

impl FileConfig {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config file {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let table: toml::Table = text.parse()?;
        let mut cfg = Self::default();
        for (key, value) in table {
            let ctx = || format!("table [{key}]");
            match key.as_str() {
                "generate" => cfg.generate = Some(value.try_into().with_context(ctx)?),
                "ingest" => cfg.ingest = Some(value.try_into().with_context(ctx)?),
                "train" => cfg.train = Some(TrainSection::from_value(value).with_context(ctx)?),
                "eval" => cfg.eval = Some(value.try_into().with_context(ctx)?),
                "predict" => cfg.predict = Some(value.try_into().with_context(ctx)?),
                "profile" => cfg.profile = Some(value.try_into().with_context(ctx)?),
                other => anyhow::bail!("unknown config table [{other}]"),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub pairs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub terrain: TerrainSection,
    pub render: RenderSection,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { pairs: 3, seed: 0, out: None, terrain: TerrainSection::default(), render: RenderSection::default() }
    }
}

impl GenerateSection {
    /// Per-pair seeds are derived from `seed` by the generator.
    pub fn terrain_config(&self) -> TerrainConfig {
        let t = &self.terrain;
        TerrainConfig {
            size: t.size,
            beta: t.beta,
            elevation_min: t.elevation_min,
            elevation_max: t.elevation_max,
            seed: 0,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        let r = &self.render;
        RenderConfig {
            look_angle_deg: r.look_angle_deg,
            pixel_spacing_m: r.pixel_spacing_m,
            wavelength_m: r.wavelength_m,
            speckle: r.speckle,
            phase_noise: r.phase_noise,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainSection {
    pub size: usize,
    pub beta: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
}

impl Default for TerrainSection {
    fn default() -> Self {
        let t = TerrainConfig::default();
        Self { size: t.size, beta: t.beta, elevation_min: t.elevation_min, elevation_max: t.elevation_max }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub look_angle_deg: f64,
    pub pixel_spacing_m: f64,
    pub wavelength_m: f64,
    pub speckle: bool,
    pub phase_noise: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        let r = RenderConfig::default();
        Self {
            look_angle_deg: r.look_angle_deg,
            pixel_spacing_m: r.pixel_spacing_m,
            wavelength_m: r.wavelength_m,
            speckle: r.speckle,
            phase_noise: r.phase_noise,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub sources: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub split_fraction: f64,
    pub block_split: bool,
    /// Window extent, step and target size; unset values come from the sources manifest.
    pub window: Option<usize>,
    pub step: Option<usize>,
    pub target: Option<usize>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            sources: None,
            out: None,
            seed: 0,
            split_fraction: TRAIN_FRACTION,
            block_split: false,
            window: None,
            step: None,
            target: None,
        }
    }
}

/// `[train]` holds the [`TrainConfig`] keys plus `out`, `resume` and `reduced`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainSection {
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Train the narrow 36x36 clone instead of the full network.
    pub reduced: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl TrainSection {
    fn from_value(value: toml::Value) -> anyhow::Result<Self> {
        let toml::Value::Table(mut table) = value else { anyhow::bail!("expected a table") };
        let path = |v: Option<toml::Value>| -> anyhow::Result<Option<PathBuf>> {
            v.map(|v| v.try_into::<PathBuf>()).transpose().map_err(Into::into)
        };
        let out = path(table.remove("out"))?;
        let resume = path(table.remove("resume"))?;
        let reduced = table.remove("reduced").map(|v| v.try_into::<bool>()).transpose()?.unwrap_or(false);
        let train: TrainConfig = toml::Value::Table(table).try_into()?;
        Ok(Self { out, resume, reduced, train })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { checkpoint: None, manifest: None, out: None, split: "test".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub checkpoint: Option<PathBuf>,
    pub slc: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub preview: bool,
    pub repeats: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self { checkpoint: None, slc: None, out: None, preview: false, repeats: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub dem: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ranges: Vec<usize>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { dem: None, out: None, ranges: vec![30, 120] }
    }
}
