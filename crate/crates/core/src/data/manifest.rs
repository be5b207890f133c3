//! Line-delimited JSON dataset manifest.
//!
//! The first line is the header; every following line is either a `source`
//! (one SLC/DEM tile pair, paths relative to the manifest's directory) or a
//! `sample` (one window offset of a source, with its split tag):
//!
//! ```text
//! {"kind":"header","format_version":1,"window":{"window":4000,"step":100,"target":140},"split_seed":7,"split_fraction":0.65,"block_split":false,"stats":{"amp_mean":..,"amp_std":..,"phase_scale":..}}
//! {"kind":"source","id":0,"slc":"pair_000.slc.sart","dem":"pair_000.dem.sart"}
//! {"kind":"sample","source":0,"row":0,"col":100,"split":"train"}
//! ```
//!
//! A manifest written by `generate` has sources but no samples and a null
//! `stats`; `ingest` fills both in.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{
    block_split, extract_window, sliding_windows, split, NormalizationStats, RawWindow, Sample, SplitTag, WindowSpec,
};
use super::tile::load_raster_pair;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub id: usize,
    pub slc: PathBuf,
    pub dem: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub source: usize,
    pub row: usize,
    pub col: usize,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub window: WindowSpec,
    pub split_seed: u64,
    pub split_fraction: f64,
    pub block_split: bool,
    pub stats: Option<NormalizationStats>,
    pub sources: Vec<SourceEntry>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Line {
    Header {
        format_version: u32,
        window: WindowSpec,
        split_seed: u64,
        split_fraction: f64,
        block_split: bool,
        stats: Option<NormalizationStats>,
    },
    Source(SourceEntry),
    Sample(SampleEntry),
}

impl DatasetManifest {
    /// Manifest listing tile pairs only.
    pub fn sources_only(sources: Vec<SourceEntry>, window: WindowSpec) -> Self {
        Self {
            window,
            split_seed: 0,
            split_fraction: super::pipeline::TRAIN_FRACTION,
            block_split: false,
            stats: None,
            sources,
            samples: Vec::new(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut lines = vec![Line::Header {
            format_version: MANIFEST_VERSION,
            window: self.window,
            split_seed: self.split_seed,
            split_fraction: self.split_fraction,
            block_split: self.block_split,
            stats: self.stats,
        }];
        lines.extend(self.sources.iter().cloned().map(Line::Source));
        lines.extend(self.samples.iter().copied().map(Line::Sample));
        let mut out = String::new();
        for line in &lines {
            out.push_str(&serde_json::to_string(line).map_err(|e| Error::Manifest(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse = |(i, l): (usize, &str)| -> Result<Line> {
            serde_json::from_str(l).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))
        };
        let header = lines.next().ok_or_else(|| Error::Manifest("empty manifest".into()))?;
        let Line::Header { format_version, window, split_seed, split_fraction, block_split, stats } = parse(header)?
        else {
            return Err(Error::Manifest("first line must be the header".into()));
        };
        if format_version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "manifest format version {format_version}, this build reads {MANIFEST_VERSION}"
            )));
        }
        let mut manifest =
            Self { window, split_seed, split_fraction, block_split, stats, sources: Vec::new(), samples: Vec::new() };
        for entry in lines {
            let lineno = entry.0 + 1;
            match parse(entry)? {
                Line::Header { .. } => return Err(Error::Manifest(format!("line {lineno}: repeated header"))),
                Line::Source(s) => manifest.sources.push(s),
                Line::Sample(s) => manifest.samples.push(s),
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        let ids: HashSet<usize> = self.sources.iter().map(|s| s.id).collect();
        if ids.len() != self.sources.len() {
            return Err(Error::Manifest("duplicate source ids".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !ids.contains(&s.source) {
                return Err(Error::Manifest(format!("sample references unknown source {}", s.source)));
            }
            if !seen.insert((s.source, s.row, s.col)) {
                return Err(Error::Manifest(format!(
                    "duplicate sample offset ({}, {}) in source {}",
                    s.row, s.col, s.source
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn samples_in(&self, tag: SplitTag) -> impl Iterator<Item = (usize, &SampleEntry)> {
        self.samples.iter().enumerate().filter(move |(_, s)| s.split == tag)
    }

    pub fn source(&self, id: usize) -> Result<&SourceEntry> {
        self.sources.iter().find(|s| s.id == id).ok_or_else(|| Error::Manifest(format!("unknown source {id}")))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reduce the windows of `entries` (indices into `manifest.samples`),
/// loading each source tile pair once. Output follows `entries` order.
pub fn load_windows(manifest: &DatasetManifest, base_dir: &Path, entries: &[usize]) -> Result<Vec<RawWindow>> {
    let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in entries.iter().enumerate() {
        let s = manifest.samples.get(i).ok_or_else(|| Error::Manifest(format!("no sample #{i}")))?;
        by_source.entry(s.source).or_default().push(pos);
    }
    let mut out: Vec<Option<RawWindow>> = vec![None; entries.len()];
    for (source_id, positions) in by_source {
        let src = manifest.source(source_id)?;
        let (slc_path, dem_path) = (resolve(base_dir, &src.slc), resolve(base_dir, &src.dem));
        let (slc, dem) = load_raster_pair(&slc_path, &dem_path).map_err(|e| {
            Error::Manifest(format!("cannot read tile pair {} / {}: {e}", slc_path.display(), dem_path.display()))
        })?;
        for pos in positions {
            let s = &manifest.samples[entries[pos]];
            out[pos] = Some(extract_window(&slc, &dem, s.row, s.col, manifest.window.window, manifest.window.target)?);
        }
    }
    Ok(out.into_iter().map(|w| w.expect("every position filled")).collect())
}

/// Sample ids and normalised samples of one split.
pub fn load_split<T: Scalar>(
    manifest: &DatasetManifest,
    base_dir: &Path,
    tag: SplitTag,
) -> Result<(Vec<usize>, Vec<Sample<T>>)> {
    let stats = manifest
        .stats
        .ok_or_else(|| Error::Manifest("manifest has no normalisation statistics; run ingest first".into()))?;
    let ids: Vec<usize> = manifest.samples_in(tag).map(|(i, _)| i).collect();
    let samples = load_windows(manifest, base_dir, &ids)?.iter().map(|w| w.normalize(&stats)).collect::<Result<_>>()?;
    Ok((ids, samples))
}

/// Enumerate windows of every source, split them, and fit normalisation on
/// the training windows.
pub fn ingest(
    sources: Vec<SourceEntry>,
    base_dir: &Path,
    window: WindowSpec,
    split_seed: u64,
    split_fraction: f64,
    use_block_split: bool,
) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest {
        window,
        split_seed,
        split_fraction,
        block_split: use_block_split,
        stats: None,
        sources,
        samples: Vec::new(),
    };
    manifest.validate()?;
    for src in &manifest.sources {
        let (slc, _) = load_raster_pair(&resolve(base_dir, &src.slc), &resolve(base_dir, &src.dem))?;
        let offsets = sliding_windows(slc.rows, slc.cols, &window)?;
        let tags = if use_block_split {
            block_split(&offsets, window.window, split_fraction, split_seed ^ src.id as u64)?
        } else {
            vec![SplitTag::Test; offsets.len()]
        };
        manifest.samples.extend(offsets.iter().zip(tags).map(|(&(row, col), split)| SampleEntry {
            source: src.id,
            row,
            col,
            split,
        }));
    }
    if manifest.samples.is_empty() {
        return Err(Error::Manifest("no windows fit in the given sources".into()));
    }
    if !use_block_split {
        let (train, _) = split(manifest.samples.len(), split_fraction, split_seed)?;
        for i in train {
            manifest.samples[i].split = SplitTag::Train;
        }
    }
    let train_ids: Vec<usize> = manifest.samples_in(SplitTag::Train).map(|(i, _)| i).collect();
    let windows = load_windows(&manifest, base_dir, &train_ids)?;
    manifest.stats = Some(NormalizationStats::fit(&windows)?);
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let m = DatasetManifest {
            window: WindowSpec { window: 200, step: 50, target: 140 },
            split_seed: 3,
            split_fraction: 0.65,
            block_split: false,
            stats: Some(NormalizationStats {
                amp_mean: 0.1,
                amp_std: 1.0 / 3.0,
                phase_scale: 1.0 / std::f64::consts::PI,
            }),
            sources: vec![SourceEntry { id: 0, slc: "a.slc.sart".into(), dem: "a.dem.sart".into() }],
            samples: vec![
                SampleEntry { source: 0, row: 0, col: 0, split: SplitTag::Train },
                SampleEntry { source: 0, row: 0, col: 50, split: SplitTag::Test },
            ],
        };
        let text = m.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(DatasetManifest::from_jsonl(&text).unwrap(), m);
    }

    #[test]
    fn rejects_unknown_keys_and_duplicates() {
        let header = r#"{"kind":"header","format_version":1,"window":{"window":4,"step":1,"target":2},"split_seed":0,"split_fraction":0.65,"block_split":false,"stats":null}"#;
        let src = r#"{"kind":"source","id":0,"slc":"a","dem":"b"}"#;
        let s = r#"{"kind":"sample","source":0,"row":0,"col":0,"split":"train"}"#;
        assert!(DatasetManifest::from_jsonl(&format!("{header}\n{src}\n{s}\n")).is_ok());
        assert!(DatasetManifest::from_jsonl(&format!("{header}\n{src}\n{s}\n{s}\n")).is_err());
        let extra = r#"{"kind":"source","id":1,"slc":"a","dem":"b","colour":1}"#;
        assert!(DatasetManifest::from_jsonl(&format!("{header}\n{extra}\n")).is_err());
        assert!(DatasetManifest::from_jsonl(&format!("{src}\n")).is_err());
        let orphan = r#"{"kind":"sample","source":5,"row":0,"col":0,"split":"test"}"#;
        assert!(DatasetManifest::from_jsonl(&format!("{header}\n{src}\n{orphan}\n")).is_err());
    }
}
