//! Raster ingestion, windowing, normalisation and dataset manifests.

pub mod manifest;
pub mod pipeline;
pub mod tile;

pub use manifest::{ingest, load_split, load_windows, DatasetManifest, SampleEntry, SourceEntry};
pub use pipeline::{
    abs_phase, block_split, downsample, downsample_with, extract_window, make_samples, normalize_input, slc_features,
    sliding_windows, split, NormalizationStats, RawWindow, Sample, SplitTag, WindowSpec, TRAIN_FRACTION,
};
pub use tile::{
    decode_dem, decode_slc, encode_dem, encode_slc, load_raster_pair, read_dem, read_slc, write_dem, write_slc,
    DemImage, SlcImage,
};
