//! Criterion benchmarks for the layer kernels and whole-network passes live in
//! `benches/`; this crate only re-exports the core library.

pub use demnet::*;
