//! Binary checkpoint bundle. The byte layout is documented in `docs/formats.md`.

use std::fs;
use std::path::Path;

use super::{Architecture, ModelParams};
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DEMN";
pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub format_version: u32,
    pub arch: Architecture,
    pub params: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub norm_stats: Option<NormalizationStats>,
    /// SHA-256 of the training configuration that produced this state.
    pub config_digest: [u8; 32],
    /// Number of completed epochs.
    pub epoch: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let n = self.params.tensors.len();
        if self.optimizer.m.len() != n || self.optimizer.v.len() != n {
            return Err(Error::Shape(format!(
                "optimizer holds {}/{} moment tensors for {n} parameters",
                self.optimizer.m.len(),
                self.optimizer.v.len()
            )));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.params.init_seed.to_le_bytes());

        let arch = serde_json::to_vec(&self.arch).map_err(|e| Error::InvalidArgument(format!("architecture: {e}")))?;
        put_len(&mut out, arch.len())?;
        out.extend_from_slice(&arch);

        match &self.norm_stats {
            Some(s) => {
                out.push(1);
                for v in [s.amp_mean, s.amp_std, s.phase_scale] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }

        let c = &self.optimizer.config;
        out.extend_from_slice(&self.optimizer.t.to_le_bytes());
        for v in [c.alpha, c.beta1, c.beta2, c.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }

        put_len(&mut out, 3 * n)?;
        for (name, t) in self.params.names.iter().zip(&self.params.tensors) {
            put_section(&mut out, name, t)?;
        }
        for (prefix, moments) in [(ADAM_M, &self.optimizer.m), (ADAM_V, &self.optimizer.v)] {
            for (name, t) in self.params.names.iter().zip(moments) {
                put_section(&mut out, &format!("{prefix}{name}"), t)?;
            }
        }
        Ok(out)
    }

    /// Inverse of [`Checkpoint::encode`]. `path` only labels diagnostics.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: CHECKPOINT_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        r.pos = 4;
        let format_version = r.u32()?;
        if format_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: format_version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let epoch = r.u64()?;
        let init_seed = r.u64()?;

        let arch_len = r.u32()? as usize;
        let arch: Architecture =
            serde_json::from_slice(r.take(arch_len)?).map_err(|e| r.malformed(format!("architecture record: {e}")))?;
        arch.validate().map_err(|e| r.malformed(format!("architecture record: {e}")))?;

        let norm_stats = match r.u8()? {
            0 => None,
            1 => Some(NormalizationStats { amp_mean: r.f64()?, amp_std: r.f64()?, phase_scale: r.f64()? }),
            other => return Err(r.malformed(format!("normalisation flag {other}"))),
        };

        let t = r.u64()?;
        let config = AdamConfig { alpha: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, epsilon: r.f64()? };

        let mut params = ModelParams::<T>::zeros(&arch);
        params.init_seed = init_seed;
        let n = params.tensors.len();
        let count = r.u32()? as usize;
        if count != 3 * n {
            return Err(r.malformed(format!("{count} sections, architecture needs {}", 3 * n)));
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for pass in 0..3 {
            for i in 0..n {
                let expected = match pass {
                    0 => params.names[i].clone(),
                    1 => format!("{ADAM_M}{}", params.names[i]),
                    _ => format!("{ADAM_V}{}", params.names[i]),
                };
                let tensor = r.section::<T>(&expected, params.tensors[i].shape())?;
                match pass {
                    0 => params.tensors[i] = tensor,
                    1 => m.push(tensor),
                    _ => v.push(tensor),
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            format_version,
            arch,
            params,
            optimizer: AdamState { config, t, m, v },
            norm_stats,
            config_digest,
            epoch,
        })
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_section<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    put_len(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        put_len(out, d)?;
    }
    out.reserve(t.len() * T::DTYPE.size());
    for &x in t.data() {
        x.write_le(out);
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: String) -> Error {
        Error::Format { path: self.path.to_path_buf(), reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.malformed(format!("truncated at byte {}, wanted {n} more", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn section<T: Scalar>(&mut self, expected: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let len = self.u32()? as usize;
        let name =
            std::str::from_utf8(self.take(len)?).map_err(|_| self.malformed("section name is not UTF-8".into()))?;
        if name != expected {
            return Err(self.malformed(format!("section {name:?} where {expected:?} was expected")));
        }
        let tag = self.u8()?;
        let dtype =
            DType::from_tag(tag).ok_or_else(|| self.malformed(format!("section {name}: unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(self.malformed(format!("section {name}: stored as {dtype:?}, loading as {:?}", T::DTYPE)));
        }
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != shape {
            return Err(self.malformed(format!("section {name}: extents {dims:?}, architecture needs {shape:?}")));
        }
        let n: usize = dims.iter().product();
        let raw = self.take(n * dtype.size())?;
        let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
        Tensor::from_vec(&dims, data)
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = ckpt.encode()?;
    // write-then-rename so an interrupted save never leaves a torn file behind
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Checkpoint::decode(&bytes, path)
}
