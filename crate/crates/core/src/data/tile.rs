//! `SART` raster tiles.
//!
//! ```text
//! offset size  field
//! 0      4     magic "SART"
//! 4      4     u32 format version (1)
//! 8      1     u8 dtype: 1 = complex64 (f32 re, f32 im), 2 = float32
//! 9      4     u32 rows
//! 13     4     u32 cols
//! 17     ...   row-major payload, little-endian, rows * cols elements
//! ```
//!
//! Files must be exactly `17 + rows * cols * element_size` bytes long.

use std::fs;
use std::path::Path;

use num_complex::Complex32;

use crate::error::{Error, Result};

pub const TILE_MAGIC: [u8; 4] = *b"SART";
pub const TILE_VERSION: u32 = 1;
pub const TILE_HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TileDType {
    Complex64 = 1,
    Float32 = 2,
}

impl TileDType {
    fn element_size(self) -> usize {
        match self {
            TileDType::Complex64 => 8,
            TileDType::Float32 => 4,
        }
    }
}

/// Complex radar matrix in range (rows) by azimuth (cols) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SlcImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex32>,
}

/// Elevations in metres, same layout as [`SlcImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

fn check_extent(rows: usize, cols: usize, len: usize, what: &str) -> Result<()> {
    if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(len) {
        return Err(Error::Shape(format!("{what}: {rows}x{cols} does not hold {len} values")));
    }
    Ok(())
}

impl SlcImage {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex32>) -> Result<Self> {
        check_extent(rows, cols, data.len(), "SLC image")?;
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { what: "SLC image".into() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn at(&self, r: usize, c: usize) -> Complex32 {
        self.data[r * self.cols + c]
    }
}

impl DemImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        check_extent(rows, cols, data.len(), "DEM image")?;
        if data.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite { what: "DEM image".into() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

fn header(dtype: TileDType, rows: usize, cols: usize, payload: usize) -> Result<Vec<u8>> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("extent {v} exceeds u32")));
    let mut out = Vec::with_capacity(TILE_HEADER_LEN + payload);
    out.extend_from_slice(&TILE_MAGIC);
    out.extend_from_slice(&TILE_VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.extend_from_slice(&dim(rows)?.to_le_bytes());
    out.extend_from_slice(&dim(cols)?.to_le_bytes());
    Ok(out)
}

pub fn encode_slc(img: &SlcImage) -> Result<Vec<u8>> {
    let mut out = header(TileDType::Complex64, img.rows, img.cols, img.data.len() * 8)?;
    for z in &img.data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_dem(img: &DemImage) -> Result<Vec<u8>> {
    let mut out = header(TileDType::Float32, img.rows, img.cols, img.data.len() * 4)?;
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Decoded<'a> {
    rows: usize,
    cols: usize,
    payload: &'a [u8],
}

fn decode<'a>(bytes: &'a [u8], want: TileDType, path: &Path) -> Result<Decoded<'a>> {
    let malformed = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if bytes.len() < 4 || bytes[..4] != TILE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: TILE_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < TILE_HEADER_LEN {
        return Err(malformed(format!("truncated header: {} of {TILE_HEADER_LEN} bytes", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice"));
    let version = u32_at(4);
    if version != TILE_VERSION {
        return Err(Error::Version { path: path.to_path_buf(), found: version, supported: TILE_VERSION });
    }
    let dtype = match bytes[8] {
        1 => TileDType::Complex64,
        2 => TileDType::Float32,
        other => return Err(malformed(format!("unknown dtype tag {other}"))),
    };
    if dtype != want {
        return Err(malformed(format!("expected {want:?} payload, file holds {dtype:?}")));
    }
    let (rows, cols) = (u32_at(9) as usize, u32_at(13) as usize);
    if rows == 0 || cols == 0 {
        return Err(malformed(format!("empty raster {rows}x{cols}")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.element_size()))
        .ok_or_else(|| malformed("payload size overflows".into()))?;
    let payload = &bytes[TILE_HEADER_LEN..];
    if payload.len() != expected {
        return Err(malformed(format!("payload is {} bytes, {rows}x{cols} {dtype:?} needs {expected}", payload.len())));
    }
    Ok(Decoded { rows, cols, payload })
}

pub fn decode_slc(bytes: &[u8], path: &Path) -> Result<SlcImage> {
    let d = decode(bytes, TileDType::Complex64, path)?;
    let data = d
        .payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            Complex32::new(re, im)
        })
        .collect();
    SlcImage::new(d.rows, d.cols, data)
}

pub fn decode_dem(bytes: &[u8], path: &Path) -> Result<DemImage> {
    let d = decode(bytes, TileDType::Float32, path)?;
    let data = d.payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    DemImage::new(d.rows, d.cols, data)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_slc(path: &Path) -> Result<SlcImage> {
    decode_slc(&read(path)?, path)
}

pub fn read_dem(path: &Path) -> Result<DemImage> {
    decode_dem(&read(path)?, path)
}

pub fn write_slc(path: &Path, img: &SlcImage) -> Result<()> {
    write(path, &encode_slc(img)?)
}

pub fn write_dem(path: &Path, img: &DemImage) -> Result<()> {
    write(path, &encode_dem(img)?)
}

/// Load an SLC tile and its ground-truth DEM, checking that extents agree.
pub fn load_raster_pair(slc_path: &Path, dem_path: &Path) -> Result<(SlcImage, DemImage)> {
    let slc = read_slc(slc_path)?;
    let dem = read_dem(dem_path)?;
    if (slc.rows, slc.cols) != (dem.rows, dem.cols) {
        return Err(Error::Shape(format!(
            "SLC {} is {}x{} but DEM {} is {}x{}",
            slc_path.display(),
            slc.rows,
            slc.cols,
            dem_path.display(),
            dem.rows,
            dem.cols
        )));
    }
    Ok((slc, dem))
}
