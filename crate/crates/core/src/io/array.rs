//! `NFSC` binary complex-array files.
//!
//! Layout, all little-endian:
//!
//! | bytes          | content                                   |
//! |----------------|-------------------------------------------|
//! | 4              | magic `NFSC`                              |
//! | 1              | version (1)                               |
//! | 1              | dtype (0 = `f32` real/imaginary pairs)    |
//! | 1              | dimension count `d`, `1..=4`              |
//! | 1              | reserved, zero                            |
//! | 8·d            | extents, `u64`                            |
//! | 16·d           | per-axis `f64` start, `f64` spacing       |
//! | 8·∏extents     | payload, last axis fastest                |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::imaging::{ComplexImage, GridAxis, ImageGrid};
use crate::Complex;

pub const MAGIC: [u8; 4] = *b"NFSC";
pub const VERSION: u8 = 1;
pub const DTYPE_C32: u8 = 0;
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Error)]
pub enum ArrayFileError {
    #[error("bad magic {0:?}, not an NFSC file")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dimension count {0} outside 1..=4")]
    BadDimensionCount(usize),
    #[error("extents {0:?} overflow the addressable size")]
    ExtentOverflow(Vec<u64>),
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("value count {got} does not match extents {extents:?}")]
    ShapeMismatch { extents: Vec<usize>, got: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ArrayFileError> = std::result::Result<T, E>;

/// Axis metadata of one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMeta {
    pub start: f64,
    pub spacing: f64,
}

impl Default for AxisMeta {
    fn default() -> Self {
        AxisMeta {
            start: 0.0,
            spacing: 1.0,
        }
    }
}

/// An n-dimensional complex array, stored row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexArray {
    pub extents: Vec<usize>,
    pub axes: Vec<AxisMeta>,
    /// Values as stored: 32-bit real/imaginary pairs.
    pub data: Vec<[f32; 2]>,
}

impl ComplexArray {
    pub fn new(extents: Vec<usize>, axes: Vec<AxisMeta>, data: Vec<[f32; 2]>) -> Result<Self> {
        if extents.is_empty() || extents.len() > MAX_DIMS || axes.len() != extents.len() {
            return Err(ArrayFileError::BadDimensionCount(extents.len()));
        }
        let count = element_count(&extents.iter().map(|&e| e as u64).collect::<Vec<_>>())?;
        if data.len() != count {
            return Err(ArrayFileError::ShapeMismatch {
                extents,
                got: data.len(),
            });
        }
        Ok(ComplexArray {
            extents,
            axes,
            data,
        })
    }

    /// Narrows `f64` samples to the stored precision.
    pub fn from_complex(
        extents: Vec<usize>,
        axes: Vec<AxisMeta>,
        values: &[Complex],
    ) -> Result<Self> {
        let data = values.iter().map(|v| [v.re as f32, v.im as f32]).collect();
        ComplexArray::new(extents, axes, data)
    }

    pub fn to_complex(&self) -> Vec<Complex> {
        self.data
            .iter()
            .map(|&[re, im]| Complex::new(re as f64, im as f64))
            .collect()
    }

    pub fn from_image(image: &ComplexImage) -> Self {
        let axes = image
            .grid
            .axes()
            .iter()
            .map(|a| AxisMeta {
                start: a.start,
                spacing: a.spacing,
            })
            .collect();
        ComplexArray::from_complex(image.shape(), axes, &image.values)
            .expect("image shape is consistent")
    }

    /// Interprets a 1–3 dimensional array as an image (range, azimuth, height).
    pub fn to_image(&self) -> Result<ComplexImage> {
        let axis =
            |d: usize| GridAxis::new(self.axes[d].start, self.axes[d].spacing, self.extents[d]);
        let grid = match self.extents.len() {
            1 => ImageGrid::one_d(axis(0)),
            2 => ImageGrid::two_d(axis(0), axis(1)),
            3 => ImageGrid::three_d(axis(0), axis(1), axis(2)),
            d => return Err(ArrayFileError::BadDimensionCount(d)),
        };
        Ok(ComplexImage::new(grid, self.to_complex()).expect("extents match grid"))
    }

    pub fn header_len(&self) -> usize {
        header_len(self.extents.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + 8 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&[VERSION, DTYPE_C32, self.extents.len() as u8, 0]);
        for &e in &self.extents {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for a in &self.axes {
            out.extend_from_slice(&a.start.to_le_bytes());
            out.extend_from_slice(&a.spacing.to_le_bytes());
        }
        for &[re, im] in &self.data {
            out.extend_from_slice(&re.to_le_bytes());
            out.extend_from_slice(&im.to_le_bytes());
        }
        out
    }

    pub fn from_reader(mut reader: impl Read) -> Result<Self> {
        let mut fixed = [0u8; 8];
        read_exact(&mut reader, &mut fixed, "fixed header")?;
        let magic = [fixed[0], fixed[1], fixed[2], fixed[3]];
        if magic != MAGIC {
            return Err(ArrayFileError::BadMagic(magic));
        }
        if fixed[4] != VERSION {
            return Err(ArrayFileError::UnsupportedVersion(fixed[4]));
        }
        if fixed[5] != DTYPE_C32 {
            return Err(ArrayFileError::UnknownDtype(fixed[5]));
        }
        let ndim = fixed[6] as usize;
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(ArrayFileError::BadDimensionCount(ndim));
        }

        let mut raw_extents = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            read_exact(&mut reader, &mut b, "extents")?;
            raw_extents.push(u64::from_le_bytes(b));
        }
        let count = element_count(&raw_extents)?;
        let mut axes = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 16];
            read_exact(&mut reader, &mut b, "axis metadata")?;
            axes.push(AxisMeta {
                start: f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
                spacing: f64::from_le_bytes(b[8..].try_into().expect("8 bytes")),
            });
        }

        let mut payload = Vec::new();
        reader
            .take(8 * count as u64 + 1)
            .read_to_end(&mut payload)
            .map_err(|source| ArrayFileError::Io {
                path: "<reader>".into(),
                source,
            })?;
        if payload.len() < 8 * count {
            return Err(ArrayFileError::Truncated("payload"));
        }
        let data = payload[..8 * count]
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                    f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
                ]
            })
            .collect();
        let extents = raw_extents.iter().map(|&e| e as usize).collect();
        ComplexArray::new(extents, axes, data)
    }
}

fn header_len(ndim: usize) -> usize {
    8 + 24 * ndim
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ArrayFileError::Truncated(what),
        _ => ArrayFileError::Io {
            path: "<reader>".into(),
            source: e,
        },
    })
}

/// Element count with overflow checks against both `usize` and the byte size.
fn element_count(extents: &[u64]) -> Result<usize> {
    let overflow = || ArrayFileError::ExtentOverflow(extents.to_vec());
    let count = extents
        .iter()
        .try_fold(1u64, |acc, &e| acc.checked_mul(e))
        .ok_or_else(overflow)?;
    count.checked_mul(8).ok_or_else(overflow)?;
    usize::try_from(count)
        .ok()
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(overflow)
}

pub fn write_array(path: &Path, array: &ComplexArray) -> Result<()> {
    let io_err = |source| ArrayFileError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(&array.to_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_array(path: &Path) -> Result<ComplexArray> {
    let file = File::open(path).map_err(|source| ArrayFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ComplexArray::from_reader(BufReader::new(file)).map_err(|e| match e {
        ArrayFileError::Io { source, .. } => ArrayFileError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn write_image(path: &Path, image: &ComplexImage) -> Result<()> {
    write_array(path, &ComplexArray::from_image(image))
}

pub fn read_image(path: &Path) -> Result<ComplexImage> {
    read_array(path)?.to_image()
}
