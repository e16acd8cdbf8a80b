//! Binary tensor files.
//!
//! Layout, all header fields little-endian:
//!
//! ```text
//! offset  size       field
//! 0       4          magic "THNS"
//! 4       4          version, u32 = 1
//! 8       4          rank, u32 (2 or 3)
//! 12      8 * rank   dims, u64 each
//! ...     1          dtype code, u8 (0 = f32, 1 = f64)
//! ...     payload    row-major floats, little-endian
//! ```
//!
//! Rank 2 is a single matrix; rank 3 is a stack of `d` calibration samples
//! of shape `b x a`. Values are widened to `f64` in memory and written back
//! in the dtype they came with (f32 writes round to nearest even).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use thanos_core::{CalibrationSet, DenseMatrix};

pub const MAGIC: [u8; 4] = *b"THNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic {found:?}, expected \"THNS\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported version {found}, expected {VERSION}")]
    BadVersion { found: u32 },

    #[error("unsupported rank {found}, expected 2 or 3")]
    BadRank { found: u32 },

    #[error("unknown dtype code {found}")]
    BadDtype { found: u8 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },

    #[error("dimension overflow in header")]
    DimOverflow,

    #[error("{context}: {source}")]
    Invalid {
        context: String,
        source: thanos_core::PruneError,
    },
}

/// Element type as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(TensorError::BadDtype { found: other }),
        }
    }
}

/// In-memory tensor: dims straight from the header, values widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub dims: Vec<u64>,
    pub dtype: Dtype,
    pub values: Vec<f64>,
}

impl TensorData {
    pub fn from_matrix(m: &DenseMatrix, dtype: Dtype) -> Self {
        Self {
            dims: vec![m.rows() as u64, m.cols() as u64],
            dtype,
            values: m.data().to_vec(),
        }
    }

    pub fn from_samples(samples: &[DenseMatrix], dtype: Dtype) -> Self {
        let (b, a) = (samples[0].rows() as u64, samples[0].cols() as u64);
        let mut values = Vec::with_capacity(samples.len() * (b * a) as usize);
        for s in samples {
            values.extend_from_slice(s.data());
        }
        Self {
            dims: vec![samples.len() as u64, b, a],
            dtype,
            values,
        }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Reinterpret a rank-2 tensor as a matrix.
    pub fn matrix(&self) -> Result<DenseMatrix, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::BadRank {
                found: self.rank() as u32,
            });
        }
        DenseMatrix::from_vec(
            self.dims[0] as usize,
            self.dims[1] as usize,
            self.values.clone(),
        )
        .map_err(|source| TensorError::Invalid {
            context: "rank-2 tensor".into(),
            source,
        })
    }

    /// Split a rank-3 `d x b x a` tensor into `d` sample matrices.
    pub fn calibration(&self) -> Result<CalibrationSet, TensorError> {
        if self.rank() != 3 {
            return Err(TensorError::BadRank {
                found: self.rank() as u32,
            });
        }
        let (d, b, a) = (
            self.dims[0] as usize,
            self.dims[1] as usize,
            self.dims[2] as usize,
        );
        let mut samples = Vec::with_capacity(d);
        for l in 0..d {
            let slice = &self.values[l * b * a..(l + 1) * b * a];
            let m = DenseMatrix::from_vec(b, a, slice.to_vec()).map_err(|source| {
                TensorError::Invalid {
                    context: format!("calibration sample {l}"),
                    source,
                }
            })?;
            samples.push(m);
        }
        CalibrationSet::new(samples).map_err(|source| TensorError::Invalid {
            context: "calibration tensor".into(),
            source,
        })
    }
}

pub fn save_tensor(path: &Path, tensor: &TensorData) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(tensor.dims.len() as u32)?;
    for &d in &tensor.dims {
        w.write_u64::<LittleEndian>(d)?;
    }
    w.write_u8(tensor.dtype.code())?;
    match tensor.dtype {
        Dtype::F32 => {
            for &v in &tensor.values {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        Dtype::F64 => {
            for &v in &tensor.values {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<TensorData, TensorError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic, 4)?;
    if magic != MAGIC {
        return Err(TensorError::BadMagic { found: magic });
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof_as_truncation(4))?;
    if version != VERSION {
        return Err(TensorError::BadVersion { found: version });
    }
    let rank = r.read_u32::<LittleEndian>().map_err(eof_as_truncation(4))?;
    if rank != 2 && rank != 3 {
        return Err(TensorError::BadRank { found: rank });
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        dims.push(r.read_u64::<LittleEndian>().map_err(eof_as_truncation(8))?);
    }
    let dtype = Dtype::from_code(r.read_u8().map_err(eof_as_truncation(1))?)?;

    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or(TensorError::DimOverflow)?;
    let expected_bytes = count
        .checked_mul(dtype.size() as u64)
        .ok_or(TensorError::DimOverflow)?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let found = payload.len() as u64;
    if found < expected_bytes {
        return Err(TensorError::Truncated {
            expected: expected_bytes,
            found,
        });
    }
    if found > expected_bytes {
        return Err(TensorError::TrailingBytes {
            extra: found - expected_bytes,
        });
    }

    let mut values = Vec::with_capacity(count as usize);
    match dtype {
        Dtype::F32 => {
            for chunk in payload.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        Dtype::F64 => {
            for chunk in payload.chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    Ok(TensorData {
        dims,
        dtype,
        values,
    })
}

fn read_exact_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    expected: u64,
) -> Result<(), TensorError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(TensorError::Truncated {
                expected,
                found: filled as u64,
            });
        }
        filled += n;
    }
    Ok(())
}

fn eof_as_truncation(expected: u64) -> impl Fn(std::io::Error) -> TensorError {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TensorError::Truncated { expected, found: 0 }
        } else {
            TensorError::Io(e)
        }
    }
}
