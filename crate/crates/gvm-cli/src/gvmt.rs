//! GVMT: the single-tensor binary format every module reads and writes.
//!
//! Layout, all little-endian:
//!   magic   4 bytes  47 56 4D 54 ("GVMT")
//!   version u32      1
//!   dtype   u32      0 = f64, 1 = f32, 2 = u16 token ids
//!   ndim    u32
//!   extents ndim x u64
//!   payload numel x dtype size, raw little-endian
//!
//! f64 round-trips bit-exactly. f32 is opt-in narrowed storage: writing
//! narrows, reading widens. u16 carries token grids.

use crate::{CliError, Result};
use gvm_core::Tensor;
use std::io::{Read, Write};

pub const MAGIC: [u8; 4] = *b"GVMT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
    U16 = 2,
}

impl Dtype {
    fn from_u32(v: u32, offset: u64) -> Result<Self> {
        match v {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::U16),
            other => Err(CliError::Format {
                offset,
                message: format!("unknown dtype {other}"),
            }),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::U16 => 2,
        }
    }
}

/// A decoded GVMT block.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    /// f64 payload, or f32 widened to f64 on read.
    Float(Tensor),
    /// u16 token payload with its shape.
    Tokens { shape: Vec<usize>, values: Vec<u16> },
}

impl Block {
    pub fn shape(&self) -> &[usize] {
        match self {
            Block::Float(t) => t.shape(),
            Block::Tokens { shape, .. } => shape,
        }
    }

    pub fn expect_float(self, what: &str) -> Result<Tensor> {
        match self {
            Block::Float(t) => Ok(t),
            Block::Tokens { .. } => Err(CliError::check(format!("{what}: expected a float tensor, found token data"))),
        }
    }

    pub fn expect_tokens(self, what: &str) -> Result<(Vec<usize>, Vec<u16>)> {
        match self {
            Block::Tokens { shape, values } => Ok((shape, values)),
            Block::Float(_) => Err(CliError::check(format!("{what}: expected token data, found a float tensor"))),
        }
    }
}

/// Encode an f64 tensor.
pub fn write_f64<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    write_header(w, Dtype::F64, t.shape())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Encode narrowed to f32 (lossy single-precision storage).
pub fn write_f32<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    write_header(w, Dtype::F32, t.shape())?;
    for v in t.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Encode a token grid.
pub fn write_u16<W: Write>(w: &mut W, shape: &[usize], values: &[u16]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != values.len() {
        return Err(CliError::check(format!(
            "token shape {shape:?} wants {numel} values, got {}",
            values.len()
        )));
    }
    write_header(w, Dtype::U16, shape)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, dtype: Dtype, shape: &[usize]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dtype as u32).to_le_bytes())?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Decode one block. `base_offset` is where this block starts within the
/// surrounding file, so errors report absolute positions; the returned
/// offset points just past the block.
pub fn read_block<R: Read>(r: &mut R, base_offset: u64) -> Result<(Block, u64)> {
    let mut pos = base_offset;
    let magic = take::<4, R>(r, &mut pos, "magic")?;
    if magic != MAGIC {
        return Err(CliError::Format {
            offset: base_offset,
            message: format!("bad magic {magic:02X?}, expected {MAGIC:02X?}"),
        });
    }
    let version = u32::from_le_bytes(take::<4, R>(r, &mut pos, "version")?);
    if version != VERSION {
        return Err(CliError::Format {
            offset: base_offset + 4,
            message: format!("unsupported version {version}"),
        });
    }
    let dtype_at = pos;
    let dtype = Dtype::from_u32(u32::from_le_bytes(take::<4, R>(r, &mut pos, "dtype")?), dtype_at)?;
    let ndim = u32::from_le_bytes(take::<4, R>(r, &mut pos, "ndim")?) as usize;
    if ndim > 8 {
        return Err(CliError::Format {
            offset: pos - 4,
            message: format!("implausible rank {ndim}"),
        });
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut numel: usize = 1;
    for _ in 0..ndim {
        let e = u64::from_le_bytes(take::<8, R>(r, &mut pos, "extent")?) as usize;
        numel = numel.checked_mul(e).ok_or(CliError::Format {
            offset: pos - 8,
            message: "extent overflow".into(),
        })?;
        shape.push(e);
    }

    let block = match dtype {
        Dtype::F64 => {
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(take::<8, R>(r, &mut pos, "payload")?));
            }
            Block::Float(Tensor::new(shape, data).map_err(CliError::Core)?)
        }
        Dtype::F32 => {
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from(f32::from_le_bytes(take::<4, R>(r, &mut pos, "payload")?)));
            }
            Block::Float(Tensor::new(shape, data).map_err(CliError::Core)?)
        }
        Dtype::U16 => {
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                values.push(u16::from_le_bytes(take::<2, R>(r, &mut pos, "payload")?));
            }
            Block::Tokens { shape, values }
        }
    };
    Ok((block, pos))
}

fn take<const N: usize, R: Read>(r: &mut R, pos: &mut u64, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    let mut filled = 0;
    while filled < N {
        let n = r.read(&mut buf[filled..]).map_err(CliError::Io)?;
        if n == 0 {
            return Err(CliError::Format {
                offset: *pos + filled as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        filled += n;
    }
    *pos += N as u64;
    Ok(buf)
}

/// Write one tensor as a standalone .gvmt file.
pub fn save_f64(path: &std::path::Path, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_f64(&mut f, t)
}

pub fn save_f32(path: &std::path::Path, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_f32(&mut f, t)
}

pub fn save_u16(path: &std::path::Path, shape: &[usize], values: &[u16]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_u16(&mut f, shape, values)
}

/// Read one standalone .gvmt file.
pub fn load(path: &std::path::Path) -> Result<Block> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let (block, end) = read_block(&mut f, 0)?;
    // Trailing bytes mean the file is not a single tensor.
    let mut probe = [0u8; 1];
    if f.read(&mut probe)? != 0 {
        return Err(CliError::Format {
            offset: end,
            message: "trailing bytes after tensor payload".into(),
        });
    }
    Ok(block)
}
