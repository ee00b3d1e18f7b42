//! The OODT binary tensor format.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "OODT"
//! 4       4         version, u32 LE (= 1)
//! 8       1         dtype code (1 = f32, 2 = f64, 3 = i32), all LE
//! 9       1         rank r
//! 10      8·r       extents, u64 LE each
//! 10+8r   ...       row-major payload, tightly packed
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{element_count, DType, Tensor, TensorData};

pub const MAGIC: [u8; 4] = *b"OODT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Accept NaN/Inf payload values.
    pub permissive: bool,
}

pub fn header_len(rank: usize) -> usize {
    4 + 4 + 1 + 1 + 8 * rank
}

/// Serializes `t` into `out` and returns the number of bytes written.
pub fn write_tensor<W: Write>(t: &Tensor, mut out: W) -> Result<u64> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::Shape(format!("rank {} exceeds 255", t.rank())))?;
    let mut header = Vec::with_capacity(header_len(t.rank()));
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.push(t.dtype().code());
    header.push(rank);
    for &extent in t.shape() {
        header.extend_from_slice(&(extent as u64).to_le_bytes());
    }
    out.write_all(&header)?;
    let payload = t.raw_bytes();
    out.write_all(&payload)?;
    out.flush()?;
    Ok((header.len() + payload.len()) as u64)
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(header_len(t.rank()) + t.len() * t.dtype().size_of());
    write_tensor(t, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_tensor<R: Read>(mut input: R, opts: ReadOptions) -> Result<Tensor> {
    let mut fixed = [0u8; 10];
    read_exact_or_truncated(&mut input, &mut fixed, 10)?;
    let magic = [fixed[0], fixed[1], fixed[2], fixed[3]];
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32::from_le_bytes([fixed[4], fixed[5], fixed[6], fixed[7]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = DType::from_code(fixed[8])?;
    let rank = fixed[9] as usize;
    let mut extents = vec![0u8; 8 * rank];
    read_exact_or_truncated(&mut input, &mut extents, (10 + 8 * rank) as u64)?;
    let shape: Vec<usize> = extents
        .chunks_exact(8)
        .map(|c| {
            let v = u64::from_le_bytes(c.try_into().expect("chunk of 8"));
            usize::try_from(v).map_err(|_| Error::Shape(format!("extent {v} does not fit in memory")))
        })
        .collect::<Result<_>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Shape(format!("element count of {shape:?} overflows")))?;
    let payload_len = count
        .checked_mul(dtype.size_of())
        .ok_or_else(|| Error::Shape("payload size overflows".into()))?;

    let mut payload = Vec::new();
    input.by_ref().take(payload_len as u64).read_to_end(&mut payload)?;
    if payload.len() < payload_len {
        return Err(Error::Truncated { expected: payload_len as u64, found: payload.len() as u64 });
    }
    debug_assert_eq!(element_count(&shape), count);

    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DType::F64 => TensorData::F64(
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DType::I32 => TensorData::I32(
            payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
    };
    let tensor = Tensor::new(shape, data)?;
    if !opts.permissive {
        if let Some(idx) = tensor.first_non_finite() {
            return Err(Error::NonFinite(idx));
        }
    }
    Ok(tensor)
}

fn read_exact_or_truncated<R: Read>(input: &mut R, buf: &mut [u8], expected: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..])? {
            0 => {
                let found = expected - (buf.len() - filled) as u64;
                return Err(Error::Truncated { expected, found });
            }
            n => filled += n,
        }
    }
    Ok(())
}

pub fn write_tensor_file(t: &Tensor, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(t, BufWriter::new(file)).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

pub fn read_tensor_file(path: impl AsRef<Path>, opts: ReadOptions) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let tensor = read_tensor(&mut reader, opts)?;
    let extra = std::io::copy(&mut reader, &mut std::io::sink()).map_err(|e| Error::io(path, e))?;
    if extra > 0 {
        return Err(Error::TrailingBytes(extra));
    }
    Ok(tensor)
}
