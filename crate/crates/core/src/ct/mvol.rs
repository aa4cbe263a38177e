//! MVOL container, little-endian:
//!
//! ```text
//! "MVOL1\0" | u32 nx, ny, nz | u8 dtype | f32 sx, sy, sz | payload (x fastest, z slowest)
//! ```

use std::fs;
use std::path::Path;

use super::volume::{CtVolume, Dtype, MaskVolume, ProbVolume, Volume, Voxel};
use crate::error::{Error, MvolError};

pub const MAGIC: &[u8; 6] = b"MVOL1\0";
pub const HEADER_LEN: usize = 6 + 12 + 1 + 12;

/// A volume of whichever element type the file declares.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Ct(CtVolume),
    Prob(ProbVolume),
    Mask(MaskVolume),
}

impl AnyVolume {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyVolume::Ct(_) => Dtype::I16,
            AnyVolume::Prob(_) => Dtype::F32,
            AnyVolume::Mask(_) => Dtype::U8,
        }
    }
}

pub fn encode<V: Voxel>(vol: &Volume<V>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + vol.len() * V::DTYPE.size());
    out.extend_from_slice(MAGIC);
    for d in vol.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(V::DTYPE as u8);
    for s in vol.spacing() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for &v in vol.voxels() {
        v.write_le(&mut out);
    }
    out
}

struct Header {
    dims: [usize; 3],
    dtype: Dtype,
    spacing: [f32; 3],
}

fn parse_header(bytes: &[u8]) -> Result<Header, MvolError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(MvolError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(MvolError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let raw = [u32_at(6), u32_at(10), u32_at(14)];
    if raw.contains(&0) {
        return Err(MvolError::EmptyDims(raw));
    }
    let dtype = Dtype::from_code(bytes[18]).ok_or(MvolError::UnknownDtype(bytes[18]))?;
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let spacing = [f32_at(19), f32_at(23), f32_at(27)];
    let payload = raw
        .iter()
        .try_fold(dtype.size() as u64, |a, &d| a.checked_mul(d as u64))
        .filter(|&p| p.checked_add(HEADER_LEN as u64).is_some_and(|t| usize::try_from(t).is_ok()))
        .ok_or(MvolError::DimOverflow(raw))?;
    let expected = HEADER_LEN as u64 + payload;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(MvolError::Truncated { expected, found });
    }
    if found > expected {
        return Err(MvolError::TrailingBytes(found - expected));
    }
    Ok(Header {
        dims: raw.map(|d| d as usize),
        dtype,
        spacing,
    })
}

fn payload<V: Voxel>(h: &Header, bytes: &[u8]) -> Volume<V> {
    let size = V::DTYPE.size();
    let voxels = bytes[HEADER_LEN..].chunks_exact(size).map(V::read_le).collect();
    Volume::new(h.dims, h.spacing, voxels).expect("length validated by header")
}

pub fn decode(bytes: &[u8]) -> Result<AnyVolume, MvolError> {
    let h = parse_header(bytes)?;
    Ok(match h.dtype {
        Dtype::I16 => AnyVolume::Ct(payload(&h, bytes)),
        Dtype::F32 => AnyVolume::Prob(payload(&h, bytes)),
        Dtype::U8 => AnyVolume::Mask(payload(&h, bytes)),
    })
}

/// Decodes a file that must hold elements of type `V`.
pub fn decode_as<V: Voxel>(bytes: &[u8]) -> Result<Volume<V>, MvolError> {
    let h = parse_header(bytes)?;
    if h.dtype != V::DTYPE {
        return Err(MvolError::WrongDtype {
            expected: V::DTYPE.name(),
            found: h.dtype.name(),
        });
    }
    Ok(payload(&h, bytes))
}

pub fn write_mvol<V: Voxel>(vol: &Volume<V>, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    fs::write(path, encode(vol)).map_err(|e| Error::from(e).at_path(path))
}

pub fn read_mvol(path: impl AsRef<Path>) -> Result<AnyVolume, Error> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode(&bytes).map_err(|e| Error::from(e).at_path(path))
}

pub fn read_mvol_as<V: Voxel>(path: impl AsRef<Path>) -> Result<Volume<V>, Error> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode_as(&bytes).map_err(|e| Error::from(e).at_path(path))
}
