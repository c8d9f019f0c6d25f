//! Flat little-endian payload with a plain-text sidecar header.
//!
//! A volume stored at `scan.raw` keeps its geometry in `scan.raw.hdr`:
//!
//! ```text
//! dims: 64 64 40
//! spacing: 0.93 0.93 1.75
//! origin: -30 12.5 0
//! dtype: float32
//! byte_order: little
//! ```

use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};

use super::nifti::Datatype;
use crate::error::{Error, LoadError, Result};
use crate::volume::{Geometry, Volume3D};

pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn parse_triple<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<[T; 3], LoadError> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|t| t.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| LoadError::RawHeader(format!("{key}: cannot parse {value:?}")))?;
    parts
        .try_into()
        .map_err(|_| LoadError::RawHeader(format!("{key}: expected three values")))
}

pub fn parse_header(text: &str) -> std::result::Result<(Geometry, Datatype), LoadError> {
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut dtype = None;
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| LoadError::RawHeader(format!("malformed line {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dims" => dims = Some(parse_triple::<usize>(key, value)?),
            "spacing" => spacing = Some(parse_triple::<f64>(key, value)?),
            "origin" => origin = Some(parse_triple::<f64>(key, value)?),
            "dtype" => {
                dtype = Some(match value {
                    "uint8" => Datatype::Uint8,
                    "int16" => Datatype::Int16,
                    "float32" => Datatype::Float32,
                    other => return Err(LoadError::RawHeader(format!("unsupported dtype {other:?}"))),
                })
            }
            "byte_order" => {
                if value != "little" {
                    return Err(LoadError::RawHeader(format!("unsupported byte order {value:?}")));
                }
            }
            other => return Err(LoadError::RawHeader(format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| LoadError::RawHeader(format!("missing {k}"));
    let geometry = Geometry {
        dims: dims.ok_or_else(|| missing("dims"))?,
        spacing: spacing.ok_or_else(|| missing("spacing"))?,
        origin: origin.unwrap_or([0.0; 3]),
    };
    geometry.validate().map_err(|e| LoadError::RawHeader(e.to_string()))?;
    Ok((geometry, dtype.ok_or_else(|| missing("dtype"))?))
}

pub fn format_header(g: &Geometry, dtype: Datatype) -> String {
    let join = |v: &[f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
    format!(
        "dims: {} {} {}\nspacing: {}\norigin: {}\ndtype: {}\nbyte_order: little\n",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        join(&g.spacing),
        join(&g.origin),
        dtype.name()
    )
}

pub fn decode(header: &str, payload: &[u8]) -> std::result::Result<Volume3D, LoadError> {
    let (geometry, dtype) = parse_header(header)?;
    let expected = geometry.len() * dtype.bytes();
    if payload.len() < expected {
        return Err(LoadError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = match dtype {
        Datatype::Uint8 => payload[..expected].iter().map(|&b| f64::from(b)).collect(),
        Datatype::Int16 => payload[..expected]
            .chunks_exact(2)
            .map(|c| f64::from(LittleEndian::read_i16(c)))
            .collect(),
        Datatype::Float32 => payload[..expected]
            .chunks_exact(4)
            .map(|c| f64::from(LittleEndian::read_f32(c)))
            .collect(),
    };
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(LoadError::NonFinite { index });
    }
    Ok(Volume3D::new(geometry, data).expect("validated geometry"))
}

pub fn encode(v: &Volume3D, dtype: Datatype) -> Result<(String, Vec<u8>)> {
    let mut payload = vec![0u8; v.data().len() * dtype.bytes()];
    match dtype {
        Datatype::Uint8 => {
            for (o, &x) in payload.iter_mut().zip(v.data()) {
                *o = dtype.quantize(x)? as u8;
            }
        }
        Datatype::Int16 => {
            for (o, &x) in payload.chunks_exact_mut(2).zip(v.data()) {
                LittleEndian::write_i16(o, dtype.quantize(x)? as i16);
            }
        }
        Datatype::Float32 => {
            for (o, &x) in payload.chunks_exact_mut(4).zip(v.data()) {
                LittleEndian::write_f32(o, dtype.quantize(x)? as f32);
            }
        }
    }
    Ok((format_header(v.geometry(), dtype), payload))
}

pub(crate) fn read(path: &Path) -> Result<Volume3D> {
    let hdr_path = sidecar_path(path);
    let header = std::fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let payload = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&header, &payload).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write(v: &Volume3D, path: &Path, dtype: Datatype) -> Result<()> {
    let (header, payload) = encode(v, dtype)?;
    let hdr_path = sidecar_path(path);
    std::fs::write(&hdr_path, header).map_err(|e| Error::io(&hdr_path, e))?;
    std::fs::write(path, payload).map_err(|e| Error::io(path, e))
}
