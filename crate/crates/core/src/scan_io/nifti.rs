//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) subset: 3D volumes stored as
//! unsigned 8-bit, signed 16-bit or 32-bit float.

use std::io::{Read, Write};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use log::warn;

use crate::error::{Error, LoadError, Result};
use crate::volume::{Geometry, Volume3D};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

// Header field offsets.
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_DESCRIP: usize = 148;
const OFF_QFORM_CODE: usize = 252;
const OFF_SFORM_CODE: usize = 254;
const OFF_QUATERN: usize = 256;
const OFF_QOFFSET: usize = 268;
const OFF_SROW: usize = 280;
const OFF_MAGIC: usize = 344;

/// On-disk voxel types supported for reading and writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::Uint8 => 8,
            Datatype::Int16 => 16,
            Datatype::Float32 => 32,
        }
    }

    pub fn bytes(self) -> usize {
        self.bitpix() as usize / 8
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::Uint8),
            4 => Some(Datatype::Int16),
            16 => Some(Datatype::Float32),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Datatype::Uint8 => "uint8",
            Datatype::Int16 => "int16",
            Datatype::Float32 => "float32",
        }
    }

    /// Converts a value for storage, refusing anything that would wrap or saturate.
    pub(crate) fn quantize(self, v: f64) -> Result<f64> {
        let overflow = || Error::Overflow {
            value: v,
            datatype: self.name(),
        };
        match self {
            Datatype::Uint8 => {
                let r = v.round();
                if (0.0..=255.0).contains(&r) {
                    Ok(r)
                } else {
                    Err(overflow())
                }
            }
            Datatype::Int16 => {
                let r = v.round();
                if (f64::from(i16::MIN)..=f64::from(i16::MAX)).contains(&r) {
                    Ok(r)
                } else {
                    Err(overflow())
                }
            }
            Datatype::Float32 => {
                if v.abs() <= f64::from(f32::MAX) {
                    Ok(v)
                } else {
                    Err(overflow())
                }
            }
        }
    }
}

/// f32 header values are widened through their shortest decimal form so that
/// spacings like 0.93 read back as the f64 the user wrote.
fn widen(v: f32) -> f64 {
    if v.is_finite() {
        v.to_string().parse().unwrap_or(f64::from(v))
    } else {
        f64::from(v)
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Fields<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = &self.bytes[off..off + 2];
        if self.big_endian {
            BigEndian::read_i16(b)
        } else {
            LittleEndian::read_i16(b)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let b = &self.bytes[off..off + 4];
        if self.big_endian {
            BigEndian::read_i32(b)
        } else {
            LittleEndian::read_i32(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b = &self.bytes[off..off + 4];
        if self.big_endian {
            BigEndian::read_f32(b)
        } else {
            LittleEndian::read_f32(b)
        }
    }
}

/// Voxel-to-world affine: `world = linear * ijk + offset`.
#[derive(Clone, Copy, Debug)]
struct Affine {
    linear: [[f64; 3]; 3],
    offset: [f64; 3],
}

fn quaternion_affine(f: &Fields, pixdim: [f64; 3], qfac: f64) -> Affine {
    let b = f64::from(f.f32(OFF_QUATERN));
    let c = f64::from(f.f32(OFF_QUATERN + 4));
    let d = f64::from(f.f32(OFF_QUATERN + 8));
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ];
    let scale = [pixdim[0], pixdim[1], pixdim[2] * qfac];
    let mut linear = [[0.0; 3]; 3];
    for (row, r_row) in linear.iter_mut().zip(&r) {
        for col in 0..3 {
            row[col] = r_row[col] * scale[col];
        }
    }
    let offset = [0, 1, 2].map(|a| widen(f.f32(OFF_QOFFSET + 4 * a)));
    Affine { linear, offset }
}

fn header_affine(f: &Fields, pixdim: [f64; 3], qfac: f64) -> Affine {
    if f.i16(OFF_SFORM_CODE) > 0 {
        let mut linear = [[0.0; 3]; 3];
        let mut offset = [0.0; 3];
        for (row, (lin, off)) in linear.iter_mut().zip(offset.iter_mut()).enumerate() {
            for col in 0..3 {
                lin[col] = widen(f.f32(OFF_SROW + 16 * row + 4 * col));
            }
            *off = widen(f.f32(OFF_SROW + 16 * row + 12));
        }
        Affine { linear, offset }
    } else if f.i16(OFF_QFORM_CODE) > 0 {
        quaternion_affine(f, pixdim, qfac)
    } else {
        Affine {
            linear: [[pixdim[0], 0.0, 0.0], [0.0, pixdim[1], 0.0], [0.0, 0.0, pixdim[2]]],
            offset: [0.0; 3],
        }
    }
}

/// Axis permutation and flips that bring stored data into canonical order.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Reorientation {
    /// `source_axis[a]` is the stored axis feeding canonical axis `a`.
    source_axis: [usize; 3],
    flip: [bool; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

fn reorientation(affine: &Affine, dims: [usize; 3]) -> Reorientation {
    let m = &affine.linear;
    let norm = |col: usize| (0..3).map(|r| m[r][col] * m[r][col]).sum::<f64>().sqrt();
    let mut source_axis = [usize::MAX; 3];
    let mut used = [false; 3];
    // Assign the most strongly aligned (column, row) pairs first.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(9);
    for col in 0..3 {
        let n = norm(col).max(f64::MIN_POSITIVE);
        for (row, m_row) in m.iter().enumerate() {
            pairs.push((m_row[col].abs() / n, row, col));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut oblique = false;
    for (w, row, col) in pairs {
        if source_axis[row] == usize::MAX && !used[col] {
            source_axis[row] = col;
            used[col] = true;
            if w < 1.0 - 1e-4 {
                oblique = true;
            }
        }
    }
    if oblique {
        warn!("header affine has an oblique rotation; only its axis permutation and signs are applied");
    }
    let mut flip = [false; 3];
    let mut spacing = [0.0; 3];
    let mut first = [0.0f64; 3];
    for row in 0..3 {
        let col = source_axis[row];
        flip[row] = m[row][col] < 0.0;
        spacing[row] = norm(col);
        if flip[row] {
            first[col] = (dims[col] - 1) as f64;
        }
    }
    let mut origin = [0.0; 3];
    for (row, o) in origin.iter_mut().enumerate() {
        *o = affine.offset[row] + (0..3).map(|c| m[row][c] * first[c]).sum::<f64>();
    }
    Reorientation {
        source_axis,
        flip,
        spacing,
        origin,
    }
}

/// Decodes an in-memory NIfTI-1 file (gzip or plain).
pub fn decode(raw: &[u8]) -> std::result::Result<Volume3D, LoadError> {
    let inflated;
    let bytes = if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw)
            .read_to_end(&mut out)
            .map_err(|_| LoadError::Truncated {
                expected: HEADER_SIZE,
                found: out.len(),
            })?;
        inflated = out;
        &inflated[..]
    } else {
        raw
    };
    if bytes.len() < HEADER_SIZE {
        return Err(LoadError::Truncated {
            expected: HEADER_SIZE,
            found: bytes.len(),
        });
    }
    let big_endian = match LittleEndian::read_i32(&bytes[0..4]) {
        348 => false,
        _ if BigEndian::read_i32(&bytes[0..4]) == 348 => true,
        other => return Err(LoadError::BadHeaderSize(other)),
    };
    let f = Fields { bytes, big_endian };
    let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(LoadError::BadMagic { found: magic });
    }
    debug_assert_eq!(f.i32(0), 348);

    let ndim = f.i16(OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(LoadError::BadDim {
            index: 0,
            value: i64::from(ndim),
        });
    }
    let mut dims = [1usize; 3];
    for d in 1..=7usize {
        let value = f.i16(OFF_DIM + 2 * d);
        if d as i16 <= ndim {
            if value < 1 || (d > 3 && value != 1) {
                return Err(LoadError::BadDim {
                    index: d,
                    value: i64::from(value),
                });
            }
            if d <= 3 {
                dims[d - 1] = value as usize;
            }
        }
    }

    let code = f.i16(OFF_DATATYPE);
    let bitpix = f.i16(OFF_BITPIX);
    let datatype = match Datatype::from_code(code) {
        Some(dt) if dt.bitpix() == bitpix => dt,
        _ => return Err(LoadError::UnsupportedDatatype { code, bitpix }),
    };

    let mut pixdim = [1.0; 3];
    for (a, p) in pixdim.iter_mut().enumerate() {
        let v = widen(f.f32(OFF_PIXDIM + 4 * (a + 1)));
        if a < ndim as usize && !(v > 0.0 && v.is_finite()) {
            return Err(LoadError::BadPixdim { index: a + 1, value: v });
        }
        if v > 0.0 && v.is_finite() {
            *p = v;
        }
    }
    let qfac = if f.f32(OFF_PIXDIM) < 0.0 { -1.0 } else { 1.0 };

    let vox_offset = f64::from(f.f32(OFF_VOX_OFFSET));
    if !(vox_offset.is_finite() && vox_offset >= DATA_OFFSET as f64 && vox_offset.fract() == 0.0) {
        return Err(LoadError::BadVoxOffset(vox_offset));
    }
    let slope = f64::from(f.f32(OFF_SCL_SLOPE));
    let inter = f64::from(f.f32(OFF_SCL_INTER));
    let (slope, inter) = if slope == 0.0 {
        (1.0, 0.0)
    } else if slope.is_finite() && inter.is_finite() {
        (slope, inter)
    } else {
        return Err(LoadError::BadScaling { slope, inter });
    };

    let n = dims[0] * dims[1] * dims[2];
    let start = vox_offset as usize;
    let expected = start + n * datatype.bytes();
    if bytes.len() < expected {
        return Err(LoadError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[start..expected];
    let mut stored = vec![0.0f64; n];
    match datatype {
        Datatype::Uint8 => {
            for (o, &b) in stored.iter_mut().zip(payload) {
                *o = f64::from(b);
            }
        }
        Datatype::Int16 => {
            for (o, c) in stored.iter_mut().zip(payload.chunks_exact(2)) {
                let v = if big_endian {
                    BigEndian::read_i16(c)
                } else {
                    LittleEndian::read_i16(c)
                };
                *o = f64::from(v);
            }
        }
        Datatype::Float32 => {
            for (o, c) in stored.iter_mut().zip(payload.chunks_exact(4)) {
                let v = if big_endian {
                    BigEndian::read_f32(c)
                } else {
                    LittleEndian::read_f32(c)
                };
                *o = f64::from(v);
            }
        }
    }
    if slope != 1.0 || inter != 0.0 {
        for v in stored.iter_mut() {
            *v = *v * slope + inter;
        }
    }
    if let Some(index) = stored.iter().position(|v| !v.is_finite()) {
        return Err(LoadError::NonFinite { index });
    }

    let affine = header_affine(&f, pixdim, qfac);
    let orient = reorientation(&affine, dims);
    let canon_dims = [0, 1, 2].map(|a| dims[orient.source_axis[a]]);
    let data = if orient.source_axis == [0, 1, 2] && orient.flip == [false; 3] {
        stored
    } else {
        reorder(&stored, dims, canon_dims, &orient)
    };
    let geometry = Geometry {
        dims: canon_dims,
        spacing: orient.spacing,
        origin: orient.origin,
    };
    if geometry.validate().is_err() {
        return Err(LoadError::BadPixdim {
            index: 0,
            value: orient.spacing.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    Ok(Volume3D::new(geometry, data).expect("validated above"))
}

fn reorder(stored: &[f64], dims: [usize; 3], canon_dims: [usize; 3], orient: &Reorientation) -> Vec<f64> {
    let mut out = vec![0.0; stored.len()];
    let mut src = [0usize; 3];
    let mut idx = 0;
    for k in 0..canon_dims[2] {
        for j in 0..canon_dims[1] {
            for i in 0..canon_dims[0] {
                for (a, &c) in [i, j, k].iter().enumerate() {
                    let s = orient.source_axis[a];
                    src[s] = if orient.flip[a] { dims[s] - 1 - c } else { c };
                }
                out[idx] = stored[src[0] + dims[0] * (src[1] + dims[1] * src[2])];
                idx += 1;
            }
        }
    }
    out
}

/// Encodes a volume as an uncompressed little-endian NIfTI-1 file.
pub fn encode(v: &Volume3D, datatype: Datatype) -> Result<Vec<u8>> {
    let g = v.geometry();
    for (a, &d) in g.dims.iter().enumerate() {
        if d > i16::MAX as usize {
            return Err(Error::invalid(format!("dim {a} = {d} exceeds the NIfTI-1 limit")));
        }
    }
    let mut buf = vec![0u8; DATA_OFFSET + v.data().len() * datatype.bytes()];
    {
        let h = &mut buf[..HEADER_SIZE];
        LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
        LittleEndian::write_i16(&mut h[OFF_DIM..], 3);
        for a in 0..3 {
            LittleEndian::write_i16(&mut h[OFF_DIM + 2 * (a + 1)..], g.dims[a] as i16);
        }
        for d in 4..8 {
            LittleEndian::write_i16(&mut h[OFF_DIM + 2 * d..], 1);
        }
        LittleEndian::write_i16(&mut h[OFF_DATATYPE..], datatype.code());
        LittleEndian::write_i16(&mut h[OFF_BITPIX..], datatype.bitpix());
        LittleEndian::write_f32(&mut h[OFF_PIXDIM..], 1.0);
        for a in 0..3 {
            LittleEndian::write_f32(&mut h[OFF_PIXDIM + 4 * (a + 1)..], g.spacing[a] as f32);
        }
        LittleEndian::write_f32(&mut h[OFF_VOX_OFFSET..], DATA_OFFSET as f32);
        LittleEndian::write_f32(&mut h[OFF_SCL_SLOPE..], 1.0);
        LittleEndian::write_f32(&mut h[OFF_SCL_INTER..], 0.0);
        h[OFF_XYZT_UNITS] = 2; // millimetres
        let descrip = b"cmb-core";
        h[OFF_DESCRIP..OFF_DESCRIP + descrip.len()].copy_from_slice(descrip);
        LittleEndian::write_i16(&mut h[OFF_QFORM_CODE..], 1);
        LittleEndian::write_i16(&mut h[OFF_SFORM_CODE..], 1);
        for a in 0..3 {
            LittleEndian::write_f32(&mut h[OFF_QOFFSET + 4 * a..], g.origin[a] as f32);
            for col in 0..3 {
                let value = if col == a { g.spacing[a] } else { 0.0 };
                LittleEndian::write_f32(&mut h[OFF_SROW + 16 * a + 4 * col..], value as f32);
            }
            LittleEndian::write_f32(&mut h[OFF_SROW + 16 * a + 12..], g.origin[a] as f32);
        }
        h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);
    }
    let payload = &mut buf[DATA_OFFSET..];
    match datatype {
        Datatype::Uint8 => {
            for (o, &x) in payload.iter_mut().zip(v.data()) {
                *o = datatype.quantize(x)? as u8;
            }
        }
        Datatype::Int16 => {
            for (o, &x) in payload.chunks_exact_mut(2).zip(v.data()) {
                LittleEndian::write_i16(o, datatype.quantize(x)? as i16);
            }
        }
        Datatype::Float32 => {
            for (o, &x) in payload.chunks_exact_mut(4).zip(v.data()) {
                LittleEndian::write_f32(o, datatype.quantize(x)? as f32);
            }
        }
    }
    Ok(buf)
}

pub(crate) fn read(path: &std::path::Path) -> Result<Volume3D> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&raw).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write(v: &Volume3D, path: &std::path::Path, datatype: Datatype) -> Result<()> {
    let bytes = encode(v, datatype)?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
