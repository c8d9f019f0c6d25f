//! Volume and manifest file formats.

pub mod manifest;
pub mod nifti;
pub mod raw;

use std::path::Path;

pub use manifest::{read_manifest, write_manifest, Acquisition, DatasetTag, ScanManifestEntry};
pub use nifti::Datatype;

use crate::error::Result;
use crate::triplanar::ProbabilityVolume;
use crate::volume::{LabelMask, Volume3D};

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "raw")
}

/// Loads a NIfTI-1 file (`.nii` or `.nii.gz`) or a `.raw` payload with its sidecar header.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    if is_raw(path) {
        raw::read(path)
    } else {
        nifti::read(path)
    }
}

/// Writes a volume; `.raw` paths get a sidecar header, anything else is NIfTI-1
/// (gzip-compressed when the name ends in `.gz`).
pub fn write_volume(v: &Volume3D, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    if is_raw(path) {
        raw::write(v, path, datatype)
    } else {
        nifti::write(v, path, datatype)
    }
}

pub fn write_mask(m: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_volume(&m.to_volume(), path, Datatype::Uint8)
}

/// Loads a mask; every voxel must be exactly 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let v = read_volume(path)?;
    let mut data = Vec::with_capacity(v.data().len());
    for &x in v.data() {
        match x {
            0.0 => data.push(0),
            1.0 => data.push(1),
            other => {
                return Err(crate::error::Error::invalid(format!(
                    "mask value {other} is not 0 or 1"
                )))
            }
        }
    }
    LabelMask::new(*v.geometry(), data)
}

pub fn write_probability(p: &ProbabilityVolume, path: impl AsRef<Path>) -> Result<()> {
    write_volume(&p.to_volume(), path, Datatype::Float32)
}

pub fn read_probability(path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    ProbabilityVolume::from_volume(&read_volume(path)?)
}
