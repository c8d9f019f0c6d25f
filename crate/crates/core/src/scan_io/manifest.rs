//! Newline-delimited JSON scan manifests.
//!
//! Each non-blank line is one object:
//!
//! ```json
//! {"scan_id":"s01","subject_id":"p01","dataset_tag":"DS1r","path":"images/s01.nii",
//!  "cmb_centers":[[12.0,-4.5,30.0]],"p_cmb":0.42,
//!  "acquisition":{"field_strength_tesla":3.0,"echo_time_ms":20.0,
//!                 "slice_thickness_mm":1.75,"scanner_model":"X"}}
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::WorldPoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    DS1r,
    DS1s,
    DS2,
    DS3,
    DS3n,
    PHANTOM,
    OTHER,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 7] = [
        DatasetTag::DS1r,
        DatasetTag::DS1s,
        DatasetTag::DS2,
        DatasetTag::DS3,
        DatasetTag::DS3n,
        DatasetTag::PHANTOM,
        DatasetTag::OTHER,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::DS1r => "DS1r",
            DatasetTag::DS1s => "DS1s",
            DatasetTag::DS2 => "DS2",
            DatasetTag::DS3 => "DS3",
            DatasetTag::DS3n => "DS3n",
            DatasetTag::PHANTOM => "PHANTOM",
            DatasetTag::OTHER => "OTHER",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset tag {s:?}")))
    }
}

/// Acquisition parameters used to match case and control scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acquisition {
    pub field_strength_tesla: f64,
    pub echo_time_ms: f64,
    pub slice_thickness_mm: f64,
    pub scanner_model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanManifestEntry {
    pub scan_id: String,
    pub subject_id: String,
    pub dataset_tag: DatasetTag,
    pub path: String,
    #[serde(default)]
    pub cmb_centers: Vec<WorldPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_cmb: Option<f64>,
    pub acquisition: Acquisition,
}

impl ScanManifestEntry {
    pub fn validate(&self) -> Result<()> {
        if self.scan_id.is_empty() {
            return Err(Error::invalid("scan_id is empty"));
        }
        if let Some(p) = self.p_cmb {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("p_cmb {p} is outside [0, 1]")));
            }
        }
        if let Some(c) = self.cmb_centers.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite cmb center {c:?}")));
        }
        let a = &self.acquisition;
        for (name, v) in [
            ("field_strength_tesla", a.field_strength_tesla),
            ("echo_time_ms", a.echo_time_ms),
            ("slice_thickness_mm", a.slice_thickness_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be a non-negative number")));
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ScanManifestEntry>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ScanManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        entry.validate().map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(entry.scan_id.clone()) {
            return Err(Error::Manifest {
                line: line_no,
                message: format!("duplicate scan_id {:?}", entry.scan_id),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ScanManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        s.push('\n');
    }
    s
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ScanManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(entries: &[ScanManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_manifest(entries)).map_err(|e| Error::io(path, e))
}
