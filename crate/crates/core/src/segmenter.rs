//! Slice segmenters: a ground-truth oracle, a classical reference detector and
//! a loader for probability maps produced elsewhere.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::scan_io::read_probability;
use crate::seeding::keyed_rng;
use crate::triplanar::{Plane, ProbabilityVolume, SliceSegmenter, ThickSlice, View};
use crate::volume::{Geometry, LabelMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Ground-truth mask file; callers holding a mask in memory may leave it unset.
    pub mask_path: Option<PathBuf>,
    pub corruption_rate: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mask_path: None,
            corruption_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub scale_min_mm: f64,
    pub scale_max_mm: f64,
    pub darkness_weight: f64,
    pub symmetry_weight: f64,
    pub logistic_gain: f64,
    /// Score at which the output crosses 0.5.
    pub logistic_offset: f64,
    pub radius_min_mm: f64,
    pub radius_max_mm: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            scale_min_mm: 0.75,
            scale_max_mm: 3.0,
            darkness_weight: 1.0,
            symmetry_weight: 1.0,
            logistic_gain: 40.0,
            logistic_offset: 0.12,
            radius_min_mm: 1.0,
            radius_max_mm: 5.0,
        }
    }
}

impl ReferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min_mm >= 0.0 && self.scale_min_mm < self.scale_max_mm) {
            return Err(Error::invalid(format!(
                "reference scales must satisfy 0 <= min < max, got ({}, {})",
                self.scale_min_mm, self.scale_max_mm
            )));
        }
        if !(self.radius_min_mm > 0.0 && self.radius_min_mm <= self.radius_max_mm) {
            return Err(Error::invalid("symmetry radii must satisfy 0 < min <= max"));
        }
        if !(self.logistic_gain > 0.0 && self.logistic_gain.is_finite()) {
            return Err(Error::invalid("logistic gain must be positive"));
        }
        for (name, w) in [
            ("darkness_weight", self.darkness_weight),
            ("symmetry_weight", self.symmetry_weight),
            ("logistic_offset", self.logistic_offset),
        ] {
            if !w.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub axial: PathBuf,
    pub sagittal: PathBuf,
    pub coronal: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterConfig {
    Oracle(OracleConfig),
    Reference(ReferenceConfig),
    External(ExternalConfig),
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig::Reference(ReferenceConfig::default())
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SegmenterConfig::Oracle(o) => {
                if !(0.0..1.0).contains(&o.corruption_rate) {
                    return Err(Error::invalid(format!(
                        "corruption rate {} must lie in [0, 1)",
                        o.corruption_rate
                    )));
                }
                Ok(())
            }
            SegmenterConfig::Reference(r) => r.validate(),
            SegmenterConfig::External(_) => Ok(()),
        }
    }
}

/// Emits the ground-truth central plane, optionally with seeded per-pixel flips.
pub struct OracleSegmenter {
    gt: LabelMask,
    corruption_rate: f64,
    seed: u64,
}

impl OracleSegmenter {
    pub fn new(gt: LabelMask, corruption_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&corruption_rate) {
            return Err(Error::invalid(format!(
                "corruption rate {corruption_rate} must lie in [0, 1)"
            )));
        }
        Ok(Self {
            gt,
            corruption_rate,
            seed,
        })
    }
}

/// Central plane of the ground truth for one slice, with optional flips.
pub fn oracle_segment(slice: &ThickSlice, gt: &LabelMask, corruption_rate: f64, seed: u64) -> Result<Plane> {
    let dims = gt.geometry().dims;
    let (w, h) = slice.view.plane_dims(dims);
    if slice.dims() != (w, h) || slice.index >= slice.view.slice_count(dims) {
        return Err(Error::GeometryMismatch(format!(
            "{} slice {} of size {:?} does not fit ground truth dims {dims:?}",
            slice.view,
            slice.index,
            slice.dims()
        )));
    }
    let mut data = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let lin = slice.view.voxel(gt.geometry(), slice.index, u, v);
            data.push(if gt.is_set(lin) { 1.0 } else { 0.0 });
        }
    }
    if corruption_rate > 0.0 {
        let mut rng = keyed_rng(
            seed,
            &[slice.view.as_str().as_bytes(), &(slice.index as u64).to_le_bytes()],
        );
        for x in data.iter_mut() {
            if rng.random::<f64>() < corruption_rate {
                *x = 1.0 - *x;
            }
        }
    }
    Ok(Plane {
        width: w,
        height: h,
        data,
    })
}

impl SliceSegmenter for OracleSegmenter {
    fn segment(&self, slice: &ThickSlice) -> Result<Plane> {
        oracle_segment(slice, &self.gt, self.corruption_rate, self.seed)
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// Hypointense-blob detector: a relative band-pass response plus a radial
/// symmetry term, squashed by a logistic.
pub struct ReferenceSegmenter {
    cfg: ReferenceConfig,
}

impl ReferenceSegmenter {
    pub fn new(cfg: ReferenceConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

/// Unit directions at 45° steps.
const DIRECTIONS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (0.0, -1.0),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

fn bilinear(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let a = data[x0 + w * y0] * (1.0 - tx) + data[x1 + w * y0] * tx;
    let b = data[x0 + w * y1] * (1.0 - tx) + data[x1 + w * y1] * tx;
    a * (1.0 - ty) + b * ty
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Relative darkness and symmetry responses for a plane in [0, 1].
pub fn reference_scores(plane: &Plane, spacing_mm: f64, cfg: &ReferenceConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(bad) = plane.data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!(
            "reference segmenter needs intensities in [0, 1], found {bad}"
        )));
    }
    let (w, h) = (plane.width, plane.height);
    let dims = [w, h, 1];
    let fine = gaussian_blur(&plane.data, dims, [cfg.scale_min_mm / spacing_mm; 3]);
    let coarse = gaussian_blur(&plane.data, dims, [cfg.scale_max_mm / spacing_mm; 3]);
    // floor on the local mean keeps the ratio bounded in near-black regions
    let floor = 0.05;
    let dog: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| (c - f) / c.max(floor)).collect();
    let r_lo = cfg.radius_min_mm / spacing_mm;
    let r_hi = cfg.radius_max_mm / spacing_mm;
    let n_r = ((r_hi - r_lo).floor() as usize) + 1;
    let mut sym = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = x + w * y;
            let here = fine[p];
            let norm = coarse[p].max(floor);
            let mut best = f64::NEG_INFINITY;
            for s in 0..n_r {
                let r = r_lo + s as f64;
                let mut worst = f64::INFINITY;
                for (dx, dy) in DIRECTIONS {
                    let q = bilinear(&fine, w, h, x as f64 + r * dx, y as f64 + r * dy);
                    worst = worst.min(q - here);
                }
                best = best.max(worst / norm);
            }
            sym[p] = best;
        }
    }
    Ok((dog, sym))
}

pub fn reference_segment(slice: &ThickSlice, cfg: &ReferenceConfig) -> Result<Plane> {
    let plane = slice.center();
    let (dog, sym) = reference_scores(plane, slice.spacing_mm, cfg)?;
    let data = dog
        .iter()
        .zip(&sym)
        .map(|(d, s)| {
            let score = cfg.darkness_weight * d + cfg.symmetry_weight * s - cfg.logistic_offset;
            logistic(cfg.logistic_gain * score)
        })
        .collect();
    Ok(Plane {
        width: plane.width,
        height: plane.height,
        data,
    })
}

impl SliceSegmenter for ReferenceSegmenter {
    fn segment(&self, slice: &ThickSlice) -> Result<Plane> {
        reference_segment(slice, &self.cfg)
    }

    fn name(&self) -> &str {
        "reference"
    }
}

/// Serves planes of a stored per-view probability volume.
pub struct ExternalSegmenter {
    view: View,
    probs: ProbabilityVolume,
}

impl ExternalSegmenter {
    pub fn new(view: View, probs: ProbabilityVolume, expected: &Geometry) -> Result<Self> {
        probs
            .geometry()
            .ensure_matches(expected, "external probability volume")?;
        Ok(Self { view, probs })
    }

    pub fn load(view: View, path: impl AsRef<std::path::Path>, expected: &Geometry) -> Result<Self> {
        Self::new(view, read_probability(path)?, expected)
    }

    /// One loader per view from the configured paths.
    pub fn load_all(cfg: &ExternalConfig, expected: &Geometry) -> Result<[Self; 3]> {
        Ok([
            Self::load(View::Axial, &cfg.axial, expected)?,
            Self::load(View::Sagittal, &cfg.sagittal, expected)?,
            Self::load(View::Coronal, &cfg.coronal, expected)?,
        ])
    }
}

pub fn external_segment(probs: &ProbabilityVolume, view: View, slice_index: usize) -> Result<Plane> {
    let n = view.slice_count(probs.geometry().dims);
    if slice_index >= n {
        return Err(Error::GeometryMismatch(format!(
            "slice {slice_index} outside the stored {view} volume ({n} slices)"
        )));
    }
    Ok(probs.plane(view, slice_index))
}

impl SliceSegmenter for ExternalSegmenter {
    fn segment(&self, slice: &ThickSlice) -> Result<Plane> {
        if slice.view != self.view {
            return Err(Error::invalid(format!(
                "external {} volume asked for a {} slice",
                self.view, slice.view
            )));
        }
        let out = external_segment(&self.probs, self.view, slice.index)?;
        if (out.width, out.height) != slice.dims() {
            return Err(Error::GeometryMismatch(format!(
                "stored plane {}x{} does not match slice {:?}",
                out.width,
                out.height,
                slice.dims()
            )));
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "external"
    }
}
