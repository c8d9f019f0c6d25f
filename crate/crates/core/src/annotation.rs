//! Volumetric ground-truth masks from CMB center annotations, and the
//! subject-level train/validation/test split.

use std::collections::{BTreeSet, HashSet, VecDeque};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan_io::manifest::DatasetTag;
use crate::volume::{LabelMask, Volume3D, VoxelIndex, WorldPoint};

pub const DEFAULT_ALPHA_THRESHOLD: f64 = 0.65;
/// Threshold used for the longer-echo dataset.
pub const DS2_ALPHA_THRESHOLD: f64 = 0.52;
pub const DEFAULT_PATCH_HALFWIDTH_MM: f64 = 5.0;
/// Thickness of the background shell just outside the patch.
pub const BACKGROUND_SHELL_MM: f64 = 2.0;
pub const SNAP_RADIUS_MM: f64 = 1.0;
const DEGENERATE_CONTRAST_REL: f64 = 1e-9;

pub fn alpha_threshold_for(tag: DatasetTag) -> f64 {
    match tag {
        DatasetTag::DS2 => DS2_ALPHA_THRESHOLD,
        _ => DEFAULT_ALPHA_THRESHOLD,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMBAnnotation {
    pub center: WorldPoint,
    pub alpha_threshold: f64,
    pub patch_halfwidth_mm: f64,
}

impl CMBAnnotation {
    pub fn new(center: WorldPoint, alpha_threshold: f64) -> Self {
        Self {
            center,
            alpha_threshold,
            patch_halfwidth_mm: DEFAULT_PATCH_HALFWIDTH_MM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_threshold > 0.0 && self.alpha_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "alpha threshold {} must lie in (0, 1)",
                self.alpha_threshold
            )));
        }
        if !(self.patch_halfwidth_mm.is_finite() && self.patch_halfwidth_mm > 0.0) {
            return Err(Error::invalid("patch half-width must be positive"));
        }
        if !self.center.is_finite() {
            return Err(Error::invalid("annotation center must be finite"));
        }
        Ok(())
    }
}

/// α = (I_pixel − I_mean) / (I_center − I_mean).
pub fn alpha_fraction(v: &Volume3D, pixel: VoxelIndex, center: VoxelIndex, mean_intensity: f64) -> Result<f64> {
    let (lo, hi) = v.min_max();
    alpha_with_range(v.at(pixel), v.at(center), mean_intensity, hi - lo)
}

fn alpha_with_range(pixel: f64, center: f64, mean: f64, range: f64) -> Result<f64> {
    let denom = center - mean;
    if denom.abs() < DEGENERATE_CONTRAST_REL * range || denom == 0.0 {
        return Err(Error::DegenerateAnnotation(format!(
            "center intensity {center} has no contrast against background {mean}"
        )));
    }
    Ok((pixel - mean) / denom)
}

/// Why an annotation contributed nothing to the mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationIssue {
    pub index: usize,
    pub center: WorldPoint,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSynthesis {
    pub mask: LabelMask,
    /// Snapped center voxel of every annotation that was labeled.
    pub centers: Vec<(usize, VoxelIndex)>,
    pub issues: Vec<AnnotationIssue>,
}

/// Voxels whose centers lie within a box of `half_mm` around `c`, clipped to the grid.
fn voxel_box(v: &Volume3D, c: VoxelIndex, half_mm: f64) -> ([usize; 3], [usize; 3]) {
    let dims = v.dims();
    let sp = v.spacing();
    let ci = [c.i, c.j, c.k];
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let r = (half_mm / sp[a] + 1e-9).floor() as usize;
        lo[a] = ci[a].saturating_sub(r);
        hi[a] = (ci[a] + r).min(dims[a] - 1);
    }
    (lo, hi)
}

fn for_each_in_box(lo: [usize; 3], hi: [usize; 3], mut f: impl FnMut(VoxelIndex)) {
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                f(VoxelIndex::new(i, j, k));
            }
        }
    }
}

fn snap_center(v: &Volume3D, p: WorldPoint) -> Option<VoxelIndex> {
    let nearest = v.geometry().nearest_voxel(p)?;
    let (lo, hi) = voxel_box(v, nearest, SNAP_RADIUS_MM + v.spacing()[0]);
    let mut best = nearest;
    let mut best_val = v.at(nearest);
    for_each_in_box(lo, hi, |idx| {
        let d = v.geometry().index_to_world(idx).distance(&p);
        let val = v.at(idx);
        if d <= SNAP_RADIUS_MM + 1e-9 && val < best_val {
            best = idx;
            best_val = val;
        }
    });
    Some(best)
}

/// Mean intensity over the shell (r_in, r_in + 2 mm] around the center voxel.
fn shell_mean(v: &Volume3D, c: VoxelIndex, r_in: f64) -> Option<f64> {
    let r_out = r_in + BACKGROUND_SHELL_MM;
    let (lo, hi) = voxel_box(v, c, r_out);
    let cw = v.geometry().index_to_world(c);
    let mut sum = 0.0;
    let mut n = 0usize;
    for_each_in_box(lo, hi, |idx| {
        let r = v.geometry().index_to_world(idx).distance(&cw);
        if r > r_in + 1e-9 && r <= r_out + 1e-9 {
            sum += v.at(idx);
            n += 1;
        }
    });
    (n > 0).then(|| sum / n as f64)
}

/// Labels α > threshold inside the cube patch and keeps the 26-connected
/// component holding the center.
fn label_annotation(v: &Volume3D, a: &CMBAnnotation, range: f64) -> Result<(VoxelIndex, Vec<usize>)> {
    a.validate()?;
    let center = snap_center(v, a.center).ok_or_else(|| {
        Error::invalid(format!(
            "annotation center {:?} lies outside the volume",
            a.center.to_array()
        ))
    })?;
    let mean = shell_mean(v, center, a.patch_halfwidth_mm)
        .ok_or_else(|| Error::DegenerateAnnotation("no background voxels around the annotation".to_string()))?;
    let ic = v.at(center);
    alpha_with_range(ic, ic, mean, range)?;

    let g = v.geometry();
    let (lo, hi) = voxel_box(v, center, a.patch_halfwidth_mm);
    let inside = |idx: VoxelIndex| {
        idx.i >= lo[0] && idx.i <= hi[0] && idx.j >= lo[1] && idx.j <= hi[1] && idx.k >= lo[2] && idx.k <= hi[2]
    };
    let labeled = |idx: VoxelIndex| -> bool { inside(idx) && (v.at(idx) - mean) / (ic - mean) > a.alpha_threshold };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut queue = VecDeque::from([center]);
    seen.insert(g.linear(center.i, center.j, center.k));
    while let Some(p) = queue.pop_front() {
        out.push(g.linear(p.i, p.j, p.k));
        for dk in -1i64..=1 {
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ni, nj, nk) = (p.i as i64 + di, p.j as i64 + dj, p.k as i64 + dk);
                    if ni < 0 || nj < 0 || nk < 0 {
                        continue;
                    }
                    let q = VoxelIndex::new(ni as usize, nj as usize, nk as usize);
                    if !g.contains(q) {
                        continue;
                    }
                    let lin = g.linear(q.i, q.j, q.k);
                    if !seen.contains(&lin) && labeled(q) {
                        seen.insert(lin);
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    Ok((center, out))
}

/// Union of per-annotation masks. Failing annotations are reported and skipped.
pub fn synthesize_mask(v: &Volume3D, annotations: &[CMBAnnotation]) -> Result<MaskSynthesis> {
    let sp = v.spacing();
    if (sp[0] - sp[1]).abs() > 1e-6 || (sp[0] - sp[2]).abs() > 1e-6 {
        return Err(Error::invalid("mask synthesis requires an isotropic grid"));
    }
    let (lo, hi) = v.min_max();
    let mut mask = LabelMask::empty(*v.geometry());
    let mut centers = Vec::new();
    let mut issues = Vec::new();
    for (index, a) in annotations.iter().enumerate() {
        match label_annotation(v, a, hi - lo) {
            Ok((c, voxels)) => {
                for lin in voxels {
                    mask.set(lin, true);
                }
                centers.push((index, c));
            }
            Err(e) => {
                warn!("annotation {index} skipped: {e}");
                issues.push(AnnotationIssue {
                    index,
                    center: a.center,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(MaskSynthesis { mask, centers, issues })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectPartition {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SubjectPartition {
    pub fn split_of(&self, subject: &str) -> Option<&'static str> {
        if self.train.contains(subject) {
            Some("train")
        } else if self.validation.contains(subject) {
            Some("validation")
        } else if self.test.contains(subject) {
            Some("test")
        } else {
            None
        }
    }
}

pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

/// Seeded shuffle of the sorted subject ids; validation and test take their
/// rounded shares and train takes the rest.
pub fn partition_subjects(subject_ids: &[String], seed: u64, fractions: [f64; 3]) -> Result<SubjectPartition> {
    if subject_ids.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 subjects to partition, got {}",
            subject_ids.len()
        )));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut ids: Vec<&String> = subject_ids.iter().collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("subject ids must be unique"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len() as f64;
    let n_val = (n * fractions[1]).round() as usize;
    let n_test = (n * fractions[2]).round() as usize;
    if n_val + n_test > ids.len() {
        return Err(Error::invalid("split fractions leave a negative training set"));
    }
    let n_train = ids.len() - n_val - n_test;
    let collect = |s: &[&String]| s.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    Ok(SubjectPartition {
        train: collect(&ids[..n_train]),
        validation: collect(&ids[n_train..n_train + n_val]),
        test: collect(&ids[n_train + n_val..]),
    })
}
