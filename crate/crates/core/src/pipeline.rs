//! End-to-end helpers chaining slicing, segmentation, fusion and detection.

use crate::detect::{evaluate_scan, EvalConfig, ScanEvaluation};
use crate::error::Result;
use crate::triplanar::{binarize_fused, fuse_views, segment_triplanar, ProbabilityVolume, TriplanarSegmenters};
use crate::volume::{LabelMask, Volume3D};

#[derive(Clone, Debug)]
pub struct Prediction {
    /// Per-view probabilities in axial, sagittal, coronal order.
    pub views: [ProbabilityVolume; 3],
    pub fused: ProbabilityVolume,
    pub mask: LabelMask,
}

/// Segments all three views, fuses them and thresholds at `tau`.
pub fn predict(v: &Volume3D, segs: &TriplanarSegmenters, tau: f64) -> Result<Prediction> {
    let views = segment_triplanar(v, segs)?;
    let fused = fuse_views(&views[0], &views[1], &views[2])?;
    let mask = binarize_fused(&fused, tau)?;
    Ok(Prediction { views, fused, mask })
}

/// Prediction followed by detection and scoring against `gt`.
pub fn predict_and_evaluate(
    v: &Volume3D,
    gt: &LabelMask,
    segs: &TriplanarSegmenters,
    tau: f64,
    cfg: &EvalConfig,
) -> Result<ScanEvaluation> {
    let mask = predict(v, segs, tau)?.mask;
    evaluate_scan(&mask, gt, cfg)
}
