//! Connected-component detection, clinical size filtering, detection matching
//! and per-scan / per-dataset metrics.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan_io::DatasetTag;
use crate::volume::{Geometry, LabelMask, VoxelIndex, WorldPoint};

/// Volume of a 2 mm diameter sphere, rounded: the smallest clinically counted CMB.
pub const DEFAULT_MIN_VOLUME_MM3: f64 = 4.2;
pub const DEFAULT_MATCH_DISTANCE_MM: f64 = 2.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Connectivity::Six),
            "26" => Ok(Connectivity::TwentySix),
            other => Err(Error::invalid(format!("connectivity must be 6 or 26, got {other:?}"))),
        }
    }
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dk in -1isize..=1 {
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    let manhattan = di.abs() + dj.abs() + dk.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan >= 1,
                    };
                    if keep {
                        out.push([di, dj, dk]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub min: VoxelIndex,
    pub max: VoxelIndex,
}

impl VoxelBox {
    fn intersects(&self, other: &VoxelBox) -> bool {
        self.min.i <= other.max.i
            && other.min.i <= self.max.i
            && self.min.j <= other.max.j
            && other.min.j <= self.max.j
            && self.min.k <= other.max.k
            && other.min.k <= self.max.k
    }
}

/// One connected component of a binary mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedCMB {
    pub id: usize,
    pub centroid: WorldPoint,
    pub volume_mm3: f64,
    pub voxel_count: usize,
    pub bbox: VoxelBox,
    /// Sorted linear voxel indices; not part of the serialized record.
    #[serde(skip)]
    pub voxels: Vec<usize>,
}

impl DetectedCMB {
    fn overlaps(&self, other: &DetectedCMB) -> bool {
        if !self.bbox.intersects(&other.bbox) {
            return false;
        }
        let (mut a, mut b) = (self.voxels.iter().peekable(), other.voxels.iter().peekable());
        while let (Some(&&x), Some(&&y)) = (a.peek(), b.peek()) {
            match x.cmp(&y) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
            }
        }
        false
    }
}

/// Maximal connected voxel sets, ordered by each component's first voxel in
/// (k, j, i) order.
pub fn connected_components(m: &LabelMask, connectivity: Connectivity) -> Vec<DetectedCMB> {
    let g = *m.geometry();
    let [nx, ny, nz] = g.dims;
    let offsets = connectivity.offsets();
    let mut visited = vec![false; g.len()];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    // linear order with i fastest is exactly (k, j, i) lexicographic order
    for seed in 0..g.len() {
        if !m.is_set(seed) || visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut voxels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            voxels.push(idx);
            let v = g.unravel(idx);
            for o in &offsets {
                let (i, j, k) = (v.i as isize + o[0], v.j as isize + o[1], v.k as isize + o[2]);
                if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
                    continue;
                }
                let n = g.linear(i as usize, j as usize, k as usize);
                if m.is_set(n) && !visited[n] {
                    visited[n] = true;
                    queue.push_back(n);
                }
            }
        }
        voxels.sort_unstable();
        out.push(component_record(&g, out.len(), voxels));
    }
    out
}

fn component_record(g: &Geometry, id: usize, voxels: Vec<usize>) -> DetectedCMB {
    let mut sum = [0.0f64; 3];
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    for &idx in &voxels {
        let v = g.unravel(idx);
        for (a, c) in [v.i, v.j, v.k].into_iter().enumerate() {
            sum[a] += c as f64;
            min[a] = min[a].min(c);
            max[a] = max[a].max(c);
        }
    }
    let n = voxels.len() as f64;
    DetectedCMB {
        id,
        centroid: g.voxel_to_world([sum[0] / n, sum[1] / n, sum[2] / n]),
        volume_mm3: voxels.len() as f64 * g.voxel_volume_mm3(),
        voxel_count: voxels.len(),
        bbox: VoxelBox {
            min: VoxelIndex::new(min[0], min[1], min[2]),
            max: VoxelIndex::new(max[0], max[1], max[2]),
        },
        voxels,
    }
}

/// Keeps components whose volume reaches `min_volume_mm3`.
pub fn filter_by_size(dets: &[DetectedCMB], min_volume_mm3: f64) -> Vec<DetectedCMB> {
    dets.iter()
        .filter(|d| d.volume_mm3 >= min_volume_mm3)
        .cloned()
        .collect()
}

/// Mask covering exactly the given components.
pub fn mask_from_components(geometry: &Geometry, dets: &[DetectedCMB]) -> LabelMask {
    let mut m = LabelMask::empty(*geometry);
    for d in dets {
        for &idx in &d.voxels {
            m.set(idx, true);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub distance_mm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchPair>,
}

/// One-to-one greedy matching in ascending centroid distance. A pair is
/// eligible when the components share a voxel or their centroids lie within
/// `max_dist_mm`.
pub fn match_detections(pred: &[DetectedCMB], gt: &[DetectedCMB], max_dist_mm: f64) -> MatchResult {
    let mut candidates = Vec::new();
    for (p, pd) in pred.iter().enumerate() {
        for (t, gd) in gt.iter().enumerate() {
            let d = pd.centroid.distance(&gd.centroid);
            if d <= max_dist_mm || pd.overlaps(gd) {
                candidates.push((d, p, t));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (d, p, t) in candidates {
        if !pred_used[p] && !gt_used[t] {
            pred_used[p] = true;
            gt_used[t] = true;
            pairs.push(MatchPair {
                pred: p,
                gt: t,
                distance_mm: d,
            });
        }
    }
    MatchResult {
        tp: pairs.len(),
        fp: pred.len() - pairs.len(),
        fn_: gt.len() - pairs.len(),
        pairs,
    }
}

/// Serializes `None` as the string `"NA"`.
pub mod na {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("NA"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(Some(x)),
            Repr::Text(t) if t == "NA" => Ok(None),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected number or NA, got {t:?}"))),
        }
    }
}

pub fn format_na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub dsc: f64,
    #[serde(with = "na")]
    pub sensitivity: Option<f64>,
    #[serde(with = "na")]
    pub precision: Option<f64>,
}

/// Pooled sensitivity and precision from (possibly averaged) counts.
pub fn pooled_rates(tp: f64, fp: f64, fn_: f64) -> (Option<f64>, Option<f64>) {
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    (ratio(tp, tp + fn_), ratio(tp, tp + fp))
}

pub fn dice(pred: &LabelMask, gt: &LabelMask) -> Result<f64> {
    pred.geometry().ensure_matches(gt.geometry(), "dice")?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        p += usize::from(a);
        g += usize::from(b);
        inter += usize::from(a & b);
    }
    Ok(if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    })
}

pub fn scan_metrics(pred: &LabelMask, gt: &LabelMask, m: &MatchResult) -> Result<ScanMetrics> {
    let dsc = dice(pred, gt)?;
    let (sensitivity, precision) = pooled_rates(m.tp as f64, m.fp as f64, m.fn_ as f64);
    Ok(ScanMetrics {
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        dsc,
        sensitivity,
        precision,
    })
}

/// Parameters of the detection and evaluation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub connectivity: Connectivity,
    pub min_volume_mm3: f64,
    pub match_distance_mm: f64,
    /// Apply the size filter to reference components too, so predictions and
    /// ground truth are held to the same clinical size criterion.
    pub filter_reference: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::TwentySix,
            min_volume_mm3: DEFAULT_MIN_VOLUME_MM3,
            match_distance_mm: DEFAULT_MATCH_DISTANCE_MM,
            filter_reference: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_volume_mm3 >= 0.0 && self.min_volume_mm3.is_finite()) {
            return Err(Error::invalid("min_volume_mm3 must be a non-negative number"));
        }
        if !(self.match_distance_mm >= 0.0 && self.match_distance_mm.is_finite()) {
            return Err(Error::invalid("match_distance_mm must be a non-negative number"));
        }
        Ok(())
    }
}

/// Components of a predicted mask after the size filter.
pub fn detect(pred: &LabelMask, cfg: &EvalConfig) -> Vec<DetectedCMB> {
    filter_by_size(&connected_components(pred, cfg.connectivity), cfg.min_volume_mm3)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanEvaluation {
    pub detections: Vec<DetectedCMB>,
    pub reference: Vec<DetectedCMB>,
    pub matching: MatchResult,
    pub metrics: ScanMetrics,
}

/// Detects components in `pred`, matches them against `gt` and scores the scan.
/// Voxel overlap is measured between the surviving components on both sides.
pub fn evaluate_scan(pred: &LabelMask, gt: &LabelMask, cfg: &EvalConfig) -> Result<ScanEvaluation> {
    pred.geometry()
        .ensure_matches(gt.geometry(), "evaluating prediction against ground truth")?;
    let detections = detect(pred, cfg);
    let mut reference = connected_components(gt, cfg.connectivity);
    if cfg.filter_reference {
        reference = filter_by_size(&reference, cfg.min_volume_mm3);
    }
    let matching = match_detections(&detections, &reference, cfg.match_distance_mm);
    let pred_mask = mask_from_components(pred.geometry(), &detections);
    let gt_mask = mask_from_components(gt.geometry(), &reference);
    let metrics = scan_metrics(&pred_mask, &gt_mask, &matching)?;
    Ok(ScanEvaluation {
        detections,
        reference,
        matching,
        metrics,
    })
}

/// One row of the per-dataset results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub scans: usize,
    pub tp_per_scan: f64,
    pub fp_per_scan: f64,
    pub fn_per_scan: f64,
    pub dsc: f64,
    #[serde(with = "na")]
    pub sensitivity: Option<f64>,
    #[serde(with = "na")]
    pub precision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn summarize(dataset: &str, scans: &[&ScanMetrics]) -> MetricsRow {
    let n = scans.len() as f64;
    let tp: usize = scans.iter().map(|s| s.tp).sum();
    let fp: usize = scans.iter().map(|s| s.fp).sum();
    let fn_: usize = scans.iter().map(|s| s.fn_).sum();
    let (sensitivity, precision) = pooled_rates(tp as f64, fp as f64, fn_ as f64);
    MetricsRow {
        dataset: dataset.to_string(),
        scans: scans.len(),
        tp_per_scan: tp as f64 / n,
        fp_per_scan: fp as f64 / n,
        fn_per_scan: fn_ as f64 / n,
        dsc: scans.iter().map(|s| s.dsc).sum::<f64>() / n,
        sensitivity,
        precision,
    }
}

/// Per-dataset rows (alphabetical by tag) followed by an `All` row pooling
/// every scan. Sensitivity and precision are pooled over the summed counts.
pub fn aggregate_metrics(per_scan: &[(DatasetTag, ScanMetrics)]) -> Result<MetricsTable> {
    if per_scan.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list of scans"));
    }
    let mut groups: BTreeMap<&str, Vec<&ScanMetrics>> = BTreeMap::new();
    for (tag, m) in per_scan {
        groups.entry(tag.as_str()).or_default().push(m);
    }
    let mut rows: Vec<MetricsRow> = groups.iter().map(|(tag, s)| summarize(tag, s)).collect();
    let all: Vec<&ScanMetrics> = per_scan.iter().map(|(_, m)| m).collect();
    rows.push(summarize("All", &all));
    Ok(MetricsTable { rows })
}

impl MetricsTable {
    pub fn row(&self, dataset: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.dataset == dataset)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let header = [
            "Dataset",
            "TP/scan",
            "FP/scan",
            "FN/scan",
            "DSC",
            "Sensitivity",
            "Precision",
        ];
        let mut cells: Vec<[String; 7]> = vec![header.map(String::from)];
        for r in &self.rows {
            cells.push([
                r.dataset.clone(),
                format!("{:.2}", r.tp_per_scan),
                format!("{:.2}", r.fp_per_scan),
                format!("{:.2}", r.fn_per_scan),
                format!("{:.2}", r.dsc),
                format_na(r.sensitivity),
                format_na(r.precision),
            ]);
        }
        let widths: Vec<usize> = (0..7)
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            for (c, cell) in row.iter().enumerate() {
                if c == 0 {
                    let _ = write!(out, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(out, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per row.
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect()
    }
}
