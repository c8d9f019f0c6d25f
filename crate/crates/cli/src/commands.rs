//! One function per subcommand. Each reads its inputs, writes its artifacts
//! under the output directory and reports both for the run-record.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cmb_core::annotation::{partition_subjects, synthesize_mask, CMBAnnotation};
use cmb_core::augment::apply_augmentation;
use cmb_core::detect::{
    aggregate_metrics, connected_components, evaluate_scan, filter_by_size, Connectivity, DetectedCMB,
};
use cmb_core::phantom::generate_phantom;
use cmb_core::scan_io::manifest::{format_manifest, parse_manifest};
use cmb_core::scan_io::{read_mask, read_probability, read_volume, write_mask, write_probability, write_volume};
use cmb_core::scan_io::{Datatype, ScanManifestEntry};
use cmb_core::seeding::keyed_rng;
use cmb_core::segmenter::{ExternalSegmenter, OracleSegmenter, ReferenceSegmenter, SegmenterConfig};
use cmb_core::stats::{compare_groups, format_sweep, size_sweep, GroupComparison};
use cmb_core::triplanar::{binarize_fused, fuse_views, segment_view, SliceSegmenter, View};
use cmb_core::volume::{adjust_contrast, normalize_intensity, resample_isotropic, LabelMask, Volume3D};

use crate::config::RunConfig;
use crate::error::{io_error, CliError};
use crate::record::Artifacts;

fn scan_file(dir: &str, scan_id: &str) -> PathBuf {
    Path::new(dir).join(format!("{scan_id}.nii.gz"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    Ok(())
}

fn write_text(cfg: &RunConfig, rel: &Path, text: &str) -> Result<PathBuf, CliError> {
    let path = cfg.output_dir.join(rel);
    ensure_parent(&path)?;
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    Ok(rel.to_path_buf())
}

fn write_json<T: Serialize>(cfg: &RunConfig, rel: &Path, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(cfg, rel, &(text + "\n"))
}

fn out_path(cfg: &RunConfig, rel: &Path) -> Result<PathBuf, CliError> {
    let path = cfg.output_dir.join(rel);
    ensure_parent(&path)?;
    Ok(path)
}

/// Manifest entries with their image paths resolved against the manifest directory.
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ScanManifestEntry>,
    base: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let entries = parse_manifest(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            path: path.to_path_buf(),
            entries,
            base,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let path = cfg
            .manifest
            .as_ref()
            .ok_or_else(|| CliError::Config("no manifest given (--manifest or `manifest` in the config)".into()))?;
        Self::load(path)
    }

    pub fn image_path(&self, e: &ScanManifestEntry) -> PathBuf {
        let p = Path::new(&e.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Loads a scan and applies the configured resampling and intensity steps.
fn load_image(cfg: &RunConfig, path: &Path) -> Result<Volume3D, CliError> {
    let mut v = read_volume(path)?;
    let p = &cfg.preprocess;
    if p.resample {
        v = resample_isotropic(&v, p.target_spacing_mm, [p.target_dim; 3])?;
    }
    if p.normalize {
        let n = normalize_intensity(&v, p.lo_percentile, p.hi_percentile)?;
        if n.degenerate {
            warn!("{}: constant intensities, normalized to zero", path.display());
        }
        v = n.volume;
    }
    if p.gamma != 1.0 {
        v = adjust_contrast(&v, p.gamma)?;
    }
    Ok(v)
}

fn gt_mask_path(cfg: &RunConfig, scan_id: &str) -> PathBuf {
    cfg.mask_dir().join(format!("{scan_id}.nii.gz"))
}

/// Runs `f` over every entry on the worker pool, keeping manifest order.
fn per_scan<T: Send>(
    entries: &[ScanManifestEntry],
    f: impl Fn(&ScanManifestEntry) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    entries.par_iter().map(&f).collect()
}

fn merge(parts: Vec<Artifacts>) -> Artifacts {
    let mut all = Artifacts::default();
    for p in parts {
        all.extend(p);
    }
    all
}

pub fn phantom(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let pc = &cfg.phantom;
    let n = pc.scan_count();
    let width = n.saturating_sub(1).to_string().len().max(3);
    let results: Vec<(ScanManifestEntry, Artifacts)> = (0..n)
        .into_par_iter()
        .map(|s| -> Result<_, CliError> {
            let id = format!("{}-{s:0width$}", pc.id_prefix);
            let seed = keyed_rng(pc.seed, &[b"phantom", id.as_bytes()]).next_u64();
            let spec = match pc.counts.get(s) {
                Some(&k) => pc.cohort.sample_with_count(&id, seed, k),
                None => pc.cohort.sample(&id, seed),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            let p = generate_phantom(&spec).map_err(|e| match e {
                cmb_core::error::Error::PhantomSpec(m) => CliError::Config(m),
                other => other.into(),
            })?;
            let mut art = Artifacts::default();
            let image = scan_file("images", &id);
            write_volume(&p.volume, out_path(cfg, &image)?, Datatype::Float32)?;
            art.output(image.clone());
            let mask = scan_file("masks", &id);
            write_mask(&p.ground_truth, out_path(cfg, &mask)?)?;
            art.output(mask);
            art.output(write_json(
                cfg,
                &Path::new("phantoms").join(format!("{id}.json")),
                &spec,
            )?);
            let mut entry = p.entry;
            entry.path = image.to_string_lossy().into_owned();
            entry.p_cmb = pc.p_cmb.get(s).copied();
            info!("{id}: {} planted cmbs", spec.cmbs.len());
            Ok((entry, art))
        })
        .collect::<Result<_, _>>()?;
    let (entries, arts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut art = merge(arts);
    art.output(write_text(
        cfg,
        Path::new("manifest.jsonl"),
        &format_manifest(&entries),
    )?);
    Ok(art)
}

pub fn mask_synth(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let m = Manifest::from_config(cfg)?;
    let results = per_scan(&m.entries, |e| {
        let mut art = Artifacts::default();
        let image = m.image_path(e);
        art.input(image.clone());
        let v = load_image(cfg, &image)?;
        let anns: Vec<CMBAnnotation> = e
            .cmb_centers
            .iter()
            .map(|&c| CMBAnnotation {
                patch_halfwidth_mm: cfg.annotation.patch_halfwidth_mm,
                ..CMBAnnotation::new(c, cfg.alpha_for(e.dataset_tag))
            })
            .collect();
        let synth = synthesize_mask(&v, &anns)?;
        for issue in &synth.issues {
            warn!("{}: annotation {} skipped: {}", e.scan_id, issue.index, issue.reason);
        }
        let rel = scan_file("masks", &e.scan_id);
        write_mask(&synth.mask, out_path(cfg, &rel)?)?;
        art.output(rel);
        let issues: Vec<IssueLine> = synth
            .issues
            .into_iter()
            .map(|i| IssueLine {
                scan_id: e.scan_id.clone(),
                issue: i,
            })
            .collect();
        Ok((art, issues))
    })?;
    let mut lines = String::new();
    let mut arts = Vec::new();
    for (a, issues) in results {
        arts.push(a);
        for i in issues {
            lines += &(serde_json::to_string(&i).map_err(|e| CliError::Internal(e.to_string()))? + "\n");
        }
    }
    let mut art = merge(arts);
    art.input(m.path.clone());
    art.output(write_text(cfg, Path::new("mask-synth/issues.jsonl"), &lines)?);
    Ok(art)
}

#[derive(Serialize)]
struct IssueLine {
    scan_id: String,
    #[serde(flatten)]
    issue: cmb_core::annotation::AnnotationIssue,
}

fn load_gt(cfg: &RunConfig, scan_id: &str, art: &mut Artifacts) -> Result<LabelMask, CliError> {
    let path = gt_mask_path(cfg, scan_id);
    let mask = read_mask(&path)?;
    art.input(path);
    Ok(mask)
}

pub fn augment(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let m = Manifest::from_config(cfg)?;
    let results = per_scan(&m.entries, |e| {
        let mut art = Artifacts::default();
        let image = m.image_path(e);
        art.input(image.clone());
        let v = load_image(cfg, &image)?;
        let mask = load_gt(cfg, &e.scan_id, &mut art)?;
        let (av, am, params) = apply_augmentation(&v, &mask, &cfg.augment, &e.scan_id)?;
        let img_rel = scan_file("augmented/images", &e.scan_id);
        write_volume(&av, out_path(cfg, &img_rel)?, Datatype::Float32)?;
        art.output(img_rel);
        let mask_rel = scan_file("augmented/masks", &e.scan_id);
        write_mask(&am, out_path(cfg, &mask_rel)?)?;
        art.output(mask_rel);
        art.output(write_json(
            cfg,
            &Path::new("augmented/params").join(format!("{}.json", e.scan_id)),
            &params,
        )?);
        let mut entry = e.clone();
        entry.path = format!("images/{}.nii.gz", e.scan_id);
        // spatial transforms move the lesions; centers follow the warped mask
        entry.cmb_centers = connected_components(&am, Connectivity::TwentySix)
            .iter()
            .map(|c| c.centroid)
            .collect();
        Ok((entry, art))
    })?;
    let (entries, arts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut art = merge(arts);
    art.input(m.path.clone());
    art.output(write_text(
        cfg,
        Path::new("augmented/manifest.jsonl"),
        &format_manifest(&entries),
    )?);
    Ok(art)
}

fn external_path(template: &Path, scan_id: &str) -> PathBuf {
    PathBuf::from(template.to_string_lossy().replace("{scan_id}", scan_id))
}

fn build_segmenter(
    cfg: &RunConfig,
    view: View,
    scan_id: &str,
    v: &Volume3D,
    art: &mut Artifacts,
) -> Result<Box<dyn SliceSegmenter>, CliError> {
    Ok(match cfg.segmenter.get(view) {
        SegmenterConfig::Oracle(o) => {
            let path = match &o.mask_path {
                Some(p) => external_path(p, scan_id),
                None => gt_mask_path(cfg, scan_id),
            };
            let gt = read_mask(&path)?;
            art.input(path);
            gt.geometry().ensure_matches(v.geometry(), "oracle mask")?;
            Box::new(OracleSegmenter::new(gt, o.corruption_rate, o.seed).map_err(|e| CliError::Config(e.to_string()))?)
        }
        SegmenterConfig::Reference(r) => {
            Box::new(ReferenceSegmenter::new(r.clone()).map_err(|e| CliError::Config(e.to_string()))?)
        }
        SegmenterConfig::External(x) => {
            let template = match view {
                View::Axial => &x.axial,
                View::Sagittal => &x.sagittal,
                View::Coronal => &x.coronal,
            };
            let path = external_path(template, scan_id);
            let s = ExternalSegmenter::load(view, &path, v.geometry())?;
            art.input(path);
            Box::new(s)
        }
    })
}

fn prob_rel(view: View, scan_id: &str) -> PathBuf {
    scan_file(&format!("probs/{}", view.as_str()), scan_id)
}

pub fn segment(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let m = Manifest::from_config(cfg)?;
    let arts = per_scan(&m.entries, |e| {
        let mut art = Artifacts::default();
        let image = m.image_path(e);
        art.input(image.clone());
        let v = load_image(cfg, &image)?;
        for view in View::ALL {
            let seg = build_segmenter(cfg, view, &e.scan_id, &v, &mut art)?;
            let probs = segment_view(&v, view, seg.as_ref())?;
            let rel = prob_rel(view, &e.scan_id);
            write_probability(&probs, out_path(cfg, &rel)?)?;
            art.output(rel);
        }
        info!("{}: segmented", e.scan_id);
        Ok(art)
    })?;
    let mut art = merge(arts);
    art.input(m.path.clone());
    Ok(art)
}

pub fn fuse(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let m = Manifest::from_config(cfg)?;
    let arts = per_scan(&m.entries, |e| {
        let mut art = Artifacts::default();
        let mut views = Vec::with_capacity(3);
        for view in View::ALL {
            let path = cfg.output_dir.join(prob_rel(view, &e.scan_id));
            views.push(read_probability(&path)?);
            art.input(path);
        }
        let fused = fuse_views(&views[0], &views[1], &views[2])?;
        let mask = binarize_fused(&fused, cfg.fusion.tau)?;
        let fused_rel = scan_file("fused", &e.scan_id);
        write_probability(&fused, out_path(cfg, &fused_rel)?)?;
        art.output(fused_rel);
        let pred_rel = scan_file("predictions", &e.scan_id);
        write_mask(&mask, out_path(cfg, &pred_rel)?)?;
        art.output(pred_rel);
        Ok(art)
    })?;
    let mut art = merge(arts);
    art.input(m.path.clone());
    Ok(art)
}

/// Per-scan detection record. All components are kept so later size filters
/// and sweeps can apply thresholds of their own.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionFile {
    pub scan_id: String,
    pub connectivity: Connectivity,
    pub min_volume_mm3: f64,
    /// Ids of the components passing `min_volume_mm3`.
    pub detected_ids: Vec<usize>,
    pub components: Vec<DetectedCMB>,
}

fn detection_rel(scan_id: &str) -> PathBuf {
    Path::new("detections").join(format!("{scan_id}.json"))
}

pub fn detect(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let m = Manifest::from_config(cfg)?;
    let results = per_scan(&m.entries, |e| {
        let mut art = Artifacts::default();
        let path = cfg.output_dir.join(scan_file("predictions", &e.scan_id));
        let mask = read_mask(&path)?;
        art.input(path);
        let components = connected_components(&mask, cfg.detect.connectivity);
        let kept = filter_by_size(&components, cfg.detect.min_volume_mm3);
        let file = DetectionFile {
            scan_id: e.scan_id.clone(),
            connectivity: cfg.detect.connectivity,
            min_volume_mm3: cfg.detect.min_volume_mm3,
            detected_ids: kept.iter().map(|d| d.id).collect(),
            components,
        };
        art.output(write_json(cfg, &detection_rel(&e.scan_id), &file)?);
        Ok((art, format!("{}\t{}\n", e.scan_id, kept.len())))
    })?;
    let mut summary = String::from("scan_id\tdetected\n");
    let mut arts = Vec::new();
    for (a, line) in results {
        arts.push(a);
        summary += &line;
    }
    let mut art = merge(arts);
    art.input(m.path.clone());
    art.output(write_text(cfg, Path::new("detections/summary.tsv"), &summary)?);
    Ok(art)
}

#[derive(Serialize)]
struct ScanLine<'a> {
    scan_id: &'a str,
    dataset: cmb_core::scan_io::DatasetTag,
    #[serde(flatten)]
    metrics: &'a cmb_core::detect::ScanMetrics,
}

pub fn eval(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let m = Manifest::from_config(cfg)?;
    let results = per_scan(&m.entries, |e| {
        let mut art = Artifacts::default();
        let path = cfg.output_dir.join(scan_file("predictions", &e.scan_id));
        let pred = read_mask(&path)?;
        art.input(path);
        let gt = load_gt(cfg, &e.scan_id, &mut art)?;
        let ev = evaluate_scan(&pred, &gt, &cfg.detect)?;
        Ok((art, ev.metrics))
    })?;
    let mut per_scan_text = String::new();
    let mut rows = Vec::with_capacity(results.len());
    let mut arts = Vec::new();
    for (e, (a, metrics)) in m.entries.iter().zip(results) {
        let line = ScanLine {
            scan_id: &e.scan_id,
            dataset: e.dataset_tag,
            metrics: &metrics,
        };
        per_scan_text += &(serde_json::to_string(&line).map_err(|e| CliError::Internal(e.to_string()))? + "\n");
        rows.push((e.dataset_tag, metrics));
        arts.push(a);
    }
    let table = aggregate_metrics(&rows)?;
    let text = table.to_text();
    let mut art = merge(arts);
    art.input(m.path.clone());
    art.output(write_text(cfg, Path::new("eval/per_scan.jsonl"), &per_scan_text)?);
    art.output(write_text(cfg, Path::new("eval/metrics.txt"), &text)?);
    art.output(write_text(cfg, Path::new("eval/metrics.jsonl"), &table.to_jsonl())?);
    Ok((art, text))
}

/// Case and control scans, paired position by position.
#[derive(Clone, Debug, Serialize)]
pub struct Pairing {
    pub group_a: Vec<String>,
    pub group_b: Vec<String>,
    /// Scans left without a partner.
    pub unpaired: Vec<String>,
}

fn acquisition_key(e: &ScanManifestEntry) -> String {
    let a = &e.acquisition;
    format!(
        "{}|{}|{}|{}",
        a.field_strength_tesla, a.echo_time_ms, a.slice_thickness_mm, a.scanner_model
    )
}

/// Splits a manifest by weak label and pairs each case with the first unused
/// control that shares its acquisition parameters.
pub fn pair_by_weak_label(entries: &[ScanManifestEntry], control_max: f64, case_min: f64) -> Pairing {
    let mut controls: BTreeMap<String, Vec<&ScanManifestEntry>> = BTreeMap::new();
    let mut cases = Vec::new();
    for e in entries {
        match e.p_cmb {
            Some(p) if p > case_min => cases.push(e),
            Some(p) if p < control_max => controls.entry(acquisition_key(e)).or_default().push(e),
            _ => {}
        }
    }
    for list in controls.values_mut() {
        list.reverse();
    }
    let mut pairing = Pairing {
        group_a: Vec::new(),
        group_b: Vec::new(),
        unpaired: Vec::new(),
    };
    for c in cases {
        match controls.get_mut(&acquisition_key(c)).and_then(Vec::pop) {
            Some(ctrl) => {
                pairing.group_a.push(c.scan_id.clone());
                pairing.group_b.push(ctrl.scan_id.clone());
            }
            None => pairing.unpaired.push(c.scan_id.clone()),
        }
    }
    for list in controls.values() {
        pairing.unpaired.extend(list.iter().rev().map(|e| e.scan_id.clone()));
    }
    pairing
}

fn resolve_groups(cfg: &RunConfig, art: &mut Artifacts) -> Result<Pairing, CliError> {
    let s = &cfg.stats;
    if let (Some(a), Some(b)) = (&s.group_a_manifest, &s.group_b_manifest) {
        let ma = Manifest::load(a)?;
        let mb = Manifest::load(b)?;
        art.input(a.clone());
        art.input(b.clone());
        return Ok(Pairing {
            group_a: ma.entries.iter().map(|e| e.scan_id.clone()).collect(),
            group_b: mb.entries.iter().map(|e| e.scan_id.clone()).collect(),
            unpaired: Vec::new(),
        });
    }
    let m = Manifest::from_config(cfg)?;
    art.input(m.path.clone());
    let p = pair_by_weak_label(&m.entries, s.control_max_p_cmb, s.case_min_p_cmb);
    if !p.unpaired.is_empty() {
        warn!("{} scans without an acquisition-matched partner", p.unpaired.len());
    }
    if p.group_a.is_empty() {
        return Err(CliError::Data("no case/control pairs found in the manifest".into()));
    }
    Ok(p)
}

fn load_detections(cfg: &RunConfig, ids: &[String], art: &mut Artifacts) -> Result<Vec<Vec<DetectedCMB>>, CliError> {
    ids.iter()
        .map(|id| {
            let path = cfg.output_dir.join(detection_rel(id));
            let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            let file: DetectionFile =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            art.input(path);
            Ok(file.components)
        })
        .collect()
}

#[derive(Serialize)]
struct ComparisonRecord<'a> {
    pairing: &'a Pairing,
    #[serde(flatten)]
    comparison: &'a GroupComparison,
}

pub fn compare(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let mut art = Artifacts::default();
    let pairing = resolve_groups(cfg, &mut art)?;
    let a = load_detections(cfg, &pairing.group_a, &mut art)?;
    let b = load_detections(cfg, &pairing.group_b, &mut art)?;
    let cmp = compare_groups(&a, &b, &cfg.stats.group);
    let record = ComparisonRecord {
        pairing: &pairing,
        comparison: &cmp,
    };
    art.output(write_json(cfg, Path::new("stats/comparison.json"), &record)?);
    let wilcoxon = match cmp.wilcoxon.result() {
        Some(r) => format!(
            "W+ = {}, p = {:.4e} ({:?}, n = {})",
            r.statistic, r.p_value, r.method, r.n_effective
        ),
        None => "skipped".to_string(),
    };
    let t = cmp.contingency;
    let summary = format!(
        "groups: {} vs {} scans\nmean CMBs per scan (≥ {} mm³): {:.2} vs {:.2}\nWilcoxon signed-rank: {wilcoxon}\n\
         illness (≥ {} CMBs): [[{}, {}], [{}, {}]], Fisher p = {:.4e}{}\n",
        a.len(),
        b.len(),
        cmp.size_filter_mm3,
        cmp.mean_a,
        cmp.mean_b,
        cmp.illness_threshold,
        t.a,
        t.b,
        t.c,
        t.d,
        cmp.fisher.p_value,
        if cmp.fisher.degenerate {
            " (degenerate margin)"
        } else {
            ""
        },
    );
    Ok((art, summary))
}

pub fn sweep(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let mut art = Artifacts::default();
    let pairing = resolve_groups(cfg, &mut art)?;
    let a = load_detections(cfg, &pairing.group_a, &mut art)?;
    let b = load_detections(cfg, &pairing.group_b, &mut art)?;
    let s = &cfg.stats;
    let rows = size_sweep(
        &a,
        &b,
        &s.sweep_thresholds_mm3,
        s.group.illness_threshold,
        s.group.fisher_alternative,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let text = format_sweep(&rows);
    art.output(write_text(cfg, Path::new("stats/sweep.txt"), &text)?);
    let mut jsonl = String::new();
    for r in &rows {
        jsonl += &(serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))? + "\n");
    }
    art.output(write_text(cfg, Path::new("stats/sweep.jsonl"), &jsonl)?);
    Ok((art, text))
}

pub fn partition(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let m = Manifest::from_config(cfg)?;
    let mut art = Artifacts::default();
    art.input(m.path.clone());
    let subjects: Vec<String> = m
        .entries
        .iter()
        .map(|e| e.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let split = partition_subjects(&subjects, cfg.partition.seed, cfg.partition.fractions)
        .map_err(|e| CliError::Data(e.to_string()))?;
    art.output(write_json(cfg, Path::new("partition/partition.json"), &split)?);
    let mut tsv = String::from("scan_id\tsubject_id\tsplit\n");
    for e in &m.entries {
        let which = split
            .split_of(&e.subject_id)
            .ok_or_else(|| CliError::Internal(format!("subject {} missing from the partition", e.subject_id)))?;
        tsv += &format!("{}\t{}\t{which}\n", e.scan_id, e.subject_id);
    }
    art.output(write_text(cfg, Path::new("partition/scans.tsv"), &tsv)?);
    Ok(art)
}
