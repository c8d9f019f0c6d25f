//! End-to-end runs through the file formats.

use cmb_core::detect::EvalConfig;
use cmb_core::phantom::{generate_phantom, CohortConfig};
use cmb_core::pipeline::{predict, predict_and_evaluate};
use cmb_core::scan_io::manifest::{read_manifest, write_manifest};
use cmb_core::scan_io::{read_mask, read_volume, write_mask, write_probability, write_volume, Datatype};
use cmb_core::segmenter::{ExternalConfig, ExternalSegmenter, OracleSegmenter};
use cmb_core::triplanar::{TriplanarSegmenters, DEFAULT_FUSION_TAU};

fn cohort() -> CohortConfig {
    CohortConfig {
        dim: 48,
        cmb_count: (2, 4),
        diameter_mm: (5.0, 9.0),
        border_margin_mm: 8.0,
        ..CohortConfig::default()
    }
}

#[test]
fn phantom_survives_disk_and_oracle_pipeline_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = cohort().sample("disk", 21).unwrap();
    let p = generate_phantom(&spec).unwrap();

    let img = dir.path().join("disk.nii.gz");
    let gt_path = dir.path().join("disk_gt.nii");
    write_volume(&p.volume, &img, Datatype::Float32).unwrap();
    write_mask(&p.ground_truth, &gt_path).unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    write_manifest(std::slice::from_ref(&p.entry), &manifest).unwrap();

    let v = read_volume(&img).unwrap();
    assert_eq!(v.geometry(), p.volume.geometry());
    let worst = v
        .data()
        .iter()
        .zip(p.volume.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-7, "float32 round trip error {worst}");
    let gt = read_mask(&gt_path).unwrap();
    assert_eq!(gt, p.ground_truth);
    assert_eq!(read_manifest(&manifest).unwrap(), vec![p.entry.clone()]);

    let oracle = OracleSegmenter::new(gt.clone(), 0.0, 0).unwrap();
    let ev = predict_and_evaluate(
        &v,
        &gt,
        &TriplanarSegmenters::same(&oracle),
        DEFAULT_FUSION_TAU,
        &EvalConfig::default(),
    )
    .unwrap();
    assert_eq!(ev.metrics.fp, 0);
    assert_eq!(ev.metrics.fn_, 0);
    assert_eq!(ev.metrics.tp, spec.cmbs.len());
    assert_eq!(ev.metrics.dsc, 1.0);
}

#[test]
fn stored_view_probabilities_replay_the_same_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let spec = cohort().sample("ext", 22).unwrap();
    let p = generate_phantom(&spec).unwrap();
    let oracle = OracleSegmenter::new(p.ground_truth.clone(), 0.1, 7).unwrap();
    let direct = predict(&p.volume, &TriplanarSegmenters::same(&oracle), DEFAULT_FUSION_TAU).unwrap();

    let paths: Vec<_> = ["axial", "sagittal", "coronal"]
        .iter()
        .map(|v| dir.path().join(format!("{v}.nii")))
        .collect();
    for (probs, path) in direct.views.iter().zip(&paths) {
        write_probability(probs, path).unwrap();
    }
    let cfg = ExternalConfig {
        axial: paths[0].clone(),
        sagittal: paths[1].clone(),
        coronal: paths[2].clone(),
    };
    let [a, s, c] = ExternalSegmenter::load_all(&cfg, p.volume.geometry()).unwrap();
    let segs = TriplanarSegmenters {
        axial: &a,
        sagittal: &s,
        coronal: &c,
    };
    let replayed = predict(&p.volume, &segs, DEFAULT_FUSION_TAU).unwrap();
    assert_eq!(replayed.fused.data(), direct.fused.data());
    assert_eq!(replayed.mask, direct.mask);
}
