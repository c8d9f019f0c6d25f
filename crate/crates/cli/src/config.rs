//! Declarative run configuration: a TOML file, then `--set` overrides, then
//! dedicated flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cmb_core::annotation::{DEFAULT_PATCH_HALFWIDTH_MM, DEFAULT_SPLIT_FRACTIONS};
use cmb_core::augment::AugmentSpec;
use cmb_core::detect::EvalConfig;
use cmb_core::phantom::CohortConfig;
use cmb_core::scan_io::DatasetTag;
use cmb_core::segmenter::SegmenterConfig;
use cmb_core::stats::GroupConfig;
use cmb_core::triplanar::{View, DEFAULT_FUSION_TAU};
use cmb_core::volume::{DEFAULT_GRID_DIM, DEFAULT_GRID_SPACING_MM};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scan manifest; relative image paths inside it resolve against its directory.
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Ground-truth masks, named `<scan_id>.nii.gz`. Defaults to `<output_dir>/masks`.
    pub mask_dir: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
    pub phantom: PhantomConfig,
    pub annotation: AnnotationConfig,
    pub augment: AugmentSpec,
    pub segmenter: ViewSegmenters,
    pub fusion: FusionConfig,
    pub detect: EvalConfig,
    pub stats: StatsConfig,
    pub partition: PartitionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output_dir: PathBuf::from("cmb-out"),
            mask_dir: None,
            preprocess: PreprocessConfig::default(),
            phantom: PhantomConfig::default(),
            annotation: AnnotationConfig::default(),
            augment: AugmentSpec::default(),
            segmenter: ViewSegmenters::default(),
            fusion: FusionConfig::default(),
            detect: EvalConfig::default(),
            stats: StatsConfig::default(),
            partition: PartitionConfig::default(),
        }
    }
}

/// Resampling and intensity preparation applied before segmentation. Off by
/// default so predictions stay on the grid of the stored ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub resample: bool,
    pub target_spacing_mm: f64,
    pub target_dim: usize,
    pub normalize: bool,
    pub lo_percentile: f64,
    pub hi_percentile: f64,
    pub gamma: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            resample: false,
            target_spacing_mm: DEFAULT_GRID_SPACING_MM,
            target_dim: DEFAULT_GRID_DIM,
            normalize: false,
            lo_percentile: 1.0,
            hi_percentile: 99.0,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub n_scans: usize,
    pub seed: u64,
    pub id_prefix: String,
    /// Exact CMB count per scan; when set it also fixes the number of scans.
    pub counts: Vec<usize>,
    /// Weak labels written to the manifest, one per scan.
    pub p_cmb: Vec<f64>,
    pub cohort: CohortConfig,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_scans: 10,
            seed: 0,
            id_prefix: "phantom".to_string(),
            counts: Vec::new(),
            p_cmb: Vec::new(),
            cohort: CohortConfig::default(),
        }
    }
}

impl PhantomConfig {
    pub fn scan_count(&self) -> usize {
        if self.counts.is_empty() {
            self.n_scans
        } else {
            self.counts.len()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    /// Overrides the per-dataset α threshold for every scan.
    pub alpha_threshold: Option<f64>,
    pub patch_halfwidth_mm: f64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            alpha_threshold: None,
            patch_halfwidth_mm: DEFAULT_PATCH_HALFWIDTH_MM,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSegmenters {
    pub axial: SegmenterConfig,
    pub sagittal: SegmenterConfig,
    pub coronal: SegmenterConfig,
}

impl ViewSegmenters {
    pub fn get(&self, view: View) -> &SegmenterConfig {
        match view {
            View::Axial => &self.axial,
            View::Sagittal => &self.sagittal,
            View::Coronal => &self.coronal,
        }
    }

    fn get_mut(&mut self, view: View) -> &mut SegmenterConfig {
        match view {
            View::Axial => &mut self.axial,
            View::Sagittal => &mut self.sagittal,
            View::Coronal => &mut self.coronal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub tau: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_FUSION_TAU,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    #[serde(flatten)]
    pub group: GroupConfig,
    /// Scans with p_cmb strictly below this form the control group.
    pub control_max_p_cmb: f64,
    /// Scans with p_cmb strictly above this form the case group.
    pub case_min_p_cmb: f64,
    /// Explicit group manifests, paired by line order. Both or neither.
    pub group_a_manifest: Option<PathBuf>,
    pub group_b_manifest: Option<PathBuf>,
    pub sweep_thresholds_mm3: Vec<f64>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            group: GroupConfig::default(),
            control_max_p_cmb: 0.01,
            case_min_p_cmb: 0.3,
            group_a_manifest: None,
            group_b_manifest: None,
            sweep_thresholds_mm3: (0..=40).map(|t| f64::from(t) * 0.5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub seed: u64,
    pub fractions: [f64; 3],
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fractions: DEFAULT_SPLIT_FRACTIONS,
        }
    }
}

/// Parses `key.path=value` with a TOML value; bare words are taken as strings.
fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {item:?} is not KEY=VALUE")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("override path is non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override path crosses non-table key {p:?}")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Command-line adjustments layered over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub min_volume_mm3: Option<f64>,
    pub segmenter: Option<String>,
    pub set: Vec<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        if let Some(kind) = &ov.segmenter {
            for view in View::ALL {
                let mut t = toml::Table::new();
                t.insert("kind".into(), toml::Value::String(kind.clone()));
                table
                    .entry("segmenter")
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| CliError::Config("segmenter must be a table".into()))?
                    .insert(view.as_str().into(), toml::Value::Table(t));
            }
        }
        for item in &ov.set {
            let (path, value) = parse_override(item)?;
            set_path(&mut table, &path, value)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Some(m) = &ov.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(o) = &ov.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(m) = &ov.mask_dir {
            cfg.mask_dir = Some(m.clone());
        }
        if let Some(s) = ov.seed {
            cfg.apply_seed(s);
        }
        if let Some(t) = ov.tau {
            cfg.fusion.tau = t;
        }
        if let Some(v) = ov.min_volume_mm3 {
            cfg.detect.min_volume_mm3 = v;
            cfg.stats.group.size_filter_mm3 = v;
        }
        Ok(cfg)
    }

    /// One seed for every seeded stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.phantom.seed = seed;
        self.augment.master_seed = seed;
        self.partition.seed = seed;
        for view in View::ALL {
            if let SegmenterConfig::Oracle(o) = self.segmenter.get_mut(view) {
                o.seed = seed;
            }
        }
    }

    pub fn mask_dir(&self) -> PathBuf {
        self.mask_dir.clone().unwrap_or_else(|| self.output_dir.join("masks"))
    }

    /// Checks every stage's parameters so no command starts with a bad value.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: cmb_core::error::Error| CliError::Config(e.to_string());
        let p = &self.preprocess;
        if !(p.target_spacing_mm > 0.0 && p.target_spacing_mm.is_finite()) || p.target_dim == 0 {
            return Err(CliError::Config("preprocess target grid must be positive".into()));
        }
        if !(0.0 <= p.lo_percentile && p.lo_percentile < p.hi_percentile && p.hi_percentile <= 100.0) {
            return Err(CliError::Config("preprocess percentiles need 0 ≤ lo < hi ≤ 100".into()));
        }
        if !(p.gamma > 0.0 && p.gamma.is_finite()) {
            return Err(CliError::Config("preprocess gamma must be positive".into()));
        }
        let ph = &self.phantom;
        if ph.scan_count() == 0 {
            return Err(CliError::Config("phantom cohort needs at least one scan".into()));
        }
        if !ph.p_cmb.is_empty() && ph.p_cmb.len() != ph.scan_count() {
            return Err(CliError::Config(format!(
                "phantom.p_cmb has {} entries for {} scans",
                ph.p_cmb.len(),
                ph.scan_count()
            )));
        }
        if ph.p_cmb.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(CliError::Config("phantom.p_cmb values must lie in [0, 1]".into()));
        }
        let c = &ph.cohort;
        if c.dim == 0 || !(c.spacing_mm > 0.0) || c.cmb_count.0 > c.cmb_count.1 {
            return Err(CliError::Config("phantom cohort grid or count range is invalid".into()));
        }
        if let Some(a) = self.annotation.alpha_threshold {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::Config(format!("alpha threshold {a} must lie in (0, 1)")));
            }
        }
        if !(self.annotation.patch_halfwidth_mm > 0.0) {
            return Err(CliError::Config("patch half-width must be positive".into()));
        }
        self.augment.validate().map_err(cfg)?;
        for view in View::ALL {
            self.segmenter.get(view).validate().map_err(cfg)?;
        }
        if !(0.0..1.0).contains(&self.fusion.tau) {
            return Err(CliError::Config(format!(
                "fusion tau {} must lie in [0, 1)",
                self.fusion.tau
            )));
        }
        self.detect.validate().map_err(cfg)?;
        let s = &self.stats;
        if !(s.group.size_filter_mm3 >= 0.0) {
            return Err(CliError::Config("stats size filter must be non-negative".into()));
        }
        if s.group_a_manifest.is_some() != s.group_b_manifest.is_some() {
            return Err(CliError::Config(
                "group_a_manifest and group_b_manifest go together".into(),
            ));
        }
        if s.sweep_thresholds_mm3.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(CliError::Config("sweep thresholds must be sorted ascending".into()));
        }
        let f = self.partition.fractions;
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(
                "partition fractions must be in [0, 1] and sum to 1".into(),
            ));
        }
        Ok(())
    }

    /// α threshold used when synthesizing masks for a dataset.
    pub fn alpha_for(&self, tag: DatasetTag) -> f64 {
        self.annotation
            .alpha_threshold
            .unwrap_or_else(|| cmb_core::annotation::alpha_threshold_for(tag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn set_overrides_nested_keys_and_types() {
        let ov = Overrides {
            set: vec![
                "fusion.tau=0.3".into(),
                "detect.connectivity=\"6\"".into(),
                "augment.flip.enabled=false".into(),
                "phantom.cohort.dim=32".into(),
                "stats.illness_threshold=3".into(),
            ],
            ..Overrides::default()
        };
        let cfg = RunConfig::load(None, &ov).unwrap();
        assert_eq!(cfg.fusion.tau, 0.3);
        assert_eq!(cfg.detect.connectivity, cmb_core::detect::Connectivity::Six);
        assert!(!cfg.augment.flip.enabled);
        assert_eq!(cfg.phantom.cohort.dim, 32);
        assert_eq!(cfg.stats.group.illness_threshold, 3);
    }

    #[test]
    fn flags_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "output_dir = \"from-file\"\n[fusion]\ntau = 0.2\n").unwrap();
        let ov = Overrides {
            tau: Some(0.4),
            seed: Some(9),
            segmenter: Some("oracle".into()),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(Some(&path), &ov).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("from-file"));
        assert_eq!(cfg.fusion.tau, 0.4);
        assert_eq!(cfg.augment.master_seed, 9);
        match &cfg.segmenter.coronal {
            SegmenterConfig::Oracle(o) => assert_eq!(o.seed, 9),
            other => panic!("unexpected segmenter {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let ov = Overrides {
            set: vec!["fusion.tua=0.3".into()],
            ..Overrides::default()
        };
        assert!(matches!(RunConfig::load(None, &ov), Err(CliError::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.fusion.tau = 1.5;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        cfg = RunConfig::default();
        cfg.stats.sweep_thresholds_mm3 = vec![2.0, 1.0];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
