//! Synthetic SWI-like volumes with planted microbleeds and mimics.
//!
//! Every planted object multiplies the background by `1 − contrast·g(r)` with
//! a Gaussian profile `g(r) = exp(−r²/(2σ²))`, `σ = diameter/4`. Ground truth
//! is the analytic `α > threshold` region of each CMB's noiseless profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::DEFAULT_ALPHA_THRESHOLD;
use crate::error::{Error, Result};
use crate::scan_io::manifest::{Acquisition, DatasetTag, ScanManifestEntry};
use crate::volume::{Geometry, LabelMask, Volume3D, WorldPoint};

pub const MIN_CMB_DIAMETER_MM: f64 = 2.0;
pub const MAX_CMB_DIAMETER_MM: f64 = 10.0;
/// Minimum surface-to-surface gap between a CMB and any other planted object.
pub const MIN_SEPARATION_MM: f64 = 4.0;
/// Profiles are evaluated out to this many σ; beyond it g < 4e-6.
const PROFILE_EXTENT_SIGMA: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub base: f64,
    /// Relative amplitude of the low-frequency field, in [0, 1).
    pub smooth_amplitude: f64,
    pub noise_sigma: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            base: 0.7,
            smooth_amplitude: 0.1,
            noise_sigma: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedCMB {
    pub center: WorldPoint,
    pub diameter_mm: f64,
    pub contrast: f64,
}

impl PlantedCMB {
    pub fn sigma(&self) -> f64 {
        self.diameter_mm / 4.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mimic {
    VesselTube {
        start: WorldPoint,
        end: WorldPoint,
        diameter_mm: f64,
        contrast: f64,
    },
    Calcification {
        center: WorldPoint,
        diameter_mm: f64,
        contrast: f64,
    },
}

impl Mimic {
    fn diameter(&self) -> f64 {
        match *self {
            Mimic::VesselTube { diameter_mm, .. } | Mimic::Calcification { diameter_mm, .. } => diameter_mm,
        }
    }

    fn contrast(&self) -> f64 {
        match *self {
            Mimic::VesselTube { contrast, .. } | Mimic::Calcification { contrast, .. } => contrast,
        }
    }

    /// Distance from `p` to the object's axis (segment or point).
    fn axis_distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Mimic::VesselTube { start, end, .. } => segment_distance(p, start.to_array(), end.to_array()),
            Mimic::Calcification { center, .. } => dist(p, center.to_array()),
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let pad = PROFILE_EXTENT_SIGMA * self.diameter() / 4.0;
        let (a, b) = match *self {
            Mimic::VesselTube { start, end, .. } => (start.to_array(), end.to_array()),
            Mimic::Calcification { center, .. } => (center.to_array(), center.to_array()),
        };
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for ax in 0..3 {
            lo[ax] = a[ax].min(b[ax]) - pad;
            hi[ax] = a[ax].max(b[ax]) + pad;
        }
        (lo, hi)
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub scan_id: String,
    pub geometry: Geometry,
    pub background: Background,
    pub cmbs: Vec<PlantedCMB>,
    #[serde(default)]
    pub mimics: Vec<Mimic>,
    pub seed: u64,
    #[serde(default = "default_gt_threshold")]
    pub gt_alpha_threshold: f64,
}

fn default_gt_threshold() -> f64 {
    DEFAULT_ALPHA_THRESHOLD
}

impl PhantomSpec {
    pub fn new(scan_id: impl Into<String>, geometry: Geometry, seed: u64) -> Self {
        Self {
            scan_id: scan_id.into(),
            geometry,
            background: Background::default(),
            cmbs: Vec::new(),
            mimics: Vec::new(),
            seed,
            gt_alpha_threshold: DEFAULT_ALPHA_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::PhantomSpec(m));
        self.geometry.validate()?;
        let b = &self.background;
        if !(b.base > 0.0 && b.base.is_finite()) {
            return bad(format!("background base {} must be positive", b.base));
        }
        if !(0.0..1.0).contains(&b.smooth_amplitude) {
            return bad(format!("smooth amplitude {} must lie in [0, 1)", b.smooth_amplitude));
        }
        if !(b.noise_sigma >= 0.0 && b.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be non-negative", b.noise_sigma));
        }
        if !(self.gt_alpha_threshold > 0.0 && self.gt_alpha_threshold < 1.0) {
            return bad(format!(
                "ground-truth threshold {} must lie in (0, 1)",
                self.gt_alpha_threshold
            ));
        }
        for (n, c) in self.cmbs.iter().enumerate() {
            if !(MIN_CMB_DIAMETER_MM..=MAX_CMB_DIAMETER_MM).contains(&c.diameter_mm) {
                return bad(format!("cmb {n}: diameter {} mm outside [2, 10]", c.diameter_mm));
            }
            if !(c.contrast > 0.0 && c.contrast <= 1.0) {
                return bad(format!("cmb {n}: contrast {} outside (0, 1]", c.contrast));
            }
            if !c.center.is_finite() || self.geometry.nearest_voxel(c.center).is_none() {
                return bad(format!("cmb {n}: center {:?} outside the volume", c.center.to_array()));
            }
        }
        for (n, m) in self.mimics.iter().enumerate() {
            if !(m.diameter() > 0.0 && m.diameter().is_finite()) {
                return bad(format!("mimic {n}: diameter must be positive"));
            }
            if !(m.contrast() > 0.0 && m.contrast() <= 1.0) {
                return bad(format!("mimic {n}: contrast {} outside (0, 1]", m.contrast()));
            }
        }
        for (a, ca) in self.cmbs.iter().enumerate() {
            for (b, cb) in self.cmbs.iter().enumerate().skip(a + 1) {
                let gap = ca.center.distance(&cb.center) - 0.5 * (ca.diameter_mm + cb.diameter_mm);
                if gap < MIN_SEPARATION_MM {
                    return bad(format!(
                        "cmbs {a} and {b} are {gap:.2} mm apart; need {MIN_SEPARATION_MM}"
                    ));
                }
            }
            for (b, m) in self.mimics.iter().enumerate() {
                let gap = m.axis_distance(ca.center.to_array()) - 0.5 * (ca.diameter_mm + m.diameter());
                if gap < MIN_SEPARATION_MM {
                    return bad(format!(
                        "cmb {a} and mimic {b} are {gap:.2} mm apart; need {MIN_SEPARATION_MM}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Radius of the `α > threshold` ball of a CMB whose center sits on a voxel.
pub fn analytic_gt_radius_mm(diameter_mm: f64, threshold: f64) -> f64 {
    let sigma = diameter_mm / 4.0;
    sigma * (2.0 * (1.0 / threshold).ln()).sqrt()
}

pub fn analytic_gt_volume_mm3(diameter_mm: f64, threshold: f64) -> f64 {
    4.0 / 3.0 * std::f64::consts::PI * analytic_gt_radius_mm(diameter_mm, threshold).powi(3)
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume3D,
    pub ground_truth: LabelMask,
    /// Ground-truth voxels (linear indices) of each planted CMB, in spec order.
    pub cmb_voxels: Vec<Vec<usize>>,
    pub entry: ScanManifestEntry,
}

/// Index box covering world-space bounds, clipped to the grid.
fn index_box(g: &Geometry, lo: [f64; 3], hi: [f64; 3]) -> Option<([usize; 3], [usize; 3])> {
    let mut a = [0usize; 3];
    let mut b = [0usize; 3];
    for ax in 0..3 {
        let l = ((lo[ax] - g.origin[ax]) / g.spacing[ax]).ceil().max(0.0);
        let h = ((hi[ax] - g.origin[ax]) / g.spacing[ax])
            .floor()
            .min(g.dims[ax] as f64 - 1.0);
        if h < l {
            return None;
        }
        a[ax] = l as usize;
        b[ax] = h as usize;
    }
    Some((a, b))
}

fn apply_profile(
    g: &Geometry,
    factor: &mut [f64],
    lo: [f64; 3],
    hi: [f64; 3],
    contrast: f64,
    sigma: f64,
    distance: impl Fn([f64; 3]) -> f64,
) {
    let Some((a, b)) = index_box(g, lo, hi) else {
        return;
    };
    for k in a[2]..=b[2] {
        for j in a[1]..=b[1] {
            for i in a[0]..=b[0] {
                let p = g.voxel_to_world([i as f64, j as f64, k as f64]).to_array();
                let r = distance(p);
                factor[g.linear(i, j, k)] *= 1.0 - contrast * (-r * r / (2.0 * sigma * sigma)).exp();
            }
        }
    }
}

/// Renders the spec. Identical specs give bit-identical volumes.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let g = spec.geometry;
    let bg = spec.background;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * std::f64::consts::TAU);
    let extent: [f64; 3] = std::array::from_fn(|a| 1.5 * g.dims[a] as f64 * g.spacing[a]);

    let mut factor = vec![1.0f64; g.len()];
    for c in &spec.cmbs {
        let s = c.sigma();
        let ctr = c.center.to_array();
        let pad = PROFILE_EXTENT_SIGMA * s;
        apply_profile(
            &g,
            &mut factor,
            ctr.map(|x| x - pad),
            ctr.map(|x| x + pad),
            c.contrast,
            s,
            |p| dist(p, ctr),
        );
    }
    for m in &spec.mimics {
        let (lo, hi) = m.bounds();
        apply_profile(&g, &mut factor, lo, hi, m.contrast(), m.diameter() / 4.0, |p| {
            m.axis_distance(p)
        });
    }

    let noise = Normal::new(0.0, bg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::PhantomSpec(format!("noise distribution: {e}")))?;
    let mut data = Vec::with_capacity(g.len());
    for (lin, f) in factor.iter().enumerate() {
        let idx = g.unravel(lin);
        let p = g.index_to_world(idx).to_array();
        let smooth = (0..3)
            .map(|a| (std::f64::consts::TAU * (p[a] - g.origin[a]) / extent[a] + phases[a]).sin())
            .sum::<f64>()
            / 3.0;
        let mut v = bg.base * (1.0 + bg.smooth_amplitude * smooth) * f;
        if bg.noise_sigma > 0.0 {
            v += noise.sample(&mut rng);
        }
        data.push(v.clamp(0.0, 1.0));
    }
    let volume = Volume3D::new(g, data)?;

    let mut ground_truth = LabelMask::empty(g);
    let mut cmb_voxels = Vec::with_capacity(spec.cmbs.len());
    let ln_inv = (1.0 / spec.gt_alpha_threshold).ln();
    for c in &spec.cmbs {
        // α relative to the voxel nearest the center: exp(−(r² − r_min²)/(2σ²))
        let near = g
            .nearest_voxel(c.center)
            .ok_or_else(|| Error::PhantomSpec("cmb center outside the volume".to_string()))?;
        let ctr = c.center.to_array();
        let r_min2 = dist(g.index_to_world(near).to_array(), ctr).powi(2);
        let r_thr2 = r_min2 + 2.0 * c.sigma().powi(2) * ln_inv;
        let r_thr = r_thr2.sqrt();
        let mut voxels = Vec::new();
        if let Some((a, b)) = index_box(&g, ctr.map(|x| x - r_thr), ctr.map(|x| x + r_thr)) {
            for k in a[2]..=b[2] {
                for j in a[1]..=b[1] {
                    for i in a[0]..=b[0] {
                        let p = g.voxel_to_world([i as f64, j as f64, k as f64]).to_array();
                        if dist(p, ctr).powi(2) < r_thr2 {
                            let lin = g.linear(i, j, k);
                            ground_truth.set(lin, true);
                            voxels.push(lin);
                        }
                    }
                }
            }
        }
        cmb_voxels.push(voxels);
    }

    let entry = ScanManifestEntry {
        scan_id: spec.scan_id.clone(),
        subject_id: spec.scan_id.clone(),
        dataset_tag: DatasetTag::PHANTOM,
        path: format!("{}.nii.gz", spec.scan_id),
        cmb_centers: spec.cmbs.iter().map(|c| c.center).collect(),
        p_cmb: None,
        acquisition: Acquisition {
            field_strength_tesla: 3.0,
            echo_time_ms: 20.0,
            slice_thickness_mm: g.spacing[2],
            scanner_model: "phantom".to_string(),
        },
    };
    Ok(Phantom {
        volume,
        ground_truth,
        cmb_voxels,
        entry,
    })
}

/// Parameter ranges for drawing random phantom specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub dim: usize,
    pub spacing_mm: f64,
    pub background: Background,
    pub cmb_count: (usize, usize),
    pub diameter_mm: (f64, f64),
    pub contrast: (f64, f64),
    pub vessels: usize,
    pub vessel_diameter_mm: (f64, f64),
    pub vessel_length_mm: (f64, f64),
    pub vessel_contrast: (f64, f64),
    pub calcifications: usize,
    pub calcification_diameter_mm: (f64, f64),
    /// Clearance between planted objects and the volume border.
    pub border_margin_mm: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            spacing_mm: 1.0,
            background: Background::default(),
            cmb_count: (1, 10),
            diameter_mm: (MIN_CMB_DIAMETER_MM, MAX_CMB_DIAMETER_MM),
            contrast: (0.5, 0.9),
            vessels: 0,
            vessel_diameter_mm: (1.0, 2.0),
            vessel_length_mm: (20.0, 60.0),
            vessel_contrast: (0.4, 0.8),
            calcifications: 0,
            calcification_diameter_mm: (2.0, 5.0),
            border_margin_mm: 10.0,
        }
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..=r.1)
    } else {
        r.0
    }
}

impl CohortConfig {
    pub fn geometry(&self) -> Geometry {
        Geometry::cube(self.dim, self.spacing_mm)
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> WorldPoint {
        let g = self.geometry();
        let hi = (g.dims[0] - 1) as f64 * g.spacing[0];
        let m = self.border_margin_mm.min(hi / 2.0);
        WorldPoint::from(std::array::from_fn(|_| rng.random_range(m..=hi - m)))
    }

    /// Draws a spec with a CMB count drawn from `cmb_count`.
    pub fn sample(&self, scan_id: &str, seed: u64) -> Result<PhantomSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(self.cmb_count.0..=self.cmb_count.1.max(self.cmb_count.0));
        self.sample_with_rng(scan_id, seed, n, &mut rng)
    }

    /// Draws a spec with exactly `n_cmbs` planted CMBs.
    pub fn sample_with_count(&self, scan_id: &str, seed: u64, n_cmbs: usize) -> Result<PhantomSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with_rng(scan_id, seed, n_cmbs, &mut rng)
    }

    fn sample_with_rng(&self, scan_id: &str, seed: u64, n_cmbs: usize, rng: &mut ChaCha8Rng) -> Result<PhantomSpec> {
        let mut spec = PhantomSpec::new(scan_id, self.geometry(), seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 1);
        spec.background = self.background;
        let mut attempts = 0;
        let bump = |attempts: &mut usize| -> Result<()> {
            *attempts += 1;
            if *attempts > MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PhantomSpec(format!(
                    "could not place {n_cmbs} cmbs with the required separation"
                )));
            }
            Ok(())
        };
        while spec.cmbs.len() < n_cmbs {
            bump(&mut attempts)?;
            let c = PlantedCMB {
                center: self.random_point(rng),
                diameter_mm: uniform(rng, self.diameter_mm),
                contrast: uniform(rng, self.contrast),
            };
            let clear = spec
                .cmbs
                .iter()
                .all(|o| o.center.distance(&c.center) - 0.5 * (o.diameter_mm + c.diameter_mm) >= MIN_SEPARATION_MM);
            if clear {
                spec.cmbs.push(c);
            }
        }
        let clear_of_cmbs = |m: &Mimic, cmbs: &[PlantedCMB]| {
            cmbs.iter().all(|c| {
                m.axis_distance(c.center.to_array()) - 0.5 * (c.diameter_mm + m.diameter()) >= MIN_SEPARATION_MM
            })
        };
        let mut placed = 0;
        while placed < self.vessels {
            bump(&mut attempts)?;
            let start = self.random_point(rng).to_array();
            let len = uniform(rng, self.vessel_length_mm);
            // uniform direction on the sphere
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let dir = [s * phi.cos(), s * phi.sin(), z];
            let end = std::array::from_fn(|a| start[a] + len * dir[a]);
            let m = Mimic::VesselTube {
                start: start.into(),
                end: end.into(),
                diameter_mm: uniform(rng, self.vessel_diameter_mm),
                contrast: uniform(rng, self.vessel_contrast),
            };
            if clear_of_cmbs(&m, &spec.cmbs) {
                spec.mimics.push(m);
                placed += 1;
            }
        }
        placed = 0;
        while placed < self.calcifications {
            bump(&mut attempts)?;
            let m = Mimic::Calcification {
                center: self.random_point(rng),
                diameter_mm: uniform(rng, self.calcification_diameter_mm),
                contrast: uniform(rng, self.contrast),
            };
            if clear_of_cmbs(&m, &spec.cmbs) {
                spec.mimics.push(m);
                placed += 1;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}
