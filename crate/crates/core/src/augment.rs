//! Training-time augmentation: three spatial transforms applied jointly to
//! image and mask, five intensity transforms applied to the image only.
//!
//! Each transform draws from its own generator keyed by
//! `(master_seed, scan_id, transform index)`, so the outcome for a scan does
//! not depend on which other scans are processed or in what order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::seeding::keyed_rng;
use crate::volume::{sample_trilinear, LabelMask, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    I,
    J,
    K,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::I, Axis::J, Axis::K];

    pub fn index(self) -> usize {
        match self {
            Axis::I => 0,
            Axis::J => 1,
            Axis::K => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" | "x" | "0" => Ok(Axis::I),
            "j" | "y" | "1" => Ok(Axis::J),
            "k" | "z" | "2" => Ok(Axis::K),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1]) {
        return Err(Error::invalid(format!(
            "{name} range {r:?} must be non-negative and ordered"
        )));
    }
    Ok(())
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} probability {p} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticSpec {
    pub enabled: bool,
    pub probability: f64,
    pub control_spacing_mm: f64,
    pub max_displacement_mm: f64,
}

impl Default for ElasticSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            control_spacing_mm: 32.0,
            max_displacement_mm: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasFieldSpec {
    pub enabled: bool,
    pub probability: f64,
    pub order: usize,
    pub max_amplitude: f64,
}

impl Default for BiasFieldSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            order: 3,
            max_amplitude: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSpec {
    pub enabled: bool,
    pub probability: f64,
    pub max_degrees: f64,
}

impl Default for RotationSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            max_degrees: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlipSpec {
    pub enabled: bool,
    /// Chance of flipping along each allowed axis.
    pub probability: f64,
    pub axes: Vec<Axis>,
}

impl Default for FlipSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            axes: vec![Axis::I],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurSpec {
    pub enabled: bool,
    pub probability: f64,
    pub sigma_mm: [f64; 2],
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            sigma_mm: [0.5, 1.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionGhostSpec {
    pub enabled: bool,
    pub probability: f64,
    pub ghosts: [usize; 2],
    pub max_intensity: f64,
    pub axes: Vec<Axis>,
}

impl Default for MotionGhostSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            ghosts: [2, 4],
            max_intensity: 0.3,
            axes: vec![Axis::J, Axis::K],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSpec {
    pub enabled: bool,
    pub probability: f64,
    pub retain_fraction: [f64; 2],
}

impl Default for GibbsSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            retain_fraction: [0.6, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub enabled: bool,
    pub probability: f64,
    pub max_additive_sigma: f64,
    pub max_multiplicative_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probability: 0.5,
            max_additive_sigma: 0.05,
            max_multiplicative_sigma: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub master_seed: u64,
    pub elastic: ElasticSpec,
    pub bias_field: BiasFieldSpec,
    pub rotation: RotationSpec,
    pub flip: FlipSpec,
    pub blur: BlurSpec,
    pub motion_ghost: MotionGhostSpec,
    pub gibbs_ringing: GibbsSpec,
    pub noise: NoiseSpec,
}

/// Stream index of each transform in the keyed generator.
mod stream {
    pub const ELASTIC: u32 = 0;
    pub const BIAS: u32 = 1;
    pub const ROTATION: u32 = 2;
    pub const FLIP: u32 = 3;
    pub const BLUR: u32 = 4;
    pub const GHOST: u32 = 5;
    pub const GIBBS: u32 = 6;
    pub const NOISE: u32 = 7;
}

impl AugmentSpec {
    /// Every transform switched off.
    pub fn disabled() -> Self {
        let mut s = Self::default();
        s.elastic.enabled = false;
        s.bias_field.enabled = false;
        s.rotation.enabled = false;
        s.flip.enabled = false;
        s.blur.enabled = false;
        s.motion_ghost.enabled = false;
        s.gibbs_ringing.enabled = false;
        s.noise.enabled = false;
        s
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("elastic", self.elastic.probability)?;
        check_probability("bias_field", self.bias_field.probability)?;
        check_probability("rotation", self.rotation.probability)?;
        check_probability("flip", self.flip.probability)?;
        check_probability("blur", self.blur.probability)?;
        check_probability("motion_ghost", self.motion_ghost.probability)?;
        check_probability("gibbs_ringing", self.gibbs_ringing.probability)?;
        check_probability("noise", self.noise.probability)?;
        if !(self.elastic.control_spacing_mm > 0.0) {
            return Err(Error::invalid("elastic control spacing must be positive"));
        }
        check_range("elastic displacement", [0.0, self.elastic.max_displacement_mm])?;
        check_range("bias amplitude", [0.0, self.bias_field.max_amplitude])?;
        if self.bias_field.max_amplitude >= 1.0 {
            return Err(Error::invalid(
                "bias amplitude must stay below 1 to keep the field positive",
            ));
        }
        check_range("rotation", [0.0, self.rotation.max_degrees])?;
        check_range("blur sigma", self.blur.sigma_mm)?;
        if self.motion_ghost.ghosts[0] < 2 || self.motion_ghost.ghosts[0] > self.motion_ghost.ghosts[1] {
            return Err(Error::invalid(
                "ghost count range must start at 2 or more and be ordered",
            ));
        }
        if !(0.0..=1.0).contains(&self.motion_ghost.max_intensity) {
            return Err(Error::invalid("ghost intensity must lie in [0, 1]"));
        }
        if self.motion_ghost.enabled && self.motion_ghost.axes.is_empty() {
            return Err(Error::invalid("motion ghosting needs at least one phase-encode axis"));
        }
        let g = self.gibbs_ringing.retain_fraction;
        check_range("gibbs retain fraction", g)?;
        if !(g[0] > 0.0 && g[1] <= 1.0) {
            return Err(Error::invalid("k-space retention must lie in (0, 1]"));
        }
        check_range("additive noise sigma", [0.0, self.noise.max_additive_sigma])?;
        check_range("multiplicative noise sigma", [0.0, self.noise.max_multiplicative_sigma])?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub control_spacing_mm: f64,
    /// Control nodes per axis; node `m` sits at `(m − 1)·spacing` mm from voxel 0.
    pub grid: [usize; 3],
    /// Displacement (mm) per node, i fastest.
    pub displacements: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasParams {
    pub order: usize,
    /// Coefficients of the monomials of total degree 1..=order, in
    /// [`bias_monomials`] order.
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhostParams {
    pub n_ghosts: usize,
    pub intensity: f64,
    pub axis: Axis,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub additive_sigma: f64,
    pub multiplicative_sigma: f64,
    pub seed: u64,
}

/// Everything needed to replay an augmentation exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AppliedParams {
    pub scan_id: String,
    pub master_seed: u64,
    pub elastic: Option<ElasticParams>,
    pub rotation_degrees: Option<[f64; 3]>,
    pub flip: Option<[bool; 3]>,
    pub bias_field: Option<BiasParams>,
    pub blur_sigma_mm: Option<f64>,
    pub motion_ghost: Option<GhostParams>,
    pub gibbs_retain_fraction: Option<f64>,
    pub noise: Option<NoiseParams>,
}

fn transform_rng(spec: &AugmentSpec, scan_id: &str, index: u32) -> ChaCha8Rng {
    keyed_rng(spec.master_seed, &[scan_id.as_bytes(), &index.to_le_bytes()])
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Chooses whether each enabled transform fires and with which parameters.
pub fn sample_params(spec: &AugmentSpec, dims: [usize; 3], spacing: [f64; 3], scan_id: &str) -> Result<AppliedParams> {
    spec.validate()?;
    let mut out = AppliedParams {
        scan_id: scan_id.to_string(),
        master_seed: spec.master_seed,
        ..AppliedParams::default()
    };
    let fires = |rng: &mut ChaCha8Rng, p: f64| rng.random::<f64>() < p;

    if spec.elastic.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::ELASTIC);
        if fires(&mut rng, spec.elastic.probability) {
            let delta = spec.elastic.control_spacing_mm;
            let grid: [usize; 3] = std::array::from_fn(|a| {
                let extent = (dims[a] - 1) as f64 * spacing[a];
                (extent / delta).floor() as usize + 4
            });
            let n = grid[0] * grid[1] * grid[2];
            let max = spec.elastic.max_displacement_mm;
            let displacements = (0..n)
                .map(|_| {
                    // uniform in the ball of radius max
                    loop {
                        let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                        if r2 <= 1.0 {
                            break d.map(|x| x * max);
                        }
                    }
                })
                .collect();
            out.elastic = Some(ElasticParams {
                control_spacing_mm: delta,
                grid,
                displacements,
            });
        }
    }
    if spec.bias_field.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::BIAS);
        if fires(&mut rng, spec.bias_field.probability) {
            let terms = bias_monomials(spec.bias_field.order).len();
            let amp = rng.random_range(0.0..=spec.bias_field.max_amplitude);
            // |Σ c·m| ≤ amp on [−1, 1]³ since every monomial is bounded by 1
            let coefficients = (0..terms)
                .map(|_| rng.random_range(-1.0..=1.0) * amp / terms.max(1) as f64)
                .collect();
            out.bias_field = Some(BiasParams {
                order: spec.bias_field.order,
                coefficients,
            });
        }
    }
    if spec.rotation.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::ROTATION);
        if fires(&mut rng, spec.rotation.probability) {
            let m = spec.rotation.max_degrees;
            out.rotation_degrees = Some(std::array::from_fn(|_| draw(&mut rng, [-m, m])));
        }
    }
    if spec.flip.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::FLIP);
        let mut flips = [false; 3];
        for a in Axis::ALL {
            let roll = fires(&mut rng, spec.flip.probability);
            if spec.flip.axes.contains(&a) {
                flips[a.index()] = roll;
            }
        }
        if flips.iter().any(|&f| f) {
            out.flip = Some(flips);
        }
    }
    if spec.blur.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::BLUR);
        if fires(&mut rng, spec.blur.probability) {
            out.blur_sigma_mm = Some(draw(&mut rng, spec.blur.sigma_mm));
        }
    }
    if spec.motion_ghost.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::GHOST);
        if fires(&mut rng, spec.motion_ghost.probability) {
            let g = spec.motion_ghost.ghosts;
            let axis = spec.motion_ghost.axes[rng.random_range(0..spec.motion_ghost.axes.len())];
            out.motion_ghost = Some(GhostParams {
                n_ghosts: rng.random_range(g[0]..=g[1]),
                intensity: draw(&mut rng, [0.0, spec.motion_ghost.max_intensity]),
                axis,
            });
        }
    }
    if spec.gibbs_ringing.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::GIBBS);
        if fires(&mut rng, spec.gibbs_ringing.probability) {
            out.gibbs_retain_fraction = Some(draw(&mut rng, spec.gibbs_ringing.retain_fraction));
        }
    }
    if spec.noise.enabled {
        let mut rng = transform_rng(spec, scan_id, stream::NOISE);
        if fires(&mut rng, spec.noise.probability) {
            out.noise = Some(NoiseParams {
                additive_sigma: draw(&mut rng, [0.0, spec.noise.max_additive_sigma]),
                multiplicative_sigma: draw(&mut rng, [0.0, spec.noise.max_multiplicative_sigma]),
                seed: rng.random(),
            });
        }
    }
    Ok(out)
}

/// Samples parameters for `scan_id` and applies them.
pub fn apply_augmentation(
    v: &Volume3D,
    m: &LabelMask,
    spec: &AugmentSpec,
    scan_id: &str,
) -> Result<(Volume3D, LabelMask, AppliedParams)> {
    v.geometry().ensure_matches(m.geometry(), "augmentation mask")?;
    let params = sample_params(spec, v.dims(), v.spacing(), scan_id)?;
    let (v2, m2) = apply_params(v, m, &params)?;
    Ok((v2, m2, params))
}

/// Replays a recorded augmentation: spatial transforms first, then intensity.
pub fn apply_params(v: &Volume3D, m: &LabelMask, p: &AppliedParams) -> Result<(Volume3D, LabelMask)> {
    v.geometry().ensure_matches(m.geometry(), "augmentation mask")?;
    let spatial = SpatialParams {
        elastic: p.elastic.clone(),
        rotation_degrees: p.rotation_degrees,
        flip: p.flip,
    };
    let (mut img, mask) = spatial_transform(v, m, &spatial)?;
    if let Some(b) = &p.bias_field {
        img = bias_field(&img, b)?;
    }
    if let Some(s) = p.blur_sigma_mm {
        img = blur(&img, s)?;
    }
    if let Some(g) = p.motion_ghost {
        img = motion_ghost(&img, g.n_ghosts, g.intensity, g.axis)?;
    }
    if let Some(r) = p.gibbs_retain_fraction {
        img = gibbs_ringing(&img, r)?;
    }
    if let Some(n) = p.noise {
        img = noise_add_mult(&img, n.additive_sigma, n.multiplicative_sigma, n.seed)?;
    }
    Ok((img, mask))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpatialParams {
    pub elastic: Option<ElasticParams>,
    pub rotation_degrees: Option<[f64; 3]>,
    pub flip: Option<[bool; 3]>,
}

fn bspline_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        (1.0 - u).powi(3) / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Per-index first control node and weights along one axis.
fn axis_weights(n: usize, spacing: f64, delta: f64, grid: usize) -> Result<Vec<(usize, [f64; 4])>> {
    (0..n)
        .map(|i| {
            let t = i as f64 * spacing / delta + 1.0;
            let base = t.floor() as usize - 1;
            if base + 3 >= grid {
                return Err(Error::invalid("elastic control grid does not cover the volume"));
            }
            Ok((base, bspline_weights(t - t.floor())))
        })
        .collect()
}

fn rotation_matrix(deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [a, b, c] = deg.map(f64::to_radians);
    let rx = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rz = [[c.cos(), -c.sin(), 0.0], [c.sin(), c.cos(), 0.0], [0.0, 0.0, 1.0]];
    let mul = |x: [[f64; 3]; 3], y: [[f64; 3]; 3]| {
        let mut o = [[0.0; 3]; 3];
        for r in 0..3 {
            for col in 0..3 {
                o[r][col] = (0..3).map(|t| x[r][t] * y[t][col]).sum();
            }
        }
        o
    };
    mul(rz, mul(ry, rx))
}

/// Applies flip, then rotation about the field-of-view center, then elastic
/// displacement, by pulling every output voxel back to a source coordinate.
/// The image is sampled trilinearly, the mask by nearest neighbour.
pub fn spatial_transform(v: &Volume3D, m: &LabelMask, p: &SpatialParams) -> Result<(Volume3D, LabelMask)> {
    v.geometry().ensure_matches(m.geometry(), "augmentation mask")?;
    if p.elastic.is_none() && p.rotation_degrees.is_none() && p.flip.is_none() {
        return Ok((v.clone(), m.clone()));
    }
    let g = *v.geometry();
    let dims = g.dims;
    let sp = g.spacing;
    let center: [f64; 3] = std::array::from_fn(|a| (dims[a] as f64 - 1.0) / 2.0);
    let elastic = match &p.elastic {
        Some(e) => {
            if e.displacements.len() != e.grid[0] * e.grid[1] * e.grid[2] {
                return Err(Error::invalid("elastic displacement count does not match its grid"));
            }
            let w: Vec<Vec<(usize, [f64; 4])>> = (0..3)
                .map(|a| axis_weights(dims[a], sp[a], e.control_spacing_mm, e.grid[a]))
                .collect::<Result<_>>()?;
            Some((e, w))
        }
        None => None,
    };
    let rot_t = p.rotation_degrees.map(|d| {
        let r = rotation_matrix(d);
        // inverse of a rotation is its transpose
        std::array::from_fn::<[f64; 3], 3, _>(|row| std::array::from_fn(|col| r[col][row]))
    });

    let source = |lin: usize| -> [f64; 3] {
        let idx = g.unravel(lin);
        let mut q = [idx.i as f64, idx.j as f64, idx.k as f64];
        if let Some((e, w)) = &elastic {
            let (bi, wi) = w[0][idx.i];
            let (bj, wj) = w[1][idx.j];
            let (bk, wk) = w[2][idx.k];
            let mut d = [0.0; 3];
            for (c, wc) in wk.iter().enumerate() {
                for (b, wb) in wj.iter().enumerate() {
                    let wbc = wb * wc;
                    let row = e.grid[0] * ((bj + b) + e.grid[1] * (bk + c));
                    for (a, wa) in wi.iter().enumerate() {
                        let node = e.displacements[row + bi + a];
                        let wt = wa * wbc;
                        d[0] += wt * node[0];
                        d[1] += wt * node[1];
                        d[2] += wt * node[2];
                    }
                }
            }
            for a in 0..3 {
                q[a] += d[a] / sp[a];
            }
        }
        if let Some(rt) = &rot_t {
            let off: [f64; 3] = std::array::from_fn(|a| (q[a] - center[a]) * sp[a]);
            for a in 0..3 {
                let r: f64 = (0..3).map(|t| rt[a][t] * off[t]).sum();
                q[a] = center[a] + r / sp[a];
            }
        }
        if let Some(f) = p.flip {
            for a in 0..3 {
                if f[a] {
                    q[a] = (dims[a] - 1) as f64 - q[a];
                }
            }
        }
        q
    };

    let coords: Vec<[f64; 3]> = (0..g.len()).into_par_iter().map(source).collect();
    let img: Vec<f64> = coords
        .par_iter()
        .map(|&q| sample_trilinear(v.data(), dims, q))
        .collect();
    let mask: Vec<u8> = coords
        .par_iter()
        .map(|&q| {
            let inside = (0..3).all(|a| q[a] >= -0.5 && q[a] < dims[a] as f64 - 0.5);
            if !inside {
                return 0;
            }
            let r: [usize; 3] = std::array::from_fn(|a| (q[a].round().max(0.0) as usize).min(dims[a] - 1));
            m.data()[g.linear(r[0], r[1], r[2])]
        })
        .collect();
    Ok((Volume3D::new(g, img)?, LabelMask::new(g, mask)?))
}

pub fn flip(v: &Volume3D, m: &LabelMask, axes: [bool; 3]) -> Result<(Volume3D, LabelMask)> {
    spatial_transform(
        v,
        m,
        &SpatialParams {
            flip: Some(axes),
            ..SpatialParams::default()
        },
    )
}

pub fn rotate(v: &Volume3D, m: &LabelMask, degrees: [f64; 3]) -> Result<(Volume3D, LabelMask)> {
    spatial_transform(
        v,
        m,
        &SpatialParams {
            rotation_degrees: Some(degrees),
            ..SpatialParams::default()
        },
    )
}

pub fn elastic_deform(v: &Volume3D, m: &LabelMask, params: &ElasticParams) -> Result<(Volume3D, LabelMask)> {
    spatial_transform(
        v,
        m,
        &SpatialParams {
            elastic: Some(params.clone()),
            ..SpatialParams::default()
        },
    )
}

/// Exponents (a, b, c) of the monomials x^a·y^b·z^c with 1 ≤ a+b+c ≤ order.
pub fn bias_monomials(order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for total in 1..=order {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

/// Multiplies by `1 + Σ c·x^a y^b z^c` over coordinates scaled to [−1, 1],
/// renormalized to spatial mean 1.
pub fn bias_field(v: &Volume3D, p: &BiasParams) -> Result<Volume3D> {
    let monos = bias_monomials(p.order);
    if monos.len() != p.coefficients.len() {
        return Err(Error::invalid(format!(
            "order {} bias field needs {} coefficients, got {}",
            p.order,
            monos.len(),
            p.coefficients.len()
        )));
    }
    let g = *v.geometry();
    let scaled = |i: usize, n: usize| {
        if n > 1 {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    let field: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|lin| {
            let idx = g.unravel(lin);
            let x = [
                scaled(idx.i, g.dims[0]),
                scaled(idx.j, g.dims[1]),
                scaled(idx.k, g.dims[2]),
            ];
            1.0 + monos
                .iter()
                .zip(&p.coefficients)
                .map(|(e, c)| c * x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32))
                .sum::<f64>()
        })
        .collect();
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    if !(mean > 0.0) || field.iter().any(|&f| f <= 0.0) {
        return Err(Error::invalid("bias field is not strictly positive"));
    }
    let data = v.data().iter().zip(&field).map(|(x, f)| x * f / mean).collect();
    Volume3D::new(g, data)
}

/// Gaussian blur with standard deviation `sigma_mm`; zero is the identity.
pub fn blur(v: &Volume3D, sigma_mm: f64) -> Result<Volume3D> {
    if !(sigma_mm >= 0.0 && sigma_mm.is_finite()) {
        return Err(Error::invalid(format!("blur sigma {sigma_mm} must be non-negative")));
    }
    if sigma_mm == 0.0 {
        return Ok(v.clone());
    }
    let sp = v.spacing();
    let data = gaussian_blur(v.data(), v.dims(), std::array::from_fn(|a| sigma_mm / sp[a]));
    Volume3D::new(*v.geometry(), data)
}

/// In-place FFT of every line along `axis`.
fn fft_axis(data: &mut [Complex<f64>], dims: [usize; 3], axis: usize, inverse: bool) {
    let n = dims[axis];
    if n < 2 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let starts: Vec<usize> = (0..data.len()).filter(|&idx| (idx / stride) % n == 0).collect();
    let lines: Vec<Vec<Complex<f64>>> = starts
        .par_iter()
        .map(|&s| {
            let mut line: Vec<Complex<f64>> = (0..n).map(|t| data[s + t * stride]).collect();
            fft.process(&mut line);
            line
        })
        .collect();
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    for (s, line) in starts.iter().zip(lines) {
        for (t, x) in line.into_iter().enumerate() {
            data[s + t * stride] = x * scale;
        }
    }
}

fn spectrum(v: &Volume3D) -> Vec<Complex<f64>> {
    let mut c: Vec<Complex<f64>> = v.data().iter().map(|&x| Complex::new(x, 0.0)).collect();
    for a in 0..3 {
        fft_axis(&mut c, v.dims(), a, false);
    }
    c
}

fn from_spectrum(v: &Volume3D, mut c: Vec<Complex<f64>>) -> Result<Volume3D> {
    for a in 0..3 {
        fft_axis(&mut c, v.dims(), a, true);
    }
    Volume3D::new(*v.geometry(), c.into_iter().map(|z| z.re).collect())
}

/// Signed frequency of FFT bin `t` on a length-`n` axis.
fn signed_freq(t: usize, n: usize) -> i64 {
    if t <= n / 2 {
        t as i64
    } else {
        t as i64 - n as i64
    }
}

/// Keeps the centered low-pass box |f| ≤ ⌊retain·N/2⌋ per axis.
pub fn gibbs_ringing(v: &Volume3D, retain_fraction: f64) -> Result<Volume3D> {
    if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "retain fraction {retain_fraction} must lie in (0, 1]"
        )));
    }
    let dims = v.dims();
    let cut: [i64; 3] = std::array::from_fn(|a| (retain_fraction * dims[a] as f64 / 2.0).floor() as i64);
    let mut c = spectrum(v);
    let g = *v.geometry();
    for (lin, z) in c.iter_mut().enumerate() {
        let idx = g.unravel(lin);
        let f = [
            signed_freq(idx.i, dims[0]),
            signed_freq(idx.j, dims[1]),
            signed_freq(idx.k, dims[2]),
        ];
        if (0..3).any(|a| f[a].abs() > cut[a]) {
            *z = Complex::new(0.0, 0.0);
        }
    }
    from_spectrum(v, c)
}

/// Scales every k-space line whose index along `axis` is congruent to
/// `n_ghosts/2` modulo `n_ghosts` by `1 − intensity`. The DC line is never
/// touched, so the mean is preserved.
pub fn motion_ghost(v: &Volume3D, n_ghosts: usize, intensity: f64, axis: Axis) -> Result<Volume3D> {
    if n_ghosts < 2 {
        return Err(Error::invalid(format!(
            "motion ghosting needs at least 2 ghosts, got {n_ghosts}"
        )));
    }
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::invalid(format!("ghost intensity {intensity} outside [0, 1]")));
    }
    if intensity == 0.0 {
        return Ok(v.clone());
    }
    let a = axis.index();
    let mut c = spectrum(v);
    let g = *v.geometry();
    for (lin, z) in c.iter_mut().enumerate() {
        let idx = g.unravel(lin);
        let t = [idx.i, idx.j, idx.k][a];
        if t % n_ghosts == n_ghosts / 2 {
            *z *= 1.0 - intensity;
        }
    }
    from_spectrum(v, c)
}

/// `I·(1 + ε_mult) + ε_add` with independent Gaussian draws per voxel.
pub fn noise_add_mult(v: &Volume3D, additive_sigma: f64, multiplicative_sigma: f64, seed: u64) -> Result<Volume3D> {
    if !(additive_sigma >= 0.0 && multiplicative_sigma >= 0.0) {
        return Err(Error::invalid("noise sigmas must be non-negative"));
    }
    if additive_sigma == 0.0 && multiplicative_sigma == 0.0 {
        return Ok(v.clone());
    }
    let mut rng = keyed_rng(seed, &[b"noise"]);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let data = v
        .data()
        .iter()
        .map(|&x| {
            let em = multiplicative_sigma * std.sample(&mut rng);
            let ea = additive_sigma * std.sample(&mut rng);
            x * (1.0 + em) + ea
        })
        .collect();
    Volume3D::new(*v.geometry(), data)
}
