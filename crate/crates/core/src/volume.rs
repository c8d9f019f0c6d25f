//! Axis-aligned 3D volumes, world/voxel coordinate mapping, isotropic
//! resampling and intensity normalization.
//!
//! Storage order is fixed: the sagittal index `i` varies fastest, then the
//! coronal index `j`, then the axial index `k`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid every scan is resampled onto before slicing.
pub const DEFAULT_GRID_DIM: usize = 256;
pub const DEFAULT_GRID_SPACING_MM: f64 = 1.0;

const GEOMETRY_TOL: f64 = 1e-6;

/// A point in world (scanner) space, millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        let d = [self.x - other.x, self.y - other.y, self.z - other.z];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for WorldPoint {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<WorldPoint> for [f64; 3] {
    fn from(p: WorldPoint) -> Self {
        p.to_array()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl VoxelIndex {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }
}

/// Continuous voxel coordinate together with whether it falls on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelCoord {
    pub coord: [f64; 3],
    pub inside: bool,
}

/// Grid shape and placement shared by images, masks and probability maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let g = Self { dims, spacing, origin };
        g.validate()?;
        Ok(g)
    }

    /// Cubic grid of `dim` voxels per axis at isotropic `spacing`, origin at zero.
    pub fn cube(dim: usize, spacing: f64) -> Self {
        Self {
            dims: [dim; 3],
            spacing: [spacing; 3],
            origin: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid(format!("dims {:?} must be positive", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "spacing {:?} must be positive and finite",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid(format!("origin {:?} must be finite", self.origin)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> VoxelIndex {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        VoxelIndex::new(i, rest % self.dims[1], rest / self.dims[1])
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        v.i < self.dims[0] && v.j < self.dims[1] && v.k < self.dims[2]
    }

    pub fn world_to_voxel(&self, p: WorldPoint) -> VoxelCoord {
        let p = p.to_array();
        let mut coord = [0.0; 3];
        let mut inside = true;
        for a in 0..3 {
            coord[a] = (p[a] - self.origin[a]) / self.spacing[a];
            // inside the field of view spanned by the voxel cells
            if !(coord[a] >= -0.5 && coord[a] <= self.dims[a] as f64 - 0.5) {
                inside = false;
            }
        }
        VoxelCoord { coord, inside }
    }

    pub fn voxel_to_world(&self, c: [f64; 3]) -> WorldPoint {
        WorldPoint::new(
            self.origin[0] + c[0] * self.spacing[0],
            self.origin[1] + c[1] * self.spacing[1],
            self.origin[2] + c[2] * self.spacing[2],
        )
    }

    pub fn index_to_world(&self, v: VoxelIndex) -> WorldPoint {
        self.voxel_to_world([v.i as f64, v.j as f64, v.k as f64])
    }

    /// Nearest voxel to a world point, if it lies on the grid.
    pub fn nearest_voxel(&self, p: WorldPoint) -> Option<VoxelIndex> {
        let c = self.world_to_voxel(p);
        if !c.inside {
            return None;
        }
        let r = |a: usize| (c.coord[a].round().max(0.0) as usize).min(self.dims[a] - 1);
        Some(VoxelIndex::new(r(0), r(1), r(2)))
    }

    /// World coordinate of the centre of the field of view.
    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (a, v) in c.iter_mut().enumerate() {
            *v = self.origin[a] + 0.5 * (self.dims[a] as f64 - 1.0) * self.spacing[a];
        }
        c
    }

    pub fn is_isotropic_cube(&self) -> bool {
        self.dims[0] == self.dims[1]
            && self.dims[1] == self.dims[2]
            && (self.spacing[0] - self.spacing[1]).abs() <= GEOMETRY_TOL
            && (self.spacing[1] - self.spacing[2]).abs() <= GEOMETRY_TOL
    }

    pub fn matches(&self, other: &Geometry) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= GEOMETRY_TOL
                    && (self.origin[a] - other.origin[a]).abs() <= GEOMETRY_TOL
            })
    }

    pub fn ensure_matches(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?}/{:?}/{:?} vs {:?}/{:?}/{:?}",
                self.dims, self.spacing, self.origin, other.dims, other.spacing, other.origin
            )))
        }
    }
}

/// A scalar intensity volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    geometry: Geometry,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "intensity array has {} values, dims {:?} need {}",
                data.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity at voxel {pos}")));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f64) -> Self {
        Self {
            data: vec![value; geometry.len()],
            geometry,
        }
    }

    pub fn from_fn(geometry: Geometry, f: impl Fn(VoxelIndex) -> f64 + Sync) -> Self {
        let data = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(geometry.unravel(idx)))
            .collect();
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.geometry.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.geometry.linear(i, j, k)]
    }

    #[inline]
    pub fn at(&self, v: VoxelIndex) -> f64 {
        self.get(v.i, v.j, v.k)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn world_to_voxel(&self, p: WorldPoint) -> VoxelCoord {
        self.geometry.world_to_voxel(p)
    }

    pub fn voxel_to_world(&self, c: [f64; 3]) -> WorldPoint {
        self.geometry.voxel_to_world(c)
    }

    /// Trilinear sample at a continuous voxel coordinate. Coordinates are
    /// clamped onto the grid of voxel centres.
    #[inline]
    pub fn sample_trilinear(&self, c: [f64; 3]) -> f64 {
        sample_trilinear(&self.data, self.geometry.dims, c)
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Volume3D {
        Volume3D {
            geometry: self.geometry,
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }
}

#[inline]
pub(crate) fn sample_trilinear(data: &[f64], dims: [usize; 3], c: [f64; 3]) -> f64 {
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    let mut next = [0usize; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        let x = c[a].clamp(0.0, max);
        let f = x.floor();
        base[a] = f as usize;
        frac[a] = x - f;
        next[a] = (base[a] + 1).min(dims[a] - 1);
    }
    let idx = |i: usize, j: usize, k: usize| data[i + dims[0] * (j + dims[1] * k)];
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let c00 = lerp(idx(base[0], base[1], base[2]), idx(next[0], base[1], base[2]), frac[0]);
    let c10 = lerp(idx(base[0], next[1], base[2]), idx(next[0], next[1], base[2]), frac[0]);
    let c01 = lerp(idx(base[0], base[1], next[2]), idx(next[0], base[1], next[2]), frac[0]);
    let c11 = lerp(idx(base[0], next[1], next[2]), idx(next[0], next[1], next[2]), frac[0]);
    let c0 = lerp(c00, c10, frac[1]);
    let c1 = lerp(c01, c11, frac[1]);
    lerp(c0, c1, frac[2])
}

/// Binary voxel labels on a parent volume's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMask {
    geometry: Geometry,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn empty(geometry: Geometry) -> Self {
        Self {
            data: vec![0; geometry.len()],
            geometry,
        }
    }

    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "mask has {} values, dims {:?} need {}",
                data.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { geometry, data })
    }

    /// Labels voxels where `v` is strictly above `threshold`.
    pub fn from_threshold(v: &Volume3D, threshold: f64) -> Self {
        Self {
            geometry: *v.geometry(),
            data: v.data().iter().map(|&x| u8::from(x > threshold)).collect(),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.geometry.linear(i, j, k)] != 0
    }

    #[inline]
    pub fn is_set(&self, idx: usize) -> bool {
        self.data[idx] != 0
    }

    #[inline]
    pub fn set(&mut self, idx: usize, value: bool) {
        self.data[idx] = u8::from(value);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn union_with(&mut self, other: &LabelMask) -> Result<()> {
        self.geometry.ensure_matches(&other.geometry, "mask union")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Resample onto an isotropic grid centred on the input field of view.
///
/// Points outside the input field of view take the input minimum. Inside it,
/// values are trilinear interpolants of the input voxel centres (clamped to
/// the outermost centres within the last half voxel).
pub fn resample_isotropic(v: &Volume3D, target_spacing: f64, target_dims: [usize; 3]) -> Result<Volume3D> {
    if !(target_spacing > 0.0 && target_spacing.is_finite()) {
        return Err(Error::invalid(format!(
            "target spacing {target_spacing} must be positive"
        )));
    }
    if target_dims.contains(&0) {
        return Err(Error::invalid("target dims must be positive"));
    }
    if v.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("resample input has non-finite intensities"));
    }
    let src = v.geometry;
    let center = src.center();
    let mut origin = [0.0; 3];
    for a in 0..3 {
        origin[a] = center[a] - 0.5 * (target_dims[a] as f64 - 1.0) * target_spacing;
    }
    let out_geom = Geometry::new(target_dims, [target_spacing; 3], origin)?;
    if out_geom.matches(&src) {
        return Ok(v.clone());
    }
    let (fill, _) = v.min_max();
    let [nx, ny, _] = target_dims;
    let plane = nx * ny;
    let mut data = vec![0.0; out_geom.len()];
    data.par_chunks_mut(plane).enumerate().for_each(|(k, chunk)| {
        for j in 0..ny {
            for i in 0..nx {
                let w = out_geom.voxel_to_world([i as f64, j as f64, k as f64]);
                let c = src.world_to_voxel(w);
                chunk[i + nx * j] = if c.inside {
                    sample_trilinear(&v.data, src.dims, c.coord)
                } else {
                    fill
                };
            }
        }
    });
    Ok(Volume3D {
        geometry: out_geom,
        data,
    })
}

/// Resample onto the default 256³ grid at 1 mm.
pub fn resample_default(v: &Volume3D) -> Result<Volume3D> {
    resample_isotropic(v, DEFAULT_GRID_SPACING_MM, [DEFAULT_GRID_DIM; 3])
}

/// Result of [`normalize_intensity`].
#[derive(Clone, Debug)]
pub struct Normalized {
    pub volume: Volume3D,
    pub low: f64,
    pub high: f64,
    /// Set when the two percentiles coincide; the volume is then all zeros.
    pub degenerate: bool,
}

/// Percentile by linear interpolation between order statistics.
pub(crate) fn percentile(values: &mut [f64], pct: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = pct / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    let (_, lo_v, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_v = *lo_v;
    if t == 0.0 || hi == lo {
        return lo_v;
    }
    // the (lo+1)-th order statistic is the minimum of the upper partition
    let hi_v = rest.iter().copied().fold(f64::INFINITY, f64::min);
    lo_v + (hi_v - lo_v) * t
}

/// Clamp to the `[lo_pct, hi_pct]` percentile range and map affinely to [0, 1].
pub fn normalize_intensity(v: &Volume3D, lo_pct: f64, hi_pct: f64) -> Result<Normalized> {
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::invalid(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        )));
    }
    let mut scratch = v.data.clone();
    let low = percentile(&mut scratch, lo_pct);
    let high = percentile(&mut scratch, hi_pct);
    if high <= low {
        warn!("degenerate normalization: percentiles coincide at {low}");
        return Ok(Normalized {
            volume: Volume3D::filled(v.geometry, 0.0),
            low,
            high,
            degenerate: true,
        });
    }
    let range = high - low;
    let volume = v.map(|x| ((x.clamp(low, high) - low) / range).clamp(0.0, 1.0));
    Ok(Normalized {
        volume,
        low,
        high,
        degenerate: false,
    })
}

/// Gamma contrast adjustment `x -> x^gamma` on a [0, 1] volume.
pub fn adjust_contrast(v: &Volume3D, gamma: f64) -> Result<Volume3D> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma {gamma} must be positive")));
    }
    if let Some(bad) = v.data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!(
            "contrast adjustment needs intensities in [0, 1], found {bad}"
        )));
    }
    if gamma == 1.0 {
        return Ok(v.clone());
    }
    Ok(v.map(|x| x.powf(gamma)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(geom: Geometry, axis: usize) -> Volume3D {
        Volume3D::from_fn(geom, |v| {
            let w = geom.index_to_world(v).to_array();
            w[axis]
        })
    }

    #[test]
    fn constant_volume_resamples_to_constant() {
        let g = Geometry::new([20, 17, 9], [0.93, 0.93, 1.75], [-3.0, 4.0, 11.0]).unwrap();
        let v = Volume3D::filled(g, 7.0);
        let out = resample_default(&v).unwrap();
        assert_eq!(out.dims(), [256; 3]);
        assert!(out.data().iter().all(|&x| x == 7.0));
    }

    #[test]
    fn coarse_grid_upsamples_to_same_extent() {
        let v = Volume3D::filled(Geometry::cube(128, 2.0), 1.0);
        let out = resample_default(&v).unwrap();
        assert_eq!(out.dims(), [256; 3]);
        assert_eq!(out.spacing(), [1.0; 3]);
        let extent: Vec<f64> = (0..3).map(|a| out.dims()[a] as f64 * out.spacing()[a]).collect();
        assert_eq!(extent, vec![256.0; 3]);
        // centres coincide
        let (a, b) = (v.geometry().center(), out.geometry().center());
        for ax in 0..3 {
            assert!((a[ax] - b[ax]).abs() < 1e-9);
        }
        // the whole output grid lies inside the input field of view
        assert!(out.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn ramp_is_reproduced_inside_field_of_view() {
        let src = Geometry::new([24, 20, 16], [2.0, 1.5, 3.0], [10.0, -5.0, 0.0]).unwrap();
        for axis in 0..3 {
            let v = ramp(src, axis);
            let out = resample_isotropic(&v, 1.0, [64, 48, 64]).unwrap();
            let og = *out.geometry();
            let mut checked = 0;
            for idx in 0..og.len() {
                let vi = og.unravel(idx);
                let w = og.index_to_world(vi);
                let c = src.world_to_voxel(w).coord;
                if (0..3).all(|a| c[a] >= 0.0 && c[a] <= (src.dims[a] - 1) as f64) {
                    let expect = w.to_array()[axis];
                    assert!((out.data()[idx] - expect).abs() < 1e-6);
                    checked += 1;
                }
            }
            assert!(checked > 1000);
        }
    }

    #[test]
    fn outside_field_of_view_is_filled_with_minimum() {
        let v = ramp(Geometry::cube(8, 1.0), 0);
        let out = resample_isotropic(&v, 1.0, [16, 16, 16]).unwrap();
        assert_eq!(out.get(0, 8, 8), 0.0);
        assert_eq!(out.get(15, 8, 8), 0.0);
        assert_eq!(out.get(4, 8, 8), 0.0);
        assert_eq!(out.get(11, 8, 8), 7.0);
    }

    #[test]
    fn resample_is_idempotent_at_target_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Geometry::cube(16, 1.0);
        let data: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
        let v = Volume3D::new(g, data).unwrap();
        let once = resample_isotropic(&v, 1.0, [16; 3]).unwrap();
        let twice = resample_isotropic(&once, 1.0, [16; 3]).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn down_then_up_recovers_smooth_blob() {
        let g = Geometry::cube(64, 1.0);
        let c = g.center();
        let sigma: f64 = 8.0;
        let v = Volume3D::from_fn(g, |vi| {
            let w = g.index_to_world(vi).to_array();
            let r2: f64 = (0..3).map(|a| (w[a] - c[a]).powi(2)).sum();
            100.0 * (-r2 / (2.0 * sigma * sigma)).exp()
        });
        let (lo, hi) = v.min_max();
        for (coarse, n) in [(1.5, 43), (1.75, 37)] {
            let down = resample_isotropic(&v, coarse, [n; 3]).unwrap();
            let up = resample_isotropic(&down, 1.0, [64; 3]).unwrap();
            let worst = v
                .data()
                .iter()
                .zip(up.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst / (hi - lo) < 0.02, "spacing {coarse}: worst {worst}");
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let g = Geometry::cube(2, 1.0);
        let mut v = Volume3D::filled(g, 0.0);
        v.data[3] = f64::NAN;
        assert!(matches!(resample_default(&v), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn normalization_of_uniform_range_is_affine() {
        let g = Geometry::new([101, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3D::new(g, (0..=100).map(f64::from).collect()).unwrap();
        let n = normalize_intensity(&v, 0.0, 100.0).unwrap();
        assert!(!n.degenerate);
        for (x, y) in v.data().iter().zip(n.volume.data()) {
            assert_eq!(*y, x / 100.0);
        }
    }

    #[test]
    fn constant_volume_normalizes_to_zero_with_flag() {
        let v = Volume3D::filled(Geometry::cube(4, 1.0), 3.5);
        let n = normalize_intensity(&v, 1.0, 99.0).unwrap();
        assert!(n.degenerate);
        assert!(n.volume.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bad_percentiles_are_rejected() {
        let v = Volume3D::filled(Geometry::cube(2, 1.0), 1.0);
        assert!(normalize_intensity(&v, 50.0, 50.0).is_err());
        assert!(normalize_intensity(&v, -1.0, 50.0).is_err());
        assert!(normalize_intensity(&v, 1.0, 101.0).is_err());
    }

    #[test]
    fn contrast_examples() {
        let g = Geometry::new([3, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3D::new(g, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(adjust_contrast(&v, 1.0).unwrap(), v);
        let sq = adjust_contrast(&v, 2.0).unwrap();
        assert_eq!(sq.data(), &[0.0, 0.0625, 1.0]);
        for gamma in [0.3, 0.7, 1.9, 4.0] {
            let out = adjust_contrast(&v, gamma).unwrap();
            assert_eq!(out.data()[0], 0.0);
            assert_eq!(out.data()[2], 1.0);
        }
        let bad = Volume3D::new(g, vec![0.0, 1.5, 1.0]).unwrap();
        assert!(adjust_contrast(&bad, 2.0).is_err());
    }

    #[test]
    fn world_voxel_examples() {
        let g = Geometry::new([10, 10, 10], [0.5, 2.0, 1.25], [3.0, -4.0, 7.5]).unwrap();
        let c = g.world_to_voxel(WorldPoint::new(3.0, -4.0, 7.5));
        assert_eq!(c.coord, [0.0; 3]);
        assert!(c.inside);
        let id = Geometry::cube(64, 1.0);
        assert_eq!(
            id.world_to_voxel(WorldPoint::new(10.0, 20.0, 30.0)).coord,
            [10.0, 20.0, 30.0]
        );
        assert!(!id.world_to_voxel(WorldPoint::new(-1.0, 0.0, 0.0)).inside);
    }

    #[test]
    fn world_voxel_round_trip_of_random_points() {
        let g = Geometry::new([90, 70, 50], [0.93, 0.93, 1.75], [-91.2, 104.7, -60.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = WorldPoint::new(
                rng.random_range(-300.0..300.0),
                rng.random_range(-300.0..300.0),
                rng.random_range(-300.0..300.0),
            );
            let back = g.voxel_to_world(g.world_to_voxel(p).coord);
            assert!(p.distance(&back) < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn resample_stays_within_input_range(
            values in proptest::collection::vec(-50.0f64..50.0, 5 * 4 * 3),
            sp in 0.4f64..3.0,
        ) {
            let g = Geometry::new([5, 4, 3], [1.3, 0.9, 2.2], [1.0, 2.0, 3.0]).unwrap();
            let v = Volume3D::new(g, values).unwrap();
            let (lo, hi) = v.min_max();
            let out = resample_isotropic(&v, sp, [7, 6, 5]).unwrap();
            let (olo, ohi) = out.min_max();
            prop_assert!(olo >= lo - 1e-12 && ohi <= hi + 1e-12);
        }

        #[test]
        fn normalized_and_contrasted_stay_in_unit_range(
            values in proptest::collection::vec(-1e3f64..1e3, 27),
            lo in 0.0f64..40.0,
            width in 1.0f64..60.0,
            gamma in 0.1f64..5.0,
        ) {
            let v = Volume3D::new(Geometry::cube(3, 1.0), values).unwrap();
            let n = normalize_intensity(&v, lo, lo + width).unwrap();
            prop_assert!(n.volume.data().iter().all(|x| (0.0..=1.0).contains(x)));
            let c = adjust_contrast(&n.volume, gamma).unwrap();
            prop_assert!(c.data().iter().all(|x| (0.0..=1.0).contains(x)));
            // monotone in the input
            let mut pairs: Vec<(f64, f64)> = v.data().iter().copied().zip(n.volume.data().iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }
}
