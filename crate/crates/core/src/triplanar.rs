//! Tri-planar decomposition: thickened slices along the three orthogonal
//! views, per-view probability volumes, and multiplicative fusion.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Geometry, LabelMask, Volume3D};

/// Default fusion threshold: every view at 0.5 gives 0.5³.
pub const DEFAULT_FUSION_TAU: f64 = 0.125;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Sagittal,
    Coronal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Sagittal, View::Coronal];

    /// Canonical axis held fixed by slices of this view.
    pub fn normal_axis(self) -> usize {
        match self {
            View::Sagittal => 0,
            View::Coronal => 1,
            View::Axial => 2,
        }
    }

    /// Canonical axes spanning the plane, fastest first.
    pub fn plane_axes(self) -> [usize; 2] {
        match self {
            View::Sagittal => [1, 2],
            View::Coronal => [0, 2],
            View::Axial => [0, 1],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Sagittal => "sagittal",
            View::Coronal => "coronal",
        }
    }

    pub fn plane_dims(self, dims: [usize; 3]) -> (usize, usize) {
        let [u, v] = self.plane_axes();
        (dims[u], dims[v])
    }

    pub fn slice_count(self, dims: [usize; 3]) -> usize {
        dims[self.normal_axis()]
    }

    /// Linear volume index of in-plane pixel (u, v) on slice `index`.
    #[inline]
    pub(crate) fn voxel(self, geom: &Geometry, index: usize, u: usize, v: usize) -> usize {
        match self {
            View::Sagittal => geom.linear(index, u, v),
            View::Coronal => geom.linear(u, index, v),
            View::Axial => geom.linear(u, v, index),
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        View::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown view {s:?}")))
    }
}

/// A 2D scalar image, `u` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u + self.width * v]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn extract_plane(v: &Volume3D, view: View, index: usize) -> Plane {
    let g = v.geometry();
    let (w, h) = view.plane_dims(g.dims);
    let mut data = Vec::with_capacity(w * h);
    for pv in 0..h {
        for pu in 0..w {
            data.push(v.data()[view.voxel(g, index, pu, pv)]);
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}

/// Three consecutive planes; `channels[1]` is the central plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ThickSlice {
    pub view: View,
    pub index: usize,
    /// In-plane pixel spacing.
    pub spacing_mm: f64,
    pub channels: [Plane; 3],
}

impl ThickSlice {
    pub fn center(&self) -> &Plane {
        &self.channels[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.channels[1].width, self.channels[1].height)
    }
}

fn ensure_canonical(g: &Geometry) -> Result<()> {
    if g.is_isotropic_cube() {
        Ok(())
    } else {
        Err(Error::GeometryMismatch(format!(
            "tri-planar slicing needs a cubic isotropic grid, got dims {:?} spacing {:?}",
            g.dims, g.spacing
        )))
    }
}

/// Thick slice centred on plane `index`; edge planes are replicated at the
/// volume boundary.
pub fn thick_slice(v: &Volume3D, view: View, index: usize) -> Result<ThickSlice> {
    let n = view.slice_count(v.dims());
    if index >= n {
        return Err(Error::invalid(format!("slice index {index} out of range 0..{n}")));
    }
    let prev = index.saturating_sub(1);
    let next = (index + 1).min(n - 1);
    Ok(ThickSlice {
        view,
        index,
        spacing_mm: v.spacing()[view.plane_axes()[0]],
        channels: [
            extract_plane(v, view, prev),
            extract_plane(v, view, index),
            extract_plane(v, view, next),
        ],
    })
}

/// All thick slices of one view in plane order.
pub fn extract_thick_slices(v: &Volume3D, view: View) -> Result<Vec<ThickSlice>> {
    ensure_canonical(v.geometry())?;
    (0..view.slice_count(v.dims()))
        .map(|k| thick_slice(v, view, k))
        .collect()
}

/// Per-voxel CMB probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVolume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl ProbabilityVolume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "probability volume has {} values, dims {:?} need {}",
                data.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        if let Some(bad) = data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Self {
        Self {
            data: vec![value; geometry.len()],
            geometry,
        }
    }

    pub fn from_mask(m: &LabelMask) -> Self {
        Self {
            geometry: *m.geometry(),
            data: m.data().iter().map(|&b| f32::from(b)).collect(),
        }
    }

    pub fn from_volume(v: &Volume3D) -> Result<Self> {
        Self::new(*v.geometry(), v.data().iter().map(|&x| x as f32).collect())
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D::new(self.geometry, self.data.iter().map(|&p| f64::from(p)).collect())
            .expect("probabilities are finite")
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, view: View, index: usize) -> Plane {
        let g = &self.geometry;
        let (w, h) = view.plane_dims(g.dims);
        let mut data = Vec::with_capacity(w * h);
        for pv in 0..h {
            for pu in 0..w {
                data.push(f64::from(self.data[view.voxel(g, index, pu, pv)]));
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    }
}

/// Stacks per-slice predictions back into a volume with the given geometry.
pub fn reassemble_view(planes: &[Plane], view: View, geometry: &Geometry) -> Result<ProbabilityVolume> {
    geometry.validate()?;
    let n = view.slice_count(geometry.dims);
    if planes.len() != n {
        return Err(Error::GeometryMismatch(format!(
            "{view} view needs {n} planes, got {}",
            planes.len()
        )));
    }
    let (w, h) = view.plane_dims(geometry.dims);
    let mut data = vec![0.0f32; geometry.len()];
    for (index, plane) in planes.iter().enumerate() {
        if plane.width != w || plane.height != h || plane.data.len() != w * h {
            return Err(Error::GeometryMismatch(format!(
                "plane {index} is {}x{}, expected {w}x{h}",
                plane.width, plane.height
            )));
        }
        for pv in 0..h {
            for pu in 0..w {
                let p = plane.data[pu + w * pv];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!(
                        "probability {p} outside [0, 1] on plane {index}"
                    )));
                }
                data[view.voxel(geometry, index, pu, pv)] = p as f32;
            }
        }
    }
    Ok(ProbabilityVolume {
        geometry: *geometry,
        data,
    })
}

/// Product of three values, multiplied in sorted order so the result does
/// not depend on argument order.
#[inline]
pub fn fuse_values(a: f32, b: f32, c: f32) -> f32 {
    let (mut x, mut y, mut z) = (a, b, c);
    if x > y {
        std::mem::swap(&mut x, &mut y);
    }
    if y > z {
        std::mem::swap(&mut y, &mut z);
    }
    if x > y {
        std::mem::swap(&mut x, &mut y);
    }
    (f64::from(x) * f64::from(y) * f64::from(z)) as f32
}

/// Voxel-wise product of the three view probabilities.
pub fn fuse_views(
    axial: &ProbabilityVolume,
    sagittal: &ProbabilityVolume,
    coronal: &ProbabilityVolume,
) -> Result<ProbabilityVolume> {
    axial
        .geometry
        .ensure_matches(&sagittal.geometry, "fusing axial and sagittal")?;
    axial
        .geometry
        .ensure_matches(&coronal.geometry, "fusing axial and coronal")?;
    let data = axial
        .data
        .par_iter()
        .zip(sagittal.data.par_iter())
        .zip(coronal.data.par_iter())
        .map(|((&a, &s), &c)| fuse_values(a, s, c))
        .collect();
    Ok(ProbabilityVolume {
        geometry: axial.geometry,
        data,
    })
}

/// Labels voxels with probability strictly above `tau`.
pub fn binarize_fused(p: &ProbabilityVolume, tau: f64) -> Result<LabelMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("fusion threshold {tau} must lie in (0, 1)")));
    }
    let data = p.data.iter().map(|&x| u8::from(f64::from(x) > tau)).collect();
    LabelMask::new(p.geometry, data)
}

/// Produces the probability plane for the central channel of a thick slice.
pub trait SliceSegmenter: Send + Sync {
    fn segment(&self, slice: &ThickSlice) -> Result<Plane>;

    fn name(&self) -> &str;
}

/// Runs one segmenter over every slice of a view and reassembles the result.
/// Slices are independent work items; the output does not depend on scheduling.
pub fn segment_view(v: &Volume3D, view: View, segmenter: &dyn SliceSegmenter) -> Result<ProbabilityVolume> {
    ensure_canonical(v.geometry())?;
    let n = view.slice_count(v.dims());
    let (w, h) = view.plane_dims(v.dims());
    let planes = (0..n)
        .into_par_iter()
        .map(|k| {
            let slice = thick_slice(v, view, k)?;
            let out = segmenter.segment(&slice)?;
            if out.width != w || out.height != h || out.data.len() != w * h {
                return Err(Error::GeometryMismatch(format!(
                    "segmenter {} returned {}x{} for a {w}x{h} slice",
                    segmenter.name(),
                    out.width,
                    out.height
                )));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    reassemble_view(&planes, view, v.geometry())
}

/// One segmenter per view, as three separately trained models would be.
pub struct TriplanarSegmenters<'a> {
    pub axial: &'a dyn SliceSegmenter,
    pub sagittal: &'a dyn SliceSegmenter,
    pub coronal: &'a dyn SliceSegmenter,
}

impl<'a> TriplanarSegmenters<'a> {
    pub fn same(s: &'a dyn SliceSegmenter) -> Self {
        Self {
            axial: s,
            sagittal: s,
            coronal: s,
        }
    }

    pub fn for_view(&self, view: View) -> &'a dyn SliceSegmenter {
        match view {
            View::Axial => self.axial,
            View::Sagittal => self.sagittal,
            View::Coronal => self.coronal,
        }
    }
}

/// Per-view probability volumes in [`View::ALL`] order.
pub fn segment_triplanar(v: &Volume3D, segs: &TriplanarSegmenters) -> Result<[ProbabilityVolume; 3]> {
    let ax = segment_view(v, View::Axial, segs.axial)?;
    let sag = segment_view(v, View::Sagittal, segs.sagittal)?;
    let cor = segment_view(v, View::Coronal, segs.coronal)?;
    Ok([ax, sag, cor])
}
