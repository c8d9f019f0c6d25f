//! Separable Gaussian smoothing on dense grids with edge replication.

use rayon::prelude::*;

/// Normalized kernel truncated at 3σ; `sigma_px <= 0` gives the unit kernel.
pub(crate) fn gaussian_kernel(sigma_px: f64) -> Vec<f64> {
    if sigma_px <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma_px).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Convolves `data` (x fastest, shape `dims`) along `axis` with a symmetric kernel.
pub(crate) fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return data.to_vec();
    }
    let half = (kernel.len() / 2) as i64;
    let n = dims[axis] as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; data.len()];
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let pos = ((idx / stride) % dims[axis]) as i64;
        let base = idx as i64 - pos * stride as i64;
        let mut acc = 0.0;
        for (t, w) in kernel.iter().enumerate() {
            let q = (pos + t as i64 - half).clamp(0, n - 1);
            acc += w * data[(base + q * stride as i64) as usize];
        }
        *o = acc;
    });
    out
}

/// Isotropic Gaussian blur over the axes of `dims` that have more than one sample.
pub(crate) fn gaussian_blur(data: &[f64], dims: [usize; 3], sigma_px: [f64; 3]) -> Vec<f64> {
    let mut cur = data.to_vec();
    for axis in 0..3 {
        if dims[axis] > 1 && sigma_px[axis] > 0.0 {
            cur = convolve_axis(&cur, dims, axis, &gaussian_kernel(sigma_px[axis]));
        }
    }
    cur
}
