//! Separable Gaussian smoothing and dyadic resampling.

use std::ops::{Add, Mul};

use rayon::prelude::*;

use super::geometry::GridGeometry;
use super::volume::{ScalarVolume, VectorVolume};

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Gaussian blur with standard deviation `sigma` (voxels) along every axis,
/// replicating edge values.
pub fn gaussian_blur<T>(g: &GridGeometry, data: &[T], sigma: f64) -> Vec<T>
where
    T: Copy + Send + Sync + Add<Output = T> + Mul<f64, Output = T>,
{
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let n = g.dims[axis] as isize;
        let stride = [1, g.dims[0], g.dims[0] * g.dims[1]][axis];
        let prev = cur;
        cur = (0..prev.len())
            .into_par_iter()
            .map(|idx| {
                let c = g.coords(idx)[axis] as isize;
                let base = idx - c as usize * stride;
                let mut acc = prev[base + c.clamp(0, n - 1) as usize * stride] * k[r as usize];
                for (t, &w) in k.iter().enumerate() {
                    let off = t as isize - r;
                    if off == 0 {
                        continue;
                    }
                    let m = (c + off).clamp(0, n - 1) as usize;
                    acc = acc + prev[base + m * stride] * w;
                }
                acc
            })
            .collect();
    }
    cur
}

pub fn smooth_scalar(vol: &ScalarVolume, sigma: f64) -> ScalarVolume {
    ScalarVolume::from_raw(*vol.geometry(), gaussian_blur(vol.geometry(), vol.values(), sigma))
}

pub fn smooth_vector(vol: &VectorVolume, sigma: f64) -> VectorVolume {
    VectorVolume::from_raw(*vol.geometry(), gaussian_blur(vol.geometry(), vol.vectors(), sigma))
}

/// Anti-aliased subsampling by two onto [`GridGeometry::coarsened`].
pub fn downsample<T>(g: &GridGeometry, data: &[T]) -> (GridGeometry, Vec<T>)
where
    T: Copy + Send + Sync + Add<Output = T> + Mul<f64, Output = T>,
{
    let blurred = gaussian_blur(g, data, 1.0);
    let cg = g.coarsened();
    let out = (0..cg.len())
        .map(|idx| {
            let [i, j, k] = cg.coords(idx);
            let fi = (2 * i).min(g.dims[0] - 1);
            let fj = (2 * j).min(g.dims[1] - 1);
            let fk = (2 * k).min(g.dims[2] - 1);
            blurred[g.index(fi, fj, fk)]
        })
        .collect();
    (cg, out)
}

pub fn downsample_scalar(vol: &ScalarVolume) -> ScalarVolume {
    let (g, v) = downsample(vol.geometry(), vol.values());
    ScalarVolume::from_raw(g, v)
}

/// Resamples a vector field onto `target` by trilinear pull-back.
pub fn resample_vector(vol: &VectorVolume, target: &GridGeometry) -> VectorVolume {
    VectorVolume::from_fn(*target, |p| vol.interpolate(&p))
}

pub fn resample_scalar(vol: &ScalarVolume, target: &GridGeometry) -> ScalarVolume {
    ScalarVolume::from_fn(*target, |p| vol.interpolate(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn blur_preserves_constants_and_linear_interior() {
        let g = GridGeometry::new([16, 12, 10], [1.0; 3], [0.0; 3]).unwrap();
        let c = smooth_scalar(&ScalarVolume::constant(g, 3.0), 1.5);
        assert!(c.values().iter().all(|v| (v - 3.0).abs() < 1e-12));
        let lin = ScalarVolume::from_fn(g, |p| 2.0 * p.x - p.z);
        let s = smooth_scalar(&lin, 1.0);
        for idx in 0..g.len() {
            if g.is_interior(idx, 4) {
                assert!((s.values()[idx] - lin.values()[idx]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn vector_blur_is_componentwise() {
        let g = GridGeometry::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let v = VectorVolume::from_fn(g, |p| Vector3::new(p.x.sin(), p.y * p.y, 1.0));
        let s = smooth_vector(&v, 0.8);
        let sx = smooth_scalar(&v.component(0), 0.8);
        for (a, b) in s.vectors().iter().zip(sx.values()) {
            assert!((a.x - b).abs() < 1e-12);
            assert!((a.z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_shares_origin() {
        let g = GridGeometry::new([9, 8, 4], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).unwrap();
        let d = downsample_scalar(&ScalarVolume::constant(g, 1.0));
        assert_eq!(d.geometry().dims, [5, 4, 2]);
        assert_eq!(d.geometry().origin, g.origin);
        assert_eq!(d.geometry().spacing, [2.0, 4.0, 6.0]);
    }
}
