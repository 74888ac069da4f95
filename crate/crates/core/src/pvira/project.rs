use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::Result;
use crate::field::fft::{self, Direction};
use crate::field::{RegionMask, VectorVolume};

/// Removes the curl-free part of `v` where `mask` is set.
///
/// The Helmholtz split is computed spectrally on the full periodic grid using
/// the symbol of the central difference, so the result is divergence-free
/// under the same stencil that measures it. Modes with a vanishing symbol are
/// kept. The output blends `mask · P(v) + (1 - mask) · v`.
pub fn incompressibility_project(v: &VectorVolume, mask: &RegionMask) -> Result<VectorVolume> {
    let g = *v.geometry();
    g.ensure_matches(mask.geometry(), "velocity/mask")?;
    if mask.weights().iter().all(|w| *w == 0.0) {
        return Ok(v.clone());
    }
    let mut comps: Vec<Vec<Complex64>> = (0..3)
        .map(|a| v.vectors().iter().map(|u| Complex64::new(u[a], 0.0)).collect())
        .collect();
    comps.par_iter_mut().for_each(|c| fft::fft3d(c, g.dims, Direction::Forward));

    let symbol: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            let n = g.dims[a];
            (0..n)
                .map(|m| (2.0 * PI * m as f64 / n as f64).sin() / g.spacing[a])
                .collect()
        })
        .collect();
    let (cx, rest) = comps.split_at_mut(1);
    let (cy, cz) = rest.split_at_mut(1);
    cx[0]
        .par_iter_mut()
        .zip(cy[0].par_iter_mut())
        .zip(cz[0].par_iter_mut())
        .enumerate()
        .for_each(|(idx, ((x, y), z))| {
            let [i, j, k] = g.coords(idx);
            let d = [symbol[0][i], symbol[1][j], symbol[2][k]];
            let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            if d2 < 1e-14 {
                return;
            }
            let dot = (*x * d[0] + *y * d[1] + *z * d[2]) / d2;
            *x -= dot * d[0];
            *y -= dot * d[1];
            *z -= dot * d[2];
        });
    comps.par_iter_mut().for_each(|c| fft::fft3d(c, g.dims, Direction::Inverse));

    let out = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let p = Vector3::new(comps[0][idx].re, comps[1][idx].re, comps[2][idx].re);
            let w = mask.weights()[idx];
            p * w + v.vectors()[idx] * (1.0 - w)
        })
        .collect();
    VectorVolume::new(g, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{divergence, GridGeometry, ScalarVolume};

    fn periodic_diff(vol: &ScalarVolume, axis: usize) -> Vec<f64> {
        let g = vol.geometry();
        (0..g.len())
            .map(|idx| {
                let mut c = g.coords(idx);
                let n = g.dims[axis];
                let i = c[axis];
                c[axis] = (i + 1) % n;
                let up = vol.get(c[0], c[1], c[2]);
                c[axis] = (i + n - 1) % n;
                let down = vol.get(c[0], c[1], c[2]);
                (up - down) / (2.0 * g.spacing[axis])
            })
            .collect()
    }

    fn periodic_potential(g: GridGeometry, phase: f64) -> ScalarVolume {
        let l = [
            g.dims[0] as f64 * g.spacing[0],
            g.dims[1] as f64 * g.spacing[1],
            g.dims[2] as f64 * g.spacing[2],
        ];
        ScalarVolume::from_fn(g, |p| {
            (2.0 * PI * p.x / l[0] + phase).sin() * (4.0 * PI * p.y / l[1]).cos()
                + 0.5 * (2.0 * PI * (p.z / l[2] + p.x / l[0])).cos()
        })
    }

    /// Discrete curl of a periodic vector potential.
    fn swirl(g: GridGeometry) -> VectorVolume {
        let a = [
            periodic_potential(g, 0.1),
            periodic_potential(g, 1.3),
            periodic_potential(g, 2.2),
        ];
        let d = |c: usize, axis: usize| periodic_diff(&a[c], axis);
        let (dzy, dyz, dxz, dzx, dyx, dxy) = (d(2, 1), d(1, 2), d(0, 2), d(2, 0), d(1, 0), d(0, 1));
        VectorVolume::new(
            g,
            (0..g.len())
                .map(|n| Vector3::new(dzy[n] - dyz[n], dxz[n] - dzx[n], dyx[n] - dxy[n]))
                .collect(),
        )
        .unwrap()
    }

    fn rel_diff(a: &VectorVolume, b: &VectorVolume) -> f64 {
        let num: f64 = a.vectors().iter().zip(b.vectors()).map(|(x, y)| (x - y).norm_squared()).sum();
        let den: f64 = b.vectors().iter().map(|y| y.norm_squared()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn identity_on_divergence_free_fields() {
        let g = GridGeometry::new([16, 20, 12], [1.5, 1.2, 2.0], [0.0; 3]).unwrap();
        let v = swirl(g);
        let out = incompressibility_project(&v, &RegionMask::full(g)).unwrap();
        assert!(rel_diff(&out, &v) < 1e-8);
    }

    #[test]
    fn annihilates_gradient_fields() {
        let g = GridGeometry::cube(16, 1.5).unwrap();
        let psi = periodic_potential(g, 0.4);
        let v = VectorVolume::new(
            g,
            {
                let (dx, dy, dz) = (periodic_diff(&psi, 0), periodic_diff(&psi, 1), periodic_diff(&psi, 2));
                (0..g.len()).map(|n| Vector3::new(dx[n], dy[n], dz[n])).collect()
            },
        )
        .unwrap();
        let out = incompressibility_project(&v, &RegionMask::full(g)).unwrap();
        assert!(out.max_norm() < 1e-10 * v.max_norm());
    }

    #[test]
    fn empty_mask_returns_input_exactly() {
        let g = GridGeometry::cube(8, 1.0).unwrap();
        let v = VectorVolume::from_fn(g, |p| Vector3::new(p.x * p.y, p.z, 1.0));
        assert_eq!(incompressibility_project(&v, &RegionMask::empty(g)).unwrap(), v);
    }

    #[test]
    fn projected_field_is_divergence_free_in_the_interior() {
        let g = GridGeometry::cube(24, 1.875).unwrap();
        let v = VectorVolume::from_fn(g, |p| {
            let r2 = p.norm_squared();
            Vector3::new(p.x, 0.5 * p.y, -0.2 * p.z) * (-r2 / 200.0).exp()
        });
        let out = incompressibility_project(&v, &RegionMask::full(g)).unwrap();
        let div = divergence(&out);
        for idx in 0..g.len() {
            if g.is_interior(idx, 1) {
                assert!(div.values()[idx].abs() < 1e-6, "{}", div.values()[idx]);
            }
        }
    }

    #[test]
    fn blend_keeps_outside_values() {
        let g = GridGeometry::cube(8, 1.0).unwrap();
        let v = VectorVolume::from_fn(g, |p| Vector3::new(p.x, p.y, p.z));
        let mask = RegionMask::from_predicate(g, |p| p.x > 0.0);
        let out = incompressibility_project(&v, &mask).unwrap();
        for idx in 0..g.len() {
            if !mask.contains(idx) {
                assert_eq!(out.vectors()[idx], v.vectors()[idx]);
            }
        }
    }
}
