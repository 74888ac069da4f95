//! Finite differences: central in the interior, one-sided first order at the faces.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::geometry::GridGeometry;
use super::volume::{MatrixField, ScalarVolume, VectorVolume};

/// Neighbour offsets and divisor for the derivative along `axis` at voxel `idx`.
#[inline]
fn stencil(g: &GridGeometry, idx: usize, axis: usize) -> (usize, usize, f64) {
    let c = g.coords(idx)[axis];
    let n = g.dims[axis];
    let stride = [1, g.dims[0], g.dims[0] * g.dims[1]][axis];
    let h = g.spacing[axis];
    if c == 0 {
        (idx + stride, idx, h)
    } else if c + 1 == n {
        (idx, idx - stride, h)
    } else {
        (idx + stride, idx - stride, 2.0 * h)
    }
}

/// Spatial gradient of a scalar volume (value per mm).
pub fn gradient(vol: &ScalarVolume) -> VectorVolume {
    let g = *vol.geometry();
    let f = vol.values();
    let grads = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let mut d = Vector3::zeros();
            for a in 0..3 {
                let (p, m, h) = stencil(&g, idx, a);
                d[a] = (f[p] - f[m]) / h;
            }
            d
        })
        .collect();
    VectorVolume::from_raw(g, grads)
}

/// Jacobian of a vector field; row `r` is the gradient of component `r`.
pub fn jacobian(field: &VectorVolume) -> MatrixField {
    let g = *field.geometry();
    let u = field.vectors();
    let mats = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let mut j = Matrix3::zeros();
            for a in 0..3 {
                let (p, m, h) = stencil(&g, idx, a);
                let col = (u[p] - u[m]) / h;
                j.set_column(a, &col);
            }
            j
        })
        .collect();
    MatrixField::from_raw(g, mats)
}

/// Divergence with the same stencils as [`gradient`].
pub fn divergence(field: &VectorVolume) -> ScalarVolume {
    let g = *field.geometry();
    let u = field.vectors();
    let vals = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            (0..3)
                .map(|a| {
                    let (p, m, h) = stencil(&g, idx, a);
                    (u[p][a] - u[m][a]) / h
                })
                .sum()
        })
        .collect();
    ScalarVolume::from_raw(g, vals)
}

/// Determinant of `I + du/dX` at every voxel.
pub fn jacobian_determinant(displacement: &VectorVolume) -> ScalarVolume {
    let j = jacobian(displacement);
    let vals = j
        .matrices()
        .par_iter()
        .map(|m| (Matrix3::identity() + m).determinant())
        .collect();
    ScalarVolume::from_raw(*displacement.geometry(), vals)
}
