use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned regular grid in a right-handed world frame (mm).
///
/// Voxel `(i, j, k)` has its center at `origin + spacing * (i, j, k)`; storage
/// order is x-fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let g = GridGeometry {
            dims,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    /// Isotropic cube centered on the world origin.
    pub fn cube(n: usize, spacing: f64) -> Result<Self> {
        let half = 0.5 * (n as f64 - 1.0) * spacing;
        Self::new([n; 3], [spacing; 3], [-half; 3])
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.dims[a] < 2 {
                return Err(Error::Geometry(format!(
                    "dimension {a} has {} voxels, need at least 2",
                    self.dims[a]
                )));
            }
            if !(self.spacing[a] > 0.0 && self.spacing[a].is_finite()) {
                return Err(Error::Geometry(format!(
                    "spacing along axis {a} is {}, must be positive",
                    self.spacing[a]
                )));
            }
            if !self.origin[a].is_finite() {
                return Err(Error::Geometry(format!("origin along axis {a} is not finite")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + self.spacing[0] * i as f64,
            self.origin[1] + self.spacing[1] * j as f64,
            self.origin[2] + self.spacing[2] * k as f64,
        )
    }

    #[inline]
    pub fn world_of(&self, idx: usize) -> Vector3<f64> {
        let [i, j, k] = self.coords(idx);
        self.world(i, j, k)
    }

    /// Continuous voxel coordinates of a world point.
    #[inline]
    pub fn to_voxel(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        )
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_spacing(&self) -> f64 {
        self.spacing.iter().sum::<f64>() / 3.0
    }

    /// World-space center of the grid.
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + 0.5 * self.spacing[0] * (self.dims[0] as f64 - 1.0),
            self.origin[1] + 0.5 * self.spacing[1] * (self.dims[1] as f64 - 1.0),
            self.origin[2] + 0.5 * self.spacing[2] * (self.dims[2] as f64 - 1.0),
        )
    }

    /// True when the voxel is at least `margin` voxels away from every face.
    #[inline]
    pub fn is_interior(&self, idx: usize, margin: usize) -> bool {
        let c = self.coords(idx);
        (0..3).all(|a| c[a] >= margin && c[a] + margin < self.dims[a])
    }

    /// Geometry equality up to a relative tolerance on spacing and origin.
    pub fn matches(&self, other: &GridGeometry) -> bool {
        let tol = 1e-6 * self.max_spacing();
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= tol
                    && (self.origin[a] - other.origin[a]).abs() <= tol
            })
    }

    pub fn ensure_matches(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: grid {:?}/{:?} does not match {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// Grid subsampled by two along every axis, sharing the origin.
    pub fn coarsened(&self) -> GridGeometry {
        GridGeometry {
            dims: self.dims.map(|n| n.div_ceil(2).max(2)),
            spacing: [
                self.spacing[0] * 2.0,
                self.spacing[1] * 2.0,
                self.spacing[2] * 2.0,
            ],
            origin: self.origin,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_voxel_roundtrip_at_centers() {
        let g = GridGeometry::new([5, 6, 7], [1.5, 2.0, 0.75], [-3.0, 10.0, 0.25]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
            let v = g.to_voxel(&g.world(i, j, k));
            assert!((v.x - i as f64).abs() < 1e-12);
            assert!((v.y - j as f64).abs() < 1e-12);
            assert!((v.z - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridGeometry::new([1, 4, 4], [1.0; 3], [0.0; 3]).is_err());
        assert!(GridGeometry::new([4, 4, 4], [1.0, -1.0, 1.0], [0.0; 3]).is_err());
        assert!(GridGeometry::new([4, 4, 4], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn cube_is_centered() {
        let g = GridGeometry::cube(8, 2.0).unwrap();
        assert!(g.center().norm() < 1e-12);
    }
}
