use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::geometry::GridGeometry;
use crate::error::{Error, Result};

/// Scalar field sampled on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    geometry: GridGeometry,
    values: Vec<f64>,
}

/// Three-component vector field (mm, world frame) sampled on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorVolume {
    geometry: GridGeometry,
    vectors: Vec<Vector3<f64>>,
}

/// Per-voxel 3x3 matrices, e.g. a Jacobian field.
#[derive(Clone, Debug)]
pub struct MatrixField {
    geometry: GridGeometry,
    matrices: Vec<Matrix3<f64>>,
}

/// Soft or binary region weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    geometry: GridGeometry,
    weights: Vec<f64>,
}

/// Eight trilinear stencil indices and weights for a world point, clamped to the grid.
#[inline]
pub(crate) fn trilinear_stencil(g: &GridGeometry, p: &Vector3<f64>) -> ([usize; 8], [f64; 8]) {
    let c = g.to_voxel(p);
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let n = g.dims[a];
        let x = c[a].clamp(0.0, (n - 1) as f64);
        let i0 = (x.floor() as usize).min(n - 2);
        base[a] = i0;
        frac[a] = x - i0 as f64;
    }
    let [i, j, k] = base;
    let [fx, fy, fz] = frac;
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    let i000 = g.index(i, j, k);
    let sx = 1;
    let sy = g.dims[0];
    let sz = g.dims[0] * g.dims[1];
    (
        [
            i000,
            i000 + sx,
            i000 + sy,
            i000 + sx + sy,
            i000 + sz,
            i000 + sx + sz,
            i000 + sy + sz,
            i000 + sx + sy + sz,
        ],
        [
            gx * gy * gz,
            fx * gy * gz,
            gx * fy * gz,
            fx * fy * gz,
            gx * gy * fz,
            fx * gy * fz,
            gx * fy * fz,
            fx * fy * fz,
        ],
    )
}

fn check_finite<'a>(mut it: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    if it.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Parameter {
            name: "values",
            reason: format!("{what} contains non-finite values"),
        })
    }
}

impl ScalarVolume {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "scalar volume needs {} values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        check_finite(values.iter(), "scalar volume")?;
        Ok(ScalarVolume { geometry, values })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        ScalarVolume {
            geometry,
            values: vec![0.0; geometry.len()],
        }
    }

    pub fn constant(geometry: GridGeometry, c: f64) -> Self {
        ScalarVolume {
            geometry,
            values: vec![c; geometry.len()],
        }
    }

    /// Samples `f` at every voxel center (world coordinates).
    pub fn from_fn<F>(geometry: GridGeometry, f: F) -> Self
    where
        F: Fn(Vector3<f64>) -> f64 + Sync,
    {
        let values = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(geometry.world_of(idx)))
            .collect();
        ScalarVolume { geometry, values }
    }

    pub(crate) fn from_raw(geometry: GridGeometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.len());
        ScalarVolume { geometry, values }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.geometry.index(i, j, k)]
    }

    /// Trilinear interpolation with clamp-to-edge outside the grid.
    #[inline]
    pub fn interpolate(&self, p: &Vector3<f64>) -> f64 {
        let (idx, w) = trilinear_stencil(&self.geometry, p);
        let mut acc = 0.0;
        for n in 0..8 {
            acc += w[n] * self.values[idx[n]];
        }
        acc
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> ScalarVolume {
        ScalarVolume {
            geometry: self.geometry,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl VectorVolume {
    pub fn new(geometry: GridGeometry, vectors: Vec<Vector3<f64>>) -> Result<Self> {
        geometry.validate()?;
        if vectors.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "vector volume needs {} vectors, got {}",
                geometry.len(),
                vectors.len()
            )));
        }
        check_finite(vectors.iter().flat_map(|v| v.iter()), "vector volume")?;
        Ok(VectorVolume { geometry, vectors })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        VectorVolume {
            geometry,
            vectors: vec![Vector3::zeros(); geometry.len()],
        }
    }

    pub fn constant(geometry: GridGeometry, c: Vector3<f64>) -> Self {
        VectorVolume {
            geometry,
            vectors: vec![c; geometry.len()],
        }
    }

    pub fn from_fn<F>(geometry: GridGeometry, f: F) -> Self
    where
        F: Fn(Vector3<f64>) -> Vector3<f64> + Sync,
    {
        let vectors = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(geometry.world_of(idx)))
            .collect();
        VectorVolume { geometry, vectors }
    }

    pub(crate) fn from_raw(geometry: GridGeometry, vectors: Vec<Vector3<f64>>) -> Self {
        debug_assert_eq!(vectors.len(), geometry.len());
        VectorVolume { geometry, vectors }
    }

    /// Builds a vector volume from three component volumes.
    pub fn from_components(c: [&ScalarVolume; 3]) -> Result<Self> {
        let g = *c[0].geometry();
        g.ensure_matches(c[1].geometry(), "vector component 1")?;
        g.ensure_matches(c[2].geometry(), "vector component 2")?;
        let vectors = (0..g.len())
            .map(|n| Vector3::new(c[0].values[n], c[1].values[n], c[2].values[n]))
            .collect();
        Ok(VectorVolume {
            geometry: g,
            vectors,
        })
    }

    pub fn component(&self, axis: usize) -> ScalarVolume {
        ScalarVolume {
            geometry: self.geometry,
            values: self.vectors.iter().map(|v| v[axis]).collect(),
        }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    #[inline]
    pub fn vectors(&self) -> &[Vector3<f64>] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vector3<f64>> {
        self.vectors
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.vectors[self.geometry.index(i, j, k)]
    }

    #[inline]
    pub fn interpolate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (idx, w) = trilinear_stencil(&self.geometry, p);
        let mut acc = Vector3::zeros();
        for n in 0..8 {
            acc += w[n] * self.vectors[idx[n]];
        }
        acc
    }

    pub fn scaled(&self, s: f64) -> VectorVolume {
        VectorVolume {
            geometry: self.geometry,
            vectors: self.vectors.par_iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s * other`, voxelwise.
    pub fn axpy(&self, s: f64, other: &VectorVolume) -> Result<VectorVolume> {
        self.geometry.ensure_matches(&other.geometry, "axpy")?;
        Ok(VectorVolume {
            geometry: self.geometry,
            vectors: self
                .vectors
                .par_iter()
                .zip(other.vectors.par_iter())
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn magnitude(&self) -> ScalarVolume {
        ScalarVolume {
            geometry: self.geometry,
            values: self.vectors.par_iter().map(|v| v.norm()).collect(),
        }
    }
}

impl MatrixField {
    pub(crate) fn from_raw(geometry: GridGeometry, matrices: Vec<Matrix3<f64>>) -> Self {
        MatrixField { geometry, matrices }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn matrices(&self) -> &[Matrix3<f64>] {
        &self.matrices
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Matrix3<f64> {
        self.matrices[self.geometry.index(i, j, k)]
    }
}

impl RegionMask {
    pub fn new(geometry: GridGeometry, weights: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if weights.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "mask needs {} weights, got {}",
                geometry.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::param("weights", format!("mask weight {w} outside [0, 1]")));
        }
        Ok(RegionMask { geometry, weights })
    }

    pub fn full(geometry: GridGeometry) -> Self {
        RegionMask {
            geometry,
            weights: vec![1.0; geometry.len()],
        }
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        RegionMask {
            geometry,
            weights: vec![0.0; geometry.len()],
        }
    }

    pub fn from_predicate<F>(geometry: GridGeometry, f: F) -> Self
    where
        F: Fn(Vector3<f64>) -> bool + Sync,
    {
        let weights = (0..geometry.len())
            .into_par_iter()
            .map(|idx| if f(geometry.world_of(idx)) { 1.0 } else { 0.0 })
            .collect();
        RegionMask { geometry, weights }
    }

    /// Binarizes a scalar volume at `threshold` (values `>= threshold` are inside).
    pub fn threshold(vol: &ScalarVolume, threshold: f64) -> Self {
        RegionMask {
            geometry: *vol.geometry(),
            weights: vol
                .values()
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.weights[idx] >= 0.5
    }

    pub fn count(&self) -> usize {
        self.weights.iter().filter(|&&w| w >= 0.5).count()
    }

    pub fn is_binary(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    /// Indices of voxels with weight >= 0.5, in storage order.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&n| self.contains(n)).collect()
    }

    /// Binary dilation by `radius` voxels (26-connected, i.e. a cube structuring element).
    pub fn dilate(&self, radius: usize) -> RegionMask {
        self.morph(radius, true)
    }

    /// Binary erosion by `radius` voxels (cube structuring element); the grid border counts as outside.
    pub fn erode(&self, radius: usize) -> RegionMask {
        self.morph(radius, false)
    }

    fn morph(&self, radius: usize, dilate: bool) -> RegionMask {
        let g = self.geometry;
        let mut cur: Vec<bool> = self.weights.iter().map(|&w| w >= 0.5).collect();
        // separable max/min filter along each axis
        for axis in 0..3 {
            let stride = [1, g.dims[0], g.dims[0] * g.dims[1]][axis];
            let n = g.dims[axis];
            let prev = cur.clone();
            cur.par_iter_mut().enumerate().for_each(|(idx, out)| {
                let c = g.coords(idx)[axis];
                let lo = c.saturating_sub(radius);
                let hi = (c + radius).min(n - 1);
                let base = idx - c * stride;
                let mut acc = !dilate;
                for m in lo..=hi {
                    let v = prev[base + m * stride];
                    if dilate {
                        acc |= v;
                    } else {
                        acc &= v;
                    }
                }
                if !dilate && (c < radius || c + radius >= n) {
                    acc = false;
                }
                *out = acc;
            });
        }
        RegionMask {
            geometry: g,
            weights: cur.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Axis-aligned bounding box of the region, as a binary mask.
    pub fn bounding_box(&self) -> RegionMask {
        let g = self.geometry;
        let mut lo = g.dims;
        let mut hi = [0usize; 3];
        let mut any = false;
        for idx in self.indices() {
            any = true;
            let c = g.coords(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        if !any {
            return RegionMask::empty(g);
        }
        let weights = (0..g.len())
            .map(|idx| {
                let c = g.coords(idx);
                if (0..3).all(|a| c[a] >= lo[a] && c[a] <= hi[a]) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        RegionMask { geometry: g, weights }
    }

    pub fn to_volume(&self) -> ScalarVolume {
        ScalarVolume::from_raw(self.geometry, self.weights.clone())
    }

    /// Dice overlap of two binarized masks.
    pub fn dice(&self, other: &RegionMask) -> f64 {
        let (mut both, mut a, mut b) = (0usize, 0usize, 0usize);
        for n in 0..self.weights.len() {
            let x = self.contains(n);
            let y = other.contains(n);
            a += x as usize;
            b += y as usize;
            both += (x && y) as usize;
        }
        if a + b == 0 {
            1.0
        } else {
            2.0 * both as f64 / (a + b) as f64
        }
    }
}
