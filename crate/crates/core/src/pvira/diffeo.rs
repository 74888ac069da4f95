use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::Result;
use crate::field::{jacobian_determinant, pairwise_sum, GridGeometry, RegionMask, ScalarVolume, VectorVolume};

/// Displacement of `a ∘ b`, both given as displacements on the same grid.
pub fn compose(a: &VectorVolume, b: &VectorVolume) -> Result<VectorVolume> {
    let g = *a.geometry();
    g.ensure_matches(b.geometry(), "composed fields")?;
    let out = b
        .vectors()
        .par_iter()
        .enumerate()
        .map(|(idx, u)| {
            let x = g.world_of(idx);
            u + a.interpolate(&(x + u))
        })
        .collect();
    Ok(VectorVolume::new(g, out)?)
}

/// Number of squarings used to exponentiate `v`.
pub fn squaring_steps(v: &VectorVolume) -> u32 {
    let max = v.max_norm();
    let ratio = max / (0.5 * v.geometry().min_spacing());
    if !(ratio > 1.0) {
        return 0;
    }
    ratio.log2().ceil() as u32
}

fn exp_displacement(v: &VectorVolume) -> VectorVolume {
    let n = squaring_steps(v);
    let mut u = v.scaled(0.5f64.powi(n as i32));
    for _ in 0..n {
        u = compose(&u, &u).expect("same geometry");
    }
    u
}

/// A diffeomorphism stored as forward and inverse displacement fields.
///
/// `forward` holds `φ(x) - x`, `inverse` holds `φ⁻¹(x) - x`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffeoField {
    pub forward: VectorVolume,
    pub inverse: VectorVolume,
}

impl DiffeoField {
    pub fn identity(g: GridGeometry) -> Self {
        DiffeoField {
            forward: VectorVolume::zeros(g),
            inverse: VectorVolume::zeros(g),
        }
    }

    /// `φ = exp(v)` and `φ⁻¹ = exp(-v)` by scaling and squaring.
    pub fn exponentiate(v: &VectorVolume) -> Self {
        DiffeoField {
            forward: exp_displacement(v),
            inverse: exp_displacement(&v.scaled(-1.0)),
        }
    }

    /// Forward displacement of `exp(v)` only.
    pub fn exponentiate_forward(v: &VectorVolume) -> VectorVolume {
        exp_displacement(v)
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.forward.geometry()
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p + self.forward.interpolate(p)
    }

    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p + self.inverse.interpolate(p)
    }

    /// Swaps the roles of forward and inverse.
    pub fn inverted(&self) -> DiffeoField {
        DiffeoField {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    /// RMS of `|φ(φ⁻¹(x)) - x|` over the mask, in mm.
    pub fn inverse_consistency(&self, mask: &RegionMask) -> f64 {
        let g = *self.geometry();
        let sq: Vec<f64> = mask
            .indices()
            .par_iter()
            .map(|&idx| {
                let x = g.world_of(idx);
                (self.apply(&self.apply_inverse(&x)) - x).norm_squared()
            })
            .collect();
        if sq.is_empty() {
            return 0.0;
        }
        (pairwise_sum(&sq) / sq.len() as f64).sqrt()
    }

    pub fn jacobian_determinant(&self) -> ScalarVolume {
        jacobian_determinant(&self.forward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::smooth::smooth_vector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_velocity_is_identity() {
        let g = GridGeometry::cube(10, 1.5).unwrap();
        let d = DiffeoField::exponentiate(&VectorVolume::zeros(g));
        assert_eq!(d, DiffeoField::identity(g));
    }

    #[test]
    fn constant_velocity_is_exact_translation() {
        let g = GridGeometry::cube(12, 2.0).unwrap();
        let c = Vector3::new(3.1, -0.7, 5.3);
        let d = DiffeoField::exponentiate(&VectorVolume::constant(g, c));
        assert!(squaring_steps(&VectorVolume::constant(g, c)) >= 3);
        for (f, i) in d.forward.vectors().iter().zip(d.inverse.vectors()) {
            assert!((f - c).norm() < 1e-12);
            assert!((i + c).norm() < 1e-12);
        }
    }

    #[test]
    fn step_count_formula() {
        let g = GridGeometry::cube(6, 2.0).unwrap();
        let v = |m: f64| VectorVolume::constant(g, Vector3::new(m, 0.0, 0.0));
        assert_eq!(squaring_steps(&v(0.0)), 0);
        assert_eq!(squaring_steps(&v(0.9)), 0);
        assert_eq!(squaring_steps(&v(1.0)), 0);
        assert_eq!(squaring_steps(&v(1.01)), 1);
        assert_eq!(squaring_steps(&v(4.0)), 2);
        assert_eq!(squaring_steps(&v(4.5)), 3);
    }

    pub(crate) fn random_smooth(g: GridGeometry, max_voxels: f64, seed: u64) -> VectorVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vector3<f64>> = (0..g.len())
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let smooth = smooth_vector(&VectorVolume::new(g, raw).unwrap(), 3.0);
        let c = g.center();
        let half = 0.5 * g.dims[0] as f64 * g.spacing[0];
        let windowed = VectorVolume::new(
            g,
            smooth
                .vectors()
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let r = (g.world_of(idx) - c).norm() / half;
                    v * (-(r * r) / 0.18).exp()
                })
                .collect(),
        )
        .unwrap();
        windowed.scaled(max_voxels * g.min_spacing() / windowed.max_norm())
    }

    #[test]
    fn inverse_consistency_of_random_smooth_field() {
        let g = GridGeometry::cube(32, 1.5).unwrap();
        for seed in 0..3 {
            let v = random_smooth(g, 2.0, seed);
            let d = DiffeoField::exponentiate(&v);
            let rms = d.inverse_consistency(&RegionMask::full(g)) / g.min_spacing();
            assert!(rms < 0.05, "seed {seed}: {rms}");
            assert!(d.jacobian_determinant().values().iter().all(|j| *j > 0.0));
        }
    }

    #[test]
    fn compose_translations_adds() {
        let g = GridGeometry::cube(8, 1.0).unwrap();
        let a = VectorVolume::constant(g, Vector3::new(0.5, 0.0, 0.0));
        let b = VectorVolume::constant(g, Vector3::new(0.0, -0.25, 0.0));
        let c = compose(&a, &b).unwrap();
        assert!(c.vectors().iter().all(|v| (v - Vector3::new(0.5, -0.25, 0.0)).norm() < 1e-15));
    }
}
