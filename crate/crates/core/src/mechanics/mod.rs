//! Lagrangian strain, principal strains and region statistics of displacement fields.

mod eigen;

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eigen::{symmetric_eigen, SymmetricEigen3};

use crate::error::{Error, Result};
use crate::field::{jacobian, mean, pairwise_sum, sample_sd, GridGeometry, RegionMask, ScalarVolume, VectorVolume};

/// Per-voxel Green–Lagrange strain with its principal decomposition.
#[derive(Clone, Debug)]
pub struct StrainField {
    geometry: GridGeometry,
    tensors: Vec<Matrix3<f64>>,
    eigen: Vec<SymmetricEigen3>,
}

/// Strain of the displacement `u`: `E = (FᵀF - I) / 2` with `F = I + ∇u`.
pub fn strain(u: &VectorVolume) -> StrainField {
    let j = jacobian(u);
    let tensors: Vec<Matrix3<f64>> = j
        .matrices()
        .par_iter()
        .map(|d| 0.5 * (d + d.transpose() + d.transpose() * d))
        .collect();
    let eigen = tensors.par_iter().map(symmetric_eigen).collect();
    StrainField {
        geometry: *u.geometry(),
        tensors,
        eigen,
    }
}

impl StrainField {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn tensors(&self) -> &[Matrix3<f64>] {
        &self.tensors
    }

    pub fn decompositions(&self) -> &[SymmetricEigen3] {
        &self.eigen
    }

    /// Tensor component `E[r][c]`.
    pub fn component(&self, r: usize, c: usize) -> ScalarVolume {
        ScalarVolume::new(self.geometry, self.tensors.iter().map(|e| e[(r, c)]).collect()).expect("finite strain")
    }

    /// Principal strain `k` (0 for E1, the largest).
    pub fn principal(&self, k: usize) -> ScalarVolume {
        ScalarVolume::new(self.geometry, self.eigen.iter().map(|e| e.values[k]).collect()).expect("finite strain")
    }

    /// Unit direction of principal strain `k`.
    pub fn direction(&self, k: usize) -> VectorVolume {
        VectorVolume::new(self.geometry, self.eigen.iter().map(|e| e.vectors.column(k).into_owned()).collect())
            .expect("finite directions")
    }

    /// `ln det F`, recovered from `det(I + 2E) = det(F)²`.
    pub fn log_volume_change(&self) -> ScalarVolume {
        let vals = self
            .tensors
            .iter()
            .map(|e| 0.5 * (Matrix3::identity() + 2.0 * e).determinant().ln())
            .collect();
        ScalarVolume::new(self.geometry, vals).expect("orientation-preserving deformation")
    }
}

/// Largest Frobenius norm of the strain over voxels at least one voxel from the faces.
pub fn rigid_invariance_check(u_rigid: &VectorVolume) -> f64 {
    let s = strain(u_rigid);
    let g = s.geometry;
    s.tensors
        .iter()
        .enumerate()
        .filter(|&(n, _)| g.is_interior(n, 1))
        .map(|(_, e)| e.norm())
        .fold(0.0, f64::max)
}

/// Mean displacement magnitude weighted by the region (mm).
pub fn mean_deformation(u: &VectorVolume, region: &RegionMask) -> Result<f64> {
    u.geometry().ensure_matches(region.geometry(), "region")?;
    let w = region.weights();
    let total = pairwise_sum(w);
    if total <= 0.0 {
        return Err(Error::EmptyRegion);
    }
    let weighted: Vec<f64> = u.vectors().iter().zip(w).map(|(v, w)| v.norm() * w).collect();
    Ok(pairwise_sum(&weighted) / total)
}

/// Averaging support for region statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// The region itself.
    #[default]
    Mask,
    /// The axis-aligned bounding box of the region.
    BoundingBox,
}

impl Support {
    pub fn apply(self, region: &RegionMask) -> RegionMask {
        match self {
            Support::Mask => region.clone(),
            Support::BoundingBox => region.bounding_box(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanicsConfig {
    pub support: Support,
}

/// Region-aggregated motion and strain for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub label: String,
    /// Mean deformation (mm).
    pub md: f64,
    pub mean: [f64; 3],
    pub sd: [f64; 3],
    pub voxels: usize,
}

/// Mean and SD of E1, E2, E3 over region voxels off the grid faces, plus the mean deformation.
pub fn region_stats(strain: &StrainField, u: &VectorVolume, region: &RegionMask, label: &str) -> Result<RegionStats> {
    let g = strain.geometry;
    g.ensure_matches(u.geometry(), "displacement")?;
    g.ensure_matches(region.geometry(), "region")?;
    let idx: Vec<usize> = region.indices().into_iter().filter(|&n| g.is_interior(n, 1)).collect();
    if idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut w = vec![0.0; g.len()];
    for &n in &idx {
        w[n] = region.weights()[n];
    }
    let md = mean_deformation(u, &RegionMask::new(g, w)?)?;
    let mut m = [0.0; 3];
    let mut sd = [0.0; 3];
    for k in 0..3 {
        let vals: Vec<f64> = idx.iter().map(|&n| strain.eigen[n].values[k]).collect();
        m[k] = mean(&vals).expect("nonempty");
        sd[k] = sample_sd(&vals);
    }
    Ok(RegionStats {
        label: label.to_string(),
        md,
        mean: m,
        sd,
        voxels: idx.len(),
    })
}

pub const STRAIN_TABLE_HEADER: &str = "label,E1_mean,E1_sd,E2_mean,E2_sd,E3_mean,E3_sd";

/// Whole-region principal strains, one row per frame label in the given order.
pub fn strain_table_csv(rows: &[RegionStats]) -> String {
    let mut out = format!("{STRAIN_TABLE_HEADER}\n");
    for r in rows {
        let _ = write!(out, "{}", r.label);
        for k in 0..3 {
            let _ = write!(out, ",{:.6},{:.6}", r.mean[k], r.sd[k]);
        }
        out.push('\n');
    }
    out
}

/// Mean deformation per frame label.
pub fn mean_deformation_csv(rows: &[RegionStats]) -> String {
    let mut out = String::from("label,MD_mm,voxels\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{}", r.label, r.md, r.voxels);
    }
    out
}

/// Rigid motion `x ↦ R (x - c) + c + t` as a displacement field.
pub fn rigid_displacement(g: GridGeometry, rotation: &Matrix3<f64>, center: Vector3<f64>, t: Vector3<f64>) -> VectorVolume {
    VectorVolume::from_fn(g, |x| rotation * (x - center) + center + t - x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};

    fn grid() -> GridGeometry {
        GridGeometry::cube(12, 1.5).unwrap()
    }

    #[test]
    fn zero_displacement_has_zero_strain() {
        let s = strain(&VectorVolume::zeros(grid()));
        assert!(s.tensors().iter().all(|e| *e == Matrix3::zeros()));
        assert!(s.decompositions().iter().all(|e| e.values == [0.0; 3]));
    }

    #[test]
    fn uniform_stretch() {
        let g = grid();
        let s = strain(&VectorVolume::from_fn(g, |x| Vector3::new(0.1 * x.x, 0.0, 0.0)));
        for e in s.decompositions() {
            assert!((e.values[0] - 0.105).abs() < 1e-12);
            assert!(e.values[1].abs() < 1e-12 && e.values[2].abs() < 1e-12);
            assert!((e.vectors.column(0) - Vector3::x()).norm() < 1e-12);
        }
        let stats = region_stats(&s, &VectorVolume::zeros(g), &RegionMask::full(g), "a").unwrap();
        assert!((stats.mean[0] - 0.105).abs() < 1e-12);
        assert!(stats.sd.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn simple_shear() {
        let s = strain(&VectorVolume::from_fn(grid(), |x| Vector3::new(0.2 * x.y, 0.0, 0.0)));
        // eigenvalues of [[0, 0.1], [0.1, 0.02]]
        let (e1, e3) = (0.01 + 0.0101f64.sqrt(), 0.01 - 0.0101f64.sqrt());
        for e in s.decompositions() {
            assert!((e.values[0] - e1).abs() < 1e-12);
            assert!(e.values[1].abs() < 1e-12);
            assert!((e.values[2] - e3).abs() < 1e-12);
        }
        assert!((e1 - 0.1105).abs() < 1e-4 && (e3 + 0.0905).abs() < 1e-4);
    }

    #[test]
    fn rigid_motions() {
        let g = GridGeometry::cube(32, 1.875).unwrap();
        let t = rigid_displacement(g, &Matrix3::identity(), Vector3::zeros(), Vector3::new(1.0, -2.0, 0.5));
        assert_eq!(rigid_invariance_check(&t), 0.0);
        let rot = *Rotation3::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians()).matrix();
        let r = rigid_displacement(g, &rot, Vector3::new(3.0, -1.0, 0.0), Vector3::new(0.5, 0.0, 0.0));
        assert!(rigid_invariance_check(&r) < 1e-3);
    }

    #[test]
    fn rotation_drops_out_of_stretch() {
        let g = GridGeometry::cube(16, 1.875).unwrap();
        let rot = *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 3.0)), 0.3).matrix();
        let f = rot * Matrix3::from_diagonal(&Vector3::new(1.02, 1.0, 1.0));
        let s = strain(&VectorVolume::from_fn(g, |x| f * x - x));
        for e in s.decompositions() {
            assert!((e.values[0] - 0.0202).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_reconstructs_tensor() {
        let g = grid();
        let s = strain(&VectorVolume::from_fn(g, |x| {
            Vector3::new((0.3 * x.y).sin(), 0.1 * x.x * x.z / 10.0, (0.2 * x.x).cos() * 0.5)
        }));
        for (e, d) in s.tensors().iter().zip(s.decompositions()) {
            let r = d.vectors * Matrix3::from_diagonal(&Vector3::from(d.values)) * d.vectors.transpose();
            assert!((r - e).norm() < 1e-8);
            assert!((d.vectors.transpose() * d.vectors - Matrix3::identity()).norm() < 1e-8);
            assert!(d.values[0] >= d.values[1] && d.values[1] >= d.values[2]);
            assert_eq!(*e, e.transpose());
        }
    }

    #[test]
    fn mean_deformation_cases() {
        let g = grid();
        let region = RegionMask::from_predicate(g, |p| p.x > -3.0);
        let c = VectorVolume::constant(g, Vector3::new(0.0, 2.0, 0.0));
        assert!((mean_deformation(&c, &region).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(mean_deformation(&VectorVolume::zeros(g), &region).unwrap(), 0.0);
        let half = VectorVolume::from_fn(g, |p| Vector3::new(if p.y > 0.0 { 1.0 } else { 3.0 }, 0.0, 0.0));
        let full = RegionMask::full(g);
        assert!((mean_deformation(&half, &full).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(mean_deformation(&c, &RegionMask::empty(g)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn bounding_box_support() {
        let g = grid();
        let ball = RegionMask::from_predicate(g, |p| p.norm() < 5.0);
        let boxed = Support::BoundingBox.apply(&ball);
        assert!(boxed.count() > ball.count());
        assert_eq!(Support::Mask.apply(&ball), ball);
    }

    #[test]
    fn table_layout() {
        let rows: Vec<RegionStats> = ["ə", "s", "u", "k"]
            .iter()
            .map(|l| RegionStats {
                label: l.to_string(),
                md: 1.0,
                mean: [0.1, 0.0, -0.1],
                sd: [0.01; 3],
                voxels: 10,
            })
            .collect();
        let csv = strain_table_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "label,E1_mean,E1_sd,E2_mean,E2_sd,E3_mean,E3_sd");
        assert_eq!(lines[1], "ə,0.100000,0.010000,0.000000,0.010000,-0.100000,0.010000");
    }
}
