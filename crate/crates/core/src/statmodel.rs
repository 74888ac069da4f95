//! Principal component model of transported motion fields.
//!
//! Samples are displacement fields restricted to a region and flattened
//! voxel-major with x, y, z interleaved. With far more coordinates than
//! subjects the spectrum is taken from the n×n Gram matrix of centred samples.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{pairwise_sum, GridGeometry, RegionMask, VectorVolume};

/// Voxels entering the sample vectors, in storage order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSupport {
    pub geometry: GridGeometry,
    pub indices: Vec<usize>,
}

impl SampleSupport {
    pub fn from_region(region: &RegionMask) -> Self {
        SampleSupport {
            geometry: *region.geometry(),
            indices: region.indices(),
        }
    }

    /// Length of a flattened sample.
    pub fn dim(&self) -> usize {
        3 * self.indices.len()
    }

    pub fn flatten(&self, field: &VectorVolume) -> Result<Vec<f64>> {
        self.geometry.ensure_matches(field.geometry(), "motion field")?;
        Ok(self
            .indices
            .iter()
            .flat_map(|&n| {
                let v = field.vectors()[n];
                [v.x, v.y, v.z]
            })
            .collect())
    }

    /// Inverse of [`flatten`](Self::flatten); voxels outside the support are zero.
    pub fn unflatten(&self, values: &[f64]) -> Result<VectorVolume> {
        if values.len() != self.dim() {
            return Err(Error::Shape(format!("{} values for a support of {} coordinates", values.len(), self.dim())));
        }
        let mut out = vec![Vector3::zeros(); self.geometry.len()];
        for (k, &n) in self.indices.iter().enumerate() {
            out[n] = Vector3::new(values[3 * k], values[3 * k + 1], values[3 * k + 2]);
        }
        VectorVolume::new(self.geometry, out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub id: String,
    pub label: String,
    pub support: SampleSupport,
    pub values: Vec<f64>,
}

impl MotionSample {
    pub fn from_field(id: &str, label: &str, field: &VectorVolume, support: &SampleSupport) -> Result<Self> {
        Ok(MotionSample {
            id: id.to_string(),
            label: label.to_string(),
            values: support.flatten(field)?,
            support: support.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub label: String,
    pub support: SampleSupport,
    pub mean: Vec<f64>,
    /// Orthonormal modes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each mode (mm²), descending.
    pub variances: Vec<f64>,
    /// Subject id and its coefficients on every mode.
    pub loadings: Vec<(String, Vec<f64>)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    pairwise_sum(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
}

/// Cyclic Jacobi eigen-decomposition of a dense symmetric matrix (row-major).
/// Returns eigenvalues descending and eigenvectors as rows.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off.sqrt() <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Flips `v` so its first entry of non-negligible magnitude is positive.
fn canonical_sign(v: &mut [f64]) {
    let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-6 * big) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// PCA of one frame's motion samples.
pub fn fit(samples: &[MotionSample]) -> Result<MotionModel> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::SampleCount { required: 2, got: n });
    }
    let support = &samples[0].support;
    let d = support.dim();
    for s in samples {
        if s.support != *support || s.values.len() != d {
            return Err(Error::Shape(format!("sample {} does not share the model support", s.id)));
        }
    }
    let mean: Vec<f64> = (0..d)
        .map(|k| pairwise_sum(&samples.iter().map(|s| s.values[k]).collect::<Vec<_>>()) / n as f64)
        .collect();
    let centred: Vec<Vec<f64>> = samples.iter().map(|s| s.values.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let g = dot(&centred[i], &centred[j]);
            gram[i][j] = g;
            gram[j][i] = g;
        }
    }
    let (values, vectors) = jacobi_eigen(&gram);
    // modes below round-off of the raw data are dropped
    let floor = 1e-24 * samples.iter().map(|s| dot(&s.values, &s.values)).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut components = Vec::new();
    let mut variances = Vec::new();
    for (lambda, a) in values.iter().zip(&vectors).take(n - 1) {
        if !(*lambda > floor) {
            break;
        }
        let mut c: Vec<f64> = (0..d).map(|k| (0..n).map(|i| a[i] * centred[i][k]).sum()).collect();
        let norm = dot(&c, &c).sqrt();
        c.iter_mut().for_each(|x| *x /= norm);
        canonical_sign(&mut c);
        components.push(c);
        variances.push(lambda / (n - 1) as f64);
    }
    let loadings = samples
        .iter()
        .zip(&centred)
        .map(|(s, x)| (s.id.clone(), components.iter().map(|c| dot(c, x)).collect()))
        .collect();
    Ok(MotionModel {
        label: samples[0].label.clone(),
        support: support.clone(),
        mean,
        components,
        variances,
        loadings,
    })
}

impl MotionModel {
    pub fn modes(&self) -> usize {
        self.components.len()
    }

    /// `mean + Σ b_k · component_k` as a flat sample.
    pub fn reconstruct(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() > self.modes() {
            return Err(Error::param("b", format!("{} coefficients for {} modes", b.len(), self.modes())));
        }
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(b) {
            out.iter_mut().zip(c).for_each(|(o, x)| *o += w * x);
        }
        Ok(out)
    }

    pub fn reconstruct_field(&self, b: &[f64]) -> Result<VectorVolume> {
        self.support.unflatten(&self.reconstruct(b)?)
    }

    /// Percentage of total variance carried by each mode.
    pub fn explained(&self) -> Vec<f64> {
        let total: f64 = self.variances.iter().sum();
        self.variances.iter().map(|v| if total > 0.0 { 100.0 * v / total } else { 0.0 }).collect()
    }

    /// Spectrum as CSV: mode, variance, percentage.
    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("mode,variance_mm2,percent\n");
        for (k, (v, p)) in self.variances.iter().zip(self.explained()).enumerate() {
            let _ = writeln!(out, "PC{},{:.9e},{:.4}", k + 1, v, p);
        }
        out
    }
}

/// Percent of variance on PC1..PC3 per frame label, rows in the given order.
pub fn loadings_table(models: &[MotionModel]) -> String {
    let mut out = String::from("label,PC1,PC2,PC3\n");
    for m in models {
        let e = m.explained();
        let _ = write!(out, "{}", m.label);
        for k in 0..3 {
            let _ = write!(out, ",{:.2}", e.get(k).copied().unwrap_or(0.0));
        }
        out.push('\n');
    }
    out
}
