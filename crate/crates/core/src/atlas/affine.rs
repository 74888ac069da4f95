use log::warn;
use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cc::cc_metric;
use super::AtlasConfig;
use crate::error::{Error, Result};
use crate::field::smooth::downsample_scalar;
use crate::field::{gradient, pairwise_sum, ScalarVolume, VectorVolume};

/// `x ↦ A x + t` in world millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AffineRepr", into = "AffineRepr")]
pub struct AffineTransform {
    matrix: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct AffineRepr {
    /// Row-major.
    matrix: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<AffineTransform> for AffineRepr {
    fn from(t: AffineTransform) -> Self {
        AffineRepr {
            matrix: std::array::from_fn(|r| std::array::from_fn(|c| t.matrix[(r, c)])),
            translation: t.translation.into(),
        }
    }
}

impl TryFrom<AffineRepr> for AffineTransform {
    type Error = Error;
    fn try_from(r: AffineRepr) -> Result<Self> {
        AffineTransform::new(Matrix3::from_fn(|i, j| r.matrix[i][j]), Vector3::from(r.translation))
    }
}

impl AffineTransform {
    pub fn new(matrix: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !matrix.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::param("affine", "non-finite entry"));
        }
        if matrix.determinant().abs() <= 1e-9 {
            return Err(Error::param("affine", "matrix is singular"));
        }
        Ok(AffineTransform { matrix, translation })
    }

    pub fn identity() -> Self {
        AffineTransform {
            matrix: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        AffineTransform {
            matrix: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = self.matrix.try_inverse().expect("checked at construction");
        AffineTransform {
            matrix: inv,
            translation: -(inv * self.translation),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineTransform) -> Self {
        AffineTransform {
            matrix: self.matrix * other.matrix,
            translation: self.matrix * other.translation + self.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.matrix);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        AffineTransform::new(m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn log(&self) -> Result<Matrix4<f64>> {
        matrix_log(&self.to_homogeneous())
    }

    pub fn exp(l: &Matrix4<f64>) -> Result<Self> {
        AffineTransform::from_homogeneous(&matrix_exp(l))
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn matrix_exp(a: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = a.norm();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a / 2f64.powi(s);
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..=18 {
        term = term * x / k as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

/// Principal matrix logarithm by inverse scaling and squaring: square roots
/// (Denman–Beavers) until close to the identity, then the series of `log(I + X)`.
pub fn matrix_log(a: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let id = Matrix4::identity();
    let mut y = *a;
    let mut k = 0;
    while (y - id).norm() > 0.25 {
        if k >= 40 {
            return Err(Error::param("affine", "matrix logarithm did not converge"));
        }
        let mut z = id;
        let mut yy = y;
        for _ in 0..60 {
            let yi = yy.try_inverse().ok_or_else(|| Error::param("affine", "singular during square root"))?;
            let zi = z.try_inverse().ok_or_else(|| Error::param("affine", "singular during square root"))?;
            let next = 0.5 * (yy + zi);
            z = 0.5 * (z + yi);
            let done = (next - yy).norm() < 1e-15 * next.norm();
            yy = next;
            if done {
                break;
            }
        }
        y = yy;
        k += 1;
    }
    let x = y - id;
    let mut power = x;
    let mut sum = Matrix4::zeros();
    for n in 1..=40 {
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        sum += power * (sign / n as f64);
        power *= x;
    }
    Ok(sum * 2f64.powi(k))
}

/// Removes the common part of a cohort of affines: `T_i ← T_i · exp(-mean log T_j)`.
pub fn center_cohort(transforms: &mut [AffineTransform]) -> Result<()> {
    let logs: Vec<Matrix4<f64>> = transforms.iter().map(|t| t.log()).collect::<Result<_>>()?;
    let mean = logs.iter().fold(Matrix4::zeros(), |acc, l| acc + l) / logs.len() as f64;
    let correction = AffineTransform::exp(&(-mean))?;
    for t in transforms.iter_mut() {
        *t = t.compose(&correction);
    }
    Ok(())
}

/// `S(T(x))` sampled on `S`'s grid.
pub fn warp_affine(vol: &ScalarVolume, t: &AffineTransform) -> ScalarVolume {
    ScalarVolume::from_fn(*vol.geometry(), |p| vol.interpolate(&t.apply(&p)))
}

pub(crate) fn mean_volume(vols: &[ScalarVolume]) -> ScalarVolume {
    let g = *vols[0].geometry();
    let values = (0..g.len())
        .into_par_iter()
        .map(|n| {
            let vals: Vec<f64> = vols.iter().map(|v| v.values()[n]).collect();
            pairwise_sum(&vals) / vals.len() as f64
        })
        .collect();
    ScalarVolume::new(g, values).expect("finite mean")
}

/// One round of gradient ascent on the CC between `template` and `S ∘ T`.
fn register_affine(
    template: &ScalarVolume,
    subject: &ScalarVolume,
    subject_grad: &VectorVolume,
    start: AffineTransform,
    cfg: &AtlasConfig,
) -> Result<(AffineTransform, f64)> {
    let g = *template.geometry();
    let c = g.center();
    let radius = cfg.affine_cc_radius.unwrap_or(*g.dims.iter().max().expect("3 dims"));
    let half_extent = (0..3).map(|a| 0.5 * g.dims[a] as f64 * g.spacing[a]).fold(0.0, f64::max);
    let evaluate = |t: &AffineTransform| -> Result<(f64, Vector3<f64>, Matrix3<f64>)> {
        let warped = warp_affine(subject, t);
        let cc = cc_metric(template, &warped, radius)?;
        let terms: Vec<(Vector3<f64>, Matrix3<f64>)> = (0..g.len())
            .into_par_iter()
            .map(|n| {
                let x = g.world_of(n);
                let f = subject_grad.interpolate(&t.apply(&x)) * cc.weight.values()[n];
                (f, f * (x - c).transpose())
            })
            .collect();
        let inv = 1.0 / g.len() as f64;
        let gt = terms.iter().fold(Vector3::zeros(), |acc, (f, _)| acc + f) * inv;
        let gp = terms.iter().fold(Matrix3::zeros(), |acc, (_, m)| acc + m) * inv;
        Ok((cc.value, gt, gp))
    };
    let mut best = start;
    let (mut best_val, mut gt, mut gp) = evaluate(&best)?;
    let mut step = cfg.affine_step * g.mean_spacing();
    let min_step = 1e-3 * g.mean_spacing();
    for _ in 0..cfg.affine_iterations {
        // matrix entries rescaled to mm of displacement at the half extent
        let gq = gp / half_extent;
        let norm = (gt.norm_squared() + gq.norm_squared()).sqrt();
        if norm == 0.0 || step < min_step {
            break;
        }
        let dt = gt * (step / norm);
        let dp = gq * (step / norm / half_extent);
        // perturbation about the grid centre: x ↦ T(x) + dt + dp (x - c)
        let Ok(candidate) = AffineTransform::new(best.matrix + dp, best.translation + dt - dp * c) else {
            step *= 0.5;
            continue;
        };
        let (val, ngt, ngp) = evaluate(&candidate)?;
        if val > best_val {
            best = candidate;
            best_val = val;
            gt = ngt;
            gp = ngp;
            step *= 1.2;
        } else {
            step *= 0.5;
        }
    }
    Ok((best, best_val))
}

/// Groupwise affine alignment of `volumes` to their evolving mean.
///
/// Each transform maps template coordinates to subject coordinates, so
/// `S_i ∘ T_i` lives in the template frame. The cohort is re-centred after
/// every round so the mean log-transform is zero.
pub fn groupwise_affine(volumes: &[ScalarVolume], cfg: &AtlasConfig) -> Result<Vec<AffineTransform>> {
    if volumes.len() < 2 {
        return Err(Error::SampleCount {
            required: 2,
            got: volumes.len(),
        });
    }
    let g = *volumes[0].geometry();
    for v in volumes {
        g.ensure_matches(v.geometry(), "cohort volumes")?;
    }
    let mut pyramid = vec![volumes.to_vec()];
    while pyramid.len() < cfg.levels {
        let last = pyramid.last().expect("nonempty");
        if last[0].geometry().dims.iter().any(|&d| d < 16) {
            break;
        }
        pyramid.push(last.iter().map(downsample_scalar).collect());
    }
    let mut transforms = vec![AffineTransform::identity(); volumes.len()];
    for level in (0..pyramid.len()).rev() {
        let vols = &pyramid[level];
        let grads: Vec<VectorVolume> = vols.iter().map(gradient).collect();
        let mut previous = f64::NEG_INFINITY;
        for round in 0..cfg.affine_rounds {
            let template = mean_volume(&vols.iter().zip(&transforms).map(|(v, t)| warp_affine(v, t)).collect::<Vec<_>>());
            let mut total = 0.0;
            for i in 0..vols.len() {
                let (t, val) = register_affine(&template, &vols[i], &grads[i], transforms[i], cfg)?;
                transforms[i] = t;
                total += val;
            }
            center_cohort(&mut transforms)?;
            let mean_cc = total / vols.len() as f64;
            if round + 1 == cfg.affine_rounds && mean_cc < previous - 1e-6 {
                warn!("affine level {level}: mean CC fell in the last round ({previous:.5} -> {mean_cc:.5})");
            }
            previous = mean_cc;
        }
    }
    Ok(transforms)
}
