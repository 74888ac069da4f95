//! Unbiased groupwise atlas of the reference anatomy.
//!
//! Subjects are first aligned affinely to their evolving mean, then each is
//! registered to the template with a stationary velocity field driven by local
//! cross-correlation. After every template update the mean velocity is
//! removed, so the template sits at the centre of the cohort.

mod affine;
mod cc;

use log::debug;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use affine::{center_cohort, groupwise_affine, matrix_exp, matrix_log, warp_affine, AffineTransform};
pub use cc::{cc_metric, CcResult};

use crate::error::{Error, Result};
use crate::field::smooth::{downsample_scalar, resample_vector, smooth_vector};
use crate::field::{pairwise_sum, GridGeometry, RegionMask, ScalarVolume, VectorVolume};
use crate::pvira::DiffeoField;
use affine::mean_volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtlasConfig {
    /// Template updates in the deformable stage.
    pub outer_iterations: usize,
    /// CC window half-width (voxels).
    pub cc_radius: usize,
    pub levels: usize,
    /// Deformable iterations per pyramid level.
    pub iterations: usize,
    /// Largest velocity increment per iteration (voxels).
    pub step: f64,
    /// Gaussian sigma (voxels) on each increment.
    pub fluid_sigma: f64,
    /// Gaussian sigma (voxels) on the accumulated velocity.
    pub diffusion_sigma: f64,
    /// CC window half-width for the affine stage (voxels); `None` spans the
    /// whole grid, i.e. global correlation.
    pub affine_cc_radius: Option<usize>,
    pub affine_rounds: usize,
    pub affine_iterations: usize,
    /// Initial affine step (voxels of displacement).
    pub affine_step: f64,
    /// Re-centre the final maps so the mean inverse displacement vanishes.
    pub recenter: bool,
    /// Foreground threshold as a fraction of the 99th percentile intensity.
    pub foreground_fraction: f64,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        AtlasConfig {
            outer_iterations: 4,
            cc_radius: 2,
            levels: 3,
            iterations: 15,
            step: 0.25,
            fluid_sigma: 1.5,
            diffusion_sigma: 1.0,
            affine_cc_radius: None,
            affine_rounds: 5,
            affine_iterations: 50,
            affine_step: 0.5,
            recenter: true,
            foreground_fraction: 0.1,
        }
    }
}

impl AtlasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cc_radius < 1 {
            return Err(Error::param("cc_radius", "must be at least 1"));
        }
        if self.levels < 1 {
            return Err(Error::param("levels", "need at least one level"));
        }
        if !(self.step > 0.0) {
            return Err(Error::param("step", "must be positive"));
        }
        if !(self.fluid_sigma >= 0.0 && self.diffusion_sigma >= 0.0) {
            return Err(Error::param("fluid_sigma", "sigmas must be nonnegative"));
        }
        if !(self.affine_step > 0.0) {
            return Err(Error::param("affine_step", "must be positive"));
        }
        if !(self.foreground_fraction > 0.0 && self.foreground_fraction < 1.0) {
            return Err(Error::param("foreground_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasLogEntry {
    pub stage: String,
    pub outer: usize,
    pub subject: usize,
    pub level: usize,
    pub cc: f64,
}

/// Template plus per-subject maps.
///
/// `mappings[i].forward` is `φ_i` (subject → atlas) and
/// `mappings[i].inverse` is `φ_i⁻¹` (atlas → subject), both as displacements.
#[derive(Clone, Debug)]
pub struct Atlas {
    pub template: ScalarVolume,
    pub ids: Vec<String>,
    pub mappings: Vec<DiffeoField>,
    pub affines: Vec<AffineTransform>,
    pub log: Vec<AtlasLogEntry>,
}

impl Atlas {
    pub fn geometry(&self) -> &GridGeometry {
        self.template.geometry()
    }

    /// RMS over `region` of the cohort-mean inverse displacement (mm).
    pub fn mean_inverse_displacement_rms(&self, region: &RegionMask) -> f64 {
        let mean = mean_field(&self.mappings.iter().map(|m| m.inverse.clone()).collect::<Vec<_>>());
        let sq: Vec<f64> = region.indices().iter().map(|&n| mean.vectors()[n].norm_squared()).collect();
        if sq.is_empty() {
            return 0.0;
        }
        (pairwise_sum(&sq) / sq.len() as f64).sqrt()
    }

    /// Template voxels above the foreground threshold.
    pub fn tissue_mask(&self, fraction: f64) -> RegionMask {
        foreground(&self.template, fraction)
    }
}

fn percentile99(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * 0.99).round() as usize]
}

/// Voxels at or above `fraction` of the 99th-percentile intensity.
pub fn foreground(vol: &ScalarVolume, fraction: f64) -> RegionMask {
    RegionMask::threshold(vol, fraction * percentile99(vol.values()))
}

/// Zero mean, unit variance inside the foreground.
pub fn normalize_intensity(vol: &ScalarVolume, fraction: f64) -> Result<ScalarVolume> {
    let fg = foreground(vol, fraction);
    let vals: Vec<f64> = fg.indices().iter().map(|&n| vol.values()[n]).collect();
    if vals.len() < 2 {
        return Err(Error::EmptyRegion);
    }
    let m = pairwise_sum(&vals) / vals.len() as f64;
    let var = pairwise_sum(&vals.iter().map(|v| (v - m) * (v - m)).collect::<Vec<_>>()) / vals.len() as f64;
    if !(var > 0.0) {
        return Err(Error::EmptyRegion);
    }
    let sd = var.sqrt();
    Ok(vol.map(|v| (v - m) / sd))
}

pub(crate) fn mean_field(fields: &[VectorVolume]) -> VectorVolume {
    let g = *fields[0].geometry();
    let out = (0..g.len())
        .into_par_iter()
        .map(|n| {
            let s = fields.iter().fold(Vector3::zeros(), |acc, f| acc + f.vectors()[n]);
            s / fields.len() as f64
        })
        .collect();
    VectorVolume::new(g, out).expect("finite mean")
}

/// `S(T(x + u(x)))` on `u`'s grid.
fn warp_subject(subject: &ScalarVolume, t: &AffineTransform, u: &VectorVolume) -> ScalarVolume {
    let g = *u.geometry();
    let values = u
        .vectors()
        .par_iter()
        .enumerate()
        .map(|(n, d)| subject.interpolate(&t.apply(&(g.world_of(n) + d))))
        .collect();
    ScalarVolume::new(g, values).expect("finite warp")
}

fn pyramid(vol: &ScalarVolume, levels: usize) -> Vec<ScalarVolume> {
    let mut out = vec![vol.clone()];
    while out.len() < levels && out.last().expect("nonempty").geometry().dims.iter().all(|&d| d >= 16) {
        let next = downsample_scalar(out.last().expect("nonempty"));
        out.push(next);
    }
    out
}

/// Velocity registration of `S ∘ T` to `template` by CC gradient ascent, coarse to fine.
fn register_svf(
    template: &[ScalarVolume],
    subject: &[ScalarVolume],
    t: &AffineTransform,
    start: VectorVolume,
    cfg: &AtlasConfig,
    mut record: impl FnMut(usize, f64),
) -> Result<VectorVolume> {
    let mut v = start;
    for level in (0..template.len()).rev() {
        let fixed = &template[level];
        let g = *fixed.geometry();
        let moving = &subject[level.min(subject.len() - 1)];
        if !v.geometry().matches(&g) {
            v = resample_vector(&v, &g);
        }
        let h = g.mean_spacing();
        let mut step = cfg.step * h;
        let mut best: Option<(f64, VectorVolume)> = None;
        for _ in 0..cfg.iterations {
            let u = DiffeoField::exponentiate_forward(&v);
            let cc = cc_metric(fixed, &warp_subject(moving, t, &u), cfg.cc_radius)?;
            match &best {
                Some((b, bv)) if cc.value < *b => {
                    v = bv.clone();
                    step *= 0.5;
                    if step < 0.01 * h {
                        break;
                    }
                    continue;
                }
                _ => best = Some((cc.value, v.clone())),
            }
            let force = smooth_vector(&cc.gradient, cfg.fluid_sigma);
            let max = force.max_norm();
            if max == 0.0 {
                break;
            }
            v = smooth_vector(&v.axpy(step / max, &force)?, cfg.diffusion_sigma);
        }
        if let Some((value, bv)) = best {
            v = bv;
            record(level, value);
        }
    }
    Ok(v)
}

/// Deformable groupwise stage on affinely initialised volumes.
pub fn groupwise_deformable(
    volumes: &[ScalarVolume],
    affines: &[AffineTransform],
    ids: &[String],
    cfg: &AtlasConfig,
) -> Result<Atlas> {
    cfg.validate()?;
    let n = volumes.len();
    if n < 1 || affines.len() != n || ids.len() != n {
        return Err(Error::param("volumes", "volumes, affines and ids must have equal nonzero length"));
    }
    let g = *volumes[0].geometry();
    for v in volumes {
        g.ensure_matches(v.geometry(), "cohort volumes")?;
    }
    let subject_pyramids: Vec<Vec<ScalarVolume>> = volumes.iter().map(|v| pyramid(v, cfg.levels)).collect();
    let mut velocities = vec![VectorVolume::zeros(g); n];
    let mut log = Vec::new();
    let warped_all = |vel: &[VectorVolume]| -> Vec<ScalarVolume> {
        (0..n)
            .map(|i| warp_subject(&volumes[i], &affines[i], &DiffeoField::exponentiate_forward(&vel[i])))
            .collect()
    };
    let mut template = mean_volume(&warped_all(&velocities));

    for outer in 0..cfg.outer_iterations {
        let template_pyr = pyramid(&template, cfg.levels);
        for i in 0..n {
            let start = std::mem::replace(&mut velocities[i], VectorVolume::zeros(g));
            let v = register_svf(&template_pyr, &subject_pyramids[i], &affines[i], start, cfg, |level, cc| {
                log.push(AtlasLogEntry {
                    stage: "deformable".into(),
                    outer,
                    subject: i,
                    level,
                    cc,
                })
            })?;
            velocities[i] = if v.geometry().matches(&g) { v } else { resample_vector(&v, &g) };
        }
        let mean_v = mean_field(&velocities);
        let mean_warped = mean_volume(&warped_all(&velocities));
        let back = DiffeoField::exponentiate_forward(&mean_v.scaled(-1.0));
        template = ScalarVolume::new(
            g,
            back.vectors()
                .iter()
                .enumerate()
                .map(|(k, d)| mean_warped.interpolate(&(g.world_of(k) + d)))
                .collect(),
        )?;
        for v in velocities.iter_mut() {
            *v = v.axpy(-1.0, &mean_v)?;
        }
        debug!("atlas outer {outer}: mean velocity max {:.3e} mm", mean_v.max_norm());
    }

    let mut mappings: Vec<DiffeoField> = (0..n)
        .map(|i| {
            let field = DiffeoField::exponentiate(&velocities[i]);
            let t = affines[i];
            let tinv = t.inverse();
            let inverse = VectorVolume::from_fn(g, |x| t.apply(&(x + field.forward.interpolate(&x))) - x);
            let forward = VectorVolume::from_fn(g, |y| {
                let z = tinv.apply(&y);
                z + field.inverse.interpolate(&z) - y
            });
            DiffeoField { forward, inverse }
        })
        .collect();

    if cfg.recenter {
        recenter(&mut mappings, &mut template)?;
    }
    Ok(Atlas {
        template,
        ids: ids.to_vec(),
        mappings,
        affines: affines.to_vec(),
        log,
    })
}

/// Reparametrises the atlas frame by `ψ = id + mean_i(φ_i⁻¹ - id)` so the mean
/// inverse displacement vanishes: `φ_i⁻¹ ← φ_i⁻¹ ∘ ψ⁻¹`, `φ_i ← ψ ∘ φ_i`.
fn recenter(mappings: &mut [DiffeoField], template: &mut ScalarVolume) -> Result<()> {
    let g = *template.geometry();
    for _ in 0..3 {
        let mean = mean_field(&mappings.iter().map(|m| m.inverse.clone()).collect::<Vec<_>>());
        let psi_inv = VectorVolume::from_fn(g, |x| {
            let mut y = x;
            for _ in 0..20 {
                y = x - mean.interpolate(&y);
            }
            y - x
        });
        for m in mappings.iter_mut() {
            let inverse = VectorVolume::from_fn(g, |x| {
                let y = x + psi_inv.interpolate(&x);
                y + m.inverse.interpolate(&y) - x
            });
            let forward = VectorVolume::from_fn(g, |y| {
                let z = y + m.forward.interpolate(&y);
                z + mean.interpolate(&z) - y
            });
            *m = DiffeoField { forward, inverse };
        }
        *template = ScalarVolume::from_fn(g, |x| template.interpolate(&(x + psi_inv.interpolate(&x))));
        if mean.max_norm() < 1e-3 * g.min_spacing() {
            break;
        }
    }
    Ok(())
}

/// Full atlas construction: intensity normalization, groupwise affine, groupwise deformable.
pub fn build_atlas(volumes: &[ScalarVolume], ids: &[String], cfg: &AtlasConfig) -> Result<Atlas> {
    cfg.validate()?;
    let normalized: Vec<ScalarVolume> = volumes
        .iter()
        .map(|v| normalize_intensity(v, cfg.foreground_fraction))
        .collect::<Result<_>>()?;
    let affines = if normalized.len() >= 2 {
        groupwise_affine(&normalized, cfg)?
    } else {
        vec![AffineTransform::identity()]
    };
    groupwise_deformable(&normalized, &affines, ids, cfg)
}
