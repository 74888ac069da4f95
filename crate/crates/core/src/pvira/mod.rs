//! Phase-based incompressible diffeomorphic motion tracking.
//!
//! Each later frame is registered to frame 0 by accumulating a stationary
//! velocity field `v` from symmetric phase-demons increments. After every
//! increment `v` is made divergence-free inside the tissue mask, smoothed, and
//! exponentiated into a forward/inverse displacement pair.

mod diffeo;
mod project;
mod update;

use log::{debug, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use diffeo::{compose, squaring_steps, DiffeoField};
pub use project::incompressibility_project;
pub use update::{velocity_update, warp_phase};

use crate::error::{Error, Result};
use crate::field::smooth::{downsample, resample_vector, smooth_vector};
use crate::field::{divergence, pairwise_sum, GridGeometry, RegionMask, ScalarVolume, VectorVolume};
use crate::harp::{combine_masks, extract_phase_with, wrapped_gradient, HarpConfig, PhasePair};
use crate::phantom::Orientation;
use update::{update_from_terms, warp_harmonic, PhaseTerms};

/// Minimum tag period, in voxels, for a pyramid level to be used. Central
/// differences of wrapped phase need the two-voxel stencil to fit inside half
/// a period.
const MIN_VOXELS_PER_PERIOD: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PviraConfig {
    /// Normalization factor in mm²; `None` uses the squared mean spacing of each level.
    pub k: Option<f64>,
    /// Gaussian sigma (voxels) applied to each increment.
    pub fluid_sigma: f64,
    /// Gaussian sigma (voxels) applied to the accumulated velocity.
    pub diffusion_sigma: f64,
    pub iterations: usize,
    pub levels: usize,
    /// Warn when the mean |div v| inside the mask exceeds this (per frame unit).
    pub incompressibility_tolerance: f64,
    /// Stop a level once the RMS increment falls below this (voxels).
    pub update_tolerance: f64,
    /// HARP magnitude threshold for the tissue mask.
    pub mask_threshold: f64,
}

impl Default for PviraConfig {
    fn default() -> Self {
        PviraConfig {
            k: None,
            fluid_sigma: 1.0,
            diffusion_sigma: 1.0,
            iterations: 50,
            levels: 3,
            incompressibility_tolerance: 0.05,
            update_tolerance: 1e-4,
            mask_threshold: 0.25,
        }
    }
}

impl PviraConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.k {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::param("k", "must be positive"));
            }
        }
        if !(self.fluid_sigma >= 0.0) {
            return Err(Error::param("fluid_sigma", "must be nonnegative"));
        }
        if !(self.diffusion_sigma >= 0.0) {
            return Err(Error::param("diffusion_sigma", "must be nonnegative"));
        }
        if self.iterations < 1 {
            return Err(Error::param("iterations", "need at least one iteration"));
        }
        if self.levels < 1 {
            return Err(Error::param("levels", "need at least one level"));
        }
        if !(self.incompressibility_tolerance > 0.0) {
            return Err(Error::param("incompressibility_tolerance", "must be positive"));
        }
        if !(self.update_tolerance >= 0.0) {
            return Err(Error::param("update_tolerance", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return Err(Error::param("mask_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn k_at(&self, finest: &GridGeometry, level: &GridGeometry) -> f64 {
        match self.k {
            Some(k) => k * (level.mean_spacing() / finest.mean_spacing()).powi(2),
            None => level.mean_spacing().powi(2),
        }
    }
}

/// One row of the convergence log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub frame: usize,
    pub level: usize,
    pub iteration: usize,
    /// RMS increment inside the mask (voxels of the level).
    pub update_rms: f64,
    /// Mean |div v| inside the mask.
    pub mean_abs_div: f64,
    /// Mean squared wrapped phase difference inside the mask (rad²).
    pub mismatch: f64,
}

#[derive(Clone, Debug)]
pub struct Tracking {
    /// One field per frame; frame 0 is the identity.
    pub fields: Vec<DiffeoField>,
    pub velocities: Vec<VectorVolume>,
    pub mask: RegionMask,
    pub levels_used: usize,
    pub log: Vec<LogEntry>,
}

/// Phase volumes for every frame, indexed `[orientation][frame]` in
/// [`Orientation::ALL`] order.
pub type PhaseSequence = [Vec<PhasePair>; 3];

/// HARP phases for tagged sequences indexed `[orientation][frame]`.
pub fn phases_from_tagged(tagged: &[Vec<ScalarVolume>; 3], period: f64, harp: &HarpConfig) -> Result<PhaseSequence> {
    let mut out: [Vec<PhasePair>; 3] = Default::default();
    for (o, orientation) in Orientation::ALL.iter().enumerate() {
        out[o] = tagged[o]
            .iter()
            .map(|v| extract_phase_with(v, *orientation, period, harp))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

struct Level {
    geometry: GridGeometry,
    harmonics: [Vec<Complex64>; 3],
}

fn pyramid(finest: GridGeometry, harmonics: [Vec<Complex64>; 3], levels: usize) -> Vec<Level> {
    let mut out = vec![Level {
        geometry: finest,
        harmonics,
    }];
    while out.len() < levels {
        let last = out.last().expect("nonempty");
        let mut g = last.geometry;
        let harmonics = std::array::from_fn(|o| {
            let (cg, h) = downsample(&last.geometry, &last.harmonics[o]);
            g = cg;
            h
        });
        out.push(Level { geometry: g, harmonics });
    }
    out
}

/// Tag period estimated from the median modified-gradient norm inside the mask.
fn estimate_period(phase: &PhasePair, mask: &RegionMask) -> f64 {
    let grad = wrapped_gradient(&phase.phase);
    let mut norms: Vec<f64> = mask.indices().iter().map(|&n| grad.vectors()[n].norm()).collect();
    if norms.is_empty() {
        return f64::INFINITY;
    }
    norms.sort_by(f64::total_cmp);
    let median = norms[norms.len() / 2];
    if median > 0.0 {
        2.0 * std::f64::consts::PI / median
    } else {
        f64::INFINITY
    }
}

fn usable_levels(g: &GridGeometry, period: f64, requested: usize) -> usize {
    let mut levels = 1;
    let mut cg = g.coarsened();
    while levels < requested && period / cg.max_spacing() >= MIN_VOXELS_PER_PERIOD && cg.dims.iter().all(|&d| d >= 8) {
        levels += 1;
        cg = cg.coarsened();
    }
    levels
}

fn masked_rms(v: &VectorVolume, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = idx.iter().map(|&n| v.vectors()[n].norm_squared()).collect();
    (pairwise_sum(&sq) / idx.len() as f64).sqrt()
}

fn masked_mean(values: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let sel: Vec<f64> = idx.iter().map(|&n| values[n]).collect();
    pairwise_sum(&sel) / idx.len() as f64
}

struct FrameResult {
    velocity: VectorVolume,
    log: Vec<LogEntry>,
}

fn track_frame(
    frame: usize,
    reference: &[Level],
    moving: &[Level],
    masks: &[RegionMask],
    cfg: &PviraConfig,
) -> Result<FrameResult> {
    let finest = reference[0].geometry;
    let mut v = VectorVolume::zeros(reference[reference.len() - 1].geometry);
    let mut log = Vec::new();
    let mut best: Option<(f64, VectorVolume)> = None;

    for level in (0..reference.len()).rev() {
        let g = reference[level].geometry;
        if !v.geometry().matches(&g) {
            v = resample_vector(&v, &g);
        }
        let mask = &masks[level];
        let inside = mask.indices();
        let k = cfg.k_at(&finest, &g);
        let h = g.mean_spacing();
        let ref_terms: [PhaseTerms; 3] =
            std::array::from_fn(|o| PhaseTerms::from_harmonic(g, &reference[level].harmonics[o]));
        let evaluate = |forward: &VectorVolume| {
            let terms: [PhaseTerms; 3] = std::array::from_fn(|o| {
                PhaseTerms::from_harmonic(g, &warp_harmonic(&g, &moving[level].harmonics[o], forward))
            });
            update_from_terms(&ref_terms, &terms, k)
        };

        let mut forward = DiffeoField::exponentiate_forward(&v);
        let mut first_rms = None;
        let mut last_rms = 0.0;
        for iteration in 0..cfg.iterations {
            let (dv, alpha2) = evaluate(&forward);
            let mismatch = masked_mean(&alpha2, &inside);
            if level == 0 && best.as_ref().is_none_or(|(m, _)| mismatch < *m) {
                best = Some((mismatch, v.clone()));
            }
            let masked = VectorVolume::new(
                g,
                dv.vectors().iter().zip(mask.weights()).map(|(u, w)| u * *w).collect(),
            )?;
            let dv = smooth_vector(&masked, cfg.fluid_sigma);
            let rms = masked_rms(&dv, &inside) / h;
            v = v.axpy(1.0, &dv)?;
            v = incompressibility_project(&v, mask)?;
            v = smooth_vector(&v, cfg.diffusion_sigma);
            forward = DiffeoField::exponentiate_forward(&v);
            let div = divergence(&v);
            let mean_abs_div = masked_mean(&div.values().iter().map(|d| d.abs()).collect::<Vec<_>>(), &inside);
            log.push(LogEntry {
                frame,
                level,
                iteration,
                update_rms: rms,
                mean_abs_div,
                mismatch,
            });
            first_rms.get_or_insert(rms);
            last_rms = rms;
            if rms < cfg.update_tolerance {
                break;
            }
        }
        debug!("frame {frame} level {level}: final update {last_rms:.3e} voxels");
        if let Some(first) = first_rms {
            if last_rms >= first && first > cfg.update_tolerance {
                warn!("frame {frame} level {level}: update norm did not decrease ({first:.3e} -> {last_rms:.3e})");
            }
        }
        if let Some(e) = log.last() {
            if e.mean_abs_div > cfg.incompressibility_tolerance {
                warn!("frame {frame} level {level}: mean |div v| {:.3e} above tolerance", e.mean_abs_div);
            }
        }
        if level == 0 {
            let (_, alpha2) = evaluate(&forward);
            let mismatch = masked_mean(&alpha2, &inside);
            if best.as_ref().is_none_or(|(m, _)| mismatch < *m) {
                best = Some((mismatch, v.clone()));
            }
        }
    }
    let velocity = best.map(|(_, v)| v).unwrap_or(v);
    Ok(FrameResult { velocity, log })
}

/// Registers every frame to frame 0.
pub fn track(phases: &PhaseSequence, cfg: &PviraConfig) -> Result<Tracking> {
    cfg.validate()?;
    let frames = phases[0].len();
    if frames < 2 || phases.iter().any(|p| p.len() != frames) {
        return Err(Error::param("phases", "need the same number (≥ 2) of frames for every orientation"));
    }
    let g = *phases[0][0].geometry();
    for p in phases.iter().flatten() {
        g.ensure_matches(p.geometry(), "phase volumes")?;
    }
    let mask = combine_masks(
        [&phases[0][0].magnitude, &phases[1][0].magnitude, &phases[2][0].magnitude],
        cfg.mask_threshold,
    )?;
    if mask.count() == 0 {
        return Err(Error::EmptyRegion);
    }
    let period = (0..3).map(|o| estimate_period(&phases[o][0], &mask)).fold(f64::INFINITY, f64::min);
    let levels = usable_levels(&g, period, cfg.levels);
    if levels < cfg.levels {
        debug!("tag period {period:.2} mm allows {levels} of {} pyramid levels", cfg.levels);
    }

    let harmonics = |t: usize| -> [Vec<Complex64>; 3] { std::array::from_fn(|o| phases[o][t].harmonic()) };
    let reference = pyramid(g, harmonics(0), levels);
    let masks: Vec<RegionMask> = reference
        .iter()
        .map(|l| {
            let mags: [ScalarVolume; 3] = std::array::from_fn(|o| {
                ScalarVolume::from_raw(l.geometry, l.harmonics[o].iter().map(|c| c.norm()).collect())
            });
            combine_masks([&mags[0], &mags[1], &mags[2]], cfg.mask_threshold)
        })
        .collect::<Result<_>>()?;

    let mut fields = vec![DiffeoField::identity(g)];
    let mut velocities = vec![VectorVolume::zeros(g)];
    let mut log = Vec::new();
    for t in 1..frames {
        let moving = pyramid(g, harmonics(t), levels);
        let r = track_frame(t, &reference, &moving, &masks, cfg)?;
        fields.push(DiffeoField::exponentiate(&r.velocity));
        velocities.push(r.velocity);
        log.extend(r.log);
    }
    Ok(Tracking {
        fields,
        velocities,
        mask,
        levels_used: levels,
        log,
    })
}
