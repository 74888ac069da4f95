use num_complex::Complex64;
use rayon::prelude::*;

use super::diffeo::DiffeoField;
use crate::error::Result;
use crate::field::{trilinear_stencil, GridGeometry, ScalarVolume, VectorVolume};
use crate::harp::{wrap, wrapped_gradient, PhasePair};

/// A phase volume together with its modified gradient.
#[derive(Clone, Debug)]
pub(crate) struct PhaseTerms {
    pub phase: ScalarVolume,
    pub grad: VectorVolume,
}

impl PhaseTerms {
    pub fn new(phase: ScalarVolume) -> Self {
        let grad = wrapped_gradient(&phase);
        PhaseTerms { phase, grad }
    }

    pub fn from_harmonic(g: GridGeometry, h: &[Complex64]) -> Self {
        PhaseTerms::new(ScalarVolume::from_raw(g, h.iter().map(|c| wrap(c.arg())).collect()))
    }
}

fn sample(g: &GridGeometry, data: &[Complex64], p: &nalgebra::Vector3<f64>) -> Complex64 {
    let (idx, w) = trilinear_stencil(g, p);
    let mut acc = Complex64::new(0.0, 0.0);
    for n in 0..8 {
        acc += data[idx[n]] * w[n];
    }
    acc
}

/// `h(φ(x))` for a complex image given by its samples on `g`.
pub(crate) fn warp_harmonic(g: &GridGeometry, h: &[Complex64], forward: &VectorVolume) -> Vec<Complex64> {
    forward
        .vectors()
        .par_iter()
        .enumerate()
        .map(|(idx, u)| sample(g, h, &(g.world_of(idx) + u)))
        .collect()
}

/// Resamples a phase volume through the forward map of `warp`.
///
/// Interpolation acts on the complex harmonic `m e^{iΦ}`, never on the
/// wrapped phase itself, so seams are not smeared.
pub fn warp_phase(pair: &PhasePair, warp: &DiffeoField) -> Result<PhasePair> {
    let g = *pair.geometry();
    g.ensure_matches(warp.geometry(), "phase/warp")?;
    Ok(PhasePair::from_harmonic(g, &warp_harmonic(&g, &pair.harmonic(), &warp.forward)))
}

/// Per-voxel update and the phase mismatch `α₂`.
pub(crate) fn update_from_terms(reference: &[PhaseTerms; 3], moving: &[PhaseTerms; 3], k: f64) -> (VectorVolume, Vec<f64>) {
    let g = *reference[0].phase.geometry();
    let eps = 1e-12 * k;
    let (dv, alpha2): (Vec<_>, Vec<_>) = (0..g.len())
        .into_par_iter()
        .map(|n| {
            let mut v0 = nalgebra::Vector3::zeros();
            let (mut a1, mut a2) = (0.0, 0.0);
            for (r, m) in reference.iter().zip(moving) {
                let d = wrap(r.phase.values()[n] - m.phase.values()[n]);
                let s = r.grad.vectors()[n] + m.grad.vectors()[n];
                v0 += s * d;
                a1 += s.norm_squared();
                a2 += d * d;
            }
            let den = a1 + a2 / k;
            let dv = if den < eps { nalgebra::Vector3::zeros() } else { v0 / den };
            (dv, a2)
        })
        .unzip();
    (VectorVolume::from_raw(g, dv), alpha2)
}

/// Symmetric phase-demons velocity increment.
///
/// `pairs[o] = (reference, moving)` for each tag orientation; the moving
/// phases are first resampled through `current`. `k` is the normalization
/// factor in mm².
pub fn velocity_update(pairs: [(&PhasePair, &PhasePair); 3], current: &DiffeoField, k: f64) -> Result<VectorVolume> {
    let g = *pairs[0].0.geometry();
    for (r, m) in pairs {
        g.ensure_matches(r.geometry(), "phase volumes")?;
        g.ensure_matches(m.geometry(), "phase volumes")?;
    }
    g.ensure_matches(current.geometry(), "phase/warp")?;
    if !(k > 0.0) {
        return Err(crate::Error::param("k", "normalization factor must be positive"));
    }
    let reference = pairs.map(|(r, _)| PhaseTerms::new(r.phase.clone()));
    let moving = pairs.map(|(_, m)| PhaseTerms::from_harmonic(g, &warp_harmonic(&g, &m.harmonic(), &current.forward)));
    Ok(update_from_terms(&reference, &moving, k).0)
}
