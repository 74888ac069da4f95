//! Harmonic phase (HARP) extraction and wrapped-phase algebra.
//!
//! A tagged volume is band-passed around its first positive harmonic; the
//! argument of the filtered complex image is a material phase that survives
//! tag fading, and its modulus is a tissue-presence indicator.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::fft::{self, Direction};
use crate::field::{gradient, GridGeometry, RegionMask, ScalarVolume, VectorVolume};
use crate::phantom::Orientation;

const TWO_PI: f64 = 2.0 * PI;

/// `mod(θ + π, 2π) - π`, mapping onto `[-π, π)`.
#[inline]
pub fn wrap(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let r = (theta + PI).rem_euclid(TWO_PI);
    // rem_euclid may round up to exactly 2π for inputs just below a multiple
    let r = if r >= TWO_PI { 0.0 } else { r };
    r - PI
}

/// Phase (radians in `[-π, π)`) and magnitude of a harmonic image.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePair {
    pub phase: ScalarVolume,
    pub magnitude: ScalarVolume,
}

impl PhasePair {
    pub fn new(phase: ScalarVolume, magnitude: ScalarVolume) -> Result<Self> {
        phase
            .geometry()
            .ensure_matches(magnitude.geometry(), "phase/magnitude")?;
        if let Some(p) = phase.values().iter().find(|p| !(-PI..PI).contains(*p)) {
            return Err(Error::param("phase", format!("phase value {p} outside [-π, π)")));
        }
        if magnitude.values().iter().any(|m| *m < 0.0) {
            return Err(Error::param("magnitude", "magnitude must be nonnegative"));
        }
        Ok(PhasePair { phase, magnitude })
    }

    pub fn from_harmonic(g: GridGeometry, h: &[Complex64]) -> PhasePair {
        let phase = h.iter().map(|c| wrap(c.arg())).collect();
        let magnitude = h.iter().map(|c| c.norm()).collect();
        PhasePair {
            phase: ScalarVolume::from_raw(g, phase),
            magnitude: ScalarVolume::from_raw(g, magnitude),
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.phase.geometry()
    }

    /// The complex harmonic image `m e^{iφ}`.
    pub fn harmonic(&self) -> Vec<Complex64> {
        self.phase
            .values()
            .iter()
            .zip(self.magnitude.values())
            .map(|(&p, &m)| Complex64::from_polar(m, p))
            .collect()
    }
}

/// Phase gradient that stays continuous across wrap seams: the plain gradient
/// of `Φ` unless the gradient of the half-period shifted phase `W(Φ + π)` is
/// smaller in norm.
pub fn wrapped_gradient(phase: &ScalarVolume) -> VectorVolume {
    let direct = gradient(phase);
    let shifted = gradient(&phase.map(|p| wrap(p + PI)));
    let g = *phase.geometry();
    let out = direct
        .vectors()
        .par_iter()
        .zip(shifted.vectors().par_iter())
        .map(|(d, s)| if d.norm() <= s.norm() { *d } else { *s })
        .collect();
    VectorVolume::from_raw(g, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarpConfig {
    /// Gaussian bandwidth as a fraction of the tag frequency.
    pub sigma_fraction: f64,
    /// Mask threshold as a fraction of the combined magnitude maximum.
    pub threshold_fraction: f64,
}

impl Default for HarpConfig {
    fn default() -> Self {
        HarpConfig {
            sigma_fraction: 0.5,
            threshold_fraction: 0.25,
        }
    }
}

impl HarpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_fraction > 0.0 && self.sigma_fraction.is_finite()) {
            return Err(Error::param("sigma_fraction", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold_fraction) {
            return Err(Error::param("threshold_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn check_nyquist(g: &GridGeometry, period: f64) -> Result<()> {
    if !(period > 2.0 * g.max_spacing()) {
        return Err(Error::param(
            "period",
            format!(
                "tag period {period} mm violates the Nyquist limit {} mm",
                2.0 * g.max_spacing()
            ),
        ));
    }
    Ok(())
}

/// Band-passes `tagged` around the +1 harmonic along `tag_axis` and returns its phase and magnitude.
pub fn extract_phase(tagged: &ScalarVolume, tag_axis: Orientation, period: f64) -> Result<PhasePair> {
    extract_phase_with(tagged, tag_axis, period, &HarpConfig::default())
}

pub fn extract_phase_with(
    tagged: &ScalarVolume,
    tag_axis: Orientation,
    period: f64,
    cfg: &HarpConfig,
) -> Result<PhasePair> {
    let g = *tagged.geometry();
    check_nyquist(&g, period)?;
    cfg.validate()?;
    let f0 = 1.0 / period;
    let sigma = cfg.sigma_fraction * f0;
    let mut center = [0.0; 3];
    center[tag_axis.axis()] = f0;
    let freqs = fft::frequencies(&g);
    let mut data = fft::to_complex(tagged.values());
    fft::fft3d(&mut data, g.dims, Direction::Forward);
    data.par_iter_mut().enumerate().for_each(|(idx, c)| {
        let [i, j, k] = g.coords(idx);
        let d2 = (freqs[0][i] - center[0]).powi(2)
            + (freqs[1][j] - center[1]).powi(2)
            + (freqs[2][k] - center[2]).powi(2);
        *c *= (-d2 / (2.0 * sigma * sigma)).exp();
    });
    fft::fft3d(&mut data, g.dims, Direction::Inverse);
    Ok(PhasePair::from_harmonic(g, &data))
}

/// Tissue mask from three HARP magnitudes: voxelwise geometric mean, normalized
/// by its maximum and binarized at `threshold_fraction`.
pub fn combine_masks(mags: [&ScalarVolume; 3], threshold_fraction: f64) -> Result<RegionMask> {
    let g = *mags[0].geometry();
    for m in &mags[1..] {
        g.ensure_matches(m.geometry(), "magnitude volumes")?;
    }
    if !(0.0..=1.0).contains(&threshold_fraction) {
        return Err(Error::param("threshold_fraction", "must lie in [0, 1]"));
    }
    let combined: Vec<f64> = (0..g.len())
        .map(|n| {
            let p = mags[0].values()[n].max(0.0) * mags[1].values()[n].max(0.0) * mags[2].values()[n].max(0.0);
            p.cbrt()
        })
        .collect();
    let max = combined.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(RegionMask::empty(g));
    }
    let weights = combined
        .iter()
        .map(|c| if c / max >= threshold_fraction { 1.0 } else { 0.0 })
        .collect();
    RegionMask::new(g, weights)
}

/// Mean absolute circular difference between two phase volumes over a mask.
pub fn phase_error(a: &ScalarVolume, b: &ScalarVolume, mask: &RegionMask) -> f64 {
    let idx = mask.indices();
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter()
        .map(|&n| wrap(a.values()[n] - b.values()[n]).abs())
        .sum::<f64>()
        / idx.len() as f64
}

/// Linear phase `wrap(k·x + c)` sampled on `g`.
pub fn linear_phase(g: GridGeometry, k: Vector3<f64>, c: f64) -> ScalarVolume {
    ScalarVolume::from_fn(g, |p| wrap(k.dot(&p) + c))
}
