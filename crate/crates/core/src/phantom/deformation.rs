use nalgebra::{Matrix2, Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form deformation families. Parameters describe the map at amplitude 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeformationKind {
    Translation {
        displacement: [f64; 3],
    },
    RigidRotation {
        axis: [f64; 3],
        /// Radians.
        angle: f64,
        center: [f64; 3],
    },
    /// `x[along] += A sin(2π (x[across] - offset) / wavelength)`; volume preserving.
    IncompressibleShear {
        along: usize,
        across: usize,
        amplitude: f64,
        wavelength: f64,
        offset: f64,
    },
    /// Rotation about an axis-parallel line by an angle that decays with the
    /// in-plane radius and the axial distance. The map is the time-one flow of a
    /// divergence-free stationary velocity field.
    DivergenceFreeSwirl {
        axis: usize,
        center: [f64; 3],
        /// Peak rotation angle in radians.
        angle: f64,
        /// In-plane Gaussian radius (mm).
        radius: f64,
        /// Axial Gaussian half-width (mm).
        height: f64,
    },
}

impl DeformationKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            DeformationKind::Translation { displacement } => {
                if displacement.iter().any(|v| !v.is_finite()) {
                    return Err(Error::param("displacement", "must be finite"));
                }
            }
            DeformationKind::RigidRotation { axis, angle, .. } => {
                let n = Vector3::from(*axis).norm();
                if !(n > 0.0 && n.is_finite()) || !angle.is_finite() {
                    return Err(Error::param("axis", "rotation axis must be a nonzero finite vector"));
                }
            }
            DeformationKind::IncompressibleShear {
                along,
                across,
                wavelength,
                ..
            } => {
                if *along > 2 || *across > 2 || along == across {
                    return Err(Error::param("along", "shear needs two distinct axes in 0..3"));
                }
                if !(*wavelength > 0.0) {
                    return Err(Error::param("wavelength", "must be positive"));
                }
            }
            DeformationKind::DivergenceFreeSwirl {
                axis,
                radius,
                height,
                ..
            } => {
                if *axis > 2 {
                    return Err(Error::param("axis", "swirl axis must be 0, 1 or 2"));
                }
                if !(*radius > 0.0 && *height > 0.0) {
                    return Err(Error::param("radius", "swirl radius and height must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn is_incompressible(&self) -> bool {
        true
    }

    /// Image of `p` under the map at amplitude `s`.
    pub fn forward(&self, p: &Vector3<f64>, s: f64) -> Vector3<f64> {
        self.apply(p, s)
    }

    /// Preimage of `p` under the map at amplitude `s`.
    pub fn inverse(&self, p: &Vector3<f64>, s: f64) -> Vector3<f64> {
        // every family here is inverted by negating the amplitude
        self.apply(p, -s)
    }

    fn apply(&self, p: &Vector3<f64>, s: f64) -> Vector3<f64> {
        match self {
            DeformationKind::Translation { displacement } => p + s * Vector3::from(*displacement),
            DeformationKind::RigidRotation {
                axis,
                angle,
                center,
            } => {
                let c = Vector3::from(*center);
                let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(*axis)), s * angle);
                c + r * (p - c)
            }
            DeformationKind::IncompressibleShear {
                along,
                across,
                amplitude,
                wavelength,
                offset,
            } => {
                let mut q = *p;
                let k = 2.0 * std::f64::consts::PI / wavelength;
                q[*along] += s * amplitude * (k * (p[*across] - offset)).sin();
                q
            }
            DeformationKind::DivergenceFreeSwirl { axis, center, .. } => {
                let (a, b, n) = swirl_axes(*axis);
                let d = p - Vector3::from(*center);
                let g = self.swirl_angle(&d, s);
                let (sn, cs) = g.sin_cos();
                let mut q = *p;
                q[a] = center[a] + cs * d[a] - sn * d[b];
                q[b] = center[b] + sn * d[a] + cs * d[b];
                q[n] = p[n];
                q
            }
        }
    }

    fn swirl_angle(&self, d: &Vector3<f64>, s: f64) -> f64 {
        match self {
            DeformationKind::DivergenceFreeSwirl {
                axis,
                angle,
                radius,
                height,
                ..
            } => {
                let (a, b, n) = swirl_axes(*axis);
                let r2 = d[a] * d[a] + d[b] * d[b];
                s * angle
                    * (-r2 / (2.0 * radius * radius)).exp()
                    * (-d[n] * d[n] / (2.0 * height * height)).exp()
            }
            _ => 0.0,
        }
    }

    /// Analytic Jacobian of [`forward`](Self::forward) at `p`.
    pub fn jacobian(&self, p: &Vector3<f64>, s: f64) -> Matrix3<f64> {
        match self {
            DeformationKind::Translation { .. } => Matrix3::identity(),
            DeformationKind::RigidRotation { axis, angle, .. } => {
                *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(*axis)), s * angle)
                    .matrix()
            }
            DeformationKind::IncompressibleShear {
                along,
                across,
                amplitude,
                wavelength,
                offset,
            } => {
                let k = 2.0 * std::f64::consts::PI / wavelength;
                let mut j = Matrix3::identity();
                j[(*along, *across)] = s * amplitude * k * (k * (p[*across] - offset)).cos();
                j
            }
            DeformationKind::DivergenceFreeSwirl {
                axis,
                center,
                radius,
                height,
                ..
            } => {
                let (a, b, n) = swirl_axes(*axis);
                let d = p - Vector3::from(*center);
                let g = self.swirl_angle(&d, s);
                let mut grad = Vector3::zeros();
                grad[a] = -g * d[a] / (radius * radius);
                grad[b] = -g * d[b] / (radius * radius);
                grad[n] = -g * d[n] / (height * height);
                let (sn, cs) = g.sin_cos();
                let rot = Matrix2::new(cs, -sn, sn, cs);
                let drot = Matrix2::new(-sn, -cs, cs, -sn);
                let w = drot * Vector2::new(d[a], d[b]);
                let mut j = Matrix3::zeros();
                j[(n, n)] = 1.0;
                for (ri, r) in [a, b].into_iter().enumerate() {
                    for (ci, c) in [a, b].into_iter().enumerate() {
                        j[(r, c)] = rot[(ri, ci)];
                    }
                    for c in 0..3 {
                        j[(r, c)] += w[ri] * grad[c];
                    }
                }
                j
            }
        }
    }

    /// Stationary velocity whose time-one flow is this map at amplitude `s`.
    pub fn velocity(&self, p: &Vector3<f64>, s: f64) -> Option<Vector3<f64>> {
        match self {
            DeformationKind::Translation { displacement } => Some(s * Vector3::from(*displacement)),
            DeformationKind::RigidRotation {
                axis,
                angle,
                center,
            } => {
                let u = Unit::new_normalize(Vector3::from(*axis));
                Some((s * angle) * u.cross(&(p - Vector3::from(*center))))
            }
            DeformationKind::IncompressibleShear { .. } => Some(self.apply(p, s) - p),
            DeformationKind::DivergenceFreeSwirl { axis, center, .. } => {
                let (a, b, _) = swirl_axes(*axis);
                let d = p - Vector3::from(*center);
                let g = self.swirl_angle(&d, s);
                let mut v = Vector3::zeros();
                v[a] = -g * d[b];
                v[b] = g * d[a];
                Some(v)
            }
        }
    }
}

/// In-plane axes `(a, b)` and normal `n` forming a right-handed triple.
#[inline]
fn swirl_axes(axis: usize) -> (usize, usize, usize) {
    ((axis + 1) % 3, (axis + 2) % 3, axis)
}

/// A deformation family with a per-frame amplitude schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDeformation {
    #[serde(flatten)]
    pub kind: DeformationKind,
    /// Amplitude at each frame; frame 0 is the undeformed reference.
    pub schedule: Vec<f64>,
}

impl AnalyticDeformation {
    pub fn identity(frames: usize) -> Self {
        AnalyticDeformation {
            kind: DeformationKind::Translation {
                displacement: [0.0; 3],
            },
            schedule: vec![0.0; frames],
        }
    }

    /// Linear ramp from 0 at frame 0 to 1 at the last frame.
    pub fn ramp(kind: DeformationKind, frames: usize) -> Self {
        let last = frames.saturating_sub(1).max(1) as f64;
        AnalyticDeformation {
            kind,
            schedule: (0..frames).map(|t| t as f64 / last).collect(),
        }
    }

    pub fn frames(&self) -> usize {
        self.schedule.len()
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        self.kind.validate()?;
        if self.schedule.len() != frames {
            return Err(Error::param(
                "schedule",
                format!("{} amplitudes for {frames} frames", self.schedule.len()),
            ));
        }
        if self.schedule.first().is_some_and(|&a| a != 0.0) {
            return Err(Error::param("schedule", "frame 0 must have amplitude 0"));
        }
        Ok(())
    }

    pub fn at_frame(&self, t: usize) -> Warp {
        Warp::single(self.kind.clone(), self.schedule[t])
    }
}

/// A composition of closed-form maps, applied first to last.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Warp {
    pub steps: Vec<(DeformationKind, f64)>,
}

impl Warp {
    pub fn identity() -> Self {
        Warp { steps: Vec::new() }
    }

    pub fn single(kind: DeformationKind, amplitude: f64) -> Self {
        Warp {
            steps: vec![(kind, amplitude)],
        }
    }

    pub fn then(mut self, kind: DeformationKind, amplitude: f64) -> Self {
        self.steps.push((kind, amplitude));
        self
    }

    /// `other ∘ self`: apply `self`, then `other`.
    pub fn followed_by(mut self, other: &Warp) -> Self {
        self.steps.extend(other.steps.iter().cloned());
        self
    }

    pub fn forward(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.steps.iter().fold(*p, |q, (k, s)| k.forward(&q, *s))
    }

    pub fn inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.steps.iter().rev().fold(*p, |q, (k, s)| k.inverse(&q, *s))
    }

    pub fn jacobian(&self, p: &Vector3<f64>) -> Matrix3<f64> {
        let mut q = *p;
        let mut j = Matrix3::identity();
        for (k, s) in &self.steps {
            j = k.jacobian(&q, *s) * j;
            q = k.forward(&q, *s);
        }
        j
    }
}
