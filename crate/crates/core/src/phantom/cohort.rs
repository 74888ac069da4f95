use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnalyticDeformation, DeformationKind, PhantomSpec, Warp};
use crate::error::{Error, Result};

/// Parameters of a synthetic multi-subject cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub phantom: PhantomSpec,
    pub subjects: usize,
    /// Typical anatomical displacement between subjects (voxels).
    pub shape_amplitude: f64,
    /// Peak motion displacement at the last frame (voxels).
    pub motion_amplitude: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            phantom: PhantomSpec::default(),
            subjects: 6,
            shape_amplitude: 1.5,
            motion_amplitude: 1.5,
        }
    }
}

/// Ground truth for one synthetic subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    /// Map from base anatomy coordinates to subject coordinates.
    pub shape: Warp,
    /// Motion in subject coordinates.
    pub motion: AnalyticDeformation,
    /// Noise seed for this subject's volumes.
    pub seed: u64,
}

/// Peak rotation angle giving a swirl of in-plane `radius` a maximum displacement of `peak` mm.
pub fn swirl_angle_for_peak(radius: f64, peak: f64) -> f64 {
    let max_disp = |angle: f64| {
        (0..=400)
            .map(|n| {
                let r = 4.0 * radius * n as f64 / 400.0;
                let g = angle * (-r * r / (2.0 * radius * radius)).exp();
                2.0 * r * (0.5 * g).sin().abs()
            })
            .fold(0.0, f64::max)
    };
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if max_disp(mid) < peak {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if self.subjects < 1 {
            return Err(Error::param("subjects", "need at least one subject"));
        }
        if !(self.shape_amplitude >= 0.0 && self.motion_amplitude >= 0.0) {
            return Err(Error::param("shape_amplitude", "amplitudes must be nonnegative"));
        }
        Ok(())
    }

    /// Draws subject anatomies and motions. Shapes come in antithetic pairs so the
    /// cohort-average anatomy stays close to the base anatomy.
    pub fn subjects(&self) -> Result<Vec<SubjectTruth>> {
        self.validate()?;
        let p = &self.phantom;
        let h = p.geometry.mean_spacing();
        let radii = p.tissue.radii;
        let center = Vector3::from(p.tissue.center);
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(1 << 20);

        let mut shapes = Vec::with_capacity(self.subjects);
        while shapes.len() < self.subjects {
            let a = self.shape_amplitude * h;
            let t = Vector3::new(
                rng.random_range(-a..a),
                rng.random_range(-a..a),
                rng.random_range(-0.5 * a..0.5 * a),
            );
            let shear = rng.random_range(-a..a);
            let swirl_r = 0.6 * radii[0].min(radii[1]);
            let swirl = swirl_angle_for_peak(swirl_r, a) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let build = |sign: f64| {
                Warp::identity()
                    .then(
                        DeformationKind::IncompressibleShear {
                            along: 0,
                            across: 1,
                            amplitude: shear,
                            wavelength: 4.0 * radii[1],
                            offset: center.y,
                        },
                        sign,
                    )
                    .then(
                        DeformationKind::DivergenceFreeSwirl {
                            axis: 2,
                            center: p.tissue.center,
                            angle: swirl,
                            radius: swirl_r,
                            height: 2.0 * radii[2],
                        },
                        sign,
                    )
                    .then(DeformationKind::Translation { displacement: t.into() }, sign)
            };
            shapes.push(build(1.0));
            if shapes.len() < self.subjects {
                shapes.push(build(-1.0));
            }
        }
        if self.subjects % 2 == 1 {
            // the unpaired subject keeps the base anatomy
            *shapes.last_mut().expect("nonempty") = Warp::identity();
        }

        let frames = p.frames;
        let out = shapes
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let c = shape.forward(&center);
                let jitter = Vector3::new(
                    rng.random_range(-0.15..0.15) * radii[0],
                    rng.random_range(-0.15..0.15) * radii[1],
                    rng.random_range(-0.1..0.1) * radii[2],
                );
                let radius = rng.random_range(0.35..0.55) * radii[0].min(radii[1]);
                let peak = self.motion_amplitude * h * rng.random_range(0.7..1.0);
                let kind = DeformationKind::DivergenceFreeSwirl {
                    axis: 2,
                    center: (c + jitter).into(),
                    angle: swirl_angle_for_peak(radius, peak),
                    radius,
                    height: rng.random_range(0.6..0.9) * radii[2],
                };
                SubjectTruth {
                    id: format!("sub{:02}", i + 1),
                    shape,
                    motion: AnalyticDeformation::ramp(kind, frames),
                    seed: p.seed.wrapping_add(7919 * (i as u64 + 1)),
                }
            })
            .collect();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swirl_peak_calibration() {
        let angle = swirl_angle_for_peak(10.0, 3.0);
        let k = DeformationKind::DivergenceFreeSwirl {
            axis: 2,
            center: [0.0; 3],
            angle,
            radius: 10.0,
            height: 5.0,
        };
        let max = (0..400)
            .map(|n| {
                let p = Vector3::new(n as f64 * 0.1, 0.0, 0.0);
                (k.forward(&p, 1.0) - p).norm()
            })
            .fold(0.0, f64::max);
        assert!((max - 3.0).abs() < 1e-2, "{max}");
    }

    #[test]
    fn cohort_is_deterministic_and_antithetic() {
        let spec = CohortSpec {
            subjects: 4,
            ..CohortSpec::default()
        };
        let a = spec.subjects().unwrap();
        assert_eq!(a, spec.subjects().unwrap());
        assert_eq!(a.len(), 4);
        let p = Vector3::new(5.0, -3.0, 2.0);
        let mean = (a[0].shape.forward(&p) + a[1].shape.forward(&p)) * 0.5;
        assert!((mean - p).norm() < 0.5, "{:?}", mean - p);
        assert!(a.iter().all(|s| s.motion.validate(8).is_ok()));
    }
}
