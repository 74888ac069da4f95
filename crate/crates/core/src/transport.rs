//! Motion transport into atlas material coordinates.
//!
//! A subject motion `m` is carried to the atlas by conjugation with the
//! subject-to-atlas map `φ`: `m̃ = φ ∘ m ∘ φ⁻¹`. The result is a displacement
//! defined at atlas points, so every subject's motion is described on the same
//! frozen anatomy.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::Atlas;
use crate::error::{Error, Result};
use crate::field::{RegionMask, VectorVolume};
use crate::pvira::DiffeoField;

/// One subject frame expressed in atlas coordinates.
#[derive(Clone, Debug)]
pub struct TransportedMotion {
    pub id: String,
    pub label: String,
    /// Displacement at atlas points, zero outside `region`.
    pub displacement: VectorVolume,
    pub region: RegionMask,
}

/// `x ↦ φ(m(φ⁻¹(x))) - x` for `x` in `region`, zero elsewhere.
///
/// `atlas_map.forward` is sampled at subject points and `atlas_map.inverse` at
/// atlas points; both share one grid with `subject_motion`.
pub fn conjugate(subject_motion: &DiffeoField, atlas_map: &DiffeoField, region: &RegionMask) -> Result<VectorVolume> {
    let g = *atlas_map.geometry();
    g.ensure_matches(region.geometry(), "transport region")?;
    g.ensure_matches(subject_motion.geometry(), "subject motion")?;
    g.ensure_matches(atlas_map.inverse.geometry(), "atlas inverse map")?;
    let w = region.weights();
    let out = (0..g.len())
        .into_par_iter()
        .map(|n| {
            if w[n] < 0.5 {
                return Vector3::zeros();
            }
            let x = g.world_of(n);
            let y = x + atlas_map.inverse.vectors()[n];
            let z = subject_motion.apply(&y);
            atlas_map.apply(&z) - x
        })
        .collect();
    VectorVolume::new(g, out)
}

/// Atlas-space transport region: the template foreground dilated by two voxels.
pub fn default_region(atlas: &Atlas, foreground_fraction: f64) -> RegionMask {
    atlas.tissue_mask(foreground_fraction).dilate(2)
}

/// Subject-space counterpart of an atlas region: voxels whose image under `φ` lands in it.
pub fn pull_back_region(region: &RegionMask, atlas_map: &DiffeoField) -> Result<RegionMask> {
    let g = *atlas_map.geometry();
    g.ensure_matches(region.geometry(), "transport region")?;
    Ok(RegionMask::from_predicate(g, |y| {
        let x = g.to_voxel(&(y + atlas_map.forward.interpolate(&y)));
        let idx: Option<Vec<usize>> = (0..3)
            .map(|a| {
                let r = x[a].round();
                (r >= 0.0 && (r as usize) < g.dims[a]).then_some(r as usize)
            })
            .collect();
        idx.is_some_and(|c| region.contains(g.index(c[0], c[1], c[2])))
    }))
}

/// Frame label and its index in a subject's motion sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub label: String,
    pub frame: usize,
}

/// One subject's tracked motion, frame 0 first.
#[derive(Clone, Debug)]
pub struct SubjectMotion {
    pub id: String,
    pub frames: Vec<DiffeoField>,
    pub labels: Vec<FrameLabel>,
}

/// Transports every labelled frame of every subject into the atlas.
/// Output is grouped per subject in atlas order, labels in each subject's order.
pub fn transport_cohort(atlas: &Atlas, motions: &[SubjectMotion], region: &RegionMask) -> Result<Vec<Vec<TransportedMotion>>> {
    for m in motions {
        if !atlas.ids.contains(&m.id) {
            return Err(Error::Manifest(format!("subject `{}` has motion but is not in the atlas", m.id)));
        }
    }
    atlas
        .ids
        .iter()
        .zip(&atlas.mappings)
        .map(|(id, map)| {
            let motion = motions
                .iter()
                .find(|m| &m.id == id)
                .ok_or_else(|| Error::Manifest(format!("no motion for atlas subject `{id}`")))?;
            motion
                .labels
                .iter()
                .map(|fl| {
                    let field = motion.frames.get(fl.frame).ok_or_else(|| {
                        Error::Manifest(format!(
                            "subject `{id}` label `{}` points at frame {} of {}",
                            fl.label,
                            fl.frame,
                            motion.frames.len()
                        ))
                    })?;
                    Ok(TransportedMotion {
                        id: id.clone(),
                        label: fl.label.clone(),
                        displacement: conjugate(field, map, region)?,
                        region: region.clone(),
                    })
                })
                .collect()
        })
        .collect()
}
