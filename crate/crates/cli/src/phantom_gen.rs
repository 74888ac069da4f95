//! Writes a synthetic cohort to disk together with a ready-to-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use motion_atlas::field::nifti::{write_scalar, write_vector};
use motion_atlas::phantom::{
    generate_cine, generate_tagged_subject, ground_truth_displacement, AnalyticDeformation, CohortSpec, Orientation,
};

use crate::error::{CliError, Result, StageContext};
use crate::manifest::{default_label_frames, CohortManifest, SubjectEntry, DEFAULT_LABELS, MANIFEST_VERSION};

const S: &str = "phantom";

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).at(S, path)
}

/// Generates every subject of `cohort` under `out` and returns the manifest path.
///
/// Per subject: `cine.nii` (frame 0), `tagged/<orientation>_<t>.nii` and the
/// exact displacement at each labelled frame as `truth/<t>.nii`.
pub fn generate(out: &Path, cohort: &CohortSpec) -> Result<PathBuf> {
    cohort.validate().map_err(|e| CliError::validation(format!("cohort: {e}")))?;
    let spec = &cohort.phantom;
    if spec.frames < 2 {
        return Err(CliError::validation("cohort: need at least 2 frames"));
    }
    let subjects = cohort.subjects().map_err(|e| CliError::validation(format!("cohort: {e}")))?;
    let label_frames = default_label_frames(spec.frames, DEFAULT_LABELS.len());
    std::fs::create_dir_all(out).at(S, out)?;
    write_json(&out.join("cohort.json"), cohort)?;

    let mut entries = Vec::new();
    for s in &subjects {
        let dir = out.join(&s.id);
        for sub in ["tagged", "truth"] {
            std::fs::create_dir_all(dir.join(sub)).at(S, dir.join(sub))?;
        }
        let mut one = spec.clone();
        one.seed = s.seed;
        one.frames = 1;
        let cine = generate_cine(&one, &AnalyticDeformation::identity(1), &s.shape).at(S, &dir)?;
        write_scalar(&cine[0], dir.join("cine.nii")).at(S, dir.join("cine.nii"))?;

        let mut subject_spec = spec.clone();
        subject_spec.seed = s.seed;
        let mut tagged = BTreeMap::new();
        for o in Orientation::ALL {
            let frames = generate_tagged_subject(&subject_spec, &s.motion, &s.shape, o).at(S, &dir)?;
            let mut paths = Vec::new();
            for (t, vol) in frames.iter().enumerate() {
                let rel = PathBuf::from(format!("{}/tagged/{}_{t}.nii", s.id, o.name()));
                write_scalar(vol, out.join(&rel)).at(S, out.join(&rel))?;
                paths.push(rel);
            }
            tagged.insert(o.name().to_string(), paths);
        }
        let mut frames = BTreeMap::new();
        for (label, &t) in DEFAULT_LABELS.iter().zip(&label_frames) {
            let truth = ground_truth_displacement(&s.motion, t, &spec.geometry).at(S, &dir)?;
            let path = dir.join(format!("truth/{t}.nii"));
            write_vector(&truth, &path).at(S, &path)?;
            frames.insert(label.to_string(), t);
        }
        entries.push(SubjectEntry {
            id: s.id.clone(),
            cine: format!("{}/cine.nii", s.id).into(),
            tagged,
            frames,
        });
    }
    let manifest = CohortManifest {
        version: MANIFEST_VERSION,
        labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        tag_period_mm: spec.tag_period,
        region: None,
        output: Some("run".into()),
        subjects: entries,
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
