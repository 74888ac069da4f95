//! Cohort manifest: which volumes belong to which subject, and which frames
//! carry which speech label.
//!
//! Paths inside the manifest are relative to the manifest's own directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use motion_atlas::phantom::Orientation;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_LABELS: [&str; 4] = ["ə", "s", "u", "k"];

fn default_labels() -> Vec<String> {
    DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub version: u32,
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
    pub tag_period_mm: f64,
    /// Atlas-space analysis region; defaults to the dilated template foreground.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<PathBuf>,
    /// Run directory used when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    /// Frame-0 cine volume.
    pub cine: PathBuf,
    /// Tagged frames per orientation name (`axial`, `sagittal`, `coronal`).
    pub tagged: BTreeMap<String, Vec<PathBuf>>,
    /// Label to frame index.
    pub frames: BTreeMap<String, usize>,
}

impl SubjectEntry {
    pub fn tagged(&self, o: Orientation) -> &[PathBuf] {
        self.tagged.get(o.name()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn frame_count(&self) -> usize {
        self.tagged(Orientation::Axial).len()
    }
}

/// A validated manifest plus the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Cohort {
    pub manifest: CohortManifest,
    pub root: PathBuf,
}

/// Usable as a single path component on every platform we write to.
fn is_safe_name(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\', ':', '\0'])
}

impl CohortManifest {
    pub fn validate(&self, root: &Path) -> Result<()> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        if self.version != MANIFEST_VERSION {
            return bad(format!("manifest version {} is not supported (expected {MANIFEST_VERSION})", self.version));
        }
        if !(self.tag_period_mm > 0.0 && self.tag_period_mm.is_finite()) {
            return bad(format!("tag_period_mm must be positive, got {}", self.tag_period_mm));
        }
        if self.labels.is_empty() {
            return bad("manifest declares no frame labels".into());
        }
        let mut seen = BTreeSet::new();
        for l in &self.labels {
            if !is_safe_name(l) {
                return bad(format!("label `{l}` cannot be used as a file name"));
            }
            if !seen.insert(l) {
                return bad(format!("label `{l}` is declared twice"));
            }
        }
        if self.subjects.len() < 2 {
            return bad(format!("need at least 2 subjects, got {}", self.subjects.len()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.subjects {
            if !is_safe_name(&s.id) {
                return bad(format!("subject id `{}` cannot be used as a file name", s.id));
            }
            if !ids.insert(&s.id) {
                return bad(format!("subject `{}` appears twice", s.id));
            }
            self.validate_subject(s, root)?;
        }
        if let Some(r) = &self.region {
            require_file(root, r, "region")?;
        }
        Ok(())
    }

    fn validate_subject(&self, s: &SubjectEntry, root: &Path) -> Result<()> {
        let id = &s.id;
        for key in s.tagged.keys() {
            if key.parse::<Orientation>().map(|o| o.name() != key).unwrap_or(true) {
                return Err(CliError::validation(format!("subject `{id}`: unknown tagged orientation `{key}`")));
            }
        }
        for o in Orientation::ALL {
            if !s.tagged.contains_key(o.name()) {
                return Err(CliError::validation(format!("subject `{id}`: missing tagged orientation `{}`", o.name())));
            }
        }
        let n = s.frame_count();
        for o in Orientation::ALL {
            let len = s.tagged(o).len();
            if len < 2 {
                return Err(CliError::validation(format!(
                    "subject `{id}`: orientation `{}` has {len} frames, need at least 2",
                    o.name()
                )));
            }
            if len != n {
                return Err(CliError::validation(format!(
                    "subject `{id}`: orientation `{}` has {len} frames but `axial` has {n}",
                    o.name()
                )));
            }
        }
        for label in &self.labels {
            match s.frames.get(label) {
                None => return Err(CliError::validation(format!("subject `{id}`: no frame for label `{label}`"))),
                Some(&f) if f >= n => {
                    return Err(CliError::validation(format!(
                        "subject `{id}`: label `{label}` points at frame {f} of {n}"
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = s.frames.keys().find(|l| !self.labels.contains(l)) {
            return Err(CliError::validation(format!("subject `{id}`: label `{extra}` is not declared")));
        }
        require_file(root, &s.cine, &format!("subject `{id}` cine"))?;
        for o in Orientation::ALL {
            for p in s.tagged(o) {
                require_file(root, p, &format!("subject `{id}` {} tagged frame", o.name()))?;
            }
        }
        Ok(())
    }
}

fn require_file(root: &Path, p: &Path, what: &str) -> Result<()> {
    let full = root.join(p);
    if !full.is_file() {
        return Err(CliError::validation(format!("{what}: file {} does not exist", full.display())));
    }
    Ok(())
}

impl Cohort {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: CohortManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("manifest {}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate(&root)?;
        Ok(Cohort { manifest, root })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn ids(&self) -> Vec<String> {
        self.manifest.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn labels(&self) -> &[String] {
        &self.manifest.labels
    }

    /// Frames that need tracking: 0 plus every labelled frame, ascending.
    pub fn tracked_frames(s: &SubjectEntry) -> Vec<usize> {
        let mut f: BTreeSet<usize> = s.frames.values().copied().collect();
        f.insert(0);
        f.into_iter().collect()
    }

    /// `(label, frame)` in declared label order.
    pub fn label_frames<'a>(&'a self, s: &'a SubjectEntry) -> impl Iterator<Item = (&'a str, usize)> + 'a {
        self.manifest.labels.iter().map(|l| (l.as_str(), s.frames[l]))
    }
}

/// Evenly spread frames for `n` labels over a sequence of `frames`, skipping frame 0.
pub fn default_label_frames(frames: usize, n: usize) -> Vec<usize> {
    (1..=n).map(|k| (k * (frames - 1) + n / 2) / n).collect()
}
