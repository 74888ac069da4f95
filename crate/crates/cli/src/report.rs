//! Tables and figures assembled from a finished run directory.

use std::path::{Path, PathBuf};

use motion_atlas::field::nifti::read_vector;
use motion_atlas::field::VectorVolume;
use serde::Deserialize;

use crate::error::{CliError, Result, StageContext};
use crate::svg::{grouped_bars, quiver, Arrow, Series};

const S: &str = "report";

pub const SUBJECT_HEADER: &str = "id,label,MD_mm,E1_mean,E1_sd,E2_mean,E2_sd,E3_mean,E3_sd,voxels";

/// Stage outputs every report needs, relative to the run directory.
pub const TABLES: [&str; 4] = ["strain/subjects.csv", "strain/table.csv", "strain/mean_deformation.csv", "pca/loadings.csv"];

pub fn mean_field(label: &str) -> PathBuf {
    format!("pca/{label}/mean.nii").into()
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct StrainRow {
    #[serde(default)]
    pub id: String,
    pub label: String,
    #[serde(rename = "E1_mean")]
    pub e1: f64,
    #[serde(rename = "E2_mean")]
    pub e2: f64,
    #[serde(rename = "E3_mean")]
    pub e3: f64,
}

impl StrainRow {
    fn principal(&self) -> [f64; 3] {
        [self.e1, self.e2, self.e3]
    }
}

fn read_rows(path: &Path) -> Result<Vec<StrainRow>> {
    let mut r = csv::Reader::from_path(path).at(S, path)?;
    r.deserialize().collect::<Result<Vec<StrainRow>, _>>().at(S, path)
}

/// Category names and (subject, cohort) values for one subject, labels in cohort order.
pub fn comparison(subject: &[StrainRow], cohort: &[StrainRow]) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let (mut cats, mut mine, mut theirs) = (Vec::new(), Vec::new(), Vec::new());
    for c in cohort {
        let Some(row) = subject.iter().find(|r| r.label == c.label) else {
            continue;
        };
        for k in 0..3 {
            cats.push(format!("{} E{}", c.label, k + 1));
            mine.push(row.principal()[k]);
            theirs.push(c.principal()[k]);
        }
    }
    (cats, mine, theirs)
}

/// In-plane arrows on the middle axial slice, every `step` voxels, skipping zero vectors.
pub fn mid_slice_arrows(field: &VectorVolume, step: usize) -> Vec<Arrow> {
    let g = field.geometry();
    let k = g.dims[2] / 2;
    let mut out = Vec::new();
    for j in (0..g.dims[1]).step_by(step) {
        for i in (0..g.dims[0]).step_by(step) {
            let v = field.get(i, j, k);
            if v.x == 0.0 && v.y == 0.0 {
                continue;
            }
            let p = g.world(i, j, k);
            out.push(Arrow { x: p.x, y: p.y, dx: v.x, dy: v.y });
        }
    }
    out
}

fn copy(run: &Path, from: &str, to: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::copy(run.join(from), run.join(to)).at(S, run.join(from))?;
    out.push(to.into());
    Ok(())
}

fn missing(run: &Path, rels: impl IntoIterator<Item = PathBuf>) -> Result<()> {
    let absent: Vec<String> = rels.into_iter().filter(|r| !run.join(r).is_file()).map(|r| r.display().to_string()).collect();
    if absent.is_empty() {
        return Ok(());
    }
    Err(CliError::stage(S, run, format!("missing artifacts: {}", absent.join(", "))))
}

/// Writes the report bundle under `run/report` and returns the written paths relative to `run`.
pub fn generate(run: &Path) -> Result<Vec<PathBuf>> {
    missing(run, TABLES.iter().map(PathBuf::from))?;
    let cohort = read_rows(&run.join("strain/table.csv"))?;
    let subjects = read_rows(&run.join("strain/subjects.csv"))?;
    missing(run, cohort.iter().map(|r| mean_field(&r.label)))?;

    let dir = run.join("report");
    std::fs::create_dir_all(&dir).at(S, &dir)?;
    let mut out = Vec::new();
    copy(run, "strain/table.csv", "report/strain_table.csv", &mut out)?;
    copy(run, "pca/loadings.csv", "report/pc_loadings.csv", &mut out)?;
    copy(run, "strain/mean_deformation.csv", "report/mean_deformation.csv", &mut out)?;

    let mut ids: Vec<&str> = Vec::new();
    for r in &subjects {
        if !ids.contains(&r.id.as_str()) {
            ids.push(&r.id);
        }
    }
    for id in ids {
        let rows: Vec<StrainRow> = subjects.iter().filter(|r| r.id == id).cloned().collect();
        let (cats, mine, theirs) = comparison(&rows, &cohort);
        let series = [
            Series { name: id, color: "#c0392b", values: mine },
            Series { name: "cohort mean", color: "#2c5aa0", values: theirs },
        ];
        let svg = grouped_bars(&format!("Principal strains: {id} vs cohort mean"), &cats, &series, "region-mean strain");
        let rel = format!("report/strain_{id}.svg");
        std::fs::write(run.join(&rel), svg).at(S, run.join(&rel))?;
        out.push(rel.into());
    }

    for row in &cohort {
        let path = run.join(mean_field(&row.label));
        let field = read_vector(&path).at(S, &path)?;
        let g = *field.geometry();
        let step = (g.dims[0].max(g.dims[1]) / 20).max(2);
        let arrows = mid_slice_arrows(&field, step);
        let peak = arrows.iter().map(|a| a.dx.hypot(a.dy)).fold(0.0, f64::max);
        let cell = step as f64 * g.spacing[0].min(g.spacing[1]);
        let scale = if peak > 0.0 { 0.9 * cell / peak } else { 1.0 };
        let lo = g.world(0, 0, 0);
        let hi = g.world(g.dims[0] - 1, g.dims[1] - 1, 0);
        let title = format!("Mean motion /{}/, axial slice {}, peak {peak:.2} mm", row.label, g.dims[2] / 2);
        let svg = quiver(&title, &arrows, [lo.x, hi.x, lo.y, hi.y], scale);
        let rel = format!("report/quiver_{}.svg", row.label);
        std::fs::write(run.join(&rel), svg).at(S, run.join(&rel))?;
        out.push(rel.into());
    }
    Ok(out)
}
