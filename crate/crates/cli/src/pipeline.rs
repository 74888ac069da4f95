//! Stage sequencing over a run directory.
//!
//! Stages talk to each other only through files under the run directory:
//!
//! ```text
//! atlas/      template, per-subject maps, analysis region, tissue mask
//! harp/<id>/  phase and magnitude per orientation and tracked frame
//! pvira/<id>/ forward/inverse fields per tracked frame, mask, log
//! transport/<id>/<label>.nii
//! strain/     per-subject and cohort tables, cohort-mean strain volumes
//! pca/        per-label model directories and the loadings table
//! report/     tables and SVG figures
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use motion_atlas::atlas::build_atlas;
use motion_atlas::field::nifti::{read_scalar, read_vector, write_scalar, write_vector};
use motion_atlas::field::{mean, sample_sd, RegionMask, ScalarVolume, VectorVolume};
use motion_atlas::harp::{extract_phase_with, wrap, PhasePair};
use motion_atlas::mechanics::{mean_deformation_csv, region_stats, strain, strain_table_csv, RegionStats};
use motion_atlas::phantom::Orientation;
use motion_atlas::pvira::{track, DiffeoField, PhaseSequence};
use motion_atlas::statmodel::{fit, loadings_table, MotionSample, SampleSupport};
use motion_atlas::transport::{conjugate, default_region};
use serde_json::json;

use crate::cache::{hash_bytes, is_fresh, store_record, KeyBuilder};
use crate::config::RunConfig;
use crate::error::{CliError, Result, StageContext};
use crate::manifest::Cohort;
use crate::report;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Atlas,
    Harp,
    Pvira,
    Transport,
    Strain,
    Pca,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Atlas,
        Stage::Harp,
        Stage::Pvira,
        Stage::Transport,
        Stage::Strain,
        Stage::Pca,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Atlas => "atlas",
            Stage::Harp => "harp",
            Stage::Pvira => "pvira",
            Stage::Transport => "transport",
            Stage::Strain => "strain",
            Stage::Pca => "pca",
            Stage::Report => "report",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    pub key: String,
    pub cached: bool,
    /// Manifest-referenced inputs and their hashes.
    pub inputs: BTreeMap<String, String>,
}

pub const PROVENANCE: &str = "provenance.json";

const TENSOR_COMPONENTS: [(&str, usize, usize); 6] =
    [("E_xx", 0, 0), ("E_yy", 1, 1), ("E_zz", 2, 2), ("E_xy", 0, 1), ("E_xz", 0, 2), ("E_yz", 1, 2)];

fn atlas_map(id: &str, dir: &str) -> PathBuf {
    format!("atlas/{id}_{dir}.nii").into()
}

fn harp_file(id: &str, o: Orientation, t: usize, kind: &str) -> PathBuf {
    format!("harp/{id}/{}_{t}_{kind}.nii", o.name()).into()
}

fn pvira_field(id: &str, t: usize, dir: &str) -> PathBuf {
    format!("pvira/{id}/{t}_{dir}.nii").into()
}

fn transport_file(id: &str, label: &str) -> PathBuf {
    format!("transport/{id}/{label}.nii").into()
}

const REGION: &str = "atlas/region.nii";
const TISSUE: &str = "atlas/tissue.nii";

/// Inputs a stage reads: a stable name and the file on disk.
struct Plan {
    config: serde_json::Value,
    inputs: Vec<(String, PathBuf)>,
}

pub struct Run {
    pub cohort: Cohort,
    pub config: RunConfig,
    pub dir: PathBuf,
}

fn intersect(a: &RegionMask, b: &RegionMask) -> motion_atlas::Result<RegionMask> {
    let w = a.weights().iter().zip(b.weights()).map(|(x, y)| x.min(*y)).collect();
    RegionMask::new(*a.geometry(), w)
}

impl Run {
    /// `dir` overrides the manifest's `output` entry.
    pub fn new(cohort: Cohort, config: RunConfig, dir: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let dir = match (dir, &cohort.manifest.output) {
            (Some(d), _) => d,
            (None, Some(o)) => cohort.resolve(o),
            (None, None) => return Err(CliError::validation("no run directory: pass one or set `output` in the manifest")),
        };
        Ok(Run { cohort, config, dir })
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    fn subjects(&self) -> &[crate::manifest::SubjectEntry] {
        &self.cohort.manifest.subjects
    }

    fn plan(&self, stage: Stage) -> Plan {
        let run = |rel: PathBuf| (format!("run:{}", rel.display()), self.path(rel));
        let ext = |p: &Path| (format!("in:{}", p.display()), self.cohort.resolve(p));
        let labels = self.cohort.labels();
        let mut inputs = Vec::new();
        let config = match stage {
            Stage::Atlas => {
                for s in self.subjects() {
                    inputs.push(ext(&s.cine));
                }
                if let Some(r) = &self.cohort.manifest.region {
                    inputs.push(ext(r));
                }
                json!({ "ids": self.cohort.ids(), "atlas": self.config.atlas })
            }
            Stage::Harp => {
                let mut frames = BTreeMap::new();
                for s in self.subjects() {
                    let tracked = Cohort::tracked_frames(s);
                    for o in Orientation::ALL {
                        for &t in &tracked {
                            inputs.push(ext(&s.tagged(o)[t]));
                        }
                    }
                    frames.insert(s.id.clone(), tracked);
                }
                json!({ "harp": self.config.harp, "period": self.cohort.manifest.tag_period_mm, "frames": frames })
            }
            Stage::Pvira => {
                for s in self.subjects() {
                    for o in Orientation::ALL {
                        for t in Cohort::tracked_frames(s) {
                            inputs.push(run(harp_file(&s.id, o, t, "phase")));
                            inputs.push(run(harp_file(&s.id, o, t, "magnitude")));
                        }
                    }
                }
                json!({ "pvira": self.config.pvira })
            }
            Stage::Transport => {
                inputs.push(run(REGION.into()));
                let mut frames = BTreeMap::new();
                for s in self.subjects() {
                    inputs.push(run(atlas_map(&s.id, "forward")));
                    inputs.push(run(atlas_map(&s.id, "inverse")));
                    for (_, t) in self.cohort.label_frames(s) {
                        inputs.push(run(pvira_field(&s.id, t, "forward")));
                        inputs.push(run(pvira_field(&s.id, t, "inverse")));
                    }
                    frames.insert(s.id.clone(), s.frames.clone());
                }
                json!({ "labels": labels, "frames": frames })
            }
            Stage::Strain | Stage::Pca => {
                inputs.push(run(if stage == Stage::Strain { TISSUE } else { REGION }.into()));
                for s in self.subjects() {
                    for l in labels {
                        inputs.push(run(transport_file(&s.id, l)));
                    }
                }
                if stage == Stage::Strain {
                    json!({ "ids": self.cohort.ids(), "labels": labels, "mechanics": self.config.mechanics })
                } else {
                    json!({ "ids": self.cohort.ids(), "labels": labels, "pca": self.config.pca })
                }
            }
            Stage::Report => {
                for rel in report::TABLES {
                    inputs.push(run(rel.into()));
                }
                for l in labels {
                    inputs.push(run(report::mean_field(l)));
                }
                json!({})
            }
        };
        inputs.sort();
        inputs.dedup();
        Plan { config, inputs }
    }

    /// Runs one stage unless its cache record is still valid.
    pub fn execute(&self, stage: Stage) -> Result<StageOutcome> {
        let name = stage.name();
        let plan = self.plan(stage);
        let mut key = KeyBuilder::new(name).config(&plan.config);
        for (input, path) in &plan.inputs {
            if !path.is_file() {
                return Err(CliError::stage(name, path, "missing input artifact"));
            }
            key.input(input, path).at(name, path)?;
        }
        let (key, inputs) = key.finish();
        let inputs: BTreeMap<String, String> =
            inputs.into_iter().filter_map(|(k, v)| k.strip_prefix("in:").map(|p| (p.to_string(), v))).collect();
        if is_fresh(&self.dir, name, &key) {
            info!("{name}: up to date");
            return Ok(StageOutcome { stage, key, cached: true, inputs });
        }
        info!("{name}: running");
        let outputs = match stage {
            Stage::Atlas => self.atlas()?,
            Stage::Harp => self.harp()?,
            Stage::Pvira => self.pvira()?,
            Stage::Transport => self.transport()?,
            Stage::Strain => self.strain()?,
            Stage::Pca => self.pca()?,
            Stage::Report => report::generate(&self.dir)?,
        };
        store_record(&self.dir, name, &key, &outputs).at(name, self.path(crate::cache::CACHE_DIR))?;
        Ok(StageOutcome { stage, key, cached: false, inputs })
    }

    /// Every stage in order, then the provenance record.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            out.push(self.execute(stage)?);
        }
        self.write_provenance(&out)?;
        Ok(out)
    }

    fn write_provenance(&self, outcomes: &[StageOutcome]) -> Result<()> {
        let inputs: BTreeMap<&String, &String> = outcomes.iter().flat_map(|o| &o.inputs).collect();
        let manifest = serde_json::to_string(&self.cohort.manifest).expect("manifest serializes");
        let stages: Vec<_> = outcomes.iter().map(|o| json!({ "stage": o.stage.name(), "key": o.key })).collect();
        let record = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.config.hash(),
            "config": self.config,
            "manifest_hash": hash_bytes(manifest.as_bytes()),
            "inputs": inputs,
            "stages": stages,
        });
        let mut text = serde_json::to_string_pretty(&record).expect("provenance serializes");
        text.push('\n');
        let path = self.path(PROVENANCE);
        std::fs::create_dir_all(&self.dir).at("pipeline", &self.dir)?;
        std::fs::write(&path, text).at("pipeline", &path)
    }

    fn ensure_parent(&self, stage: &'static str, rel: &Path) -> Result<PathBuf> {
        let path = self.path(rel);
        let parent = path.parent().expect("run files live in a directory");
        std::fs::create_dir_all(parent).at(stage, parent)?;
        Ok(path)
    }

    fn put_scalar(&self, stage: &'static str, rel: PathBuf, vol: &ScalarVolume, out: &mut Vec<PathBuf>) -> Result<()> {
        let path = self.ensure_parent(stage, &rel)?;
        write_scalar(vol, &path).at(stage, &path)?;
        out.push(rel);
        Ok(())
    }

    fn put_vector(&self, stage: &'static str, rel: PathBuf, vol: &VectorVolume, out: &mut Vec<PathBuf>) -> Result<()> {
        let path = self.ensure_parent(stage, &rel)?;
        write_vector(vol, &path).at(stage, &path)?;
        out.push(rel);
        Ok(())
    }

    fn put_text(&self, stage: &'static str, rel: PathBuf, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
        let path = self.ensure_parent(stage, &rel)?;
        std::fs::write(&path, text).at(stage, &path)?;
        out.push(rel);
        Ok(())
    }

    fn get_scalar(&self, stage: &'static str, path: &Path) -> Result<ScalarVolume> {
        read_scalar(path).at(stage, path)
    }

    fn get_vector(&self, stage: &'static str, rel: &Path) -> Result<VectorVolume> {
        let path = self.path(rel);
        read_vector(&path).at(stage, &path)
    }

    fn get_mask(&self, stage: &'static str, rel: &str) -> Result<RegionMask> {
        Ok(RegionMask::threshold(&self.get_scalar(stage, &self.path(rel))?, 0.5))
    }

    fn get_field(&self, stage: &'static str, forward: PathBuf, inverse: PathBuf) -> Result<DiffeoField> {
        Ok(DiffeoField {
            forward: self.get_vector(stage, &forward)?,
            inverse: self.get_vector(stage, &inverse)?,
        })
    }

    fn atlas(&self) -> Result<Vec<PathBuf>> {
        const S: &str = "atlas";
        let cfg = &self.config.atlas;
        let vols = self
            .subjects()
            .iter()
            .map(|s| self.get_scalar(S, &self.cohort.resolve(&s.cine)))
            .collect::<Result<Vec<_>>>()?;
        let atlas = build_atlas(&vols, &self.cohort.ids(), cfg).at(S, self.path("atlas"))?;
        let g = *atlas.geometry();
        let region = match &self.cohort.manifest.region {
            Some(r) => {
                let path = self.cohort.resolve(r);
                let mask = RegionMask::threshold(&self.get_scalar(S, &path)?, 0.5);
                g.ensure_matches(mask.geometry(), "region").at(S, &path)?;
                mask
            }
            None => default_region(&atlas, cfg.foreground_fraction),
        };
        let tissue = intersect(&atlas.tissue_mask(cfg.foreground_fraction), &region.erode(1)).at(S, self.path(TISSUE))?;
        info!(
            "atlas: mean inverse displacement RMS {:.3e} voxel over {} region voxels",
            atlas.mean_inverse_displacement_rms(&region) / g.mean_spacing(),
            region.count()
        );

        let mut out = Vec::new();
        self.put_scalar(S, "atlas/template.nii".into(), &atlas.template, &mut out)?;
        self.put_scalar(S, REGION.into(), &region.to_volume(), &mut out)?;
        self.put_scalar(S, TISSUE.into(), &tissue.to_volume(), &mut out)?;
        for (id, map) in atlas.ids.iter().zip(&atlas.mappings) {
            self.put_vector(S, atlas_map(id, "forward"), &map.forward, &mut out)?;
            self.put_vector(S, atlas_map(id, "inverse"), &map.inverse, &mut out)?;
        }
        let mut log = String::from("stage,outer,subject,level,cc\n");
        for e in &atlas.log {
            let _ = writeln!(log, "{},{},{},{},{:.8}", e.stage, e.outer, e.subject, e.level, e.cc);
        }
        self.put_text(S, "atlas/convergence.csv".into(), &log, &mut out)?;
        let mut aff = String::from("id,a11,a12,a13,a21,a22,a23,a31,a32,a33,t1,t2,t3\n");
        for (id, a) in atlas.ids.iter().zip(&atlas.affines) {
            let _ = write!(aff, "{id}");
            let m = a.matrix();
            for r in 0..3 {
                for c in 0..3 {
                    let _ = write!(aff, ",{:.9}", m[(r, c)]);
                }
            }
            for v in a.offset().iter() {
                let _ = write!(aff, ",{v:.9}");
            }
            aff.push('\n');
        }
        self.put_text(S, "atlas/affines.csv".into(), &aff, &mut out)?;
        Ok(out)
    }

    fn harp(&self) -> Result<Vec<PathBuf>> {
        const S: &str = "harp";
        let period = self.cohort.manifest.tag_period_mm;
        let mut out = Vec::new();
        for s in self.subjects() {
            for o in Orientation::ALL {
                for t in Cohort::tracked_frames(s) {
                    let path = self.cohort.resolve(&s.tagged(o)[t]);
                    let pair = extract_phase_with(&self.get_scalar(S, &path)?, o, period, &self.config.harp).at(S, &path)?;
                    self.put_scalar(S, harp_file(&s.id, o, t, "phase"), &pair.phase, &mut out)?;
                    self.put_scalar(S, harp_file(&s.id, o, t, "magnitude"), &pair.magnitude, &mut out)?;
                }
            }
        }
        Ok(out)
    }

    fn pvira(&self) -> Result<Vec<PathBuf>> {
        const S: &str = "pvira";
        let mut out = Vec::new();
        for s in self.subjects() {
            let frames = Cohort::tracked_frames(s);
            let mut phases: PhaseSequence = Default::default();
            for (o, orientation) in Orientation::ALL.into_iter().enumerate() {
                for &t in &frames {
                    let rel = harp_file(&s.id, orientation, t, "phase");
                    // stored at single precision, so re-wrap onto [-π, π)
                    let phase = self.get_scalar(S, &self.path(&rel))?.map(wrap);
                    let magnitude = self.get_scalar(S, &self.path(harp_file(&s.id, orientation, t, "magnitude")))?;
                    phases[o].push(PhasePair::new(phase, magnitude).at(S, self.path(&rel))?);
                }
            }
            let tracking = track(&phases, &self.config.pvira).at(S, self.path(format!("pvira/{}", s.id)))?;
            for (field, &t) in tracking.fields.iter().zip(&frames) {
                self.put_vector(S, pvira_field(&s.id, t, "forward"), &field.forward, &mut out)?;
                self.put_vector(S, pvira_field(&s.id, t, "inverse"), &field.inverse, &mut out)?;
            }
            self.put_scalar(S, format!("pvira/{}/mask.nii", s.id).into(), &tracking.mask.to_volume(), &mut out)?;
            let mut log = String::from("frame,level,iteration,update_rms,mean_abs_div,mismatch\n");
            for e in &tracking.log {
                let _ = writeln!(
                    log,
                    "{},{},{},{:.6e},{:.6e},{:.6e}",
                    frames[e.frame], e.level, e.iteration, e.update_rms, e.mean_abs_div, e.mismatch
                );
            }
            self.put_text(S, format!("pvira/{}/convergence.csv", s.id).into(), &log, &mut out)?;
        }
        Ok(out)
    }

    fn transport(&self) -> Result<Vec<PathBuf>> {
        const S: &str = "transport";
        let region = self.get_mask(S, REGION)?;
        let mut out = Vec::new();
        for s in self.subjects() {
            let map = self.get_field(S, atlas_map(&s.id, "forward"), atlas_map(&s.id, "inverse"))?;
            for (label, t) in self.cohort.label_frames(s) {
                let motion = self.get_field(S, pvira_field(&s.id, t, "forward"), pvira_field(&s.id, t, "inverse"))?;
                let rel = transport_file(&s.id, label);
                let moved = conjugate(&motion, &map, &region).at(S, self.path(&rel))?;
                self.put_vector(S, rel, &moved, &mut out)?;
            }
        }
        Ok(out)
    }

    fn strain(&self) -> Result<Vec<PathBuf>> {
        const S: &str = "strain";
        let support = self.config.mechanics.support.apply(&self.get_mask(S, TISSUE)?);
        let labels = self.cohort.labels();
        let mut per_subject = String::from(report::SUBJECT_HEADER);
        per_subject.push('\n');
        let mut by_label: Vec<Vec<RegionStats>> = vec![Vec::new(); labels.len()];
        let mut sums: Vec<Option<VectorVolume>> = vec![None; labels.len()];
        for s in self.subjects() {
            for (k, label) in labels.iter().enumerate() {
                let rel = transport_file(&s.id, label);
                let u = self.get_vector(S, &rel)?;
                let stats = region_stats(&strain(&u), &u, &support, label).at(S, self.path(&rel))?;
                let _ = write!(per_subject, "{},{},{:.6}", s.id, label, stats.md);
                for e in 0..3 {
                    let _ = write!(per_subject, ",{:.6},{:.6}", stats.mean[e], stats.sd[e]);
                }
                let _ = writeln!(per_subject, ",{}", stats.voxels);
                by_label[k].push(stats);
                sums[k] = Some(match sums[k].take() {
                    None => u,
                    Some(acc) => acc.axpy(1.0, &u).at(S, self.path(&rel))?,
                });
            }
        }
        let n = self.subjects().len() as f64;
        let cohort: Vec<RegionStats> = labels
            .iter()
            .zip(&by_label)
            .map(|(label, rows)| {
                let across = |f: &dyn Fn(&RegionStats) -> f64| rows.iter().map(f).collect::<Vec<_>>();
                let means: [Vec<f64>; 3] = std::array::from_fn(|e| across(&|r| r.mean[e]));
                RegionStats {
                    label: label.clone(),
                    md: mean(&across(&|r| r.md)).unwrap_or(0.0),
                    mean: std::array::from_fn(|e| mean(&means[e]).unwrap_or(0.0)),
                    sd: std::array::from_fn(|e| sample_sd(&means[e])),
                    voxels: rows.first().map_or(0, |r| r.voxels),
                }
            })
            .collect();

        let mut out = Vec::new();
        self.put_text(S, "strain/subjects.csv".into(), &per_subject, &mut out)?;
        self.put_text(S, "strain/table.csv".into(), &strain_table_csv(&cohort), &mut out)?;
        self.put_text(S, "strain/mean_deformation.csv".into(), &mean_deformation_csv(&cohort), &mut out)?;
        for (label, sum) in labels.iter().zip(sums) {
            let mean_field = sum.expect("at least two subjects").scaled(1.0 / n);
            let e = strain(&mean_field);
            for (name, r, c) in TENSOR_COMPONENTS {
                self.put_scalar(S, format!("strain/{label}/{name}.nii").into(), &e.component(r, c), &mut out)?;
            }
            for k in 0..3 {
                self.put_scalar(S, format!("strain/{label}/E{}.nii", k + 1).into(), &e.principal(k), &mut out)?;
                self.put_vector(S, format!("strain/{label}/v{}.nii", k + 1).into(), &e.direction(k), &mut out)?;
            }
        }
        Ok(out)
    }

    fn pca(&self) -> Result<Vec<PathBuf>> {
        const S: &str = "pca";
        let support = SampleSupport::from_region(&self.get_mask(S, REGION)?);
        let mut out = Vec::new();
        let mut models = Vec::new();
        for label in self.cohort.labels() {
            let samples = self
                .subjects()
                .iter()
                .map(|s| {
                    let rel = transport_file(&s.id, label);
                    let u = self.get_vector(S, &rel)?;
                    MotionSample::from_field(&s.id, label, &u, &support).at(S, self.path(&rel))
                })
                .collect::<Result<Vec<_>>>()?;
            let dir = PathBuf::from(format!("pca/{label}"));
            let model = fit(&samples).at(S, self.path(&dir))?;
            let mean_field = support.unflatten(&model.mean).at(S, self.path(&dir))?;
            self.put_vector(S, report::mean_field(label), &mean_field, &mut out)?;
            for (k, c) in model.components.iter().take(self.config.pca.components).enumerate() {
                let field = support.unflatten(c).at(S, self.path(&dir))?;
                self.put_vector(S, dir.join(format!("pc{}.nii", k + 1)), &field, &mut out)?;
            }
            self.put_text(S, dir.join("spectrum.csv"), &model.spectrum_csv(), &mut out)?;
            let mut scores = String::from("id");
            for k in 0..model.modes() {
                let _ = write!(scores, ",b{}", k + 1);
            }
            scores.push('\n');
            for (id, b) in &model.loadings {
                let _ = write!(scores, "{id}");
                for v in b {
                    let _ = write!(scores, ",{v:.6}");
                }
                scores.push('\n');
            }
            self.put_text(S, dir.join("scores.csv"), &scores, &mut out)?;
            models.push(model);
        }
        self.put_text(S, "pca/loadings.csv".into(), &loadings_table(&models), &mut out)?;
        Ok(out)
    }
}
