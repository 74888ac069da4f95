use nalgebra::{Matrix3, Vector3};

use motion_atlas::field::{pearson, GridGeometry, RegionMask, VectorVolume};
use motion_atlas::mechanics::{region_stats, strain};
use motion_atlas::phantom::{ground_truth_displacement, ground_truth_inverse, CohortSpec, SubjectTruth, Warp};
use motion_atlas::pvira::DiffeoField;
use motion_atlas::transport::{conjugate, pull_back_region};

const LABELS: [(&str, usize); 4] = [("ə", 2), ("s", 4), ("u", 6), ("k", 7)];

fn motion_field(s: &SubjectTruth, t: usize, g: &GridGeometry) -> DiffeoField {
    DiffeoField {
        forward: ground_truth_displacement(&s.motion, t, g).unwrap(),
        inverse: ground_truth_inverse(&s.motion, t, g).unwrap(),
    }
}

/// Subject-to-atlas map of a subject whose anatomy is `shape` applied to the atlas.
fn shape_map(shape: &Warp, g: GridGeometry) -> DiffeoField {
    DiffeoField {
        forward: VectorVolume::from_fn(g, |y| shape.inverse(&y) - y),
        inverse: VectorVolume::from_fn(g, |x| shape.forward(&x) - x),
    }
}

fn rms_voxels(a: &VectorVolume, b: &VectorVolume, region: &RegionMask) -> f64 {
    let idx = region.indices();
    let s: f64 = idx.iter().map(|&n| (a.vectors()[n] - b.vectors()[n]).norm_squared()).sum();
    (s / idx.len() as f64).sqrt() / a.geometry().mean_spacing()
}

#[test]
fn affine_conjugation_matches_closed_form() {
    let cohort = CohortSpec::default();
    let spec = &cohort.phantom;
    let g = spec.geometry;
    let subject = &cohort.subjects().unwrap()[0];
    let a = Matrix3::new(1.05, 0.03, 0.0, -0.02, 0.96, 0.04, 0.01, 0.0, 1.0);
    let t = Vector3::new(2.5, -1.5, 1.0);
    let ainv = a.try_inverse().unwrap();
    let map = DiffeoField {
        forward: VectorVolume::from_fn(g, |y| a * y + t - y),
        inverse: VectorVolume::from_fn(g, |x| ainv * (x - t) - x),
    };
    let region = spec.tissue_mask(&Warp::identity()).dilate(2);
    let w = subject.motion.at_frame(spec.frames - 1);
    let expected = VectorVolume::from_fn(g, |x| a * w.forward(&(ainv * (x - t))) + t - x);
    let out = conjugate(&motion_field(subject, spec.frames - 1, &g), &map, &region).unwrap();
    let err = rms_voxels(&out, &expected, &region);
    assert!(err < 0.5, "{err}");
}

#[test]
fn phantom_conjugation_matches_closed_form() {
    let cohort = CohortSpec::default();
    let spec = &cohort.phantom;
    let g = spec.geometry;
    let region = spec.tissue_mask(&Warp::identity()).dilate(2);
    for s in cohort.subjects().unwrap() {
        let w = s.motion.at_frame(spec.frames - 1);
        let expected = VectorVolume::from_fn(g, |x| s.shape.inverse(&w.forward(&s.shape.forward(&x))) - x);
        let out = conjugate(&motion_field(&s, spec.frames - 1, &g), &shape_map(&s.shape, g), &region).unwrap();
        let err = rms_voxels(&out, &expected, &region);
        assert!(err < 0.5, "{}: {err}", s.id);
    }
}

#[test]
fn region_strains_agree_across_spaces() {
    let cohort = CohortSpec::default();
    let spec = &cohort.phantom;
    let g = spec.geometry;
    let region = spec.tissue_mask(&Warp::identity()).dilate(2);
    let (mut subject_side, mut atlas_side) = (Vec::new(), Vec::new());
    for s in cohort.subjects().unwrap() {
        let map = shape_map(&s.shape, g);
        let pulled = pull_back_region(&region, &map).unwrap();
        for (label, t) in LABELS {
            let m = motion_field(&s, t, &g);
            let here = region_stats(&strain(&m.forward), &m.forward, &pulled, label).unwrap();
            let carried = conjugate(&m, &map, &region).unwrap();
            let there = region_stats(&strain(&carried), &carried, &region, label).unwrap();
            subject_side.extend(here.mean);
            atlas_side.extend(there.mean);
        }
    }
    let r = pearson(&subject_side, &atlas_side);
    assert!(r > 0.95, "{r}");
}
