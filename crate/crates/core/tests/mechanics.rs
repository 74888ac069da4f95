use nalgebra::{Rotation3, Unit, Vector3};

use motion_atlas::field::{mean, VectorVolume};
use motion_atlas::mechanics::{region_stats, strain, strain_table_csv};
use motion_atlas::phantom::{ground_truth_displacement, AnalyticDeformation, DeformationKind, PhantomSpec, Warp};

fn swirl(spec: &PhantomSpec) -> AnalyticDeformation {
    let kind = DeformationKind::DivergenceFreeSwirl {
        axis: 2,
        center: [4.0, -3.0, 2.0],
        angle: 0.18,
        radius: 18.0,
        height: 24.0,
    };
    AnalyticDeformation::ramp(kind, spec.frames)
}

#[test]
fn strain_is_objective_on_phantom_motion() {
    let spec = PhantomSpec::default();
    let g = spec.geometry;
    let u = ground_truth_displacement(&swirl(&spec), spec.frames - 1, &g).unwrap();
    let rot = *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -1.0, 0.5)), 0.4).matrix();
    let c = Vector3::new(1.0, 2.0, -1.0);
    let moved = u.vectors().iter().enumerate().map(|(n, d)| {
        let x = g.world_of(n);
        rot * (x + d - c) + c - x
    });
    let rotated = VectorVolume::new(g, moved.collect()).unwrap();
    let (a, b) = (strain(&u), strain(&rotated));
    let drift = a
        .decompositions()
        .iter()
        .zip(b.decompositions())
        .enumerate()
        .filter(|&(n, _)| g.is_interior(n, 1))
        .map(|(_, (x, y))| (0..3).map(|k| (x.values[k] - y.values[k]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    assert!(drift < 1e-3, "{drift}");
}

#[test]
fn incompressible_motion_keeps_volume_and_mixed_signs() {
    let spec = PhantomSpec::default();
    let g = spec.geometry;
    let def = swirl(&spec);
    let mask = spec.tissue_mask(&Warp::identity());
    let mut rows = Vec::new();
    for (t, label) in [(2, "ə"), (4, "s"), (6, "u"), (7, "k")] {
        let u = ground_truth_displacement(&def, t, &g).unwrap();
        let s = strain(&u);
        let logdet = s.log_volume_change();
        let inside: Vec<f64> = mask.indices().iter().map(|&n| logdet.values()[n]).collect();
        let m = mean(&inside).unwrap();
        assert!(m.abs() < 0.02, "frame {t}: mean ln det F = {m}");
        for &n in &mask.indices() {
            let e = s.decompositions()[n].values;
            assert!(e[0] >= -1e-3 && e[2] <= 1e-3, "{e:?}");
        }
        let stats = region_stats(&s, &u, &mask, label).unwrap();
        assert!(stats.mean[0] >= 0.0 && stats.mean[2] <= 0.0);
        assert!(stats.md > 0.0 && stats.sd.iter().all(|v| *v >= 0.0));
        rows.push(stats);
    }
    let csv = strain_table_csv(&rows);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).zip(["ə", "s", "u", "k"]).all(|(l, lab)| l.starts_with(&format!("{lab},"))));
}
