use std::time::Instant;

use nalgebra::{Matrix3, Vector3};

use motion_atlas::atlas::{build_atlas, groupwise_affine, normalize_intensity, warp_affine, AffineTransform, AtlasConfig};
use motion_atlas::field::{pairwise_sum, pearson, GridGeometry, RegionMask, ScalarVolume};
use motion_atlas::phantom::{generate_cine, AnalyticDeformation, CohortSpec, PhantomSpec, Warp};

fn frame0(spec: &PhantomSpec, shape: &Warp) -> ScalarVolume {
    let one = PhantomSpec { frames: 1, ..spec.clone() };
    generate_cine(&one, &AnalyticDeformation::identity(1), shape).unwrap().remove(0)
}

#[test]
fn phantom_cohort_atlas_is_unbiased_and_recovers_anatomy() {
    let cohort = CohortSpec::default();
    let spec = &cohort.phantom;
    let g = spec.geometry;
    let h = g.mean_spacing();
    let subjects = cohort.subjects().unwrap();
    let volumes: Vec<ScalarVolume> = subjects.iter().map(|s| frame0(spec, &s.shape)).collect();
    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    let start = Instant::now();
    let atlas = build_atlas(&volumes, &ids, &AtlasConfig::default()).unwrap();
    eprintln!("atlas built in {:.1}s", start.elapsed().as_secs_f64());

    let tissue = spec.tissue_mask(&Warp::identity());
    let head = tissue.dilate(2);
    let bias = atlas.mean_inverse_displacement_rms(&head) / h;
    eprintln!("mean inverse displacement RMS {bias:.2e} voxel");
    assert!(bias < 0.1);

    let base = normalize_intensity(&frame0(spec, &Warp::identity()), 0.1).unwrap();
    let idx = head.indices();
    let a: Vec<f64> = idx.iter().map(|&n| atlas.template.values()[n]).collect();
    let b: Vec<f64> = idx.iter().map(|&n| base.values()[n]).collect();
    let cc = pearson(&a, &b);
    eprintln!("template/base CC {cc:.4}");
    assert!(cc > 0.98);

    let mut residuals = Vec::new();
    for (s, m) in subjects.iter().zip(&atlas.mappings) {
        let sq: Vec<f64> = tissue
            .indices()
            .iter()
            .map(|&n| {
                let x = g.world_of(n);
                let y = x + m.inverse.vectors()[n];
                (s.shape.inverse(&y) - x).norm_squared()
            })
            .collect();
        let rms = (pairwise_sum(&sq) / sq.len() as f64).sqrt() / h;
        let consistency = m.inverse_consistency(&head) / h;
        let det = m.jacobian_determinant();
        let positive = tissue.indices().iter().all(|&n| det.values()[n] > 0.0);
        eprintln!("{}: anatomy residual {rms:.4} voxel, inverse consistency {consistency:.4}", s.id);
        residuals.push((rms, consistency, positive));
    }
    for (rms, consistency, positive) in residuals {
        assert!(rms < 0.5);
        assert!(consistency < 0.1);
        assert!(positive);
    }
}

#[test]
fn known_affines_are_undone() {
    let spec = PhantomSpec {
        geometry: GridGeometry::cube(40, 3.0).unwrap(),
        ..PhantomSpec::default()
    };
    let base = normalize_intensity(&frame0(&spec, &Warp::identity()), 0.1).unwrap();
    let truths = [
        AffineTransform::new(Matrix3::new(1.04, 0.02, 0.0, -0.01, 0.97, 0.03, 0.0, 0.01, 1.0), Vector3::new(2.0, -1.0, 1.5)).unwrap(),
        AffineTransform::new(Matrix3::new(0.97, -0.02, 0.01, 0.02, 1.02, 0.0, -0.01, 0.0, 0.99), Vector3::new(-1.5, 2.0, 0.0)).unwrap(),
        AffineTransform::new(Matrix3::new(1.0, 0.0, -0.02, 0.0, 1.01, -0.02, 0.02, 0.01, 1.02), Vector3::new(0.0, -1.0, -2.0)).unwrap(),
    ];
    // subject_i(x) = base(A_i⁻¹ x), i.e. the anatomy carried by A_i
    let volumes: Vec<ScalarVolume> = truths.iter().map(|t| warp_affine(&base, &t.inverse())).collect();
    let ts = groupwise_affine(&volumes, &AtlasConfig::default()).unwrap();
    let warped: Vec<ScalarVolume> = volumes.iter().zip(&ts).map(|(v, t)| warp_affine(v, t)).collect();
    let (lo, hi) = base.min_max();
    let region = RegionMask::from_predicate(spec.geometry, |p| spec.tissue.radius(&p) <= 1.1);
    for i in 0..warped.len() {
        for j in (i + 1)..warped.len() {
            let sq: Vec<f64> = region
                .indices()
                .iter()
                .map(|&n| (warped[i].values()[n] - warped[j].values()[n]).powi(2))
                .collect();
            let rms = (pairwise_sum(&sq) / sq.len() as f64).sqrt();
            eprintln!("pair {i}-{j}: residual {:.4} of range", rms / (hi - lo));
            assert!(rms < 0.05 * (hi - lo));
        }
    }
}
