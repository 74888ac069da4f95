//! Closed-form eigen-decomposition of symmetric 3×3 matrices.

use nalgebra::{Matrix3, Vector3};

/// Eigenvalues in descending order and the matching unit eigenvectors as columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricEigen3 {
    pub values: [f64; 3],
    pub vectors: Matrix3<f64>,
}

/// Unit vector along the largest cross product of two rows of `m`, if any is nonzero.
fn null_direction(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    [r[0].cross(&r[1]), r[0].cross(&r[2]), r[1].cross(&r[2])]
        .into_iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
        .filter(|c| c.norm_squared() > 0.0)
        .map(|c| c.normalize())
}

/// Two unit vectors completing `w` to an orthonormal basis.
fn complement(w: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u = if w.x.abs() > w.y.abs() {
        Vector3::new(-w.z, 0.0, w.x) / (w.x * w.x + w.z * w.z).sqrt()
    } else {
        Vector3::new(0.0, w.z, -w.y) / (w.y * w.y + w.z * w.z).sqrt()
    };
    (u, w.cross(&u))
}

/// Flips `v` so its largest-magnitude component is positive (first index wins ties).
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut k = 0;
    for a in 1..3 {
        if v[a].abs() > v[k].abs() {
            k = a;
        }
    }
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// Decomposes the symmetric part of `a`.
///
/// Eigenvalues come from the trigonometric solution of the characteristic
/// cubic. The best separated eigenvalue gets its vector from a cross product of
/// rows of `A - λI`; the remaining pair is resolved by a 2×2 rotation in the
/// orthogonal complement, which keeps repeated eigenvalues well defined.
pub fn symmetric_eigen(a: &Matrix3<f64>) -> SymmetricEigen3 {
    let a = 0.5 * (a + a.transpose());
    let q = a.trace() / 3.0;
    let shifted = a - Matrix3::identity() * q;
    let scale = shifted.abs().max();
    if scale == 0.0 || !scale.is_finite() {
        return SymmetricEigen3 {
            values: [q; 3],
            vectors: Matrix3::identity(),
        };
    }
    let b = shifted / scale;
    let p2 = (b.norm_squared() / 6.0).max(0.0);
    let p = p2.sqrt();
    let r = ((b / p).determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = 2.0 * p * phi.cos();
    let l3 = 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let l2 = -l1 - l3;

    let isolated = if l1 - l2 >= l2 - l3 { l1 } else { l3 };
    let w = null_direction(&(b - Matrix3::identity() * isolated)).unwrap_or_else(Vector3::x);
    let (u, v) = complement(&w);
    let (buu, buv, bvv) = ((b * u).dot(&u), (b * u).dot(&v), (b * v).dot(&v));
    let theta = 0.5 * (2.0 * buv).atan2(buu - bvv);
    let (s, c) = theta.sin_cos();
    let e1 = c * u + s * v;
    let e2 = -s * u + c * v;

    let mut pairs = [w, e1, e2].map(|e| ((b * e).dot(&e) * scale + q, canonical_sign(e)));
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    SymmetricEigen3 {
        values: pairs.map(|p| p.0),
        vectors: Matrix3::from_columns(&pairs.map(|p| p.1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reconstruct(e: &SymmetricEigen3) -> Matrix3<f64> {
        e.vectors * Matrix3::from_diagonal(&Vector3::from(e.values)) * e.vectors.transpose()
    }

    fn symmetric(v: &[f64]) -> Matrix3<f64> {
        Matrix3::new(v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5])
    }

    fn check(a: &Matrix3<f64>) {
        let e = symmetric_eigen(a);
        let scale = a.norm().max(1.0);
        assert!((reconstruct(&e) - a).norm() < 1e-12 * scale, "{a} -> {e:?}");
        assert!((e.vectors.transpose() * e.vectors - Matrix3::identity()).norm() < 1e-12);
        assert!(e.values[0] >= e.values[1] && e.values[1] >= e.values[2]);
        let oracle = nalgebra::SymmetricEigen::new(*a);
        let mut expected: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
        expected.sort_by(|x, y| y.total_cmp(x));
        for k in 0..3 {
            assert!((e.values[k] - expected[k]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn diagonal_and_degenerate_cases() {
        check(&Matrix3::zeros());
        check(&Matrix3::identity());
        check(&Matrix3::from_diagonal(&Vector3::new(0.105, 0.0, 0.0)));
        check(&Matrix3::from_diagonal(&Vector3::new(-1.0, 2.0, -1.0)));
        check(&symmetric(&[1.0, 1e-9, 0.0, 1.0, 0.0, 1.0]));
        check(&symmetric(&[2.0, 1.0, 1.0, 2.0, 1.0, 2.0]));
        check(&symmetric(&[1e8, 0.0, 3.0, -1e-8, 0.0, 7.0]));
    }

    #[test]
    fn zero_matrix_gives_identity_basis() {
        let e = symmetric_eigen(&Matrix3::zeros());
        assert_eq!(e.values, [0.0; 3]);
        assert_eq!(e.vectors, Matrix3::identity());
    }

    #[test]
    fn simple_shear_block() {
        let e = symmetric_eigen(&symmetric(&[0.0, 0.1, 0.0, 0.02, 0.0, 0.0]));
        let disc = (0.01f64 * 0.01 + 0.01).sqrt();
        assert!((e.values[0] - (0.01 + disc)).abs() < 1e-15);
        assert!(e.values[1].abs() < 1e-15);
        assert!((e.values[2] - (0.01 - disc)).abs() < 1e-15);
        assert!((e.vectors.column(1).z.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let e = symmetric_eigen(&symmetric(&[0.3, -0.1, 0.05, 0.2, 0.02, -0.1]));
        for k in 0..3 {
            let c = e.vectors.column(k);
            let big = c.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(big > 0.0);
        }
    }

    proptest! {
        #[test]
        fn random_matrices(v in prop::collection::vec(-1.0f64..1.0, 6)) {
            check(&symmetric(&v));
        }

        #[test]
        fn near_repeated_eigenvalues(v in prop::collection::vec(-1.0f64..1.0, 3), eps in 0.0f64..1e-6, angle in 0.0f64..3.0) {
            let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(v[0], v[1], v[2] + 1.5)), angle);
            let d = Matrix3::from_diagonal(&Vector3::new(0.2, 0.2 + eps, -0.1));
            check(&(r.matrix() * d * r.matrix().transpose()));
        }
    }
}
