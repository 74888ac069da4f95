use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::Result;
use crate::field::{gradient, mean, GridGeometry, ScalarVolume, VectorVolume};

/// Local cross-correlation of two volumes.
#[derive(Clone, Debug)]
pub struct CcResult {
    /// Mean of the per-window correlations (zero-variance windows count as 0).
    pub value: f64,
    /// Correlation of the window centred at each voxel.
    pub local: ScalarVolume,
    /// Pointwise derivative of the local correlation with respect to `b`'s intensity.
    pub weight: ScalarVolume,
    /// `weight · ∇b`: ascent direction for a displacement applied to `b`.
    pub gradient: VectorVolume,
}

/// Sums over `(2r+1)` cubes truncated at the grid faces, plus voxel counts.
fn box_sums<const N: usize>(g: &GridGeometry, data: Vec<[f64; N]>, r: usize) -> (Vec<[f64; N]>, Vec<f64>) {
    let mut cur = data;
    for axis in 0..3 {
        let n = g.dims[axis];
        let stride = [1, g.dims[0], g.dims[0] * g.dims[1]][axis];
        let lines: Vec<usize> = (0..g.len()).filter(|&idx| g.coords(idx)[axis] == 0).collect();
        let results: Vec<Vec<[f64; N]>> = lines
            .par_iter()
            .map(|&base| {
                let mut prefix = vec![[0.0; N]; n + 1];
                for i in 0..n {
                    let v = cur[base + i * stride];
                    for c in 0..N {
                        prefix[i + 1][c] = prefix[i][c] + v[c];
                    }
                }
                (0..n)
                    .map(|i| {
                        let lo = i.saturating_sub(r);
                        let hi = (i + r).min(n - 1) + 1;
                        std::array::from_fn(|c| prefix[hi][c] - prefix[lo][c])
                    })
                    .collect()
            })
            .collect();
        for (base, line) in lines.iter().zip(results) {
            for (i, v) in line.into_iter().enumerate() {
                cur[base + i * stride] = v;
            }
        }
    }
    let counts = (0..g.len())
        .map(|idx| {
            let c = g.coords(idx);
            (0..3)
                .map(|a| ((c[a] + r).min(g.dims[a] - 1) + 1 - c[a].saturating_sub(r)) as f64)
                .product()
        })
        .collect();
    (cur, counts)
}

/// Signed local normalized cross-correlation over `(2r+1)³` windows.
pub fn cc_metric(a: &ScalarVolume, b: &ScalarVolume, radius: usize) -> Result<CcResult> {
    let g = *a.geometry();
    g.ensure_matches(b.geometry(), "cc volumes")?;
    let ma = mean(a.values()).unwrap_or(0.0);
    let mb = mean(b.values()).unwrap_or(0.0);
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    let scale = var(a.values(), ma).max(var(b.values(), mb)).max(1e-300);
    let products: Vec<[f64; 5]> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let (i, j) = (x - ma, y - mb);
            [i, j, i * i, j * j, i * j]
        })
        .collect();
    let (sums, counts) = box_sums(&g, products, radius);
    let (local, weight): (Vec<f64>, Vec<f64>) = (0..g.len())
        .into_par_iter()
        .map(|n| {
            let [si, sj, sii, sjj, sij] = sums[n];
            let cnt = counts[n];
            let (mi, mj) = (si / cnt, sj / cnt);
            let vii = sii - si * mi;
            let vjj = sjj - sj * mj;
            let vij = sij - si * mj;
            let tiny = 1e-12 * cnt * scale;
            if vii <= tiny || vjj <= tiny {
                return (0.0, 0.0);
            }
            let den = (vii * vjj).sqrt();
            let ib = a.values()[n] - ma - mi;
            let jb = b.values()[n] - mb - mj;
            (vij / den, (ib - vij / vjj * jb) / den)
        })
        .unzip();
    let grad_b = gradient(b);
    let force = grad_b
        .vectors()
        .par_iter()
        .zip(weight.par_iter())
        .map(|(d, w)| d * *w)
        .collect::<Vec<Vector3<f64>>>();
    let value = mean(&local).unwrap_or(0.0);
    Ok(CcResult {
        value,
        local: ScalarVolume::new(g, local)?,
        weight: ScalarVolume::new(g, weight)?,
        gradient: VectorVolume::new(g, force)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(g: GridGeometry) -> ScalarVolume {
        ScalarVolume::from_fn(g, |p| (0.3 * p.x).sin() + (0.21 * p.y + 0.1 * p.z).cos() * 0.7 + 0.01 * p.x * p.z)
    }

    #[test]
    fn self_correlation_is_one() {
        let g = GridGeometry::cube(14, 1.0).unwrap();
        let a = textured(g);
        let r = cc_metric(&a, &a, 2).unwrap();
        assert!(r.local.values().iter().all(|c| (c - 1.0).abs() < 1e-9));
        assert!((r.value - 1.0).abs() < 1e-9);
        assert!(r.gradient.max_norm() < 1e-9);
    }

    #[test]
    fn negation_gives_minus_one() {
        let g = GridGeometry::cube(12, 1.0).unwrap();
        let a = textured(g);
        let r = cc_metric(&a, &a.map(|v| -v), 2).unwrap();
        assert!(r.local.values().iter().all(|c| (c + 1.0).abs() < 1e-9));
    }

    #[test]
    fn affine_intensity_changes_are_invisible() {
        let g = GridGeometry::cube(12, 1.0).unwrap();
        let a = textured(g);
        let r = cc_metric(&a, &a.map(|v| 2.0 * v + 3.0), 1).unwrap();
        assert!(r.local.values().iter().all(|c| (c - 1.0).abs() < 1e-9));
    }

    #[test]
    fn flat_windows_contribute_zero() {
        let g = GridGeometry::cube(10, 1.0).unwrap();
        let a = ScalarVolume::from_fn(g, |p| if p.x > 2.0 { p.y + p.z } else { 1.0 });
        let r = cc_metric(&a, &a, 1).unwrap();
        for idx in 0..g.len() {
            let x = g.world_of(idx).x;
            if x < 0.0 {
                assert_eq!(r.local.values()[idx], 0.0);
            }
        }
        assert!(r.value < 1.0);
    }

    #[test]
    fn box_sums_match_brute_force() {
        let g = GridGeometry::new([5, 4, 6], [1.0; 3], [0.0; 3]).unwrap();
        let data: Vec<[f64; 1]> = (0..g.len()).map(|n| [(n * 7 % 11) as f64]).collect();
        let (sums, counts) = box_sums(&g, data.clone(), 1);
        for idx in 0..g.len() {
            let c = g.coords(idx);
            let (mut s, mut k) = (0.0, 0.0);
            for other in 0..g.len() {
                let o = g.coords(other);
                if (0..3).all(|a| (o[a] as isize - c[a] as isize).abs() <= 1) {
                    s += data[other][0];
                    k += 1.0;
                }
            }
            assert_eq!(sums[idx][0], s);
            assert_eq!(counts[idx], k);
        }
    }

    #[test]
    fn gradient_points_toward_alignment() {
        let g = GridGeometry::cube(20, 1.0).unwrap();
        let f = |p: Vector3<f64>| (-(p.norm_squared()) / 18.0).exp();
        let a = ScalarVolume::from_fn(g, f);
        let shift = Vector3::new(0.6, 0.0, 0.0);
        let b = ScalarVolume::from_fn(g, |p| f(p + shift));
        let r = cc_metric(&a, &b, 2).unwrap();
        let total: Vector3<f64> = r.gradient.vectors().iter().sum();
        // b(x + u) matches a for u = -shift
        assert!(total.x < 0.0 && total.x.abs() > 10.0 * total.y.abs().max(total.z.abs()));
    }
}
