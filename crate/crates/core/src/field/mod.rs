//! Regular-grid fields shared by every stage: containers, trilinear sampling,
//! finite differences, FFT, smoothing and NIfTI-1 I/O.

pub mod diff;
pub mod fft;
mod geometry;
pub mod nifti;
pub mod smooth;
mod volume;

pub use diff::{divergence, gradient, jacobian, jacobian_determinant};
pub use geometry::GridGeometry;
pub use nifti::{read_volume, write_volume, Volume};
pub use volume::{MatrixField, RegionMask, ScalarVolume, VectorVolume};

pub(crate) use volume::trilinear_stencil;

/// Pairwise summation; the result depends only on the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Mean of `values`; `None` when empty.
pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| pairwise_sum(values) / values.len() as f64)
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    match mean(values) {
        Some(m) if values.len() > 1 => {
            let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
            (pairwise_sum(&sq) / (values.len() - 1) as f64).sqrt()
        }
        _ => 0.0,
    }
}

/// Pearson correlation of two equally long series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a).unwrap_or(0.0), mean(b).unwrap_or(0.0));
    let cov: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let va: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let vb: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    let den = (pairwise_sum(&va) * pairwise_sum(&vb)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        pairwise_sum(&cov) / den
    }
}
