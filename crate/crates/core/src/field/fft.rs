//! Three-dimensional FFT over x-fastest grids.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::geometry::GridGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Inverse transform, normalized by `1/N`.
    Inverse,
}

/// In-place 3D DFT of `data` laid out on `dims` (x fastest).
pub fn fft3d(data: &mut [Complex64], dims: [usize; 3], dir: Direction) {
    assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
    let mut planner = FftPlanner::<f64>::new();
    for axis in 0..3 {
        let n = dims[axis];
        let fft = match dir {
            Direction::Forward => planner.plan_fft_forward(n),
            Direction::Inverse => planner.plan_fft_inverse(n),
        };
        if axis == 0 {
            data.par_chunks_mut(n).for_each(|line| fft.process(line));
            continue;
        }
        let stride = if axis == 1 { dims[0] } else { dims[0] * dims[1] };
        let lines = data.len() / n;
        // gather lines along `axis` into contiguous storage
        let line_start = |l: usize| -> usize {
            if axis == 1 {
                let i = l % dims[0];
                let k = l / dims[0];
                i + dims[0] * dims[1] * k
            } else {
                l
            }
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
        {
            let src = &*data;
            buf.par_chunks_mut(n).enumerate().for_each(|(l, line)| {
                let s = line_start(l);
                for (m, c) in line.iter_mut().enumerate() {
                    *c = src[s + m * stride];
                }
                fft.process(line);
            });
        }
        for l in 0..lines {
            let s = line_start(l);
            for m in 0..n {
                data[s + m * stride] = buf[l * n + m];
            }
        }
    }
    if dir == Direction::Inverse {
        let scale = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|c| *c *= scale);
    }
}

/// Signed DFT bin index for bin `m` of an `n`-point transform.
#[inline]
pub fn signed_bin(m: usize, n: usize) -> f64 {
    if m <= n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

/// Spatial frequency (cycles/mm) of every bin along each axis.
pub fn frequencies(g: &GridGeometry) -> [Vec<f64>; 3] {
    std::array::from_fn(|a| {
        let n = g.dims[a];
        (0..n)
            .map(|m| signed_bin(m, n) / (n as f64 * g.spacing[a]))
            .collect()
    })
}

pub fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_identity() {
        let dims = [5, 6, 4];
        let orig: Vec<Complex64> = (0..120)
            .map(|n| Complex64::new((n as f64 * 0.37).sin(), (n as f64 * 0.11).cos()))
            .collect();
        let mut data = orig.clone();
        fft3d(&mut data, dims, Direction::Forward);
        fft3d(&mut data, dims, Direction::Inverse);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_lands_in_its_bin() {
        let dims = [8, 4, 6];
        let (mx, my, mz) = (2usize, 1usize, 5usize);
        let mut data = vec![Complex64::new(0.0, 0.0); 8 * 4 * 6];
        for k in 0..6 {
            for j in 0..4 {
                for i in 0..8 {
                    let ph = 2.0
                        * std::f64::consts::PI
                        * (mx as f64 * i as f64 / 8.0
                            + my as f64 * j as f64 / 4.0
                            + mz as f64 * k as f64 / 6.0);
                    data[i + 8 * (j + 4 * k)] = Complex64::from_polar(1.0, ph);
                }
            }
        }
        fft3d(&mut data, dims, Direction::Forward);
        let peak = mx + 8 * (my + 4 * mz);
        for (n, c) in data.iter().enumerate() {
            if n == peak {
                assert!((c.re - 192.0).abs() < 1e-9);
            } else {
                assert!(c.norm() < 1e-9);
            }
        }
    }
}
