//! Multi-dimensional in-place FFT over row-major buffers.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct NdFft {
    dims: [usize; 3],
    plans: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub fn forward(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let plans = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        NdFft { dims, plans }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn process(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len());
        let [n0, n1, n2] = self.dims;
        let max_len = n0.max(n1).max(n2);
        let scratch_len = self.plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        if n2 > 1 {
            for line in data.chunks_mut(n2) {
                self.plans[2].process_with_scratch(line, &mut scratch);
            }
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); max_len];
        if n1 > 1 {
            for i in 0..n0 {
                for k in 0..n2 {
                    let base = i * n1 * n2 + k;
                    for j in 0..n1 {
                        buf[j] = data[base + j * n2];
                    }
                    self.plans[1].process_with_scratch(&mut buf[..n1], &mut scratch);
                    for j in 0..n1 {
                        data[base + j * n2] = buf[j];
                    }
                }
            }
        }
        if n0 > 1 {
            let stride = n1 * n2;
            for r in 0..stride {
                for i in 0..n0 {
                    buf[i] = data[r + i * stride];
                }
                self.plans[0].process_with_scratch(&mut buf[..n0], &mut scratch);
                for i in 0..n0 {
                    data[r + i * stride] = buf[i];
                }
            }
        }
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_dft_2d() {
        let dims = [3, 4, 1];
        let mut data: Vec<Complex64> = (0..12).map(|i| Complex64::new(i as f64, (i * i) as f64 * 0.1)).collect();
        let orig = data.clone();
        NdFft::forward(dims).process(&mut data);
        for a in 0..3 {
            for b in 0..4 {
                let mut s = Complex64::new(0.0, 0.0);
                for x in 0..3 {
                    for y in 0..4 {
                        let ph = -2.0 * std::f64::consts::PI * ((a * x) as f64 / 3.0 + (b * y) as f64 / 4.0);
                        s += orig[x * 4 + y] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((s - data[a * 4 + b]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(7), 8);
        assert_eq!(next_smooth(1120), 1125);
        assert_eq!(next_smooth(1024), 1024);
    }
}
