//! Periodic grids on `[0, 2π)^d` with Fourier differentiation.
//!
//! Nodes of a two-axis grid are stored row-major: node `(i, j)` lives at
//! `i * n + j`, where `i` indexes axis 0 and `j` indexes axis 1.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    axes: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Integer wavenumbers in FFT order with the Nyquist mode zeroed.
    wavenumbers: Vec<f64>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("axes", &self.axes)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(n: usize, axes: usize) -> Self {
        assert!(axes == 1 || axes == 2, "grids carry one or two periodic axes");
        assert!(n >= 4 && n % 2 == 0, "grid size must be even");
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let wavenumbers = (0..n)
            .map(|i| {
                if i < n / 2 {
                    i as f64
                } else if i == n / 2 {
                    0.0
                } else {
                    i as f64 - n as f64
                }
            })
            .collect();
        Self {
            n,
            axes,
            forward,
            inverse,
            wavenumbers,
        }
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.axes as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n as f64
    }

    /// Coordinate of every node along `axis`.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing();
        match (self.axes, axis) {
            (1, 0) => (0..self.n).map(|i| i as f64 * h).collect(),
            (2, 0) => (0..self.len()).map(|p| (p / self.n) as f64 * h).collect(),
            (2, 1) => (0..self.len()).map(|p| (p % self.n) as f64 * h).collect(),
            _ => panic!("axis {axis} out of range for a {}-axis grid", self.axes),
        }
    }

    /// Spectral derivative along `axis`. The Nyquist mode is discarded, which
    /// makes the discrete operator exactly skew-symmetric.
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        self.apply_multiplier(f, axis, |k| Complex64::new(0.0, k))
    }

    fn apply_multiplier(
        &self,
        f: &[f64],
        axis: usize,
        symbol: impl Fn(f64) -> Complex64,
    ) -> Vec<f64> {
        assert_eq!(f.len(), self.len());
        assert!(axis < self.axes);
        let n = self.n;
        let scale = 1.0 / n as f64;
        let mult: Vec<Complex64> = self.wavenumbers.iter().map(|&k| symbol(k) * scale).collect();
        let mut out = vec![0.0; f.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let lines = f.len() / n;
        for line in 0..lines {
            let index = |m: usize| -> usize {
                if self.axes == 1 || axis == 1 {
                    line * n + m
                } else {
                    m * n + line
                }
            };
            for (m, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(f[index(m)], 0.0);
            }
            self.forward.process(&mut buf);
            for (b, m) in buf.iter_mut().zip(&mult) {
                *b *= m;
            }
            self.inverse.process(&mut buf);
            for (m, b) in buf.iter().enumerate() {
                out[index(m)] = b.re;
            }
        }
        out
    }
}
