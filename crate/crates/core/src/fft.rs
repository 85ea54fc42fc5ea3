//! Two-dimensional FFTs on the `nx × nv` phase lattice (layout `ix * nv + iv`).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    nx: usize,
    nv: usize,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fv: Arc<dyn Fft<f64>>,
    iv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(nx: usize, nv: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            nv,
            fx: planner.plan_fft_forward(nx),
            ix: planner.plan_fft_inverse(nx),
            fv: planner.plan_fft_forward(nv),
            iv: planner.plan_fft_inverse(nv),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nv)
    }

    /// Unnormalized transform along `v` (contiguous rows).
    pub fn forward_v(&self, data: &mut [Complex64]) {
        self.fv.process(data);
    }

    /// Normalized inverse transform along `v`.
    pub fn inverse_v(&self, data: &mut [Complex64]) {
        self.iv.process(data);
        let s = 1.0 / self.nv as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    fn along_x(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let (nx, nv) = (self.nx, self.nv);
        let mut t = vec![Complex64::default(); nx * nv];
        transpose(data, &mut t, nx, nv);
        plan.process(&mut t);
        transpose(&t, data, nv, nx);
    }

    /// Unnormalized transform along `x` (strided).
    pub fn forward_x(&self, data: &mut [Complex64]) {
        self.along_x(data, &self.fx);
    }

    /// Normalized inverse transform along `x`.
    pub fn inverse_x(&self, data: &mut [Complex64]) {
        self.along_x(data, &self.ix);
        let s = 1.0 / self.nx as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.forward_v(data);
        self.forward_x(data);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.inverse_x(data);
        self.inverse_v(data);
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.forward(&mut data);
        data
    }

    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }
}

/// `src` is `rows × cols`; `dst` becomes `cols × rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Signed lattice index of FFT bin `i` out of `n` (Nyquist mapped to `−n/2`).
#[inline]
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
