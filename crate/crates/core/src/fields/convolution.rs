use num_complex::Complex64;

use super::{GridField, PhaseGrid};
use crate::error::{Error, Result};
use crate::fft::{signed_index, Fft2};
use crate::kernels::KernelSpec;
use crate::smooth::smooth_step;

/// Kernel tabulated on the displacement lattice, ready for periodic spectral
/// convolution `(b ∗ f)(z) = Σ_{z'} b(z − z') f(z') dx dv`.
pub struct KernelTable {
    pub grid: PhaseGrid,
    /// Displacement-indexed values (index 0 is zero displacement).
    pub values: Vec<f64>,
    /// Number of table entries evaluated at the capping radius.
    pub capped: usize,
    spectrum: Vec<Complex64>,
    fft: Fft2,
}

/// Smooth taper: 1 up to `1 − width` of the half-box, 0 at the box edge.
fn taper(s: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return 1.0;
    }
    smooth_step((s - (1.0 - width)) / width)
}

impl KernelTable {
    /// Tabulates `b` (d = 1). Singular evaluations closer than `eps_sing` to
    /// `x = 0` are evaluated at radius `eps_sing` (default: one grid cell);
    /// `window` is the tapered fraction of each half-box.
    pub fn new(kernel: &KernelSpec, grid: PhaseGrid, eps_sing: Option<f64>, window: f64) -> Result<Self> {
        if kernel.dim != 1 {
            return Err(Error::param(
                "kernel.dim",
                kernel.dim,
                "grid convolution supports d = 1",
            ));
        }
        if !(0.0..=1.0).contains(&window) {
            return Err(Error::param("kernel.window", window, "must lie in [0, 1]"));
        }
        let eps = eps_sing.unwrap_or(grid.dx());
        let mut values = vec![0.0; grid.len()];
        let mut capped = 0;
        let mut out = [0.0];
        for ix in 0..grid.nx {
            let mut x = signed_index(ix, grid.nx) as f64 * grid.dx();
            let wx = taper(x.abs() / grid.lx, window);
            if kernel.is_singular() && x.abs() < eps {
                capped += 1;
                if x == 0.0 {
                    continue;
                }
                x = eps * x.signum();
            }
            for iv in 0..grid.nv {
                let v = signed_index(iv, grid.nv) as f64 * grid.dv();
                let wv = taper(v.abs() / grid.lv, window);
                kernel.eval_raw(&[x], &[v], &mut out);
                values[ix * grid.nv + iv] = out[0] * wx * wv;
            }
        }
        Ok(Self::from_values(grid, values, capped))
    }

    /// Discrete Dirac mass at zero displacement: convolution is the identity.
    pub fn dirac(grid: PhaseGrid) -> Self {
        let mut values = vec![0.0; grid.len()];
        values[0] = 1.0 / grid.cell();
        Self::from_values(grid, values, 0)
    }

    /// Table of an arbitrary displacement function `k(x, v)`.
    pub fn from_fn(grid: PhaseGrid, k: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        for ix in 0..grid.nx {
            let x = signed_index(ix, grid.nx) as f64 * grid.dx();
            for iv in 0..grid.nv {
                let v = signed_index(iv, grid.nv) as f64 * grid.dv();
                values[ix * grid.nv + iv] = k(x, v);
            }
        }
        Self::from_values(grid, values, 0)
    }

    fn from_values(grid: PhaseGrid, values: Vec<f64>, capped: usize) -> Self {
        let fft = Fft2::new(grid.nx, grid.nv);
        let mut spectrum = fft.forward_real(&values);
        let cell = grid.cell();
        spectrum.iter_mut().for_each(|c| *c *= cell);
        KernelTable {
            grid,
            values,
            capped,
            spectrum,
            fft,
        }
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn convolve(&self, f: &GridField) -> Result<GridField> {
        if f.grid != self.grid {
            return Err(Error::GridMismatch("field and kernel table grids differ".into()));
        }
        let spec = self.fft.forward_real(&f.values);
        Ok(self.convolve_spectrum(spec))
    }

    /// Convolution given the (unnormalized) spectrum of the field.
    pub fn convolve_spectrum(&self, mut spec: Vec<Complex64>) -> GridField {
        for (c, k) in spec.iter_mut().zip(&self.spectrum) {
            *c *= k;
        }
        GridField {
            grid: self.grid,
            values: self.fft.inverse_real(spec),
        }
    }
}

/// `B = b ∗ u` on the grid (d = 1: a single component).
pub fn convolve_drift(u: &GridField, table: &KernelTable) -> Result<Vec<GridField>> {
    Ok(vec![table.convolve(u)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{SmoothProfile, VelocityProfile};

    fn grid() -> PhaseGrid {
        PhaseGrid::new(64, 32, std::f64::consts::PI, 5.0).unwrap()
    }

    fn blob(x0: f64, v0: f64) -> impl Fn(f64, f64) -> f64 {
        move |x, v| (-(x - x0) * (x - x0) / 0.3 - (v - v0) * (v - v0) / 0.5).exp()
    }

    #[test]
    fn dirac_is_identity() {
        let u = GridField::from_fn(grid(), blob(0.2, -0.4));
        let b = KernelTable::dirac(grid()).convolve(&u).unwrap();
        for (a, c) in u.values.iter().zip(&b.values) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_equivariance() {
        let g = grid();
        let k = KernelSpec::smooth(
            1,
            SmoothProfile::Sine {
                gamma: 1.0,
                wavenumber: 1.0,
            },
        );
        let table = KernelTable::new(&k, g, None, 0.0).unwrap();
        let u = GridField::from_fn(g, blob(0.0, 0.0));
        let (sx, sv) = (5usize, 3usize);
        let mut shifted = GridField::zeros(g);
        for ix in 0..g.nx {
            for iv in 0..g.nv {
                shifted.values[((ix + sx) % g.nx) * g.nv + (iv + sv) % g.nv] = u.at(ix, iv);
            }
        }
        let a = table.convolve(&u).unwrap();
        let b = table.convolve(&shifted).unwrap();
        for ix in 0..g.nx {
            for iv in 0..g.nv {
                let want = a.at(ix, iv);
                let got = b.at((ix + sx) % g.nx, (iv + sv) % g.nv);
                assert!((want - got).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_kernel_matches_closed_form() {
        // b ∗ u = −γ (sin x · C − cos x · S) with C = ∫cos(x')u, S = ∫sin(x')u
        let g = grid();
        let k = KernelSpec::smooth(
            1,
            SmoothProfile::Sine {
                gamma: 0.7,
                wavenumber: 1.0,
            },
        );
        let table = KernelTable::new(&k, g, None, 0.0).unwrap();
        let u = GridField::from_fn(g, blob(0.5, 0.3));
        let (mut c, mut s) = (0.0, 0.0);
        for ix in 0..g.nx {
            for iv in 0..g.nv {
                let x = g.x(ix);
                c += x.cos() * u.at(ix, iv) * g.cell();
                s += x.sin() * u.at(ix, iv) * g.cell();
            }
        }
        let b = table.convolve(&u).unwrap();
        for ix in 0..g.nx {
            let x = g.x(ix);
            let want = -0.7 * (x.sin() * c - x.cos() * s);
            assert!((b.at(ix, 7) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_only_is_constant_in_x() {
        let g = grid();
        let k = KernelSpec::velocity_only(1, VelocityProfile::Gaussian { gamma: 1.0, width: 0.8 });
        let table = KernelTable::new(&k, g, None, 0.0).unwrap();
        let u = GridField::from_fn(g, blob(0.3, 0.1));
        let b = table.convolve(&u).unwrap();
        for iv in 0..g.nv {
            let col: Vec<f64> = (0..g.nx).map(|ix| b.at(ix, iv)).collect();
            let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(hi - lo <= 1e-10);
        }
    }

    #[test]
    fn young_bound_for_bounded_kernels() {
        let g = grid();
        let k = KernelSpec::smooth(
            1,
            SmoothProfile::Gaussian {
                gamma: 1.3,
                width_x: 0.6,
                width_v: 1.0,
            },
        );
        let table = KernelTable::new(&k, g, None, 0.0).unwrap();
        let sup = k.sup_norm().unwrap();
        let mut rng = 12345u64;
        for _ in 0..10 {
            let mut f = GridField::zeros(g);
            for c in f.values.iter_mut() {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *c = (rng >> 11) as f64 / (1u64 << 53) as f64;
            }
            let l1 = f.values.iter().map(|v| v.abs()).sum::<f64>() * g.cell();
            let b = table.convolve(&f).unwrap();
            assert!(b.max_abs() <= sup * l1 * (1.0 + 1e-12));
        }
    }
}
