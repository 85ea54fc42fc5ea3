//! Phase-space grids (d = 1), grid fields and the error norms built on them.

mod convolution;
mod deposit;
mod dyadic;

pub use convolution::{convolve_drift, KernelTable};
pub use deposit::{bin_particles, mollified_empirical_density, Deposit, DepositOptions};
pub use dyadic::{aniso_block_decompose, besov_from_norms, besov_norm, AnisoIndex, BlockDecomposition, DyadicPlan};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::params::{DerivedRates, IndexPair, ModelParams};

/// Periodic lattice on `[−L_x, L_x) × [−L_v, L_v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub nx: usize,
    pub nv: usize,
    pub lx: f64,
    pub lv: f64,
}

impl PhaseGrid {
    pub fn new(nx: usize, nv: usize, lx: f64, lv: f64) -> Result<Self> {
        for (name, n) in [("grid.nx", nx), ("grid.nv", nv)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::param(name, n, "must be a power of two >= 8"));
            }
        }
        for (name, l) in [("grid.lx", lx), ("grid.lv", lv)] {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::param(name, l, "must be positive"));
            }
        }
        Ok(PhaseGrid { nx, nv, lx, lv })
    }

    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.lv / self.nv as f64
    }

    pub fn cell(&self) -> f64 {
        self.dx() * self.dv()
    }

    pub fn x(&self, ix: usize) -> f64 {
        -self.lx + ix as f64 * self.dx()
    }

    pub fn v(&self, iv: usize) -> f64 {
        -self.lv + iv as f64 * self.dv()
    }

    /// Angular frequency of x-bin `i`.
    pub fn kx(&self, i: usize) -> f64 {
        std::f64::consts::PI * crate::fft::signed_index(i, self.nx) as f64 / self.lx
    }

    pub fn kv(&self, i: usize) -> f64 {
        std::f64::consts::PI * crate::fft::signed_index(i, self.nv) as f64 / self.lv
    }

    pub fn nyquist_x(&self) -> f64 {
        std::f64::consts::PI * (self.nx / 2) as f64 / self.lx
    }

    pub fn nyquist_v(&self) -> f64 {
        std::f64::consts::PI * (self.nv / 2) as f64 / self.lv
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: PhaseGrid,
    /// Row-major values, `values[ix * nv + iv]`.
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: PhaseGrid) -> Self {
        GridField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: PhaseGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for ix in 0..grid.nx {
            let x = grid.x(ix);
            for iv in 0..grid.nv {
                values.push(f(x, grid.v(iv)));
            }
        }
        GridField { grid, values }
    }

    pub fn at(&self, ix: usize, iv: usize) -> f64 {
        self.values[ix * self.grid.nv + iv]
    }

    /// Band-limited interpolation onto `nx` points in x (same box and v grid).
    pub fn refine_x(&self, nx: usize) -> Result<GridField> {
        let g = self.grid;
        if nx == g.nx {
            return Ok(self.clone());
        }
        if nx < g.nx {
            return Err(Error::param("grid.nx", nx, "refinement must not coarsen"));
        }
        let fine = PhaseGrid::new(nx, g.nv, g.lx, g.lv)?;
        let coarse_fft = crate::fft::Fft2::new(g.nx, g.nv);
        let mut data: Vec<num_complex::Complex64> = self
            .values
            .iter()
            .map(|&r| num_complex::Complex64::new(r, 0.0))
            .collect();
        coarse_fft.forward_x(&mut data);
        let mut out = vec![num_complex::Complex64::default(); fine.len()];
        let half = g.nx / 2;
        for ix in 0..g.nx {
            let k = crate::fft::signed_index(ix, g.nx);
            // split the unpaired Nyquist mode between ±nx/2
            let (targets, w): (Vec<i64>, f64) = if ix == half {
                (vec![-(half as i64), half as i64], 0.5)
            } else {
                (vec![k], 1.0)
            };
            for kt in targets {
                let jx = kt.rem_euclid(nx as i64) as usize;
                for iv in 0..g.nv {
                    out[jx * g.nv + iv] += data[ix * g.nv + iv] * w;
                }
            }
        }
        let fine_fft = crate::fft::Fft2::new(nx, g.nv);
        fine_fft.inverse_x(&mut out);
        let r = nx as f64 / g.nx as f64;
        // the coarse forward transform and the fine inverse differ by the
        // ratio of point counts; the x-offset −L_x is common to both grids
        Ok(GridField {
            grid: fine,
            values: out.into_iter().map(|c| c.re * r).collect(),
        })
    }

    /// Grid quadrature `Σ f dx dv`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell()).sqrt()
    }

    fn same_grid(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.same_grid(other)?;
        Ok(GridField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// Relative L² distance `‖self − reference‖₂ / ‖reference‖₂`.
    pub fn relative_l2(&self, reference: &GridField) -> Result<f64> {
        self.same_grid(reference)?;
        let num: f64 = self
            .values
            .iter()
            .zip(&reference.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = reference.values.iter().map(|b| b * b).sum();
        Ok((num / den).sqrt())
    }

    /// Velocity marginal `∫ f dx` on the v lattice.
    pub fn v_marginal(&self) -> Vec<f64> {
        let g = self.grid;
        let mut out = vec![0.0; g.nv];
        for ix in 0..g.nx {
            for (o, v) in out.iter_mut().zip(&self.values[ix * g.nv..(ix + 1) * g.nv]) {
                *o += v * g.dx();
            }
        }
        out
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        let g = self.grid;
        (0..g.nx)
            .map(|ix| self.values[ix * g.nv..(ix + 1) * g.nv].iter().sum::<f64>() * g.dv())
            .collect()
    }
}

/// Iterated norm: `L^{p_x}` in position inside `L^{p_v}` in velocity.
pub fn mixed_lp_norm(f: &GridField, p: IndexPair) -> f64 {
    let g = f.grid;
    let (dx, dv) = (g.dx(), g.dv());
    let inner = |iv: usize| -> f64 {
        let col = (0..g.nx).map(|ix| f.values[ix * g.nv + iv].abs());
        if p.x.is_infinite() {
            col.fold(0.0, f64::max)
        } else {
            let px = p.x.value();
            if px == 1.0 {
                col.sum::<f64>() * dx
            } else if px == 2.0 {
                (col.map(|a| a * a).sum::<f64>() * dx).sqrt()
            } else {
                (col.map(|a| a.powf(px)).sum::<f64>() * dx).powf(1.0 / px)
            }
        }
    };
    let rows = (0..g.nv).map(inner);
    if p.v.is_infinite() {
        rows.fold(0.0, f64::max)
    } else {
        let pv = p.v.value();
        (rows.map(|a| a.powf(pv)).sum::<f64>() * dv).powf(1.0 / pv)
    }
}

/// Total variation distance `½ Σ |f − g| dx dv`.
pub fn tv_distance(f: &GridField, g: &GridField) -> Result<f64> {
    f.same_grid(g)?;
    Ok(0.5 * f.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * f.grid.cell())
}

/// Weighted components of the composite error norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SNorm {
    /// `‖f‖_{B^{0,1}_{p0;a}}`.
    pub besov: f64,
    /// `‖b ∗ f‖_∞`.
    pub binf: f64,
    pub weighted_besov: f64,
    pub weighted_binf: f64,
    pub total: f64,
}

/// `(1∧t)^{(β−β0)/α} ‖f‖_{B^{0,1}_{p0;a}} + (1∧t)^{(β+Λ)/α} ‖b ∗ f‖_∞`.
pub fn s_beta_error_norm(
    f: &GridField,
    params: &ModelParams,
    rates: &DerivedRates,
    t: f64,
    table: &KernelTable,
    plan: &DyadicPlan,
) -> Result<SNorm> {
    if !(t > 0.0) {
        return Err(Error::param("t", t, "must be positive"));
    }
    let besov = plan.besov(f, 0.0, 1.0, params.p0)?;
    let binf = table.convolve(f)?.max_abs();
    let tt = t.min(1.0);
    let wb = tt.powf((params.beta - params.beta0) / params.alpha);
    let wi = tt.powf((params.beta + rates.gap) / params.alpha);
    Ok(SNorm {
        besov,
        binf,
        weighted_besov: wb * besov,
        weighted_binf: wi * binf,
        total: wb * besov + wi * binf,
    })
}

/// Convenience wrapper building the kernel table on `f`'s grid.
pub fn s_beta_error_norm_for_kernel(
    f: &GridField,
    params: &ModelParams,
    rates: &DerivedRates,
    t: f64,
    kernel: &KernelSpec,
) -> Result<SNorm> {
    let table = KernelTable::new(kernel, f.grid, None, 0.0)?;
    let plan = DyadicPlan::new(f.grid, AnisoIndex::new(params.alpha))?;
    s_beta_error_norm(f, params, rates, t, &table, &plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PhaseGrid {
        PhaseGrid::new(128, 64, 8.0, 6.0).unwrap()
    }

    fn gauss(x: f64, s: f64) -> f64 {
        (-0.5 * x * x / (s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn refinement_interpolates_trigonometric_fields() {
        let g = PhaseGrid::new(16, 8, std::f64::consts::PI, 2.0).unwrap();
        let f = |x: f64, v: f64| 1.0 + (3.0 * x).cos() * v + 0.5 * (5.0 * x).sin();
        let coarse = GridField::from_fn(g, f);
        let fine = coarse.refine_x(128).unwrap();
        let want = GridField::from_fn(fine.grid, f);
        for (a, b) in fine.values.iter().zip(&want.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(PhaseGrid::new(12, 16, 1.0, 1.0).is_err());
        assert!(PhaseGrid::new(4, 16, 1.0, 1.0).is_err());
        assert!(PhaseGrid::new(16, 16, 0.0, 1.0).is_err());
    }

    #[test]
    fn density_l1_is_one() {
        let f = GridField::from_fn(grid(), |x, v| gauss(x, 1.0) * gauss(v, 0.8));
        let n = mixed_lp_norm(&f, IndexPair::ONES);
        assert!((n - 1.0).abs() < 1e-10);
    }

    #[test]
    fn separable_factorizes() {
        let (sx, sv) = (0.9, 0.7);
        let f = GridField::from_fn(grid(), |x, v| gauss(x, sx) * gauss(v, sv));
        // ‖g‖_p for a normal density: (2π s²)^{(1−p)/(2p)} p^{−1/(2p)}
        let gp = |s: f64, p: f64| (2.0 * std::f64::consts::PI * s * s).powf((1.0 - p) / (2.0 * p)) * p.powf(-0.5 / p);
        for &(px, pv) in &[(2.0, 2.0), (1.0, 3.0), (1.5, 1.0)] {
            let n = mixed_lp_norm(&f, IndexPair::new(px, pv).unwrap());
            let oracle = gp(sx, px) * gp(sv, pv);
            assert!((n - oracle).abs() < 1e-9, "{px} {pv}: {n} vs {oracle}");
        }
        let inf = mixed_lp_norm(&f, IndexPair::INFINITE);
        assert!((inf - gauss(0.0, sx) * gauss(0.0, sv)).abs() < 1e-12);
    }

    #[test]
    fn tv_of_disjoint_and_identical() {
        let g = grid();
        let a = GridField::from_fn(g, |x, v| gauss(x + 4.0, 0.4) * gauss(v, 0.5));
        let b = GridField::from_fn(g, |x, v| gauss(x - 4.0, 0.4) * gauss(v, 0.5));
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert!((tv_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        let other = GridField::zeros(PhaseGrid::new(64, 64, 8.0, 6.0).unwrap());
        assert!(matches!(tv_distance(&a, &other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn tv_matches_min_formula() {
        let g = grid();
        let a = GridField::from_fn(g, |x, v| gauss(x + 0.5, 0.8) * gauss(v, 0.9));
        let b = GridField::from_fn(g, |x, v| gauss(x - 0.3, 1.1) * gauss(v - 0.4, 0.7));
        let overlap: f64 = a.values.iter().zip(&b.values).map(|(p, q)| p.min(*q)).sum::<f64>() * g.cell();
        let tv = tv_distance(&a, &b).unwrap();
        assert!((tv - (1.0 - overlap)).abs() < 1e-9);
    }
}
