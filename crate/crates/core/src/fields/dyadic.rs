use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{mixed_lp_norm, GridField, PhaseGrid};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::params::IndexPair;
use crate::smooth::smooth_step;

/// Kinetic scaling `a = (1+α, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisoIndex {
    pub alpha: f64,
}

impl AnisoIndex {
    pub fn new(alpha: f64) -> Self {
        AnisoIndex { alpha }
    }

    /// `|z|_a = |x|^{1/(1+α)} + |v|`.
    pub fn distance(&self, x: &[f64], v: &[f64]) -> f64 {
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        nx.powf(1.0 / (1.0 + self.alpha)) + nv
    }
}

/// `χ0(r)`: 1 for `r ≤ 1`, 0 for `r ≥ 2`.
#[inline]
fn chi0(r: f64) -> f64 {
    smooth_step(r - 1.0)
}

/// Symbol of block `j` at anisotropic frequency radius `r`; the top block
/// carries the remainder so the symbols sum to one.
pub fn block_symbol(j: usize, j_max: usize, r: f64) -> f64 {
    let scaled = |k: usize| chi0(r / (1u64 << k) as f64);
    if j == 0 {
        scaled(0)
    } else if j < j_max {
        scaled(j) - scaled(j - 1)
    } else {
        1.0 - scaled(j_max - 1)
    }
}

/// Reusable transform plan and frequency radii for one grid.
pub struct DyadicPlan {
    pub grid: PhaseGrid,
    pub aniso: AnisoIndex,
    pub j_max: usize,
    fft: Fft2,
    radius: Vec<f64>,
}

impl DyadicPlan {
    pub fn new(grid: PhaseGrid, aniso: AnisoIndex) -> Result<Self> {
        let j_max = Self::max_block(grid, aniso);
        if j_max < 3 {
            return Err(Error::Resolution(format!(
                "grid {}x{} on [{}, {}] resolves only j_max = {j_max} (< 3) dyadic blocks",
                grid.nx, grid.nv, grid.lx, grid.lv
            )));
        }
        let e = 1.0 / (1.0 + aniso.alpha);
        let mut radius = Vec::with_capacity(grid.len());
        for ix in 0..grid.nx {
            let rx = grid.kx(ix).abs().powf(e);
            for iv in 0..grid.nv {
                radius.push(rx + grid.kv(iv).abs());
            }
        }
        Ok(DyadicPlan {
            grid,
            aniso,
            j_max: j_max as usize,
            fft: Fft2::new(grid.nx, grid.nv),
            radius,
        })
    }

    /// `⌊log₂(min anisotropic Nyquist radius)⌋ − 1`.
    pub fn max_block(grid: PhaseGrid, aniso: AnisoIndex) -> i64 {
        let rx = grid.nyquist_x().powf(1.0 / (1.0 + aniso.alpha));
        let r = rx.min(grid.nyquist_v());
        r.log2().floor() as i64 - 1
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn spectrum(&self, f: &GridField) -> Result<Vec<Complex64>> {
        if f.grid != self.grid {
            return Err(Error::GridMismatch("field and dyadic plan grids differ".into()));
        }
        Ok(self.fft.forward_real(&f.values))
    }

    /// `R_j f` from a precomputed spectrum.
    pub fn block_from_spectrum(&self, spec: &[Complex64], j: usize) -> GridField {
        let data: Vec<Complex64> = spec
            .iter()
            .zip(&self.radius)
            .map(|(c, &r)| c * block_symbol(j, self.j_max, r))
            .collect();
        GridField {
            grid: self.grid,
            values: self.fft.inverse_real(data),
        }
    }

    /// `‖R_j f‖_p` for `j = 0..=j_max`.
    pub fn block_norms(&self, f: &GridField, p: IndexPair) -> Result<Vec<f64>> {
        let spec = self.spectrum(f)?;
        Ok((0..=self.j_max)
            .map(|j| mixed_lp_norm(&self.block_from_spectrum(&spec, j), p))
            .collect())
    }

    pub fn besov(&self, f: &GridField, s: f64, q: f64, p: IndexPair) -> Result<f64> {
        Ok(besov_from_norms(&self.block_norms(f, p)?, s, q))
    }

    pub fn decompose(&self, f: &GridField) -> Result<BlockDecomposition> {
        let spec = self.spectrum(f)?;
        let blocks = (0..=self.j_max).map(|j| self.block_from_spectrum(&spec, j)).collect();
        let cutoff = (1u64 << (self.j_max + 1)) as f64;
        let (mut tail, mut all) = (0.0, 0.0);
        for (c, &r) in spec.iter().zip(&self.radius) {
            let e = c.norm_sqr();
            all += e;
            if r > cutoff {
                tail += e;
            }
        }
        Ok(BlockDecomposition {
            blocks,
            j_max: self.j_max,
            truncation: if all > 0.0 { (tail / all).sqrt() } else { 0.0 },
        })
    }
}

/// `(Σ_j (2^{js} n_j)^q)^{1/q}`, or the supremum when `q = ∞`.
pub fn besov_from_norms(norms: &[f64], s: f64, q: f64) -> f64 {
    let terms = norms.iter().enumerate().map(|(j, n)| (s * j as f64).exp2() * n);
    if q.is_infinite() {
        terms.fold(0.0, f64::max)
    } else if q == 1.0 {
        terms.sum()
    } else {
        terms.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecomposition {
    pub blocks: Vec<GridField>,
    pub j_max: usize,
    /// Relative spectral L² weight beyond the nominal support of the top block.
    pub truncation: f64,
}

impl BlockDecomposition {
    pub fn reconstruct(&self) -> GridField {
        let mut out = GridField::zeros(self.blocks[0].grid);
        for b in &self.blocks {
            for (o, v) in out.values.iter_mut().zip(&b.values) {
                *o += v;
            }
        }
        out
    }
}

pub fn aniso_block_decompose(f: &GridField, aniso: AnisoIndex) -> Result<BlockDecomposition> {
    DyadicPlan::new(f.grid, aniso)?.decompose(f)
}

pub fn besov_norm(f: &GridField, s: f64, q: f64, p: IndexPair, aniso: AnisoIndex) -> Result<f64> {
    DyadicPlan::new(f.grid, aniso)?.besov(f, s, q, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PhaseGrid {
        // x-Nyquist 4096 → radius 16, v-Nyquist 64 → j_max = 3
        PhaseGrid::new(64, 64, std::f64::consts::PI / 128.0, std::f64::consts::PI / 2.0).unwrap()
    }

    #[test]
    fn symbols_partition_unity() {
        for j_max in 3..7 {
            for i in 0..2000 {
                let r = i as f64 * 0.05;
                let s: f64 = (0..=j_max).map(|j| block_symbol(j, j_max, r)).sum();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symbol_supports() {
        let j_max = 6;
        for j in 1..j_max {
            let lo = (1u64 << (j - 1)) as f64;
            let hi = (1u64 << (j + 1)) as f64;
            for i in 0..4000 {
                let r = i as f64 * 0.05;
                if r < lo || r > hi {
                    assert_eq!(block_symbol(j, j_max, r), 0.0, "j={j} r={r}");
                }
            }
        }
    }

    #[test]
    fn resolution_requirement() {
        let coarse = PhaseGrid::new(16, 16, 10.0, 10.0).unwrap();
        assert!(matches!(
            DyadicPlan::new(coarse, AnisoIndex::new(2.0)),
            Err(Error::Resolution(_))
        ));
        assert_eq!(DyadicPlan::max_block(grid(), AnisoIndex::new(2.0)), 3);
    }

    #[test]
    fn constant_field_lives_in_block_zero() {
        let f = GridField::from_fn(grid(), |_, _| 2.5);
        let dec = aniso_block_decompose(&f, AnisoIndex::new(2.0)).unwrap();
        assert!(dec.blocks[0].values.iter().all(|v| (v - 2.5).abs() < 1e-12));
        for b in &dec.blocks[1..] {
            assert!(b.max_abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let f = GridField::zeros(grid());
        assert_eq!(
            besov_norm(&f, 0.7, 2.0, IndexPair::ONES, AnisoIndex::new(2.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn anisotropic_distance_is_homogeneous() {
        let a = AnisoIndex::new(1.5);
        let (x, v) = ([0.3, -1.2], [0.4, 2.0]);
        for &l in &[0.5f64, 2.0, 7.0] {
            let xs: Vec<f64> = x.iter().map(|c| c * l.powf(2.5)).collect();
            let vs: Vec<f64> = v.iter().map(|c| c * l).collect();
            assert!((a.distance(&xs, &vs) - l * a.distance(&x, &v)).abs() < 1e-12);
        }
    }
}
