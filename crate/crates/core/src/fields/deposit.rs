use super::{GridField, PhaseGrid};
use crate::error::{Error, Result};
use crate::kernels::ScaledMollifier;
use crate::particles::ParticleEnsemble;
use crate::smooth::bump;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepositOptions {
    /// Wrap positions onto the periodic x-box instead of counting them as leaked.
    pub periodic_x: bool,
    /// Leaked-mass fraction above which deposition fails.
    pub leak_threshold: Option<f64>,
}

impl Default for DepositOptions {
    fn default() -> Self {
        DepositOptions {
            periodic_x: false,
            leak_threshold: Some(1e-3),
        }
    }
}

/// Nearest-node histogram density of one or more ensembles (d = 1), each
/// particle carrying mass `1/(total count)`. Returns the field and the
/// fraction of particles outside the box.
pub fn bin_particles(states: &[&ParticleEnsemble], grid: PhaseGrid, periodic_x: bool) -> Result<(GridField, f64)> {
    let total: usize = states.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(Error::param("n", 0, "no particles to bin"));
    }
    if states.iter().any(|s| s.dim != 1) {
        return Err(Error::param("dim", 2, "grid binning supports d = 1"));
    }
    let (nx, nv) = (grid.nx as i64, grid.nv as i64);
    let w = 1.0 / (total as f64 * grid.cell());
    let mut values = vec![0.0; grid.len()];
    let mut outside = 0usize;
    for s in states {
        for (&x, &v) in s.pos.iter().zip(&s.vel) {
            let mut ix = ((x + grid.lx) / grid.dx()).round() as i64;
            let iv = ((v + grid.lv) / grid.dv()).round() as i64;
            if periodic_x {
                ix = ix.rem_euclid(nx);
            }
            if (0..nx).contains(&ix) && (0..nv).contains(&iv) {
                values[(ix * nv + iv) as usize] += w;
            } else {
                outside += 1;
            }
        }
    }
    Ok((GridField { grid, values }, outside as f64 / total as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deposit {
    pub field: GridField,
    /// Mass of the mollified cloud falling on lattice nodes outside the box.
    pub leaked: f64,
}

/// `u^N_t(z) = (1/N) Σ_i Γ_t φ_N(Z_i − z)` at the grid nodes (d = 1).
pub fn mollified_empirical_density(
    state: &ParticleEnsemble,
    m: &ScaledMollifier,
    t: f64,
    grid: PhaseGrid,
    opts: DepositOptions,
) -> Result<Deposit> {
    if state.dim != 1 || m.dim != 1 {
        return Err(Error::param("dim", state.dim, "grid deposition supports d = 1"));
    }
    let n = state.len();
    let (dx, dv) = (grid.dx(), grid.dv());
    let (hx, hv) = (m.hx, m.hv);
    let norm = 1.0 / (n as f64 * hx * hv);
    let mut values = vec![0.0; grid.len()];
    let mut leaked = 0.0;
    let (nx, nv) = (grid.nx as i64, grid.nv as i64);
    for i in 0..n {
        let (xp, vp) = (state.pos[i], state.vel[i]);
        let iv_lo = ((vp - hv + grid.lv) / dv).ceil() as i64;
        let iv_hi = ((vp + hv + grid.lv) / dv).floor() as i64;
        for iv in iv_lo..=iv_hi {
            let v = -grid.lv + iv as f64 * dv;
            let bv = bump((vp - v) / hv);
            if bv == 0.0 {
                continue;
            }
            let centre = xp - t * (vp - v);
            let ix_lo = ((centre - hx + grid.lx) / dx).ceil() as i64;
            let ix_hi = ((centre + hx + grid.lx) / dx).floor() as i64;
            for ix in ix_lo..=ix_hi {
                let x = -grid.lx + ix as f64 * dx;
                let w = bump((centre - x) / hx) * bv * norm;
                if w == 0.0 {
                    continue;
                }
                let jx = if opts.periodic_x { ix.rem_euclid(nx) } else { ix };
                if !(0..nv).contains(&iv) || !(0..nx).contains(&jx) {
                    leaked += w * dx * dv;
                    continue;
                }
                values[(jx * nv + iv) as usize] += w;
            }
        }
    }
    if let Some(th) = opts.leak_threshold {
        if leaked > th {
            return Err(Error::LeakedMass { leaked, threshold: th });
        }
    }
    Ok(Deposit {
        field: GridField { grid, values },
        leaked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MollifierSpec;
    use crate::particles::{init_ensemble, InitialLaw, ParticleEnsemble};

    fn grid() -> PhaseGrid {
        PhaseGrid::new(256, 64, 4.0, 4.0).unwrap()
    }

    #[test]
    fn deposited_mass_is_one() {
        let m = MollifierSpec::new(2.0, 1, 0.2, 3).unwrap().with_lambda(1.5);
        let s = init_ensemble(&InitialLaw::gaussian(1, 0.5, 0.5), 300, 0, 1).unwrap();
        for t in [0.0, 0.3] {
            let d = mollified_empirical_density(&s, &m, t, grid(), DepositOptions::default()).unwrap();
            assert!((d.field.integral() - 1.0).abs() < 1e-3);
            assert!(d.field.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn single_particle_is_the_transported_mollifier() {
        let m = MollifierSpec::new(1.5, 1, 0.2, 3).unwrap().with_lambda(1.2);
        let s = ParticleEnsemble::new(1, vec![0.3], vec![-0.4], 0, 0).unwrap();
        let t = 0.2;
        let d = mollified_empirical_density(&s, &m, t, grid(), DepositOptions::default()).unwrap();
        let g = grid();
        for ix in (0..g.nx).step_by(7) {
            for iv in 0..g.nv {
                let want = m.density(t, &[0.3 - g.x(ix)], &[-0.4 - g.v(iv)]);
                assert!((d.field.at(ix, iv) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leakage_is_reported() {
        let m = MollifierSpec::new(2.0, 1, 0.2, 3).unwrap().with_lambda(1.0);
        let s = ParticleEnsemble::new(1, vec![3.9], vec![0.0], 0, 0).unwrap();
        let r = mollified_empirical_density(&s, &m, 0.0, grid(), DepositOptions::default());
        assert!(matches!(r, Err(Error::LeakedMass { .. })));
        let opts = DepositOptions {
            periodic_x: true,
            ..Default::default()
        };
        let d = mollified_empirical_density(&s, &m, 0.0, grid(), opts).unwrap();
        assert_eq!(d.leaked, 0.0);
        assert!((d.field.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn binning_conserves_mass() {
        let s = init_ensemble(&InitialLaw::gaussian(1, 0.5, 0.5), 1000, 0, 3).unwrap();
        let (f, out) = bin_particles(&[&s, &s], grid(), false).unwrap();
        assert_eq!(out, 0.0);
        assert!((f.integral() - 1.0).abs() < 1e-12);
    }
}
