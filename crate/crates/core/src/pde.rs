//! Reference solver for the nonlinear kinetic equation (d = 1)
//! `∂_t u + v ∂_x u = −(−Δ_v)^{α/2} u − ∂_v((b ∗ u) u)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::fields::{GridField, KernelTable, PhaseGrid};
use crate::kernels::KernelSpec;

/// `F(y) = sign(y)|y|^{α+1}/(α+1)`, an antiderivative of `|y|^α`.
fn antiderivative(y: f64, alpha: f64) -> f64 {
    y.signum() * y.abs().powf(alpha + 1.0) / (alpha + 1.0)
}

/// `∫₀^t |k_v + u k_x|^α du`.
pub fn free_exponent(kx: f64, kv: f64, t: f64, alpha: f64) -> f64 {
    if kx == 0.0 || (t * kx).abs() < 1e-8 * kv.abs() {
        t * kv.abs().powf(alpha)
    } else {
        (antiderivative(kv + t * kx, alpha) - antiderivative(kv, alpha)) / kx
    }
}

/// Multiplies the `(k_x, v)` representation by the transport phase `e^{−i k_x τ v}`.
fn shear_phase(data: &mut [Complex64], grid: PhaseGrid, tau: f64) {
    for ix in 0..grid.nx {
        let kx = grid.kx(ix);
        if kx == 0.0 {
            continue;
        }
        let row = &mut data[ix * grid.nv..(ix + 1) * grid.nv];
        for (iv, c) in row.iter_mut().enumerate() {
            let (s, co) = (-kx * tau * grid.v(iv)).sin_cos();
            *c *= Complex64::new(co, s);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Propagated {
    pub field: GridField,
    /// Relative size of the seam jump at `v = ±L_v` introduced by the shear;
    /// zero when `t·L_v/L_x` is an integer.
    pub residual: f64,
}

/// `P_t f`: exact transport phase in `(k_x, v)`, then the exact noise
/// multiplier `exp(−∫₀^t |k_v + u k_x|^α du)` in `(k_x, k_v)`.
pub fn free_propagate(f: &GridField, t: f64, alpha: f64) -> Result<GridField> {
    Ok(free_propagate_with_residual(f, t, alpha)?.field)
}

pub fn free_propagate_with_residual(f: &GridField, t: f64, alpha: f64) -> Result<Propagated> {
    if !(t >= 0.0) {
        return Err(Error::param("t", t, "must be nonnegative"));
    }
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::param("alpha", alpha, "stability index must lie in (1, 2]"));
    }
    let g = f.grid;
    if t == 0.0 {
        return Ok(Propagated {
            field: f.clone(),
            residual: 0.0,
        });
    }
    let fft = Fft2::new(g.nx, g.nv);
    let mut data: Vec<Complex64> = f.values.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft.forward_x(&mut data);
    let (mut seam, mut top) = (0.0f64, 0.0f64);
    for ix in 0..g.nx {
        let jump = 2.0 * (g.kx(ix) * t * g.lv).sin().abs();
        seam = seam.max(data[ix * g.nv].norm() * jump);
        for iv in 0..g.nv {
            top = top.max(data[ix * g.nv + iv].norm());
        }
    }
    shear_phase(&mut data, g, t);
    fft.forward_v(&mut data);
    for ix in 0..g.nx {
        let kx = g.kx(ix);
        for iv in 0..g.nv {
            data[ix * g.nv + iv] *= (-free_exponent(kx, g.kv(iv), t, alpha)).exp();
        }
    }
    fft.inverse(&mut data);
    Ok(Propagated {
        field: GridField {
            grid: g,
            values: data.into_iter().map(|c| c.re).collect(),
        },
        residual: if top > 0.0 { seam / top } else { 0.0 },
    })
}

/// Spectrum of a real grid field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub grid: PhaseGrid,
    pub spectrum: Vec<Complex64>,
    pub time: f64,
}

impl SpectralState {
    pub fn from_field(f: &GridField, time: f64) -> Self {
        let fft = Fft2::new(f.grid.nx, f.grid.nv);
        SpectralState {
            grid: f.grid,
            spectrum: fft.forward_real(&f.values),
            time,
        }
    }

    pub fn to_field(&self) -> GridField {
        let fft = Fft2::new(self.grid.nx, self.grid.nv);
        GridField {
            grid: self.grid,
            values: fft.inverse_real(self.spectrum.clone()),
        }
    }

    /// Zero-frequency coefficient times the cell volume: `∫ u dz`.
    pub fn mass(&self) -> f64 {
        self.spectrum[0].re * self.grid.cell()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub dt: f64,
    /// Zero spectral modes beyond two thirds of Nyquist after each step.
    pub dealias: bool,
    /// 0 selects the splitting solver; `≥ 1` is used by [`duhamel_picard`].
    pub picard_iters: usize,
    /// Output times; empty means the horizon only.
    pub snapshot_times: Vec<f64>,
    /// Tapered fraction of the kernel table's half-box.
    pub window: f64,
    /// Singular capping radius of the kernel table (default: one x-cell).
    pub eps_sing: Option<f64>,
}

impl PdeConfig {
    pub fn new(dt: f64) -> Self {
        PdeConfig {
            dt,
            dealias: false,
            picard_iters: 0,
            snapshot_times: Vec::new(),
            window: 0.0,
            eps_sing: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeSolution {
    pub snapshots: Vec<(f64, GridField)>,
    /// Negative-mass warnings (cells below `−1e−8`).
    pub warnings: Vec<String>,
    /// Largest `max|B|·dt / dv` seen.
    pub max_courant: f64,
    /// Largest relative change of total mass over one step.
    pub max_mass_drift: f64,
    pub steps: u64,
}

/// Strang splitting `T(dt/2) ∘ [D(dt/2) A(dt) D(dt/2)] ∘ T(dt/2)`: exact
/// transport `T`, exact fractional diffusion `D` in `v`, and SSP-RK2
/// conservative upwind advection `A` for `∂_v((b ∗ u) u)`. The upwind flux
/// uses `sqrt(B² + ε²)` for `|B|` so the semi-discrete system stays smooth
/// in time when face velocities change sign.
pub struct Splitting {
    pub grid: PhaseGrid,
    pub alpha: f64,
    pub dt: f64,
    pub dealias: bool,
    fft: Fft2,
    table: Option<KernelTable>,
    half_phase: Vec<Complex64>,
    half_diffusion: Vec<f64>,
    /// `ε` of the smoothed `|B|` in the upwind flux.
    smoothing: Option<f64>,
    pub max_courant: f64,
}

impl Splitting {
    pub fn new(grid: PhaseGrid, kernel: &KernelSpec, alpha: f64, cfg: &PdeConfig) -> Result<Self> {
        if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
            return Err(Error::param("pde.dt", cfg.dt, "must be positive"));
        }
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(Error::param("alpha", alpha, "stability index must lie in (1, 2]"));
        }
        let table = if kernel.is_zero() {
            None
        } else {
            Some(KernelTable::new(kernel, grid, cfg.eps_sing, cfg.window)?)
        };
        let tau = 0.5 * cfg.dt;
        let mut half_phase = vec![Complex64::new(1.0, 0.0); grid.len()];
        shear_phase(&mut half_phase, grid, tau);
        let half_diffusion = (0..grid.nv)
            .map(|iv| (-tau * grid.kv(iv).abs().powf(alpha)).exp())
            .collect();
        Ok(Splitting {
            grid,
            alpha,
            dt: cfg.dt,
            dealias: cfg.dealias,
            fft: Fft2::new(grid.nx, grid.nv),
            table,
            half_phase,
            half_diffusion,
            smoothing: None,
            max_courant: 0.0,
        })
    }

    /// Fixes the flux smoothing width `ε = max|b ∗ u|` (normally for the
    /// initial datum, so runs with different `dt` solve the same system).
    pub fn prime(&mut self, u: &GridField) -> Result<()> {
        if let Some(table) = &self.table {
            self.smoothing = Some(table.convolve(u)?.max_abs());
        }
        Ok(())
    }

    fn transport_half(&self, u: &mut [f64]) {
        let g = self.grid;
        let mut data: Vec<Complex64> = u.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.fft.forward_x(&mut data);
        for (c, p) in data.iter_mut().zip(&self.half_phase) {
            *c *= p;
        }
        if self.dealias {
            for ix in 0..g.nx {
                if crate::fft::signed_index(ix, g.nx).unsigned_abs() as usize > g.nx / 3 {
                    data[ix * g.nv..(ix + 1) * g.nv].fill(Complex64::default());
                }
            }
        }
        self.fft.inverse_x(&mut data);
        for (o, c) in u.iter_mut().zip(&data) {
            *o = c.re;
        }
    }

    fn diffusion_half(&self, u: &mut [f64]) {
        let g = self.grid;
        let cut = g.nv / 3;
        let mut row = vec![Complex64::default(); g.nv];
        for chunk in u.chunks_mut(g.nv) {
            for (c, &r) in row.iter_mut().zip(chunk.iter()) {
                *c = Complex64::new(r, 0.0);
            }
            self.fft.forward_v(&mut row);
            for (iv, (c, m)) in row.iter_mut().zip(&self.half_diffusion).enumerate() {
                if self.dealias && crate::fft::signed_index(iv, g.nv).unsigned_abs() as usize > cut {
                    *c = Complex64::default();
                } else {
                    *c *= m;
                }
            }
            self.fft.inverse_v(&mut row);
            for (o, c) in chunk.iter_mut().zip(&row) {
                *o = c.re;
            }
        }
    }

    /// `−∂_v(B u)` by first-order upwind fluxes at cell faces (periodic in v).
    fn advection_rhs(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let g = self.grid;
        let table = self.table.as_ref().expect("advection needs a kernel");
        let field = GridField {
            grid: g,
            values: u.to_vec(),
        };
        let b = table.convolve(&field)?.values;
        let (nv, dv) = (g.nv, g.dv());
        let bmax = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let eps = *self.smoothing.get_or_insert(bmax);
        let eps2 = eps * eps;
        let courant = (bmax * bmax + eps2).sqrt() * self.dt;
        self.max_courant = self.max_courant.max(courant / dv);
        if courant > dv {
            return Err(Error::Cfl { courant, cell: dv });
        }
        let mut flux = vec![0.0; nv];
        for ix in 0..g.nx {
            let (ur, br) = (&u[ix * nv..(ix + 1) * nv], &b[ix * nv..(ix + 1) * nv]);
            for iv in 0..nv {
                let jv = (iv + 1) % nv;
                let face = 0.5 * (br[iv] + br[jv]);
                let speed = (face * face + eps2).sqrt();
                flux[iv] = 0.5 * face * (ur[iv] + ur[jv]) - 0.5 * speed * (ur[jv] - ur[iv]);
            }
            let o = &mut out[ix * nv..(ix + 1) * nv];
            for iv in 0..nv {
                let prev = flux[(iv + nv - 1) % nv];
                o[iv] = -(flux[iv] - prev) / dv;
            }
        }
        Ok(())
    }

    fn advection(&mut self, u: &mut [f64]) -> Result<()> {
        if self.table.is_none() {
            return Ok(());
        }
        let dt = self.dt;
        let mut k = vec![0.0; u.len()];
        self.advection_rhs(u, &mut k)?;
        let u1: Vec<f64> = u.iter().zip(&k).map(|(a, b)| a + dt * b).collect();
        self.advection_rhs(&u1, &mut k)?;
        for ((o, a), b) in u.iter_mut().zip(&u1).zip(&k) {
            *o = 0.5 * *o + 0.5 * (a + dt * b);
        }
        Ok(())
    }

    pub fn step(&mut self, u: &mut [f64]) -> Result<()> {
        self.transport_half(u);
        self.diffusion_half(u);
        self.advection(u)?;
        self.diffusion_half(u);
        self.transport_half(u);
        Ok(())
    }
}

fn snapshot_steps(times: &[f64], dt: f64, horizon: f64) -> Result<Vec<(u64, f64)>> {
    let list: Vec<f64> = if times.is_empty() {
        vec![horizon]
    } else {
        times.to_vec()
    };
    let mut out: Vec<(u64, f64)> = Vec::with_capacity(list.len());
    for t in list {
        if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
            return Err(Error::param("pde.snapshot_times", t, "must lie in [0, horizon]"));
        }
        let s = (t / dt).round() as u64;
        if out.last().is_some_and(|&(p, _)| s <= p) {
            return Err(Error::param(
                "pde.snapshot_times",
                t,
                "must be increasing after rounding to dt",
            ));
        }
        out.push((s, s as f64 * dt));
    }
    Ok(out)
}

/// Splitting solve from `mu0` up to `horizon`, returning the configured snapshots.
pub fn solve(mu0: &GridField, k: &KernelSpec, alpha: f64, horizon: f64, cfg: &PdeConfig) -> Result<PdeSolution> {
    if k.dim != 1 {
        return Err(Error::param("kernel.dim", k.dim, "the PDE solver supports d = 1"));
    }
    let targets = snapshot_steps(&cfg.snapshot_times, cfg.dt, horizon)?;
    let mut split = Splitting::new(mu0.grid, k, alpha, cfg)?;
    split.prime(mu0)?;
    let mut u = mu0.values.clone();
    let cell = mu0.grid.cell();
    let mut mass = u.iter().sum::<f64>() * cell;
    let mut sol = PdeSolution {
        snapshots: Vec::with_capacity(targets.len()),
        warnings: Vec::new(),
        max_courant: 0.0,
        max_mass_drift: 0.0,
        steps: 0,
    };
    let mut step = 0u64;
    for (target, t) in targets {
        while step < target {
            split.step(&mut u)?;
            step += 1;
            let m = u.iter().sum::<f64>() * cell;
            let drift = (m - mass).abs() / mass.abs().max(f64::MIN_POSITIVE);
            sol.max_mass_drift = sol.max_mass_drift.max(drift);
            mass = m;
            let low = u.iter().copied().fold(f64::INFINITY, f64::min);
            if low < -1e-8 && sol.warnings.len() < 32 {
                sol.warnings
                    .push(format!("negative mass {low:.3e} at t = {:.6}", step as f64 * cfg.dt));
            }
        }
        sol.snapshots.push((
            t,
            GridField {
                grid: mu0.grid,
                values: u.clone(),
            },
        ));
    }
    sol.max_courant = split.max_courant;
    sol.steps = step;
    Ok(sol)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardResult {
    pub field: GridField,
    /// Sup-norm gap between the last two iterates at the final time.
    pub gap: f64,
    pub gaps: Vec<f64>,
}

/// `−∂_v((b ∗ u) u)` with a spectral `v` derivative.
fn nonlinearity(u: &GridField, table: &KernelTable, fft: &Fft2) -> Result<GridField> {
    let g = u.grid;
    let b = table.convolve(u)?;
    let mut data: Vec<Complex64> = b
        .values
        .iter()
        .zip(&u.values)
        .map(|(a, c)| Complex64::new(a * c, 0.0))
        .collect();
    fft.forward_v(&mut data);
    for ix in 0..g.nx {
        for iv in 0..g.nv {
            // odd derivative: drop the unpaired Nyquist mode
            let k = if iv == g.nv / 2 { 0.0 } else { g.kv(iv) };
            data[ix * g.nv + iv] *= Complex64::new(0.0, -k);
        }
    }
    fft.inverse_v(&mut data);
    Ok(GridField {
        grid: g,
        values: data.into_iter().map(|c| c.re).collect(),
    })
}

fn axpy(a: f64, x: &GridField, y: &mut GridField) {
    for (o, v) in y.values.iter_mut().zip(&x.values) {
        *o += a * v;
    }
}

/// Picard iterates of the mild formulation
/// `u_t = P_t μ0 − ∫₀^t P_{t−s} ∂_v((b ∗ u_s) u_s) ds` on `steps` equal time
/// intervals, trapezoid rule in `s`.
pub fn duhamel_picard(
    mu0: &GridField,
    k: &KernelSpec,
    alpha: f64,
    horizon: f64,
    iters: usize,
    steps: usize,
) -> Result<PicardResult> {
    if iters == 0 {
        return Err(Error::param("pde.picard_iters", iters, "must be at least 1"));
    }
    if steps == 0 {
        return Err(Error::param("pde.picard_steps", steps, "must be at least 1"));
    }
    if k.dim != 1 {
        return Err(Error::param("kernel.dim", k.dim, "the PDE solver supports d = 1"));
    }
    let g = mu0.grid;
    let ds = horizon / steps as f64;
    let free: Vec<GridField> = (0..=steps)
        .map(|m| free_propagate(mu0, m as f64 * ds, alpha))
        .collect::<Result<_>>()?;
    if k.is_zero() {
        return Ok(PicardResult {
            field: free[steps].clone(),
            gap: 0.0,
            gaps: vec![0.0; iters],
        });
    }
    let table = KernelTable::new(k, g, None, 0.0)?;
    let fft = Fft2::new(g.nx, g.nv);
    let mut iterate = free.clone();
    let mut gaps = Vec::with_capacity(iters);
    for it in 0..iters {
        let forcing: Vec<GridField> = iterate
            .iter()
            .map(|u| nonlinearity(u, &table, &fft))
            .collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(steps + 1);
        next.push(free[0].clone());
        let mut duhamel = GridField::zeros(g);
        for m in 0..steps {
            let mut carried = duhamel.clone();
            axpy(0.5 * ds, &forcing[m], &mut carried);
            let mut d = free_propagate(&carried, ds, alpha)?;
            axpy(0.5 * ds, &forcing[m + 1], &mut d);
            duhamel = d;
            let mut u = free[m + 1].clone();
            axpy(1.0, &duhamel, &mut u);
            next.push(u);
        }
        let gap = next[steps]
            .values
            .iter()
            .zip(&iterate[steps].values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        gaps.push(gap);
        iterate = next;
        if it >= 2 && gap > 0.0 && gap >= gaps[it - 1] {
            return Err(Error::NonContraction(gaps));
        }
        if gap == 0.0 {
            break;
        }
    }
    Ok(PicardResult {
        field: iterate.pop().unwrap(),
        gap: *gaps.last().unwrap(),
        gaps,
    })
}
