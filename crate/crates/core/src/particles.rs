//! The N-particle moderately interacting system, explicit Euler–Maruyama in
//! time, and the coupled limit process used for pathwise comparisons.

use std::cmp::Ordering;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GridField, PhaseGrid};
use crate::kernels::{Axis, CapStats, KernelSpec, MollifiedKernel, MollifierSpec, ScaledMollifier};
use crate::noise::{fill_normals, open_uniform, NoiseSpec, NoiseStream, Purpose, StreamKey};

/// Particle positions and velocities, row-major `N × d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub time: f64,
    pub step: u64,
    pub replica: u64,
    pub seed: u64,
    /// Noise-stream identity of each row; permuting rows together with their
    /// ids permutes the dynamics.
    pub ids: Vec<u64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, pos: Vec<f64>, vel: Vec<f64>, replica: u64, seed: u64) -> Result<Self> {
        if dim == 0 || pos.is_empty() || !pos.len().is_multiple_of(dim) || pos.len() != vel.len() {
            return Err(Error::param("ensemble", pos.len(), "need N ≥ 1 rows of matching shape"));
        }
        let n = pos.len() / dim;
        Ok(ParticleEnsemble {
            dim,
            pos,
            vel,
            time: 0.0,
            step: 0,
            replica,
            seed,
            ids: (0..n as u64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pos.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.pos[i * self.dim..(i + 1) * self.dim]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.vel[i * self.dim..(i + 1) * self.dim]
    }

    /// Reorders rows (and their stream ids): row `r` of the result is row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for (r, &i) in perm.iter().enumerate() {
            out.pos[r * d..(r + 1) * d].copy_from_slice(self.x(i));
            out.vel[r * d..(r + 1) * d].copy_from_slice(self.v(i));
            out.ids[r] = self.ids[i];
        }
        out
    }

    fn check_finite(&self) -> Result<()> {
        let d = self.dim;
        for i in 0..self.len() {
            if self.pos[i * d..(i + 1) * d]
                .iter()
                .chain(&self.vel[i * d..(i + 1) * d])
                .any(|c| !c.is_finite())
            {
                return Err(Error::SimulationFault {
                    particle: self.ids[i] as usize,
                    step: self.step,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw {
    /// Independent normal coordinates; vectors have length `d`.
    GaussianProduct {
        mean_x: Vec<f64>,
        mean_v: Vec<f64>,
        var_x: Vec<f64>,
        var_v: Vec<f64>,
    },
    /// Uniform on `Π[lo_x, hi_x] × Π[lo_v, hi_v]`.
    UniformBox {
        lo_x: Vec<f64>,
        hi_x: Vec<f64>,
        lo_v: Vec<f64>,
        hi_v: Vec<f64>,
    },
    /// Piecewise-constant density on the cells around the grid nodes (d = 1).
    GridDensity(GridField),
}

impl InitialLaw {
    pub fn gaussian(dim: usize, sd_x: f64, sd_v: f64) -> Self {
        InitialLaw::GaussianProduct {
            mean_x: vec![0.0; dim],
            mean_v: vec![0.0; dim],
            var_x: vec![sd_x * sd_x; dim],
            var_v: vec![sd_v * sd_v; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::GaussianProduct { mean_x, .. } => mean_x.len(),
            InitialLaw::UniformBox { lo_x, .. } => lo_x.len(),
            InitialLaw::GridDensity(_) => 1,
        }
    }

    /// Density of the law at the nodes of `grid` (d = 1).
    pub fn density_on(&self, grid: PhaseGrid) -> Result<GridField> {
        self.validate()?;
        if self.dim() != 1 {
            return Err(Error::param("law.dim", self.dim(), "grid densities support d = 1"));
        }
        Ok(match self {
            InitialLaw::GaussianProduct {
                mean_x,
                mean_v,
                var_x,
                var_v,
            } => {
                let pdf = |z: f64, m: f64, var: f64| {
                    (-(z - m) * (z - m) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
                };
                GridField::from_fn(grid, |x, v| pdf(x, mean_x[0], var_x[0]) * pdf(v, mean_v[0], var_v[0]))
            }
            InitialLaw::UniformBox { lo_x, hi_x, lo_v, hi_v } => {
                let vol = (hi_x[0] - lo_x[0]) * (hi_v[0] - lo_v[0]);
                GridField::from_fn(grid, |x, v| {
                    let inside = (lo_x[0]..=hi_x[0]).contains(&x) && (lo_v[0]..=hi_v[0]).contains(&v);
                    if inside {
                        1.0 / vol
                    } else {
                        0.0
                    }
                })
            }
            InitialLaw::GridDensity(f) => {
                if f.grid != grid {
                    return Err(Error::GridMismatch("law grid differs from the target grid".into()));
                }
                let mut g = f.clone();
                g.scale(1.0 / f.integral());
                g
            }
        })
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::param("law.dim", d, "must be at least 1"));
        }
        match self {
            InitialLaw::GaussianProduct {
                mean_v, var_x, var_v, ..
            } => {
                if mean_v.len() != d || var_x.len() != d || var_v.len() != d {
                    return Err(Error::param("law", d, "inconsistent coordinate counts"));
                }
                if var_x.iter().chain(var_v).any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return Err(Error::param("law.var", "negative", "variances must be finite and ≥ 0"));
                }
            }
            InitialLaw::UniformBox { lo_x, hi_x, lo_v, hi_v } => {
                if hi_x.len() != d || lo_v.len() != d || hi_v.len() != d {
                    return Err(Error::param("law", d, "inconsistent coordinate counts"));
                }
                if lo_x
                    .iter()
                    .zip(hi_x)
                    .chain(lo_v.iter().zip(hi_v))
                    .any(|(a, b)| !(a <= b))
                {
                    return Err(Error::param("law.bounds", "lo > hi", "each box side needs lo ≤ hi"));
                }
            }
            InitialLaw::GridDensity(f) => {
                if let Some(c) = f.values.iter().position(|&m| !(m >= 0.0)) {
                    return Err(Error::param("law.grid", f.values[c], "negative mass cell"));
                }
                if !(f.integral() > 0.0) {
                    return Err(Error::param("law.grid", f.integral(), "total mass must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Cumulative cell masses for grid sampling.
fn grid_cdf(f: &GridField) -> Vec<f64> {
    let mut acc = 0.0;
    f.values
        .iter()
        .map(|m| {
            acc += m;
            acc
        })
        .collect()
}

/// `N` independent draws from the law; particle `i` uses its own keyed stream.
pub fn init_ensemble(law: &InitialLaw, n: usize, replica: u64, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::param("n", n, "need at least one particle"));
    }
    law.validate()?;
    let d = law.dim();
    let cdf = match law {
        InitialLaw::GridDensity(f) => grid_cdf(f),
        _ => Vec::new(),
    };
    let mut pos = vec![0.0; n * d];
    let mut vel = vec![0.0; n * d];
    let mut z = vec![0.0; 2 * d];
    for i in 0..n {
        let mut rng = StreamKey::new(seed, replica, i as u64, 0, Purpose::Initial).rng(0);
        match law {
            InitialLaw::GaussianProduct {
                mean_x,
                mean_v,
                var_x,
                var_v,
            } => {
                fill_normals(&mut rng, &mut z);
                for k in 0..d {
                    z[k] = mean_x[k] + var_x[k].sqrt() * z[k];
                    z[d + k] = mean_v[k] + var_v[k].sqrt() * z[d + k];
                }
            }
            InitialLaw::UniformBox { lo_x, hi_x, lo_v, hi_v } => {
                for k in 0..d {
                    z[k] = lo_x[k] + (hi_x[k] - lo_x[k]) * open_uniform(&mut rng);
                    z[d + k] = lo_v[k] + (hi_v[k] - lo_v[k]) * open_uniform(&mut rng);
                }
            }
            InitialLaw::GridDensity(f) => {
                let total = *cdf.last().unwrap();
                let u = open_uniform(&mut rng) * total;
                let c = cdf.partition_point(|&m| m <= u).min(cdf.len() - 1);
                let (ix, iv) = (c / f.grid.nv, c % f.grid.nv);
                z[0] = f.grid.x(ix) + (open_uniform(&mut rng) - 0.5) * f.grid.dx();
                z[1] = f.grid.v(iv) + (open_uniform(&mut rng) - 0.5) * f.grid.dv();
            }
        }
        pos[i * d..(i + 1) * d].copy_from_slice(&z[..d]);
        vel[i * d..(i + 1) * d].copy_from_slice(&z[d..]);
    }
    ParticleEnsemble::new(d, pos, vel, replica, seed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMethod {
    /// Harmonic for sine kernels, cell list for velocity-compact kernels with
    /// enough particles, pairwise otherwise.
    #[default]
    Auto,
    Pairwise,
    /// `O(N)` closed form for `−γ sin(κ·)` kernels.
    Harmonic,
    /// Pairwise sum restricted to the candidate window in `v_1`.
    CellList,
}

/// `b^N_t` together with the evaluation strategy for the empirical sum.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub kernel: MollifiedKernel,
    pub method: DriftMethod,
}

impl Interaction {
    pub fn new(kernel: KernelSpec, mollifier: ScaledMollifier) -> Self {
        Interaction {
            kernel: MollifiedKernel::new(kernel, mollifier),
            method: DriftMethod::Auto,
        }
    }

    pub fn with_method(mut self, method: DriftMethod) -> Self {
        self.method = method;
        self
    }

    fn resolve(&self, n: usize) -> Result<DriftMethod> {
        let k = &self.kernel.kernel;
        match self.method {
            DriftMethod::Harmonic if k.harmonic().is_none() => {
                Err(Error::param("sim.method", "harmonic", "requires a sine kernel"))
            }
            DriftMethod::CellList if k.velocity_support().is_none() => Err(Error::param(
                "sim.method",
                "cell_list",
                "requires a kernel with compact velocity support",
            )),
            DriftMethod::Auto => Ok(if k.harmonic().is_some() {
                DriftMethod::Harmonic
            } else if k.velocity_support().is_some() && n > 256 {
                DriftMethod::CellList
            } else {
                DriftMethod::Pairwise
            }),
            m => Ok(m),
        }
    }
}

/// Snapshot in canonical order: sorted by `v_1`, then the remaining velocity
/// and position coordinates. Sums over it do not depend on row order.
struct Sorted {
    dim: usize,
    x: Vec<f64>,
    v: Vec<f64>,
}

impl Sorted {
    fn new(s: &ParticleEnsemble) -> Self {
        let d = s.dim;
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| {
            let key = |i: usize| s.v(i).iter().chain(s.x(i)).copied();
            key(a)
                .zip(key(b))
                .map(|(p, q)| p.total_cmp(&q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        let mut x = Vec::with_capacity(s.pos.len());
        let mut v = Vec::with_capacity(s.vel.len());
        for &i in &idx {
            x.extend_from_slice(s.x(i));
            v.extend_from_slice(s.v(i));
        }
        Sorted { dim: d, x, v }
    }

    fn v1(&self, j: usize) -> f64 {
        self.v[j * self.dim]
    }
}

/// Runs `f(i, row_i)` over the rows of `out`, in parallel when enabled, and
/// merges the returned statistics.
fn for_rows<F>(out: &mut [f64], d: usize, f: F) -> CapStats
where
    F: Fn(usize, &mut [f64]) -> CapStats + Sync + Send,
{
    let merge = |mut a: CapStats, b: CapStats| {
        a.merge(b);
        a
    };
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(d)
            .enumerate()
            .map(|(i, row)| f(i, row))
            .reduce(CapStats::default, merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(d)
            .enumerate()
            .map(|(i, row)| f(i, row))
            .fold(CapStats::default(), merge)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftOutput {
    /// Row-major `N × d`, in the ensemble's row order.
    pub drift: Vec<f64>,
    pub caps: CapStats,
}

/// `drift_i = (1/N) Σ_j b^N_t(Z_i − Z_j)`, self term included.
pub fn compute_drift(state: &ParticleEnsemble, interaction: &Interaction) -> Result<DriftOutput> {
    let (n, d) = (state.len(), state.dim);
    let mk = &interaction.kernel;
    if mk.dim() != d {
        return Err(Error::param(
            "kernel.dim",
            mk.dim(),
            "must match the ensemble dimension",
        ));
    }
    let t = state.time;
    let mut drift = vec![0.0; n * d];
    if mk.kernel.is_zero() {
        return Ok(DriftOutput {
            drift,
            caps: CapStats::default(),
        });
    }
    let method = interaction.resolve(n)?;
    let inv_n = 1.0 / n as f64;
    if method == DriftMethod::Harmonic {
        let (gamma, kappa, axis) = mk.kernel.harmonic().expect("resolved harmonic");
        let sorted = Sorted::new(state);
        let src = match axis {
            Axis::X => &sorted.x,
            Axis::V => &sorted.v,
        };
        let mut mean = vec![(0.0, 0.0); d];
        for j in 0..n {
            for k in 0..d {
                let (s, c) = (kappa * src[j * d + k]).sin_cos();
                mean[k].0 += c;
                mean[k].1 += s;
            }
        }
        for m in mean.iter_mut() {
            m.0 *= inv_n;
            m.1 *= inv_n;
        }
        let moments = mk.mollifier.harmonic_moments(kappa, t, axis);
        let own = match axis {
            Axis::X => &state.pos,
            Axis::V => &state.vel,
        };
        for_rows(&mut drift, d, |i, row| {
            for k in 0..d {
                let (s, c) = (kappa * own[i * d + k]).sin_cos();
                let (cb, sb) = mean[k];
                let (cm, sm) = moments[k];
                row[k] = -gamma * ((s * cb - c * sb) * cm - (c * cb + s * sb) * sm);
            }
            CapStats::default()
        });
        return Ok(DriftOutput {
            drift,
            caps: CapStats::default(),
        });
    }
    let sorted = Sorted::new(state);
    let window = match method {
        DriftMethod::CellList => {
            let r = mk.kernel.velocity_support().expect("resolved cell list") + mk.mollifier.hv;
            Some(r * (1.0 + 1e-9) + 1e-300)
        }
        _ => None,
    };
    let caps = for_rows(&mut drift, d, |i, row| {
        let (xi, vi) = (state.x(i), state.v(i));
        let (lo, hi) = match window {
            Some(r) => {
                let v1 = vi[0];
                (
                    (0..n).partition_point_by(|j| sorted.v1(j) < v1 - r),
                    (0..n).partition_point_by(|j| sorted.v1(j) <= v1 + r),
                )
            }
            None => (0, n),
        };
        let mut stats = CapStats::default();
        let mut acc = [0.0; 8];
        let mut dx = [0.0; 8];
        let mut dv = [0.0; 8];
        for j in lo..hi {
            for k in 0..d {
                dx[k] = xi[k] - sorted.x[j * d + k];
                dv[k] = vi[k] - sorted.v[j * d + k];
            }
            mk.accumulate(t, &dx[..d], &dv[..d], 1.0, &mut acc[..d], &mut stats);
        }
        for k in 0..d {
            row[k] = acc[k] / n as f64;
        }
        stats
    });
    caps.check(mk.cap_threshold)?;
    Ok(DriftOutput { drift, caps })
}

trait PartitionPoint {
    fn partition_point_by(self, pred: impl Fn(usize) -> bool) -> usize;
}

impl PartitionPoint for std::ops::Range<usize> {
    /// First index in the range where `pred` fails (pred must be monotone).
    fn partition_point_by(self, pred: impl Fn(usize) -> bool) -> usize {
        let (mut lo, mut hi) = (self.start, self.end);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if pred(mid) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Time-stepping state: ensemble, interaction and per-particle noise streams.
pub struct Simulation {
    pub state: ParticleEnsemble,
    pub interaction: Interaction,
    pub noise: NoiseSpec,
    pub dt: f64,
    pub substeps: u32,
    pub caps: CapStats,
    streams: Vec<NoiseStream>,
}

impl Simulation {
    pub fn new(
        state: ParticleEnsemble,
        interaction: Interaction,
        noise: NoiseSpec,
        dt: f64,
        substeps: u32,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("sim.dt", dt, "must be positive"));
        }
        if noise.dim != state.dim {
            return Err(Error::param(
                "noise.dim",
                noise.dim,
                "must match the ensemble dimension",
            ));
        }
        let streams = state
            .ids
            .iter()
            .map(|&id| {
                let key = StreamKey::new(state.seed, state.replica, id, state.step, Purpose::Increment);
                NoiseStream::new(noise, key)
            })
            .collect();
        Ok(Simulation {
            state,
            interaction,
            noise,
            dt,
            substeps: substeps.max(1),
            caps: CapStats::default(),
            streams,
        })
    }

    /// One Euler–Maruyama step from the pre-step snapshot.
    pub fn step(&mut self) -> Result<()> {
        let out = compute_drift(&self.state, &self.interaction)?;
        self.caps.merge(out.caps);
        let (d, dt, substeps, step) = (self.state.dim, self.dt, self.substeps, self.state.step);
        let s = &mut self.state;
        for (p, v) in s.pos.iter_mut().zip(&s.vel) {
            *p += v * dt;
        }
        let drift = &out.drift;
        let update = |(i, (row, stream)): (usize, (&mut [f64], &mut NoiseStream))| {
            let mut dl = [0.0; 8];
            stream.increment(step, dt, substeps, &mut dl[..d]);
            for k in 0..d {
                row[k] += drift[i * d + k] * dt + dl[k];
            }
        };
        #[cfg(feature = "parallel")]
        s.vel
            .par_chunks_mut(d)
            .zip(self.streams.par_iter_mut())
            .enumerate()
            .for_each(update);
        #[cfg(not(feature = "parallel"))]
        s.vel
            .chunks_mut(d)
            .zip(self.streams.iter_mut())
            .enumerate()
            .for_each(update);
        s.step += 1;
        s.time = s.step as f64 * dt;
        s.check_finite()
    }
}

/// `step(state, k, m, N, noise, dt)`: one step of the interacting system with
/// `φ_N` at scale `λ = N^ζ`.
pub fn step(
    state: &ParticleEnsemble,
    k: &KernelSpec,
    m: &MollifierSpec,
    n: usize,
    noise: &NoiseSpec,
    dt: f64,
) -> Result<(ParticleEnsemble, CapStats)> {
    let interaction = Interaction::new(*k, m.scaled(n));
    let mut sim = Simulation::new(state.clone(), interaction, *noise, dt, 1)?;
    sim.step()?;
    Ok((sim.state, sim.caps))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    #[default]
    Interacting,
    ExternalField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Snapshot times, rounded onto the step lattice at construction.
    pub snapshot_times: Vec<f64>,
    pub drift_mode: DriftMode,
    pub method: DriftMethod,
    /// Fine noise increments per step (noise-coupled refinement probes).
    pub substeps: u32,
    pub cap_threshold: Option<f64>,
    /// Singular capping radius (default: a tenth of the mollifier's x-radius).
    pub eps_sing: Option<f64>,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, snapshot_times: &[f64]) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("sim.dt", dt, "must be positive"));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::param("sim.horizon", horizon, "must be finite and ≥ 0"));
        }
        let mut times: Vec<f64> = Vec::with_capacity(snapshot_times.len());
        for &t in snapshot_times {
            if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
                return Err(Error::param("sim.snapshot_times", t, "must lie in [0, horizon]"));
            }
            let r = (t / dt).round() * dt;
            if times.last().is_some_and(|&p| r <= p) {
                return Err(Error::param(
                    "sim.snapshot_times",
                    t,
                    "must be strictly increasing after rounding to dt",
                ));
            }
            times.push(r);
        }
        Ok(SimConfig {
            dt,
            horizon,
            snapshot_times: times,
            drift_mode: DriftMode::Interacting,
            method: DriftMethod::Auto,
            substeps: 1,
            cap_threshold: None,
            eps_sing: None,
        })
    }

    fn snapshot_steps(&self) -> Vec<u64> {
        self.snapshot_times
            .iter()
            .map(|t| (t / self.dt).round() as u64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub ensemble: ParticleEnsemble,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub caps: CapStats,
}

impl SimConfig {
    /// The interaction `b^N` with this configuration's method and capping.
    pub fn interaction(&self, k: &KernelSpec, m: &ScaledMollifier) -> Interaction {
        let mut inter = Interaction::new(*k, m.clone()).with_method(self.method);
        inter.kernel.cap_threshold = self.cap_threshold;
        if let Some(e) = self.eps_sing {
            inter.kernel.eps_sing = e;
        }
        inter
    }
}

/// Runs the interacting system from fresh initial draws and records the
/// configured snapshots.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    law: &InitialLaw,
    n: usize,
    k: &KernelSpec,
    m: &ScaledMollifier,
    noise: &NoiseSpec,
    config: &SimConfig,
    replica: u64,
    seed: u64,
) -> Result<Trajectory> {
    if config.drift_mode != DriftMode::Interacting {
        return Err(Error::param(
            "sim.drift_mode",
            "external-field",
            "use simulate_coupled for externally driven particles",
        ));
    }
    let state = init_ensemble(law, n, replica, seed)?;
    simulate_from(state, config.interaction(k, m), noise, config)
}

/// Same as [`simulate`] from a given initial ensemble.
pub fn simulate_from(
    state: ParticleEnsemble,
    interaction: Interaction,
    noise: &NoiseSpec,
    config: &SimConfig,
) -> Result<Trajectory> {
    let steps = config.snapshot_steps();
    let mut sim = Simulation::new(state, interaction, *noise, config.dt, config.substeps)?;
    let mut snapshots = Vec::with_capacity(steps.len());
    for (&target, &t) in steps.iter().zip(&config.snapshot_times) {
        while sim.state.step < target {
            sim.step()?;
        }
        let mut ensemble = sim.state.clone();
        ensemble.time = t;
        snapshots.push(Snapshot { t, ensemble });
    }
    Ok(Trajectory {
        snapshots,
        caps: sim.caps,
    })
}

/// Time-indexed drift field `B_s(x, v)` on a phase grid (d = 1): bilinear in
/// space, nearest snapshot in time.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDrift {
    pub times: Vec<f64>,
    pub fields: Vec<GridField>,
    /// Treat `x` as periodic (the reference was computed for an x-periodic kernel).
    pub wrap_x: bool,
}

impl ReferenceDrift {
    pub fn new(times: Vec<f64>, fields: Vec<GridField>, wrap_x: bool) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::param("reference", times.len(), "need one field per time"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param(
                "reference.times",
                "unsorted",
                "must be strictly increasing",
            ));
        }
        if fields.iter().any(|f| f.grid != fields[0].grid) {
            return Err(Error::GridMismatch("reference fields must share a grid".into()));
        }
        Ok(ReferenceDrift { times, fields, wrap_x })
    }

    fn snapshot(&self, t: f64) -> Result<&GridField> {
        let ts = &self.times;
        let half = ts.windows(2).map(|w| 0.5 * (w[1] - w[0])).fold(0.0, f64::max);
        let tol = half + 1e-9 * t.abs().max(1.0);
        let idx = ts.partition_point(|&s| s < t);
        let best = [idx.saturating_sub(1), idx.min(ts.len() - 1)]
            .into_iter()
            .min_by(|&a, &b| (ts[a] - t).abs().total_cmp(&(ts[b] - t).abs()))
            .unwrap();
        if (ts[best] - t).abs() > tol {
            return Err(Error::Coverage(t));
        }
        Ok(&self.fields[best])
    }

    /// `B_t(x, v)`; the flag reports an excursion outside the field's box.
    pub fn eval(&self, t: f64, x: f64, v: f64) -> Result<(f64, bool)> {
        let f = self.snapshot(t)?;
        let g = f.grid;
        let mut outside = false;
        let (ix0, ix1, wx) = {
            let s = (x + g.lx) / g.dx();
            let nx = g.nx as i64;
            if self.wrap_x {
                let i = s.floor();
                let w = s - i;
                let i = i as i64;
                (i.rem_euclid(nx), (i + 1).rem_euclid(nx), w)
            } else if !(s >= 0.0 && s < nx as f64) {
                outside = true;
                let i = if s < 0.0 { 0 } else { nx - 1 };
                (i, i, 0.0)
            } else {
                let i = s.floor();
                let w = s - i;
                let i = i as i64;
                (i, (i + 1) % nx, w)
            }
        };
        let (iv0, iv1, wv) = {
            let s = (v + g.lv) / g.dv();
            let nv = g.nv as i64;
            if !(s >= 0.0 && s < nv as f64) {
                outside = true;
                let i = if s < 0.0 { 0 } else { nv - 1 };
                (i, i, 0.0)
            } else {
                let i = s.floor();
                let w = s - i;
                let i = i as i64;
                (i, (i + 1) % nv, w)
            }
        };
        let at = |a: i64, b: i64| f.at(a as usize, b as usize);
        let val = (1.0 - wx) * ((1.0 - wv) * at(ix0, iv0) + wv * at(ix0, iv1))
            + wx * ((1.0 - wv) * at(ix1, iv0) + wv * at(ix1, iv1));
        Ok((val, outside))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub times: Vec<f64>,
    /// `(x, v)` of particle 1 of the interacting system at each snapshot.
    pub particle: Vec<Vec<f64>>,
    /// `(x, v)` of the limit process driven by the reference drift.
    pub limit: Vec<Vec<f64>>,
    pub sup_distance: f64,
    pub caps: CapStats,
    /// Reference evaluations outside the field's box.
    pub out_of_box: u64,
}

/// Interacting system plus the limit particle `Z¹` that shares particle 1's
/// initial condition and noise, with drift from the reference field.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled(
    law: &InitialLaw,
    n: usize,
    k: &KernelSpec,
    m: &ScaledMollifier,
    noise: &NoiseSpec,
    config: &SimConfig,
    reference: &ReferenceDrift,
    replica: u64,
    seed: u64,
) -> Result<CoupledRun> {
    if k.dim != 1 {
        return Err(Error::param("kernel.dim", k.dim, "coupled runs support d = 1"));
    }
    let state = init_ensemble(law, n, replica, seed)?;
    let (mut x, mut v) = (state.pos[0], state.vel[0]);
    let key = StreamKey::new(seed, replica, state.ids[0], 0, Purpose::Increment);
    let mut limit_noise = NoiseStream::new(*noise, key);
    let mut sim = Simulation::new(state, config.interaction(k, m), *noise, config.dt, config.substeps)?;
    let dt = config.dt;
    let mut run = CoupledRun {
        times: Vec::new(),
        particle: Vec::new(),
        limit: Vec::new(),
        sup_distance: 0.0,
        caps: CapStats::default(),
        out_of_box: 0,
    };
    let record = |run: &mut CoupledRun, sim: &Simulation, t: f64, x: f64, v: f64| {
        let p = vec![sim.state.pos[0], sim.state.vel[0]];
        let dist = ((p[0] - x).powi(2) + (p[1] - v).powi(2)).sqrt();
        run.sup_distance = run.sup_distance.max(dist);
        run.times.push(t);
        run.particle.push(p);
        run.limit.push(vec![x, v]);
    };
    for (&target, &t) in config.snapshot_steps().iter().zip(&config.snapshot_times) {
        while sim.state.step < target {
            let step = sim.state.step;
            let (b, outside) = reference.eval(step as f64 * dt, x, v)?;
            run.out_of_box += outside as u64;
            sim.step()?;
            let mut dl = [0.0];
            limit_noise.increment(step, dt, config.substeps, &mut dl);
            x += v * dt;
            v += b * dt + dl[0];
            if !x.is_finite() || !v.is_finite() {
                return Err(Error::SimulationFault { particle: 0, step });
            }
        }
        record(&mut run, &sim, t, x, v);
    }
    run.caps = sim.caps;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{SmoothProfile, VelocityProfile};

    fn mollifier(d: usize) -> MollifierSpec {
        MollifierSpec::new(2.0, d, 0.2, 3).unwrap()
    }

    fn sine() -> KernelSpec {
        KernelSpec::smooth(
            1,
            SmoothProfile::Sine {
                gamma: 1.0,
                wavenumber: 1.0,
            },
        )
    }

    #[test]
    fn initial_draws_are_deterministic_and_in_support() {
        let law = InitialLaw::UniformBox {
            lo_x: vec![0.0; 2],
            hi_x: vec![1.0; 2],
            lo_v: vec![0.0; 2],
            hi_v: vec![1.0; 2],
        };
        let a = init_ensemble(&law, 500, 3, 11).unwrap();
        let b = init_ensemble(&law, 500, 3, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.pos.iter().chain(&a.vel).all(|&c| (0.0..=1.0).contains(&c)));
        assert_ne!(a, init_ensemble(&law, 500, 4, 11).unwrap());
    }

    #[test]
    fn gaussian_law_mean() {
        let law = InitialLaw::GaussianProduct {
            mean_x: vec![1.0],
            mean_v: vec![-2.0],
            var_x: vec![0.25],
            var_v: vec![4.0],
        };
        let n = 100_000;
        let e = init_ensemble(&law, n, 0, 1).unwrap();
        let mx = e.pos.iter().sum::<f64>() / n as f64;
        let mv = e.vel.iter().sum::<f64>() / n as f64;
        assert!((mx - 1.0).abs() < 4.0 * 0.5 / (n as f64).sqrt());
        assert!((mv + 2.0).abs() < 4.0 * 2.0 / (n as f64).sqrt());
    }

    #[test]
    fn grid_density_rejects_negative_mass() {
        let g = crate::fields::PhaseGrid::new(8, 8, 1.0, 1.0).unwrap();
        let mut f = GridField::from_fn(g, |_, _| 1.0);
        f.values[5] = -0.1;
        assert!(init_ensemble(&InitialLaw::GridDensity(f), 10, 0, 0).is_err());
    }

    #[test]
    fn grid_density_samples_within_occupied_cells() {
        let g = crate::fields::PhaseGrid::new(8, 8, 1.0, 1.0).unwrap();
        let f = GridField::from_fn(g, |x, v| if x == 0.0 && v == 0.25 { 1.0 } else { 0.0 });
        let e = init_ensemble(&InitialLaw::GridDensity(f), 200, 0, 0).unwrap();
        for i in 0..e.len() {
            assert!((e.pos[i]).abs() <= 0.125 && (e.vel[i] - 0.25).abs() <= 0.125);
        }
    }

    #[test]
    fn free_transport_without_noise_or_kernel() {
        let law = InitialLaw::gaussian(2, 1.0, 1.0);
        let s0 = init_ensemble(&law, 50, 0, 5).unwrap();
        let mut noise = NoiseSpec::new(2.0, 2).unwrap();
        noise.jump_cap = Some(0.0);
        let k = KernelSpec::zero(2);
        let m = mollifier(2).scaled(50);
        let cfg = SimConfig::new(0.25, 1.0, &[0.0, 1.0]).unwrap();
        let tr = simulate_from(s0.clone(), Interaction::new(k, m), &noise, &cfg).unwrap();
        assert_eq!(tr.snapshots[0].ensemble, s0);
        let end = &tr.snapshots[1].ensemble;
        assert_eq!(end.vel, s0.vel);
        for (x, (x0, v0)) in end.pos.iter().zip(s0.pos.iter().zip(&s0.vel)) {
            // four steps of exact dyadic increments
            let mut y = *x0;
            for _ in 0..4 {
                y += v0 * 0.25;
            }
            assert_eq!(*x, y);
        }
    }

    #[test]
    fn two_particle_drift_is_hand_sum() {
        let k = KernelSpec::riesz(1, 1.0, 1.5, 1.0);
        let m = mollifier(1).scaled(64);
        let s = ParticleEnsemble::new(1, vec![0.3, -0.2], vec![0.1, 0.4], 0, 0).unwrap();
        let inter = Interaction::new(k, m).with_method(DriftMethod::Pairwise);
        let out = compute_drift(&s, &inter).unwrap();
        let mk = &inter.kernel;
        let self_term = mk.eval(0.0, &[0.0], &[0.0]).0[0];
        let cross = mk.eval(0.0, &[0.5], &[-0.3]).0[0];
        let back = mk.eval(0.0, &[-0.5], &[0.3]).0[0];
        assert!((out.drift[0] - 0.5 * (self_term + cross)).abs() < 1e-12);
        assert!((out.drift[1] - 0.5 * (self_term + back)).abs() < 1e-12);
        assert!((cross + back).abs() < 1e-12 * cross.abs().max(1.0));
    }

    fn random_state(n: usize, d: usize, seed: u64) -> ParticleEnsemble {
        init_ensemble(&InitialLaw::gaussian(d, 0.6, 0.8), n, 0, seed).unwrap()
    }

    fn shuffle(n: usize, seed: u64) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            p.swap(i, (s >> 33) as usize % (i + 1));
        }
        p
    }

    #[test]
    fn drift_commutes_with_permutations() {
        let kernels = [
            KernelSpec::riesz(1, 1.0, 1.5, 0.7),
            sine(),
            KernelSpec::velocity_only(1, VelocityProfile::Gaussian { gamma: 0.8, width: 0.5 }),
        ];
        for k in kernels {
            let s = random_state(100, 1, 3);
            let p = shuffle(100, 9);
            let inter = Interaction::new(k, mollifier(1).scaled(100));
            let a = compute_drift(&s, &inter).unwrap().drift;
            let b = compute_drift(&s.permuted(&p), &inter).unwrap().drift;
            for (r, &i) in p.iter().enumerate() {
                assert_eq!(a[i].to_bits(), b[r].to_bits());
            }
        }
    }

    #[test]
    fn odd_kernel_drift_sums_to_zero() {
        let s = random_state(200, 1, 4);
        for k in [KernelSpec::riesz(1, 1.0, 1.5, 1.0), sine()] {
            let inter = Interaction::new(k, mollifier(1).scaled(200)).with_method(DriftMethod::Pairwise);
            let d = compute_drift(&s, &inter).unwrap().drift;
            let total: f64 = d.iter().sum();
            let scale: f64 = d.iter().map(|a| a.abs()).sum();
            assert!(total.abs() <= 1e-10 * scale, "{total} vs {scale}");
        }
    }

    #[test]
    fn harmonic_and_cell_list_match_pairwise() {
        let s = random_state(300, 1, 5);
        let m = mollifier(1).scaled(300);
        let pair = |k: &KernelSpec| {
            compute_drift(
                &s,
                &Interaction::new(*k, m.clone()).with_method(DriftMethod::Pairwise),
            )
            .unwrap()
            .drift
        };
        let k = sine();
        let a = pair(&k);
        let b = compute_drift(&s, &Interaction::new(k, m.clone()).with_method(DriftMethod::Harmonic))
            .unwrap()
            .drift;
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        let k = KernelSpec::riesz(1, 1.0, 1.5, 0.3);
        let a = pair(&k);
        let b = compute_drift(&s, &Interaction::new(k, m).with_method(DriftMethod::CellList))
            .unwrap()
            .drift;
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn single_particle_drift_is_kernel_at_origin() {
        let k = KernelSpec::smooth(
            1,
            SmoothProfile::Gaussian {
                gamma: 1.0,
                width_x: 0.5,
                width_v: 1.0,
            },
        );
        let s = ParticleEnsemble::new(1, vec![0.7], vec![-0.2], 0, 0).unwrap();
        let inter = Interaction::new(k, mollifier(1).scaled(1));
        let got = compute_drift(&s, &inter).unwrap().drift[0];
        assert_eq!(got, inter.kernel.eval(0.0, &[0.0], &[0.0]).0[0]);
    }

    #[test]
    fn fault_on_non_finite() {
        let s = ParticleEnsemble::new(1, vec![0.0, f64::NAN], vec![0.0, 0.0], 0, 0).unwrap();
        let noise = NoiseSpec::new(2.0, 1).unwrap();
        let r = step(&s, &KernelSpec::zero(1), &mollifier(1), 2, &noise, 0.1);
        assert!(matches!(r, Err(Error::SimulationFault { particle: 1, step: 1 })));
    }

    #[test]
    fn snapshot_times_round_to_steps() {
        let c = SimConfig::new(0.1, 1.0, &[0.0, 0.29, 1.0]).unwrap();
        assert!((c.snapshot_times[1] - 0.3).abs() < 1e-12);
        assert!(SimConfig::new(0.1, 1.0, &[0.5, 0.51]).is_err());
        assert!(SimConfig::new(0.0, 1.0, &[]).is_err());
    }

    #[test]
    fn coupled_zero_kernel_paths_coincide() {
        let g = crate::fields::PhaseGrid::new(16, 16, 4.0, 4.0).unwrap();
        let reference = ReferenceDrift::new(vec![0.0, 1.0], vec![GridField::zeros(g); 2], false).unwrap();
        let noise = NoiseSpec::new(1.6, 1).unwrap();
        let cfg = SimConfig::new(0.05, 1.0, &[0.5, 1.0]).unwrap();
        let run = simulate_coupled(
            &InitialLaw::gaussian(1, 1.0, 1.0),
            8,
            &KernelSpec::zero(1),
            &mollifier(1).scaled(8),
            &noise,
            &cfg,
            &reference,
            0,
            2,
        )
        .unwrap();
        assert_eq!(run.particle, run.limit);
        assert_eq!(run.sup_distance, 0.0);
    }

    #[test]
    fn reference_coverage_and_interpolation() {
        let g = crate::fields::PhaseGrid::new(8, 8, 1.0, 1.0).unwrap();
        let lin = GridField::from_fn(g, |x, v| 2.0 * x + v);
        let r = ReferenceDrift::new(vec![0.0, 0.1], vec![lin.clone(), lin], false).unwrap();
        let (b, out) = r.eval(0.05, 0.1, -0.3).unwrap();
        assert!((b - (0.2 - 0.3)).abs() < 1e-12 && !out);
        assert!(r.eval(0.0, 5.0, 0.0).unwrap().1);
        assert!(matches!(r.eval(0.3, 0.0, 0.0), Err(Error::Coverage(_))));
    }
}
