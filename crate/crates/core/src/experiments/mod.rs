//! Convergence studies: the (N, replica) task matrix, replica statistics,
//! log-log rate fits and verdicts.

mod fit;
mod report;

pub use fit::{fit_rate, RateFit};
pub use report::{emit_report, render_svg, write_errors_csv};

use std::fmt;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    besov_from_norms, bin_particles, mixed_lp_norm, mollified_empirical_density, s_beta_error_norm, tv_distance,
    AnisoIndex, DepositOptions, DyadicPlan, GridField, KernelTable, PhaseGrid,
};
use crate::kernels::{CapStats, KernelSpec, MollifierSpec};
use crate::noise::NoiseSpec;
use crate::params::{derive_rates, m_alpha, scaling_index, theta_alpha, IndexPair, ModelParams};
use crate::particles::{
    init_ensemble, simulate_coupled, simulate_from, DriftMethod, InitialLaw, ParticleEnsemble, ReferenceDrift,
    SimConfig,
};
use crate::pde::{self, PdeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Moderate,
    Weak,
    Strong,
    Sampling,
    MollifierScaling,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Moderate,
        Mode::Weak,
        Mode::Strong,
        Mode::Sampling,
        Mode::MollifierScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Moderate => "moderate",
            Mode::Weak => "weak",
            Mode::Strong => "strong",
            Mode::Sampling => "sampling",
            Mode::MollifierScaling => "mollifier_scaling",
        }
    }

    /// Errors are expected to decrease in N (all modes but the scaling one).
    pub fn is_decay(self) -> bool {
        self != Mode::MollifierScaling
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            format!("unknown mode `{s}` (expected one of moderate, weak, strong, sampling, mollifier_scaling)")
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierOptions {
    pub quad_order: usize,
    pub eps_sing: Option<f64>,
    pub cap_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub grid: PhaseGrid,
    pub periodic_x: bool,
    pub leak_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeOptions {
    pub dt: f64,
    /// Coarse x-resolution of the reference solve, spectrally refined onto the
    /// study grid (moderate and weak modes).
    pub nx: Option<usize>,
    pub dealias: bool,
    pub window: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    pub method: DriftMethod,
    pub substeps: u32,
    /// Run the noise-coupled dt-halving probe at the largest N (moderate mode).
    pub dt_bias: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub mode: Mode,
    pub n_values: Vec<usize>,
    pub replicas: usize,
    pub moment_order: f64,
    pub times: Vec<f64>,
    pub model: ModelParams,
    /// Slack `ε` of the rate calculus.
    pub epsilon: f64,
    pub kernel: KernelSpec,
    pub mollifier: MollifierOptions,
    pub law: InitialLaw,
    pub grid: GridOptions,
    pub pde: PdeOptions,
    pub sim: SimOptions,
    pub seed: u64,
    /// Weak mode: estimator bandwidths as multiples of `λ(N_max)`.
    pub bandwidth_factors: Vec<f64>,
    /// Sampling mode: fixed mollifier scale.
    pub lambda: f64,
    /// Sampling and scaling modes: mixed integrability of the norm.
    pub norm_p: IndexPair,
    /// Scaling mode: Besov smoothness `s` of `B^{s,∞}_{p;a}`.
    pub besov_beta: f64,
    /// Scaling mode: transport time of `Γ_t φ_N`.
    pub scaling_time: f64,
    /// Worker count; results do not depend on it.
    pub threads: Option<usize>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let n = &self.n_values;
        if n.len() < 4 {
            return Err(Error::param("experiment.n_values", n.len(), "need at least 4 values"));
        }
        if n[0] == 0 || n.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param(
                "experiment.n_values",
                format!("{n:?}"),
                "must be positive and strictly increasing",
            ));
        }
        let min_replicas = if self.mode == Mode::MollifierScaling { 1 } else { 8 };
        if self.replicas < min_replicas {
            return Err(Error::param(
                "experiment.replicas",
                self.replicas,
                format!("must be at least {min_replicas}"),
            ));
        }
        if !(self.moment_order >= 1.0) || !self.moment_order.is_finite() {
            return Err(Error::param(
                "experiment.moment_order",
                self.moment_order,
                "must be finite and >= 1",
            ));
        }
        self.model.validate_fields()?;
        self.kernel.validate()?;
        if self.model.dim != 1 || self.kernel.dim != 1 || self.law.dim() != 1 {
            return Err(Error::param(
                "model.dim",
                self.model.dim,
                "convergence studies run on d = 1 grids",
            ));
        }
        if matches!(self.mode, Mode::Moderate | Mode::Weak | Mode::Strong) {
            let t = &self.times;
            if t.is_empty() || t.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(Error::param(
                    "experiment.times",
                    format!("{t:?}"),
                    "need positive evaluation times",
                ));
            }
            if t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param(
                    "experiment.times",
                    format!("{t:?}"),
                    "must be strictly increasing",
                ));
            }
            if !(self.sim.dt > 0.0) {
                return Err(Error::param("sim.dt", self.sim.dt, "must be positive"));
            }
            if !(self.pde.dt > 0.0) {
                return Err(Error::param("pde.dt", self.pde.dt, "must be positive"));
            }
        }
        if self.mode == Mode::Weak
            && (self.bandwidth_factors.is_empty() || self.bandwidth_factors.iter().any(|&b| !(b > 0.0)))
        {
            return Err(Error::param(
                "experiment.bandwidth_factors",
                format!("{:?}", self.bandwidth_factors),
                "need positive factors",
            ));
        }
        if self.mode == Mode::Sampling && !(self.lambda > 0.0) {
            return Err(Error::param("experiment.lambda", self.lambda, "must be positive"));
        }
        if self.mode == Mode::MollifierScaling && !(self.scaling_time >= 0.0) {
            return Err(Error::param(
                "experiment.scaling_time",
                self.scaling_time,
                "must be >= 0",
            ));
        }
        if let Some(nx) = self.pde.nx {
            if nx > self.grid.grid.nx {
                return Err(Error::param("pde.nx", nx, "must not exceed grid.nx"));
            }
        }
        Ok(())
    }

    pub fn mollifier_spec(&self) -> Result<MollifierSpec> {
        MollifierSpec::new(
            self.model.alpha,
            self.model.dim,
            self.model.zeta,
            self.mollifier.quad_order,
        )
    }

    pub fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.model.alpha, self.model.dim)
    }

    /// Predicted decay rate (decay modes) or growth exponent in `λ = N^ζ`
    /// (scaling mode).
    pub fn theory_exponent(&self) -> Option<f64> {
        let p = &self.model;
        match self.mode {
            Mode::Moderate => {
                let m = m_alpha(p.alpha, p.p0);
                let theta = theta_alpha(p.alpha, p.dim, p.p0, p.pb, p.betab);
                Some((p.beta * p.zeta).min(1.0 - m - p.zeta * theta))
            }
            Mode::Strong => Some(p.beta * p.zeta),
            Mode::Sampling => {
                let q = self.norm_p.x.value().min(self.norm_p.v.value()).min(2.0);
                Some(1.0 - 1.0 / q)
            }
            Mode::MollifierScaling => {
                Some((1.0 + p.alpha) * self.besov_beta + scaling_index(p.alpha, p.dim, IndexPair::ONES, self.norm_p))
            }
            Mode::Weak => None,
        }
    }

    fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    fn sim_config(&self, dt: f64, substeps: u32, times: &[f64]) -> Result<SimConfig> {
        let mut c = SimConfig::new(dt, self.horizon(), times)?;
        c.method = self.sim.method;
        c.substeps = substeps;
        c.cap_threshold = self.mollifier.cap_threshold;
        c.eps_sing = self.mollifier.eps_sing;
        Ok(c)
    }

    fn deposit_options(&self) -> DepositOptions {
        DepositOptions {
            periodic_x: self.grid.periodic_x,
            leak_threshold: self.grid.leak_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerN {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    /// Per-replica values at the reported time (weak mode: leave-one-group-out
    /// estimates).
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub per_n: Vec<PerN>,
    pub fit: RateFit,
    pub strictly_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub reasons: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `|E(dt) − E(dt/2)|` at the largest N with coupled noise.
    pub dt_bias: Option<f64>,
    /// Smallest consecutive decrease of the per-N errors.
    pub min_n_gap: Option<f64>,
    pub max_leaked_mass: f64,
    pub capped: CapStats,
    /// Weak mode: binned particles outside the box; strong mode: reference
    /// evaluations outside the box.
    pub out_of_box: f64,
    pub pde_warnings: Vec<String>,
    pub pde_max_courant: f64,
    pub pde_max_mass_drift: f64,
    /// Relative spectral weight of the reference beyond the top block.
    pub truncation: f64,
    /// Scaling mode: block attaining the Besov supremum, per N.
    pub peak_blocks: Vec<usize>,
    /// Scaling mode: `λ = N^ζ` per N (the fit abscissa).
    pub lambdas: Vec<f64>,
    pub j_max: Option<usize>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub mode: Mode,
    pub n: usize,
    pub replica: Option<u64>,
    pub t: f64,
    pub error: f64,
    pub component_besov: Option<f64>,
    pub component_binf: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: Mode,
    pub seed: u64,
    pub replicas: usize,
    pub per_n: Vec<PerN>,
    /// Slope against `log N`, or against `log λ` in the scaling mode.
    pub fit: RateFit,
    pub theory_exponent: Option<f64>,
    pub verdict: Verdict,
    pub diagnostics: Diagnostics,
    /// Weak mode: one series per bandwidth.
    pub series: Vec<Series>,
    pub records: Vec<ErrorRecord>,
}

/// Mean of `xs` summed in sorted order, so it does not depend on replica order.
pub fn ordered_mean(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(E|e|^m)^{1/m}` over replicas with its delta-method standard error.
pub fn lm_statistic(values: &[f64], m: f64) -> (f64, f64) {
    let pw: Vec<f64> = values.iter().map(|e| e.abs().powf(m)).collect();
    let s = ordered_mean(&pw);
    let r = pw.len();
    let est = s.powf(1.0 / m);
    if r < 2 || s == 0.0 {
        return (est, 0.0);
    }
    let mut dev: Vec<f64> = pw.iter().map(|p| (p - s).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    let var = dev.iter().sum::<f64>() / (r - 1) as f64;
    let se_s = (var / r as f64).sqrt();
    (est, se_s * s.powf(1.0 / m - 1.0) / m)
}

fn strictly_decreasing(p: &[PerN]) -> bool {
    p.windows(2).all(|w| w[1].mean < w[0].mean)
}

fn min_gap(p: &[PerN]) -> f64 {
    p.windows(2)
        .map(|w| w[0].mean - w[1].mean)
        .fold(f64::INFINITY, f64::min)
}

fn fit_per_n(p: &[PerN]) -> Result<RateFit> {
    let pts: Vec<(f64, f64, f64)> = p.iter().map(|q| (q.n as f64, q.mean, q.se)).collect();
    fit_rate(&pts)
}

/// Runs `f` over the `(N, replica)` matrix; results come back in task order
/// and the first failure (in task order) aborts the study.
fn run_tasks<T, F>(plan: &ExperimentPlan, tasks: &[(usize, u64)], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let out: Vec<Result<T>> = tasks.par_iter().map(|&(n, r)| f(n, r)).collect();
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<T>> = tasks.iter().map(|&(n, r)| f(n, r)).collect();
    out.into_iter()
        .zip(tasks)
        .map(|(res, &(n, replica))| {
            res.map_err(|e| Error::Study {
                n,
                replica,
                seed: plan.seed,
                source: Box::new(e),
            })
        })
        .collect()
}

fn matrix(n_values: &[usize], replicas: usize) -> Vec<(usize, u64)> {
    n_values
        .iter()
        .flat_map(|&n| (0..replicas as u64).map(move |r| (n, r)))
        .collect()
}

struct Reference {
    fields: Vec<GridField>,
}

/// Splitting solve on the coarse x-grid, refined onto the study grid.
fn reference_fields(plan: &ExperimentPlan, diag: &mut Diagnostics) -> Result<Reference> {
    let g = plan.grid.grid;
    let coarse = PhaseGrid::new(plan.pde.nx.unwrap_or(g.nx), g.nv, g.lx, g.lv)?;
    let mu0 = plan.law.density_on(coarse)?;
    let cfg = PdeConfig {
        dealias: plan.pde.dealias,
        snapshot_times: plan.times.clone(),
        window: plan.pde.window,
        eps_sing: plan.mollifier.eps_sing,
        ..PdeConfig::new(plan.pde.dt)
    };
    let sol = pde::solve(&mu0, &plan.kernel, plan.model.alpha, plan.horizon(), &cfg)?;
    diag.pde_warnings.extend(sol.warnings);
    diag.pde_max_courant = sol.max_courant;
    diag.pde_max_mass_drift = sol.max_mass_drift;
    let fields = sol
        .snapshots
        .into_iter()
        .map(|(_, f)| f.refine_x(g.nx))
        .collect::<Result<Vec<_>>>()?;
    Ok(Reference { fields })
}

struct Decay {
    per_n: Vec<PerN>,
    series: Vec<Series>,
    records: Vec<ErrorRecord>,
    diag: Diagnostics,
}

pub fn run_convergence_study(plan: &ExperimentPlan) -> Result<ConvergenceReport> {
    plan.validate()?;
    #[cfg(feature = "parallel")]
    if let Some(threads) = plan.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::param("experiment.threads", threads, e.to_string()))?;
        return pool.install(|| run_study(plan));
    }
    run_study(plan)
}

fn run_study(plan: &ExperimentPlan) -> Result<ConvergenceReport> {
    if plan.mode == Mode::MollifierScaling {
        return run_scaling(plan);
    }
    let out = match plan.mode {
        Mode::Moderate => run_moderate(plan)?,
        Mode::Weak => run_weak(plan)?,
        Mode::Strong => run_strong(plan)?,
        Mode::Sampling => run_sampling(plan)?,
        Mode::MollifierScaling => unreachable!(),
    };
    let fit = fit_per_n(&out.per_n)?;
    let theory = plan.theory_exponent();
    let mut reasons = Vec::new();
    let mut pass = true;
    if out.series.is_empty() {
        if !strictly_decreasing(&out.per_n) {
            pass = false;
            reasons.push("errors are not strictly decreasing in N".into());
        }
    } else {
        for s in &out.series {
            if !s.strictly_decreasing {
                pass = false;
                reasons.push(format!("series {}: errors are not strictly decreasing in N", s.label));
            }
        }
    }
    if let Some(th) = theory {
        let need = 0.8 * th;
        if !(-fit.slope >= need) {
            pass = false;
            reasons.push(format!(
                "fitted slope {:.4} is shallower than -0.8 x {th:.4} = {:.4}",
                fit.slope, -need
            ));
        }
    }
    if let (Some(bias), Some(gap)) = (out.diag.dt_bias, out.diag.min_n_gap) {
        if !(3.0 * bias <= gap) {
            pass = false;
            reasons.push(format!(
                "dt-bias {bias:.3e} is not 3x below the smallest N-gap {gap:.3e}"
            ));
        }
    }
    if pass {
        reasons.push("all checks passed".into());
    }
    Ok(ConvergenceReport {
        mode: plan.mode,
        seed: plan.seed,
        replicas: plan.replicas,
        per_n: out.per_n,
        fit,
        theory_exponent: theory,
        verdict: Verdict { pass, reasons },
        diagnostics: out.diag,
        series: out.series,
        records: out.records,
    })
}

/// Per-replica output of a moderate-mode run: one S-norm per time.
struct ModerateRun {
    besov: Vec<f64>,
    binf: Vec<f64>,
    total: Vec<f64>,
    leaked: f64,
    caps: CapStats,
}

fn run_moderate(plan: &ExperimentPlan) -> Result<Decay> {
    let mut diag = Diagnostics::default();
    let grid = plan.grid.grid;
    let reference = reference_fields(plan, &mut diag)?;
    let table = KernelTable::new(&plan.kernel, grid, None, plan.pde.window)?;
    let dyadic = DyadicPlan::new(grid, AnisoIndex::new(plan.model.alpha))?;
    diag.j_max = Some(dyadic.j_max);
    for f in &reference.fields {
        diag.truncation = diag.truncation.max(dyadic.decompose(f)?.truncation);
    }
    let rates = derive_rates(&plan.model, plan.epsilon)?;
    let msp = plan.mollifier_spec()?;
    let noise = plan.noise()?;
    let m = plan.moment_order;

    let one = |n: usize, r: u64, dt: f64, substeps: u32| -> Result<ModerateRun> {
        let cfg = plan.sim_config(dt, substeps, &plan.times)?;
        let scaled = msp.scaled(n);
        let state = init_ensemble(&plan.law, n, r, plan.seed)?;
        let traj = simulate_from(state, cfg.interaction(&plan.kernel, &scaled), &noise, &cfg)?;
        let mut run = ModerateRun {
            besov: Vec::new(),
            binf: Vec::new(),
            total: Vec::new(),
            leaked: 0.0,
            caps: traj.caps,
        };
        for (snap, u) in traj.snapshots.iter().zip(&reference.fields) {
            let dep = mollified_empirical_density(&snap.ensemble, &scaled, snap.t, grid, plan.deposit_options())?;
            run.leaked = run.leaked.max(dep.leaked);
            let sn = s_beta_error_norm(&dep.field.sub(u)?, &plan.model, &rates, snap.t, &table, &dyadic)?;
            run.besov.push(sn.weighted_besov);
            run.binf.push(sn.weighted_binf);
            run.total.push(sn.total);
        }
        Ok(run)
    };

    let tasks = matrix(&plan.n_values, plan.replicas);
    let runs = run_tasks(plan, &tasks, |n, r| one(n, r, plan.sim.dt, plan.sim.substeps))?;
    let mut records = Vec::new();
    let mut per_n = Vec::new();
    // error_N = max over t of the replica L^m statistic
    let aggregate = |chunk: &[ModerateRun]| -> (f64, f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0);
        for ti in 0..plan.times.len() {
            let vals: Vec<f64> = chunk.iter().map(|run| run.total[ti]).collect();
            let (e, se) = lm_statistic(&vals, m);
            if e > best.0 {
                best = (e, se, ti);
            }
        }
        best
    };
    for (chunk, &n) in runs.chunks(plan.replicas).zip(&plan.n_values) {
        let (mean, se, ti) = aggregate(chunk);
        per_n.push(PerN {
            n,
            mean,
            se,
            values: chunk.iter().map(|run| run.total[ti]).collect(),
        });
        for (r, run) in chunk.iter().enumerate() {
            diag.max_leaked_mass = diag.max_leaked_mass.max(run.leaked);
            diag.capped.merge(run.caps);
            for (ti, &t) in plan.times.iter().enumerate() {
                records.push(ErrorRecord {
                    mode: plan.mode,
                    n,
                    replica: Some(r as u64),
                    t,
                    error: run.total[ti],
                    component_besov: Some(run.besov[ti]),
                    component_binf: Some(run.binf[ti]),
                    seed: plan.seed,
                });
            }
        }
    }
    diag.min_n_gap = Some(min_gap(&per_n));

    if plan.sim.dt_bias {
        let n_max = *plan.n_values.last().unwrap();
        let s = plan.sim.substeps.max(1);
        let reps: Vec<(usize, u64)> = (0..plan.replicas as u64).map(|r| (n_max, r)).collect();
        // coarse (dt, 2k) and fine (dt/2, k) runs see the same noise path
        let coarse_err = if s.is_multiple_of(2) {
            aggregate(&runs[runs.len() - plan.replicas..]).0
        } else {
            let coarse = run_tasks(plan, &reps, |n, r| one(n, r, plan.sim.dt, 2 * s))?;
            aggregate(&coarse).0
        };
        let fine_sub = if s.is_multiple_of(2) { s / 2 } else { s };
        let fine = run_tasks(plan, &reps, |n, r| one(n, r, 0.5 * plan.sim.dt, fine_sub))?;
        let fine_err = aggregate(&fine).0;
        diag.dt_bias = Some((coarse_err - fine_err).abs());
        diag.notes.push(format!(
            "dt-bias probe at N = {n_max}: E(dt) = {coarse_err:.6e}, E(dt/2) = {fine_err:.6e}"
        ));
    }
    Ok(Decay {
        per_n,
        series: Vec::new(),
        records,
        diag,
    })
}

/// Snapshot coordinates of one replica, d = 1.
struct Positions {
    ensembles: Vec<ParticleEnsemble>,
    caps: CapStats,
}

/// Unit-mass discrete table of `Γ_t φ_λ` on the displacement lattice.
fn mollifier_table(msp: &MollifierSpec, lambda: f64, t: f64, grid: PhaseGrid) -> KernelTable {
    let scaled = msp.with_lambda(lambda);
    let raw = KernelTable::from_fn(grid, |x, v| scaled.density(t, &[x], &[v]));
    let mass = raw.values.iter().sum::<f64>() * grid.cell();
    let scale = if mass > 0.0 { 1.0 / mass } else { 1.0 };
    KernelTable::from_fn(grid, |x, v| scale * scaled.density(t, &[x], &[v]))
}

fn run_weak(plan: &ExperimentPlan) -> Result<Decay> {
    let mut diag = Diagnostics::default();
    let grid = plan.grid.grid;
    let reference = reference_fields(plan, &mut diag)?;
    let msp = plan.mollifier_spec()?;
    let noise = plan.noise()?;
    let tasks = matrix(&plan.n_values, plan.replicas);
    let runs = run_tasks(plan, &tasks, |n, r| {
        let cfg = plan.sim_config(plan.sim.dt, plan.sim.substeps, &plan.times)?;
        let state = init_ensemble(&plan.law, n, r, plan.seed)?;
        let traj = simulate_from(state, cfg.interaction(&plan.kernel, &msp.scaled(n)), &noise, &cfg)?;
        Ok(Positions {
            ensembles: traj.snapshots.into_iter().map(|s| s.ensemble).collect(),
            caps: traj.caps,
        })
    })?;
    let groups = plan.replicas.min(4);
    let lambda_max = msp.lambda(*plan.n_values.last().unwrap());
    let factors = &plan.bandwidth_factors;
    let primary = factors
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.ln().abs()).total_cmp(&b.1.ln().abs()))
        .map(|(i, _)| i)
        .unwrap();
    let mut per_b: Vec<Vec<PerN>> = vec![Vec::new(); factors.len()];
    let mut records = Vec::new();
    for (chunk, &n) in runs.chunks(plan.replicas).zip(&plan.n_values) {
        for run in chunk {
            diag.capped.merge(run.caps);
        }
        // full[b][t], loo[b][g][t]
        let mut full = vec![vec![0.0; plan.times.len()]; factors.len()];
        let mut loo = vec![vec![vec![0.0; plan.times.len()]; groups]; factors.len()];
        for (ti, &t) in plan.times.iter().enumerate() {
            let group_sets: Vec<Vec<&ParticleEnsemble>> = (0..groups)
                .map(|g| {
                    chunk
                        .iter()
                        .enumerate()
                        .filter(|(r, _)| r % groups == g)
                        .map(|(_, run)| &run.ensembles[ti])
                        .collect()
                })
                .collect();
            let all: Vec<&ParticleEnsemble> = chunk.iter().map(|run| &run.ensembles[ti]).collect();
            let (hist, outside) = bin_particles(&all, grid, plan.grid.periodic_x)?;
            diag.out_of_box = diag.out_of_box.max(outside);
            let loo_hists: Vec<GridField> = (0..groups)
                .map(|g| {
                    let rest: Vec<&ParticleEnsemble> = (0..groups)
                        .filter(|&h| h != g)
                        .flat_map(|h| group_sets[h].iter().copied())
                        .collect();
                    bin_particles(&rest, grid, plan.grid.periodic_x).map(|p| p.0)
                })
                .collect::<Result<_>>()?;
            for (bi, &f) in factors.iter().enumerate() {
                let table = mollifier_table(&msp, f * lambda_max, t, grid);
                let target = table.convolve(&reference.fields[ti])?;
                full[bi][ti] = tv_distance(&table.convolve(&hist)?, &target)?;
                for (g, h) in loo_hists.iter().enumerate() {
                    loo[bi][g][ti] = tv_distance(&table.convolve(h)?, &target)?;
                }
            }
        }
        for bi in 0..factors.len() {
            let mean = full[bi].iter().copied().fold(0.0, f64::max);
            let thetas: Vec<f64> = loo[bi]
                .iter()
                .map(|ts| ts.iter().copied().fold(0.0, f64::max))
                .collect();
            let tm = ordered_mean(&thetas);
            let gf = groups as f64;
            let se = if groups > 1 {
                ((gf - 1.0) / gf * thetas.iter().map(|x| (x - tm).powi(2)).sum::<f64>()).sqrt()
            } else {
                0.0
            };
            per_b[bi].push(PerN {
                n,
                mean,
                se,
                values: thetas,
            });
            if bi == primary {
                for (tj, &t) in plan.times.iter().enumerate() {
                    records.push(ErrorRecord {
                        mode: plan.mode,
                        n,
                        replica: None,
                        t,
                        error: full[bi][tj],
                        component_besov: None,
                        component_binf: None,
                        seed: plan.seed,
                    });
                }
            }
        }
    }
    let mut series = Vec::new();
    for (bi, p) in per_b.into_iter().enumerate() {
        series.push(Series {
            label: format!("lambda={:.4}", factors[bi] * lambda_max),
            fit: fit_per_n(&p)?,
            strictly_decreasing: strictly_decreasing(&p),
            per_n: p,
        });
    }
    diag.notes.push(format!(
        "pooled nearest-node estimator over all particles of {} replicas, {groups} jackknife groups",
        plan.replicas
    ));
    let per_n = series[primary].per_n.clone();
    diag.min_n_gap = Some(min_gap(&per_n));
    Ok(Decay {
        per_n,
        series,
        records,
        diag,
    })
}

fn run_strong(plan: &ExperimentPlan) -> Result<Decay> {
    let mut diag = Diagnostics::default();
    let grid = plan.grid.grid;
    let dt = plan.sim.dt;
    let steps = (plan.horizon() / dt).round() as usize;
    let step_times: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    let mu0 = plan.law.density_on(grid)?;
    let cfg = PdeConfig {
        dealias: plan.pde.dealias,
        snapshot_times: step_times.clone(),
        window: plan.pde.window,
        eps_sing: plan.mollifier.eps_sing,
        ..PdeConfig::new(dt)
    };
    let sol = pde::solve(&mu0, &plan.kernel, plan.model.alpha, plan.horizon(), &cfg)?;
    diag.pde_warnings.extend(sol.warnings.iter().cloned());
    diag.pde_max_courant = sol.max_courant;
    diag.pde_max_mass_drift = sol.max_mass_drift;
    let table = KernelTable::new(&plan.kernel, grid, plan.mollifier.eps_sing, plan.pde.window)?;
    let drifts = sol
        .snapshots
        .iter()
        .map(|(_, u)| table.convolve(u))
        .collect::<Result<Vec<_>>>()?;
    let reference = ReferenceDrift::new(step_times, drifts, plan.grid.periodic_x)?;
    let msp = plan.mollifier_spec()?;
    let noise = plan.noise()?;
    let path_times: Vec<f64> = (1..=steps).map(|k| k as f64 * dt).collect();
    let tasks = matrix(&plan.n_values, plan.replicas);
    let runs = run_tasks(plan, &tasks, |n, r| {
        let cfg = plan.sim_config(dt, plan.sim.substeps, &path_times)?;
        simulate_coupled(
            &plan.law,
            n,
            &plan.kernel,
            &msp.scaled(n),
            &noise,
            &cfg,
            &reference,
            r,
            plan.seed,
        )
    })?;
    let mut per_n = Vec::new();
    let mut records = Vec::new();
    let mut outside = 0u64;
    for (chunk, &n) in runs.chunks(plan.replicas).zip(&plan.n_values) {
        let vals: Vec<f64> = chunk.iter().map(|c| c.sup_distance).collect();
        let (mean, se) = lm_statistic(&vals, plan.moment_order);
        for (r, c) in chunk.iter().enumerate() {
            diag.capped.merge(c.caps);
            outside += c.out_of_box;
            records.push(ErrorRecord {
                mode: plan.mode,
                n,
                replica: Some(r as u64),
                t: plan.horizon(),
                error: c.sup_distance,
                component_besov: None,
                component_binf: None,
                seed: plan.seed,
            });
        }
        per_n.push(PerN {
            n,
            mean,
            se,
            values: vals,
        });
    }
    diag.out_of_box = outside as f64;
    diag.min_n_gap = Some(min_gap(&per_n));
    Ok(Decay {
        per_n,
        series: Vec::new(),
        records,
        diag,
    })
}

fn run_sampling(plan: &ExperimentPlan) -> Result<Decay> {
    let mut diag = Diagnostics::default();
    let grid = plan.grid.grid;
    let msp = plan.mollifier_spec()?;
    let scaled = msp.with_lambda(plan.lambda);
    let mu0 = plan.law.density_on(grid)?;
    let target = KernelTable::from_fn(grid, |x, v| scaled.density(0.0, &[x], &[v])).convolve(&mu0)?;
    let tasks = matrix(&plan.n_values, plan.replicas);
    let runs = run_tasks(plan, &tasks, |n, r| {
        let state = init_ensemble(&plan.law, n, r, plan.seed)?;
        let dep = mollified_empirical_density(&state, &scaled, 0.0, grid, plan.deposit_options())?;
        Ok((mixed_lp_norm(&dep.field.sub(&target)?, plan.norm_p), dep.leaked))
    })?;
    let mut per_n = Vec::new();
    let mut records = Vec::new();
    for (chunk, &n) in runs.chunks(plan.replicas).zip(&plan.n_values) {
        let vals: Vec<f64> = chunk.iter().map(|c| c.0).collect();
        let (mean, se) = lm_statistic(&vals, plan.moment_order);
        for (r, c) in chunk.iter().enumerate() {
            diag.max_leaked_mass = diag.max_leaked_mass.max(c.1);
            records.push(ErrorRecord {
                mode: plan.mode,
                n,
                replica: Some(r as u64),
                t: 0.0,
                error: c.0,
                component_besov: None,
                component_binf: None,
                seed: plan.seed,
            });
        }
        per_n.push(PerN {
            n,
            mean,
            se,
            values: vals,
        });
    }
    diag.min_n_gap = Some(min_gap(&per_n));
    Ok(Decay {
        per_n,
        series: Vec::new(),
        records,
        diag,
    })
}

fn run_scaling(plan: &ExperimentPlan) -> Result<ConvergenceReport> {
    let mut diag = Diagnostics::default();
    let grid = plan.grid.grid;
    let msp = plan.mollifier_spec()?;
    let dyadic = DyadicPlan::new(grid, AnisoIndex::new(plan.model.alpha))?;
    diag.j_max = Some(dyadic.j_max);
    let s = plan.besov_beta;
    let t = plan.scaling_time;
    let mut per_n = Vec::new();
    let mut records = Vec::new();
    let mut points = Vec::new();
    for &n in &plan.n_values {
        let scaled = msp.scaled(n);
        let f = GridField::from_fn(grid, |x, v| scaled.density(t, &[x], &[v]));
        let norms = dyadic.block_norms(&f, plan.norm_p)?;
        let value = besov_from_norms(&norms, s, f64::INFINITY);
        let peak = norms
            .iter()
            .enumerate()
            .map(|(j, b)| ((s * j as f64).exp2() * b, j))
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
            .1;
        diag.peak_blocks.push(peak);
        diag.truncation = diag.truncation.max(dyadic.decompose(&f)?.truncation);
        let mass = f.integral();
        diag.max_leaked_mass = diag.max_leaked_mass.max((1.0 - mass).abs());
        points.push((scaled.lambda, value, 0.0));
        diag.lambdas.push(scaled.lambda);
        per_n.push(PerN {
            n,
            mean: value,
            se: 0.0,
            values: vec![value],
        });
        records.push(ErrorRecord {
            mode: plan.mode,
            n,
            replica: None,
            t,
            error: value,
            component_besov: Some(value),
            component_binf: None,
            seed: plan.seed,
        });
    }
    let fit = fit_rate(&points)?;
    let theory = plan.theory_exponent();
    let mut reasons = Vec::new();
    let mut pass = true;
    if let Some(th) = theory {
        if !(fit.slope <= th + 0.15) {
            pass = false;
            reasons.push(format!(
                "fitted exponent {:.4} exceeds theory {th:.4} + 0.15",
                fit.slope
            ));
        }
    }
    if diag.peak_blocks.contains(&dyadic.j_max) {
        pass = false;
        reasons.push(format!(
            "Besov supremum attained at the top block j_max = {}; refine the grid",
            dyadic.j_max
        ));
    }
    if pass {
        reasons.push("all checks passed".into());
    }
    Ok(ConvergenceReport {
        mode: plan.mode,
        seed: plan.seed,
        replicas: plan.replicas,
        per_n,
        fit,
        theory_exponent: theory,
        verdict: Verdict { pass, reasons },
        diagnostics: diag,
        series: Vec::new(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }

    #[test]
    fn lm_statistic_of_constant_values() {
        let (e, se) = lm_statistic(&[0.5; 10], 2.0);
        assert!((e - 0.5).abs() < 1e-15);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn lm_statistic_is_order_free() {
        let v: Vec<f64> = (1..40).map(|i| (i as f64 * 0.37).sin().abs() + 0.01).collect();
        let mut w = v.clone();
        w.reverse();
        w.swap(3, 17);
        assert_eq!(lm_statistic(&v, 2.0), lm_statistic(&w, 2.0));
        assert_eq!(ordered_mean(&v), ordered_mean(&w));
    }

    #[test]
    fn lm_statistic_standard_error_matches_delta_method() {
        // m = 1 reduces to the usual standard error of the mean
        let v = [1.0, 2.0, 3.0, 4.0];
        let (e, se) = lm_statistic(&v, 1.0);
        assert!((e - 2.5).abs() < 1e-15);
        let sd = (((1.5f64).powi(2) * 2.0 + 0.25 * 2.0) / 3.0).sqrt();
        assert!((se - sd / 2.0).abs() < 1e-14);
    }
}
