//! `kchaos` command line: rates | validate | simulate | pde | converge.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ColorChoice, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use crate::config::{help_text, key_reference_markdown, Config};
use crate::error::{Error, Result};
use crate::experiments::{emit_report, run_convergence_study, Mode};
use crate::io::{write_field, write_field_csv, write_manifest, write_particles};
use crate::params::{derive_rates, validate_hypothesis, DerivedRates, HypothesisReport};
use crate::particles::{simulate, SimConfig};
use crate::pde::{duhamel_picard, solve, PdeConfig};

#[derive(Parser, Debug)]
#[command(
    name = "kchaos",
    version,
    about = "Moderately interacting kinetic particle systems: rates, simulation, reference PDE and convergence studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file (`section.key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a key after the file is read; repeatable, last write wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (overrides experiment.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Worker-count hint (overrides experiment.threads).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the derived rate exponents and the hypothesis check.
    Rates {
        #[command(flatten)]
        common: Common,
    },
    /// Validate the configuration and the well-posedness hypotheses.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the particle system and dump snapshots at experiment.times.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the reference PDE and dump fields at experiment.times.
    Pde {
        #[command(flatten)]
        common: Common,
    },
    /// Run a convergence study and write errors.csv, report.json and rate.svg.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Study mode (overrides experiment.mode).
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Print the config-key reference in markdown.
    #[command(hide = true)]
    ConfigKeys,
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: "--config".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        cfg.merge_str(&text)?;
    }
    for s in &common.set {
        cfg.set_assignment(s)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("experiment.seed", &seed.to_string())?;
    }
    if let Some(t) = common.threads {
        cfg.set("experiment.threads", &t.to_string())?;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct RatesRecord {
    rates: DerivedRates,
    hypothesis: HypothesisReport,
}

fn print_hypothesis(out: &mut dyn Write, h: &HypothesisReport) -> std::io::Result<()> {
    writeln!(out, "regime = {}", h.regime)?;
    writeln!(out, "hypothesis satisfied = {}", h.satisfied)?;
    for c in &h.checks {
        let mark = if c.pass { "ok  " } else { "FAIL" };
        writeln!(out, "  [{mark}] {}: {} (required {})", c.name, c.value, c.required)?;
    }
    Ok(())
}

fn rates(cfg: &Config, out: &mut dyn Write, dir: &Path) -> Result<()> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let rates = derive_rates(&model, cfg.real("model.epsilon")?)?;
    let hypothesis = validate_hypothesis(&model, &kernel);
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    writeln!(out, "gap = {}", rates.gap).map_err(w)?;
    writeln!(out, "m_alpha = {}", rates.m_alpha).map_err(w)?;
    writeln!(out, "theta_alpha = {}", rates.theta_alpha).map_err(w)?;
    writeln!(out, "beta_max = {}", rates.beta_max).map_err(w)?;
    writeln!(out, "zeta_star = {}", rates.zeta_star).map_err(w)?;
    writeln!(out, "rate_exponent = {}", rates.rate_exponent).map_err(w)?;
    print_hypothesis(out, &hypothesis).map_err(w)?;
    let record = serde_json::to_string(&RatesRecord { rates, hypothesis })?;
    writeln!(out, "record = {record}").map_err(w)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("rates.json");
    std::fs::write(&path, record + "\n").map_err(|e| Error::io(path, e))
}

fn validate(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let plan = cfg.plan()?;
    plan.validate()?;
    let h = validate_hypothesis(&plan.model, &plan.kernel);
    print_hypothesis(out, &h).map_err(|e| Error::io("<stdout>", e))?;
    if !h.satisfied {
        let failed: Vec<&str> = h.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(Error::Config {
            key: "model".into(),
            reason: format!("hypothesis checks failed: {}", failed.join(", ")),
        });
    }
    writeln!(out, "config ok").map_err(|e| Error::io("<stdout>", e))
}

fn simulate_cmd(cfg: &Config, out: &mut dyn Write, dir: &Path) -> Result<()> {
    let plan = cfg.plan()?;
    let n = cfg.uint("sim.n")?;
    let replica = cfg.u64("sim.replica")?;
    let horizon = plan.times.iter().copied().fold(0.0, f64::max);
    let mut sc = SimConfig::new(plan.sim.dt, horizon, &plan.times)?;
    sc.method = plan.sim.method;
    sc.substeps = plan.sim.substeps;
    sc.cap_threshold = plan.mollifier.cap_threshold;
    sc.eps_sing = plan.mollifier.eps_sing;
    let msp = plan.mollifier_spec()?;
    let traj = simulate(
        &plan.law,
        n,
        &plan.kernel,
        &msp.scaled(n),
        &plan.noise()?,
        &sc,
        replica,
        plan.seed,
    )?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = vec![
        "format = little-endian; header u64 N, u64 d, f64 t; then per particle x_1..x_d, v_1..v_d as f64".to_string(),
        format!("seed = {}", plan.seed),
        format!("replica = {replica}"),
        format!("dt = {}", plan.sim.dt),
        format!("capped = {}/{}", traj.caps.capped, traj.caps.total),
    ];
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let name = format!("particles_{k:03}.bin");
        write_particles(&dir.join(&name), &snap.ensemble)?;
        manifest.push(format!("{name}: N = {n}, d = {}, t = {}", snap.ensemble.dim, snap.t));
    }
    manifest.push(String::new());
    manifest.push(cfg.render());
    write_manifest(&dir.join("manifest.txt"), &manifest)?;
    writeln!(out, "wrote {} snapshots to {}", traj.snapshots.len(), dir.display()).map_err(|e| Error::io("<stdout>", e))
}

fn pde_cmd(cfg: &Config, out: &mut dyn Write, dir: &Path) -> Result<()> {
    let plan = cfg.plan()?;
    let g = plan.grid.grid;
    let grid = crate::fields::PhaseGrid::new(plan.pde.nx.unwrap_or(g.nx), g.nv, g.lx, g.lv)?;
    let mu0 = plan.law.density_on(grid)?;
    let horizon = plan.times.iter().copied().fold(0.0, f64::max);
    let iters = cfg.uint("pde.picard_iters")?;
    let mut fields = Vec::new();
    let mut notes = Vec::new();
    if iters > 0 {
        let res = duhamel_picard(
            &mu0,
            &plan.kernel,
            plan.model.alpha,
            horizon,
            iters,
            cfg.uint("pde.picard_steps")?,
        )?;
        notes.push(format!(
            "solver = duhamel-picard, iterations = {iters}, final gap = {:e}",
            res.gap
        ));
        fields.push((horizon, res.field));
    } else {
        let pc = PdeConfig {
            dealias: plan.pde.dealias,
            snapshot_times: plan.times.clone(),
            window: plan.pde.window,
            eps_sing: plan.mollifier.eps_sing,
            ..PdeConfig::new(plan.pde.dt)
        };
        let sol = solve(&mu0, &plan.kernel, plan.model.alpha, horizon, &pc)?;
        notes.push(format!(
            "solver = splitting, steps = {}, max courant = {:e}, max mass drift = {:e}",
            sol.steps, sol.max_courant, sol.max_mass_drift
        ));
        notes.extend(sol.warnings.iter().map(|w| format!("warning: {w}")));
        fields = sol.snapshots;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = vec![
        "format = little-endian; header u64 nx, u64 nv, f64 t; then values[ix * nv + iv] as f64".to_string(),
        format!("box = [-{}, {}) x [-{}, {})", grid.lx, grid.lx, grid.lv, grid.lv),
    ];
    manifest.extend(notes);
    for (k, (t, f)) in fields.iter().enumerate() {
        let name = format!("field_{k:03}.bin");
        write_field(&dir.join(&name), f, *t)?;
        manifest.push(format!("{name}: t = {t}, mass = {}", f.integral()));
        if grid.len() <= 1 << 16 {
            write_field_csv(&dir.join(format!("field_{k:03}.csv")), f)?;
        }
    }
    manifest.push(String::new());
    manifest.push(cfg.render());
    write_manifest(&dir.join("manifest.txt"), &manifest)?;
    writeln!(out, "wrote {} fields to {}", fields.len(), dir.display()).map_err(|e| Error::io("<stdout>", e))
}

fn converge(cfg: &Config, out: &mut dyn Write, dir: &Path) -> Result<()> {
    let plan = cfg.plan()?;
    let report = run_convergence_study(&plan)?;
    emit_report(&report, dir)?;
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    writeln!(out, "mode = {}", report.mode).map_err(w)?;
    for p in &report.per_n {
        writeln!(out, "N = {:>8}  error = {:.6e}  se = {:.3e}", p.n, p.mean, p.se).map_err(w)?;
    }
    writeln!(
        out,
        "slope = {:.4}  95% interval = [{:.4}, {:.4}]",
        report.fit.slope, report.fit.interval[0], report.fit.interval[1]
    )
    .map_err(w)?;
    if let Some(th) = report.theory_exponent {
        writeln!(out, "theory exponent = {th:.4}").map_err(w)?;
    }
    writeln!(out, "verdict = {}", if report.verdict.pass { "pass" } else { "fail" }).map_err(w)?;
    for r in &report.verdict.reasons {
        writeln!(out, "  {r}").map_err(w)?;
    }
    writeln!(out, "wrote {}", dir.display()).map_err(w)
}

fn command() -> clap::Command {
    let color = if std::env::var_os("NO_COLOR").is_some() {
        ColorChoice::Never
    } else {
        ColorChoice::Auto
    };
    let keys = help_text();
    let mut cmd = Cli::command().color(color);
    for name in ["rates", "validate", "simulate", "pde", "converge"] {
        let keys = keys.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_help(keys));
    }
    cmd
}

/// Runs the CLI on `argv` and returns the process exit status: 0 on success,
/// 2 for usage, config and validation errors, 1 for runtime faults.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 2;
        }
    };
    let result = match &cli.command {
        Command::ConfigKeys => write!(out, "{}", key_reference_markdown()).map_err(|e| Error::io("<stdout>", e)),
        Command::Rates { common } => load(common).and_then(|c| rates(&c, out, &common.out)),
        Command::Validate { common } => load(common).and_then(|c| validate(&c, out)),
        Command::Simulate { common } => load(common).and_then(|c| simulate_cmd(&c, out, &common.out)),
        Command::Pde { common } => load(common).and_then(|c| pde_cmd(&c, out, &common.out)),
        Command::Converge { common, mode } => load(common).and_then(|mut c| {
            if let Some(m) = mode {
                c.set("experiment.mode", m.name())?;
            }
            converge(&c, out, &common.out)
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_usage_error() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = dispatch(std::iter::once("kchaos").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn rates_prints_the_brownian_preset() {
        let dir = tempfile::tempdir().unwrap();
        let (code, out, _) = run(&["rates", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code, 0);
        assert!(out.contains("m_alpha = 0.5\n"));
        assert!(out.contains("theta_alpha = 2\n"));
        assert!(dir.path().join("rates.json").exists());
    }

    #[test]
    fn unknown_key_exits_2_and_names_it() {
        let (code, _, err) = run(&["validate", "--set", "grid.bogus=1"]);
        assert_eq!(code, 2);
        assert!(err.contains("grid.bogus"));
    }

    #[test]
    fn invalid_value_exits_2() {
        let (code, _, err) = run(&["validate", "--set", "model.alpha=2.5"]);
        assert_eq!(code, 2);
        assert!(err.contains("alpha"));
    }

    #[test]
    fn help_lists_keys() {
        let (code, out, _) = run(&["converge", "--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("experiment.n_values"));
        assert!(out.contains("kernel.M"));
    }

    #[test]
    fn bad_flag_is_a_usage_error() {
        let (code, _, _) = run(&["converge", "--mode", "nonsense"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_config_file_is_a_usage_error() {
        let (code, _, err) = run(&["validate", "--config", "/nonexistent/x.conf"]);
        assert_eq!(code, 2);
        assert!(err.contains("/nonexistent/x.conf"));
    }
}
