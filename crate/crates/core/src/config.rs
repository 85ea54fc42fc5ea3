//! Flat `section.key = value` configuration. [`KEYS`] is the single source
//! for defaults, parsing, `--help` output and `docs/config-keys.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::experiments::{ExperimentPlan, GridOptions, Mode, MollifierOptions, PdeOptions, SimOptions};
use crate::fields::PhaseGrid;
use crate::kernels::{BesovMeta, KernelSpec, SmoothProfile, VelocityProfile};
use crate::params::{parse_index, IndexPair, ModelParams};
use crate::particles::{DriftMethod, InitialLaw};

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn k(key: &'static str, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { key, default, doc }
}

pub const KEYS: &[KeySpec] = &[
    k("model.alpha", "2", "stability index of the velocity noise, in (1, 2]"),
    k("model.dim", "1", "spatial dimension d (grid-based modes need 1)"),
    k(
        "model.p0",
        "1,1",
        "integrability (p_x, p_v) of the initial law; `inf` allowed",
    ),
    k(
        "model.beta0",
        "-0.01",
        "regularity index of the initial law, in (-1, 0)",
    ),
    k("model.pb", "inf,inf", "integrability (p_x, p_v) of the kernel"),
    k("model.betab", "0", "regularity index of the kernel, <= 0"),
    k("model.beta", "0.9", "error-norm regularity beta"),
    k("model.horizon", "0.5", "time horizon T"),
    k(
        "model.epsilon",
        "0.01",
        "slack epsilon of the optimal mollification order",
    ),
    k(
        "kernel.variant",
        "sine",
        "sine | gaussian | zero | riesz | velocity_gaussian | velocity_sine",
    ),
    k("kernel.gamma", "1", "interaction intensity"),
    k("kernel.wavenumber", "1", "wavenumber of the sine variants"),
    k("kernel.width_x", "1", "position width of the gaussian variant"),
    k("kernel.width_v", "1", "velocity width of the gaussian variant"),
    k("kernel.width", "1", "width of velocity_gaussian"),
    k("kernel.s", "1.5", "Riesz exponent s"),
    k("kernel.M", "4", "velocity cutoff radius of the Riesz kernel"),
    k("mollifier.zeta", "0.169", "mollification order: lambda = N^zeta"),
    k(
        "mollifier.quad_order",
        "4",
        "Gauss-Legendre nodes per coordinate of the mollifier quadrature",
    ),
    k(
        "mollifier.eps_sing",
        "auto",
        "capping radius for singular kernels (`auto`: a tenth of the mollifier x-radius)",
    ),
    k(
        "mollifier.cap_threshold",
        "none",
        "maximal fraction of capped evaluations (`none`: unchecked)",
    ),
    k("law.kind", "gaussian", "gaussian | uniform"),
    k("law.mean_x", "0", "gaussian mean of x"),
    k("law.mean_v", "0", "gaussian mean of v"),
    k("law.sd_x", "0.5", "gaussian standard deviation of x"),
    k("law.sd_v", "1", "gaussian standard deviation of v"),
    k("law.lo_x", "-1", "uniform lower bound of x"),
    k("law.hi_x", "1", "uniform upper bound of x"),
    k("law.lo_v", "-1", "uniform lower bound of v"),
    k("law.hi_v", "1", "uniform upper bound of v"),
    k("grid.nx", "8192", "x nodes (power of two)"),
    k("grid.nv", "256", "v nodes (power of two)"),
    k("grid.lx", "pi", "x box half-width; accepts multiples of `pi`"),
    k("grid.lv", "6", "v box half-width"),
    k("grid.periodic_x", "true", "wrap x onto the box (periodic kernels)"),
    k(
        "grid.leak_threshold",
        "1e-3",
        "maximal mass deposited outside the box (`none`: unchecked)",
    ),
    k("pde.dt", "0.005", "splitting time step"),
    k(
        "pde.nx",
        "256",
        "x nodes of the reference solve, refined onto grid.nx (`auto`: grid.nx)",
    ),
    k("pde.dealias", "false", "two-thirds dealiasing after each step"),
    k("pde.window", "0", "tapered fraction of the kernel table half-box"),
    k(
        "pde.picard_iters",
        "0",
        "`pde` subcommand: Duhamel-Picard iterations (0: splitting)",
    ),
    k("pde.picard_steps", "64", "`pde` subcommand: Duhamel time intervals"),
    k("sim.dt", "0.0025", "Euler-Maruyama time step"),
    k("sim.method", "auto", "auto | pairwise | harmonic | cell_list"),
    k("sim.substeps", "2", "fine noise increments per step"),
    k("sim.dt_bias", "true", "moderate mode: run the coupled dt-halving probe"),
    k("sim.n", "1024", "`simulate` subcommand: particle count"),
    k("sim.replica", "0", "`simulate` subcommand: replica index"),
    k(
        "experiment.mode",
        "moderate",
        "moderate | weak | strong | sampling | mollifier_scaling",
    ),
    k(
        "experiment.n_values",
        "2^8..2^12",
        "particle counts: comma list or `2^a..2^b`",
    ),
    k("experiment.replicas", "32", "replicas per N"),
    k("experiment.moment_order", "2", "m of the L^m(Omega) statistic"),
    k("experiment.times", "0.25,0.5", "evaluation times"),
    k("experiment.seed", "1", "master seed"),
    k(
        "experiment.bandwidth_factors",
        "0.5,1,2",
        "weak mode: estimator scales relative to lambda(N_max)",
    ),
    k("experiment.lambda", "2", "sampling mode: fixed mollifier scale"),
    k(
        "experiment.norm_p",
        "2,2",
        "sampling and scaling modes: mixed norm indices (p_x, p_v)",
    ),
    k("experiment.besov_beta", "0.5", "scaling mode: Besov smoothness"),
    k(
        "experiment.scaling_time",
        "0.05",
        "scaling mode: transport time t of Gamma_t phi_N",
    ),
    k(
        "experiment.threads",
        "auto",
        "worker count (`auto`: all cores); results do not depend on it",
    ),
];

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Real number, optionally a multiple of `pi` (`pi`, `2pi`, `0.5pi`).
pub fn parse_real(text: &str) -> std::result::Result<f64, String> {
    let t = text.trim();
    if let Some(c) = t.strip_suffix("pi") {
        let c = c.trim().trim_end_matches('*').trim();
        let f = if c.is_empty() {
            1.0
        } else {
            c.parse::<f64>().map_err(|e| format!("`{t}`: {e}"))?
        };
        return Ok(f * std::f64::consts::PI);
    }
    t.parse::<f64>().map_err(|e| format!("`{t}`: {e}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: KEYS.iter().map(|k| (k.key, k.default.to_string())).collect(),
        }
    }
}

impl Config {
    pub fn from_str_checked(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.merge_str(text)?;
        Ok(c)
    }

    /// Applies the assignments of a config file on top of the current values.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line, format!("line {}: expected `section.key = value`", no + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = spec(key).ok_or_else(|| bad(key, "unknown key"))?;
        self.values.insert(s.key, value.to_string());
        Ok(())
    }

    /// `section.key=value`, as given to `--set`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| bad(assignment, "expected `section.key=value`"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key `{key}` is not in the key table"))
    }

    /// All keys with their current values, in table order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{} = {}", k.key, self.get(k.key));
        }
        s
    }

    fn typed<T>(&self, key: &str, f: impl FnOnce(&str) -> std::result::Result<T, String>) -> Result<T> {
        f(self.get(key)).map_err(|e| bad(key, e))
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        self.typed(key, parse_real)
    }

    pub fn uint(&self, key: &str) -> Result<usize> {
        self.typed(key, |s| s.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.typed(key, |s| s.trim().parse::<u64>().map_err(|e| format!("`{s}`: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.typed(key, |s| match s.trim() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            o => Err(format!("`{o}` is not a boolean")),
        })
    }

    /// `None` for `auto`/`none`.
    pub fn opt_real(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, |s| match s.trim() {
            "auto" | "none" => Ok(None),
            o => parse_real(o).map(Some),
        })
    }

    pub fn opt_uint(&self, key: &str) -> Result<Option<usize>> {
        self.typed(key, |s| match s.trim() {
            "auto" | "none" => Ok(None),
            o => o.parse::<usize>().map(Some).map_err(|e| format!("`{o}`: {e}")),
        })
    }

    pub fn reals(&self, key: &str) -> Result<Vec<f64>> {
        self.typed(key, |s| s.split(',').map(parse_real).collect())
    }

    /// Comma list, or powers of two `2^a..2^b`.
    pub fn uints(&self, key: &str) -> Result<Vec<usize>> {
        self.typed(key, |s| {
            let s = s.trim();
            if let Some((a, b)) = s.split_once("..") {
                let exp = |t: &str| {
                    t.trim()
                        .strip_prefix("2^")
                        .ok_or_else(|| format!("`{t}`: ranges are written 2^a..2^b"))?
                        .parse::<u32>()
                        .map_err(|e| format!("`{t}`: {e}"))
                };
                let (a, b) = (exp(a)?, exp(b)?);
                if a > b || b > 40 {
                    return Err(format!("`{s}`: empty or oversized range"));
                }
                return Ok((a..=b).map(|e| 1usize << e).collect());
            }
            s.split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
                .collect()
        })
    }

    pub fn pair(&self, key: &str) -> Result<IndexPair> {
        let (px, pv) = self.typed(key, |s| {
            let (a, b) = s.split_once(',').ok_or_else(|| format!("`{s}`: expected `p_x,p_v`"))?;
            Ok((parse_index(a)?, parse_index(b)?))
        })?;
        IndexPair::new(px, pv).map_err(|e| bad(key, e.to_string()))
    }

    pub fn model(&self) -> Result<ModelParams> {
        Ok(ModelParams {
            alpha: self.real("model.alpha")?,
            dim: self.uint("model.dim")?,
            p0: self.pair("model.p0")?,
            beta0: self.real("model.beta0")?,
            pb: self.pair("model.pb")?,
            betab: self.real("model.betab")?,
            zeta: self.real("mollifier.zeta")?,
            beta: self.real("model.beta")?,
            horizon: self.real("model.horizon")?,
        })
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let d = self.uint("model.dim")?;
        let gamma = self.real("kernel.gamma")?;
        let spec = match self.get("kernel.variant").trim() {
            "sine" => KernelSpec::smooth(
                d,
                SmoothProfile::Sine {
                    gamma,
                    wavenumber: self.real("kernel.wavenumber")?,
                },
            ),
            "gaussian" => KernelSpec::smooth(
                d,
                SmoothProfile::Gaussian {
                    gamma,
                    width_x: self.real("kernel.width_x")?,
                    width_v: self.real("kernel.width_v")?,
                },
            ),
            "zero" => KernelSpec::zero(d),
            "riesz" => KernelSpec::riesz(d, gamma, self.real("kernel.s")?, self.real("kernel.M")?),
            "velocity_gaussian" => KernelSpec::velocity_only(
                d,
                VelocityProfile::Gaussian {
                    gamma,
                    width: self.real("kernel.width")?,
                },
            ),
            "velocity_sine" => KernelSpec::velocity_only(
                d,
                VelocityProfile::Sine {
                    gamma,
                    wavenumber: self.real("kernel.wavenumber")?,
                },
            ),
            other => return Err(bad("kernel.variant", format!("unknown variant `{other}`"))),
        }
        .with_besov(BesovMeta {
            betab: self.real("model.betab")?,
            pb: self.pair("model.pb")?,
        });
        spec.validate().map_err(|e| bad("kernel.variant", e.to_string()))?;
        Ok(spec)
    }

    pub fn law(&self) -> Result<InitialLaw> {
        let d = self.uint("model.dim")?;
        match self.get("law.kind").trim() {
            "gaussian" => {
                let (sx, sv) = (self.real("law.sd_x")?, self.real("law.sd_v")?);
                Ok(InitialLaw::GaussianProduct {
                    mean_x: vec![self.real("law.mean_x")?; d],
                    mean_v: vec![self.real("law.mean_v")?; d],
                    var_x: vec![sx * sx; d],
                    var_v: vec![sv * sv; d],
                })
            }
            "uniform" => Ok(InitialLaw::UniformBox {
                lo_x: vec![self.real("law.lo_x")?; d],
                hi_x: vec![self.real("law.hi_x")?; d],
                lo_v: vec![self.real("law.lo_v")?; d],
                hi_v: vec![self.real("law.hi_v")?; d],
            }),
            other => Err(bad("law.kind", format!("unknown law `{other}`"))),
        }
    }

    pub fn grid(&self) -> Result<PhaseGrid> {
        PhaseGrid::new(
            self.uint("grid.nx")?,
            self.uint("grid.nv")?,
            self.real("grid.lx")?,
            self.real("grid.lv")?,
        )
    }

    pub fn drift_method(&self) -> Result<DriftMethod> {
        Ok(match self.get("sim.method").trim() {
            "auto" => DriftMethod::Auto,
            "pairwise" => DriftMethod::Pairwise,
            "harmonic" => DriftMethod::Harmonic,
            "cell_list" => DriftMethod::CellList,
            other => return Err(bad("sim.method", format!("unknown method `{other}`"))),
        })
    }

    pub fn mode(&self) -> Result<Mode> {
        self.typed("experiment.mode", |s| s.trim().parse())
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        let substeps = self.uint("sim.substeps")?;
        Ok(ExperimentPlan {
            mode: self.mode()?,
            n_values: self.uints("experiment.n_values")?,
            replicas: self.uint("experiment.replicas")?,
            moment_order: self.real("experiment.moment_order")?,
            times: self.reals("experiment.times")?,
            model: self.model()?,
            epsilon: self.real("model.epsilon")?,
            kernel: self.kernel()?,
            mollifier: MollifierOptions {
                quad_order: self.uint("mollifier.quad_order")?,
                eps_sing: self.opt_real("mollifier.eps_sing")?,
                cap_threshold: self.opt_real("mollifier.cap_threshold")?,
            },
            law: self.law()?,
            grid: GridOptions {
                grid: self.grid()?,
                periodic_x: self.flag("grid.periodic_x")?,
                leak_threshold: self.opt_real("grid.leak_threshold")?,
            },
            pde: PdeOptions {
                dt: self.real("pde.dt")?,
                nx: self.opt_uint("pde.nx")?,
                dealias: self.flag("pde.dealias")?,
                window: self.real("pde.window")?,
            },
            sim: SimOptions {
                dt: self.real("sim.dt")?,
                method: self.drift_method()?,
                substeps: u32::try_from(substeps).map_err(|_| bad("sim.substeps", "too large"))?,
                dt_bias: self.flag("sim.dt_bias")?,
            },
            seed: self.u64("experiment.seed")?,
            bandwidth_factors: self.reals("experiment.bandwidth_factors")?,
            lambda: self.real("experiment.lambda")?,
            norm_p: self.pair("experiment.norm_p")?,
            besov_beta: self.real("experiment.besov_beta")?,
            scaling_time: self.real("experiment.scaling_time")?,
            threads: self.opt_uint("experiment.threads")?,
        })
    }
}

/// Key listing for `--help`.
pub fn help_text() -> String {
    let width = KEYS
        .iter()
        .map(|k| k.key.len() + k.default.len() + 3)
        .max()
        .unwrap_or(0);
    let mut s = String::from("Config keys (`section.key = value`, default in brackets):\n");
    for k in KEYS {
        let head = format!("{} [{}]", k.key, k.default);
        let _ = writeln!(s, "  {head:<width$}  {}", k.doc);
    }
    s
}

/// Markdown reference, checked in as `docs/config-keys.md`.
pub fn key_reference_markdown() -> String {
    let mut s = String::from(
        "# Configuration keys\n\nConfig files hold one `section.key = value` assignment per line; `#` starts a comment.\nUnknown keys are errors. `--set section.key=value` overrides are applied after the file, last write wins.\n\n| key | default | meaning |\n|---|---|---|\n",
    );
    for k in KEYS {
        let _ = writeln!(s, "| `{}` | `{}` | {} |", k.key, k.default, k.doc.replace('|', "\\|"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_a_valid_plan() {
        let plan = Config::default().plan().unwrap();
        plan.validate().unwrap();
        assert_eq!(plan.n_values, vec![256, 512, 1024, 2048, 4096]);
        assert_eq!(plan.model, ModelParams::brownian_bounded());
        assert!((plan.grid.grid.lx - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::from_str_checked("model.alpah = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "model.alpah"));
        assert!(err.is_usage_error());
    }

    #[test]
    fn comments_and_last_write_wins() {
        let mut c = Config::from_str_checked("# preset\nmodel.alpha = 1.5 # noise\n\nmodel.alpha=1.7\n").unwrap();
        assert_eq!(c.real("model.alpha").unwrap(), 1.7);
        c.set_assignment("model.alpha=1.9").unwrap();
        assert_eq!(c.real("model.alpha").unwrap(), 1.9);
    }

    #[test]
    fn typed_errors_name_the_key() {
        let c = Config::from_str_checked("grid.nx = lots\n").unwrap();
        match c.plan().unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "grid.nx"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn value_syntax() {
        assert_eq!(parse_real("2pi").unwrap(), 2.0 * std::f64::consts::PI);
        assert_eq!(parse_real("0.5 * pi").unwrap(), 0.5 * std::f64::consts::PI);
        let c = Config::from_str_checked("experiment.n_values = 2^4..2^6\nmodel.pb = inf, 2\n").unwrap();
        assert_eq!(c.uints("experiment.n_values").unwrap(), vec![16, 32, 64]);
        let p = c.pair("model.pb").unwrap();
        assert!(p.x.is_infinite() && p.v.value() == 2.0);
    }

    #[test]
    fn render_round_trips() {
        let mut c = Config::default();
        c.set("kernel.variant", "gaussian").unwrap();
        let back = Config::from_str_checked(&c.render()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn help_lists_every_key() {
        let h = help_text();
        for k in KEYS {
            assert!(h.contains(k.key), "{}", k.key);
        }
    }

    #[test]
    fn key_reference_is_current() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config-keys.md");
        let on_disk = std::fs::read_to_string(path).expect("docs/config-keys.md is missing");
        assert_eq!(
            on_disk,
            key_reference_markdown(),
            "regenerate with `kchaos config-keys > docs/config-keys.md`"
        );
    }
}
