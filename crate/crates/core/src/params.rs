//! Model parameters, hypothesis checks and the closed-form rate exponents.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, KernelVariant};

/// An integrability index `p ∈ [1, ∞]`, stored through its reciprocal so that
/// `p = ∞` is represented exactly (`1/p = 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrability {
    recip: f64,
}

impl Integrability {
    pub const ONE: Integrability = Integrability { recip: 1.0 };
    pub const INFINITY: Integrability = Integrability { recip: 0.0 };

    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            return Ok(Self::INFINITY);
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::param("p", p, "integrability index must lie in [1, inf]"));
        }
        Ok(Integrability { recip: 1.0 / p })
    }

    pub fn from_recip(recip: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&recip) {
            return Err(Error::param("1/p", recip, "reciprocal must lie in [0, 1]"));
        }
        Ok(Integrability { recip })
    }

    pub fn recip(self) -> f64 {
        self.recip
    }

    pub fn value(self) -> f64 {
        if self.recip == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.recip
        }
    }

    pub fn is_infinite(self) -> bool {
        self.recip == 0.0
    }

    /// Hölder conjugate `p'` with `1/p + 1/p' = 1`.
    pub fn conjugate(self) -> Self {
        Integrability {
            recip: 1.0 - self.recip,
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self.recip <= other.recip {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: Self) -> Self {
        if self.recip >= other.recip {
            self
        } else {
            other
        }
    }
}

impl fmt::Display for Integrability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.value())
        }
    }
}

impl Serialize for Integrability {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.value())
        }
    }
}

impl<'de> Deserialize<'de> for Integrability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let p = match Raw::deserialize(d)? {
            Raw::Num(p) => p,
            Raw::Text(t) => parse_index(&t).map_err(serde::de::Error::custom)?,
        };
        Integrability::new(p).map_err(serde::de::Error::custom)
    }
}

/// Parses an integrability index, accepting `inf`/`infinity`.
pub fn parse_index(text: &str) -> std::result::Result<f64, String> {
    let t = text.trim();
    match t.to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        _ => t.parse::<f64>().map_err(|e| format!("`{t}`: {e}")),
    }
}

/// Position/velocity integrability pair `(p_x, p_v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexPair {
    pub x: Integrability,
    pub v: Integrability,
}

impl IndexPair {
    pub fn new(px: f64, pv: f64) -> Result<Self> {
        Ok(IndexPair {
            x: Integrability::new(px)?,
            v: Integrability::new(pv)?,
        })
    }

    pub const ONES: IndexPair = IndexPair {
        x: Integrability::ONE,
        v: Integrability::ONE,
    };

    pub const INFINITE: IndexPair = IndexPair {
        x: Integrability::INFINITY,
        v: Integrability::INFINITY,
    };

    pub fn conjugate(self) -> Self {
        IndexPair {
            x: self.x.conjugate(),
            v: self.v.conjugate(),
        }
    }

    /// Componentwise maximum with a scalar index.
    pub fn max_scalar(self, p: Integrability) -> Self {
        IndexPair {
            x: self.x.max(p),
            v: self.v.max(p),
        }
    }
}

impl fmt::Display for IndexPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.v)
    }
}

/// Scaling index `𝒜_{p,q} = (1+α)d(1/p_x − 1/q_x) + d(1/p_v − 1/q_v)`.
pub fn scaling_index(alpha: f64, dim: usize, p: IndexPair, q: IndexPair) -> f64 {
    let d = dim as f64;
    (1.0 + alpha) * d * (p.x.recip() - q.x.recip()) + d * (p.v.recip() - q.v.recip())
}

/// `a·d/p = (1+α)d/p_x + d/p_v`.
fn weighted_recip(alpha: f64, dim: usize, p: IndexPair) -> f64 {
    let d = dim as f64;
    (1.0 + alpha) * d * p.x.recip() + d * p.v.recip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub dim: usize,
    pub p0: IndexPair,
    pub beta0: f64,
    pub pb: IndexPair,
    pub betab: f64,
    pub zeta: f64,
    pub beta: f64,
    pub horizon: f64,
}

impl ModelParams {
    /// Checks the field invariants (ranges of α, β0, βb, ζ, β, T).
    pub fn validate_fields(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::param("alpha", self.alpha, "must lie in (1, 2]"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim", self.dim, "must be at least 1"));
        }
        if !(self.beta0 > -1.0 && self.beta0 < 0.0) {
            return Err(Error::param("beta0", self.beta0, "must lie in (-1, 0)"));
        }
        if !(self.betab <= 0.0) {
            return Err(Error::param("betab", self.betab, "must be <= 0"));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::param("zeta", self.zeta, "must lie in (0, 1]"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::param("beta", self.beta, "must be >= 0"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::param("horizon", self.horizon, "must be > 0"));
        }
        Ok(())
    }

    /// Gap `Λ = a·d/p0 − β0 + a·d/pb − βb − (2+α)d`.
    pub fn gap(&self) -> f64 {
        weighted_recip(self.alpha, self.dim, self.p0) - self.beta0 + weighted_recip(self.alpha, self.dim, self.pb)
            - self.betab
            - (2.0 + self.alpha) * self.dim as f64
    }

    /// `p0 > (α, α)` componentwise, or `(α, p0) = (2, (1, 1))`.
    pub fn in_rate_regime(&self) -> bool {
        let ra = 1.0 / self.alpha;
        let above = self.p0.x.recip() < ra && self.p0.v.recip() < ra;
        let brownian_l1 = self.alpha == 2.0 && self.p0 == IndexPair::ONES;
        above || brownian_l1
    }

    /// Preset: Brownian noise, `d = 1`, `μ0 ∈ L¹`, bounded smooth kernel.
    pub fn brownian_bounded() -> Self {
        ModelParams {
            alpha: 2.0,
            dim: 1,
            p0: IndexPair::ONES,
            beta0: -0.01,
            pb: IndexPair::INFINITE,
            betab: 0.0,
            zeta: 0.169,
            beta: 0.9,
            horizon: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedRates {
    pub gap: f64,
    pub m_alpha: f64,
    pub theta_alpha: f64,
    pub beta_max: f64,
    pub zeta_star: f64,
    pub rate_exponent: f64,
    pub epsilon: f64,
}

/// `β̄_α`: `1 − Λ` for Brownian noise, `(α−1−Λ) ∧ ((α+β0−Λ)/2)` otherwise.
pub fn beta_max(alpha: f64, gap: f64, beta0: f64) -> f64 {
    if alpha == 2.0 {
        1.0 - gap
    } else {
        (alpha - 1.0 - gap).min((alpha + beta0 - gap) / 2.0)
    }
}

/// `m_α = 1/((p_{x,0} ∧ p_{v,0} ∧ 2) ∨ α)`.
pub fn m_alpha(alpha: f64, p0: IndexPair) -> f64 {
    let r = p0.x.recip().max(p0.v.recip()).max(0.5);
    r.min(1.0 / alpha)
}

/// `θ_α = 𝒜_{1, p0∨α} ∨ (𝒜_{pb,∞} − (1+α)βb)`.
pub fn theta_alpha(alpha: f64, dim: usize, p0: IndexPair, pb: IndexPair, betab: f64) -> f64 {
    let pa = Integrability { recip: 1.0 / alpha };
    let first = scaling_index(alpha, dim, IndexPair::ONES, p0.max_scalar(pa));
    let second = scaling_index(alpha, dim, pb, IndexPair::INFINITE) - (1.0 + alpha) * betab;
    first.max(second)
}

pub fn derive_rates(params: &ModelParams, epsilon: f64) -> Result<DerivedRates> {
    params.validate_fields()?;
    let alpha = params.alpha;
    let gap = params.gap();
    if !(gap > 0.0 && gap < alpha - 1.0) {
        return Err(Error::param(
            "gap",
            gap,
            format!("Lambda must lie in (0, {})", alpha - 1.0),
        ));
    }
    if !params.in_rate_regime() {
        return Err(Error::param(
            "p0",
            params.p0,
            "requires p0 > (alpha, alpha) or (alpha, p0) = (2, (1, 1))",
        ));
    }
    let bmax = beta_max(alpha, gap, params.beta0);
    if params.beta >= bmax {
        return Err(Error::param(
            "beta",
            params.beta,
            format!("must be below beta_max = {bmax}"),
        ));
    }
    let m = m_alpha(alpha, params.p0);
    if !(epsilon > 0.0 && epsilon < 1.0 - m) {
        return Err(Error::param(
            "epsilon",
            epsilon,
            format!("must lie in (0, {})", 1.0 - m),
        ));
    }
    let theta = theta_alpha(alpha, params.dim, params.p0, params.pb, params.betab);
    let zeta_star = (1.0 - m - epsilon) / (theta + params.beta);
    Ok(DerivedRates {
        gap,
        m_alpha: m,
        theta_alpha: theta,
        beta_max: bmax,
        zeta_star,
        rate_exponent: params.beta * zeta_star,
        epsilon,
    })
}

/// Optimal Riesz-kernel rate `ϱ` for `d ≥ 3`.
pub fn riesz_rate(alpha: f64, dim: usize, s: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::param("alpha", alpha, "must lie in (1, 2]"));
    }
    if dim < 3 {
        return Err(Error::param("dim", dim, "the Riesz rate is stated for d >= 3"));
    }
    let d = dim as f64;
    let upper = d.min(d / alpha + 1.0);
    if !(s > 1.0 && s < upper) {
        return Err(Error::param("s", s, format!("must lie in (1, {upper})")));
    }
    let am1 = alpha - 1.0;
    let denom = am1 + am1 * d / alpha + (alpha + 1.0) * (d - s + 1.0);
    Ok(am1 / denom * (1.0 - 1.0 / alpha))
}

/// Kernel regularity index of the Riesz force, `βb = (α+1)(d/p_{x,b} − d + s − 1)`.
pub fn riesz_betab(alpha: f64, dim: usize, s: f64, pxb: Integrability) -> f64 {
    let d = dim as f64;
    (alpha + 1.0) * (d * pxb.recip() - d + s - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Kinetic,
    KineticRiesz,
    Nondegenerate,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Kinetic => "kinetic",
            Regime::KineticRiesz => "kinetic-riesz",
            Regime::Nondegenerate => "nondegenerate",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: String,
    pub required: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub satisfied: bool,
    pub regime: Regime,
    pub checks: Vec<Check>,
    /// Effective `(βb, pb)` used by the checks (auto-filled for Riesz kernels).
    pub betab: f64,
    pub pb: IndexPair,
    pub gap: f64,
}

fn check(name: &str, pass: bool, value: impl fmt::Display, required: impl Into<String>) -> Check {
    Check {
        name: name.to_string(),
        pass,
        value: value.to_string(),
        required: required.into(),
    }
}

fn open_interval(name: &str, x: f64, lo: f64, hi: f64) -> Check {
    check(name, x > lo && x < hi, x, format!("({lo}, {hi})"))
}

fn duality(name: &str, p: Integrability, q: Integrability) -> Check {
    let s = p.recip() + q.recip();
    check(name, s >= 1.0, s, ">= 1")
}

fn rate_regime(params: &ModelParams) -> Check {
    check(
        "p0 > alpha or (alpha, p0) = (2, 1)",
        params.in_rate_regime(),
        format!("alpha = {}, p0 = {}", params.alpha, params.p0),
        "p0 > (alpha, alpha) or (2, (1, 1))",
    )
}

/// Formula-level check of the well-posedness hypotheses for `params` and `kernel`.
pub fn validate_hypothesis(params: &ModelParams, kernel: &KernelSpec) -> HypothesisReport {
    let alpha = params.alpha;
    let d = params.dim as f64;
    let mut checks = vec![
        check("alpha", alpha > 1.0 && alpha <= 2.0, alpha, "(1, 2]"),
        open_interval("beta0", params.beta0, -1.0, 0.0),
    ];
    let (regime, betab, pb, gap) = match &kernel.variant {
        KernelVariant::RieszCutoff { s, .. } => {
            let s = *s;
            let pxb = kernel.besov.pb.x;
            let pb = IndexPair {
                x: pxb,
                v: kernel.besov.pb.v,
            };
            let betab = riesz_betab(alpha, params.dim, s, pxb);
            // Λ with β0 ≃ 0: a·d/p0 + d/p_{v,b} − (α+1)(s−1) − d.
            let gap = weighted_recip(alpha, params.dim, params.p0) + d * pb.v.recip() - (alpha + 1.0) * (s - 1.0) - d;
            let upper = d.min(d / alpha + 1.0);
            checks.push(check(
                "singularity range",
                s > 1.0 && s < upper,
                s,
                format!("(1, {upper})"),
            ));
            let pxb_min = if s - 1.0 < d { d / (d - s + 1.0) } else { f64::INFINITY };
            checks.push(check(
                "p_xb range",
                pxb.recip() < 1.0 / pxb_min,
                pxb,
                format!("({pxb_min}, inf]"),
            ));
            checks.push(open_interval("gap (beta0 ~ 0)", gap, 0.0, alpha - 1.0));
            checks.push(duality("1/p_x0 + 1/p_xb", params.p0.x, pxb));
            checks.push(rate_regime(params));
            (Regime::KineticRiesz, betab, pb, gap)
        }
        KernelVariant::VelocityOnly(_) => {
            let p0 = params.p0.v;
            let pbv = kernel.besov.pb.v;
            let betab = kernel.besov.betab;
            let gap = d * p0.recip() + d * pbv.recip() - d - params.beta0 - betab;
            checks.push(check("betab <= 0", betab <= 0.0, betab, "<= 0"));
            checks.push(check(
                "p0 > alpha",
                p0.recip() < 1.0 / alpha,
                p0,
                format!("({alpha}, inf]"),
            ));
            checks.push(duality("1/p0 + 1/pb", p0, pbv));
            checks.push(open_interval("gap", gap, 0.0, alpha - 1.0));
            let pb = IndexPair {
                x: Integrability::INFINITY,
                v: pbv,
            };
            (Regime::Nondegenerate, betab, pb, gap)
        }
        KernelVariant::SmoothBounded(_) => {
            let pb = kernel.besov.pb;
            let betab = kernel.besov.betab;
            let mut p = params.clone();
            p.pb = pb;
            p.betab = betab;
            let gap = p.gap();
            checks.push(check("betab <= 0", betab <= 0.0, betab, "<= 0"));
            checks.push(duality("1/p_x0 + 1/p_xb", params.p0.x, pb.x));
            checks.push(duality("1/p_v0 + 1/p_vb", params.p0.v, pb.v));
            checks.push(open_interval("gap", gap, 0.0, alpha - 1.0));
            checks.push(rate_regime(params));
            (Regime::Kinetic, betab, pb, gap)
        }
    };
    HypothesisReport {
        satisfied: checks.iter().all(|c| c.pass),
        regime,
        checks,
        betab,
        pb,
        gap,
    }
}
