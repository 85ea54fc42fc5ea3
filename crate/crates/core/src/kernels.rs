//! Interaction kernels, the anisotropically scaled mollifier family and the
//! mollified interaction `b^N_t = b ∗ Γ_t φ_N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::IndexPair;
use crate::smooth::{bump, cutoff, gauss_legendre};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum SmoothProfile {
    Zero,
    /// `b_k(x, v) = −γ sin(κ x_k)`.
    Sine {
        gamma: f64,
        wavenumber: f64,
    },
    /// `b(x, v) = −γ (x/w_x) exp(−|x|²/(2w_x²) − |v|²/(2w_v²))`.
    Gaussian {
        gamma: f64,
        width_x: f64,
        width_v: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum VelocityProfile {
    /// `b(v) = −γ (v/w) exp(−|v|²/(2w²))`.
    Gaussian { gamma: f64, width: f64 },
    /// `b_k(v) = −γ sin(κ v_k)`.
    Sine { gamma: f64, wavenumber: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelVariant {
    /// `−γ(s−d) x|x|^{s−d−2} χ(|v|/M)`.
    RieszCutoff {
        gamma: f64,
        s: f64,
        cutoff: f64,
    },
    SmoothBounded(SmoothProfile),
    VelocityOnly(VelocityProfile),
}

/// Regularity metadata `(βb, pb)` used by the rate calculus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovMeta {
    pub betab: f64,
    pub pb: IndexPair,
}

impl Default for BesovMeta {
    fn default() -> Self {
        BesovMeta {
            betab: 0.0,
            pb: IndexPair::INFINITE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub variant: KernelVariant,
    pub besov: BesovMeta,
}

/// Which phase variable a harmonic kernel oscillates in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    V,
}

impl KernelSpec {
    pub fn riesz(dim: usize, gamma: f64, s: f64, cutoff: f64) -> Self {
        KernelSpec {
            dim,
            variant: KernelVariant::RieszCutoff { gamma, s, cutoff },
            besov: BesovMeta::default(),
        }
    }

    pub fn smooth(dim: usize, profile: SmoothProfile) -> Self {
        KernelSpec {
            dim,
            variant: KernelVariant::SmoothBounded(profile),
            besov: BesovMeta::default(),
        }
    }

    pub fn velocity_only(dim: usize, profile: VelocityProfile) -> Self {
        KernelSpec {
            dim,
            variant: KernelVariant::VelocityOnly(profile),
            besov: BesovMeta::default(),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::smooth(dim, SmoothProfile::Zero)
    }

    pub fn with_besov(mut self, besov: BesovMeta) -> Self {
        self.besov = besov;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim as f64;
        if self.dim == 0 {
            return Err(Error::param("kernel.dim", self.dim, "must be at least 1"));
        }
        let positive = |name: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, x, "must be positive"))
            }
        };
        match self.variant {
            KernelVariant::RieszCutoff { gamma, s, cutoff } => {
                if gamma == 0.0 || !gamma.is_finite() {
                    return Err(Error::param("kernel.gamma", gamma, "must be nonzero"));
                }
                // d = 1 has no admissible s in (1, d); the one-dimensional analog uses (1, 2).
                let upper = if self.dim == 1 { 2.0 } else { d };
                if !(s > 1.0 && s < upper) {
                    return Err(Error::param("kernel.s", s, format!("must lie in (1, {upper})")));
                }
                positive("kernel.M", cutoff)?;
            }
            KernelVariant::SmoothBounded(SmoothProfile::Zero) => {}
            KernelVariant::SmoothBounded(SmoothProfile::Sine { wavenumber, .. }) => {
                positive("kernel.wavenumber", wavenumber)?;
            }
            KernelVariant::SmoothBounded(SmoothProfile::Gaussian { width_x, width_v, .. }) => {
                positive("kernel.width_x", width_x)?;
                positive("kernel.width_v", width_v)?;
            }
            KernelVariant::VelocityOnly(VelocityProfile::Gaussian { width, .. }) => {
                positive("kernel.width_v", width)?;
            }
            KernelVariant::VelocityOnly(VelocityProfile::Sine { wavenumber, .. }) => {
                positive("kernel.wavenumber", wavenumber)?;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.variant, KernelVariant::SmoothBounded(SmoothProfile::Zero))
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.variant, KernelVariant::RieszCutoff { .. })
    }

    /// `(γ, κ, axis)` for kernels of the form `−γ sin(κ·)` acting coordinatewise.
    pub fn harmonic(&self) -> Option<(f64, f64, Axis)> {
        match self.variant {
            KernelVariant::SmoothBounded(SmoothProfile::Sine { gamma, wavenumber }) => {
                Some((gamma, wavenumber, Axis::X))
            }
            KernelVariant::VelocityOnly(VelocityProfile::Sine { gamma, wavenumber }) => {
                Some((gamma, wavenumber, Axis::V))
            }
            _ => None,
        }
    }

    /// Radius `R` with `b(x, v) = 0` whenever `|v| ≥ R`, if any.
    pub fn velocity_support(&self) -> Option<f64> {
        match self.variant {
            KernelVariant::RieszCutoff { cutoff, .. } => Some(2.0 * cutoff),
            KernelVariant::SmoothBounded(SmoothProfile::Zero) => Some(0.0),
            _ => None,
        }
    }

    /// `sup |b|` for bounded kernels.
    pub fn sup_norm(&self) -> Option<f64> {
        let e = (-0.5f64).exp();
        let d = (self.dim as f64).sqrt();
        match self.variant {
            KernelVariant::RieszCutoff { .. } => None,
            KernelVariant::SmoothBounded(SmoothProfile::Zero) => Some(0.0),
            KernelVariant::SmoothBounded(SmoothProfile::Sine { gamma, .. })
            | KernelVariant::VelocityOnly(VelocityProfile::Sine { gamma, .. }) => Some(gamma.abs() * d),
            KernelVariant::SmoothBounded(SmoothProfile::Gaussian { gamma, .. })
            | KernelVariant::VelocityOnly(VelocityProfile::Gaussian { gamma, .. }) => Some(gamma.abs() * e),
        }
    }

    /// Evaluates `b(x, v)` without the singularity check.
    #[inline]
    pub(crate) fn eval_raw(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match self.variant {
            KernelVariant::RieszCutoff { gamma, s, cutoff: m } => {
                let vn = v[..d].iter().map(|a| a * a).sum::<f64>().sqrt();
                let chi = cutoff(vn / m);
                if chi == 0.0 {
                    out[..d].fill(0.0);
                    return;
                }
                let r2: f64 = x[..d].iter().map(|a| a * a).sum();
                let f = -gamma * (s - d as f64) * r2.powf(0.5 * (s - d as f64 - 2.0)) * chi;
                for k in 0..d {
                    out[k] = f * x[k];
                }
            }
            KernelVariant::SmoothBounded(SmoothProfile::Zero) => out[..d].fill(0.0),
            KernelVariant::SmoothBounded(SmoothProfile::Sine { gamma, wavenumber }) => {
                for k in 0..d {
                    out[k] = -gamma * (wavenumber * x[k]).sin();
                }
            }
            KernelVariant::SmoothBounded(SmoothProfile::Gaussian {
                gamma,
                width_x,
                width_v,
            }) => {
                let x2: f64 = x[..d].iter().map(|a| a * a).sum();
                let v2: f64 = v[..d].iter().map(|a| a * a).sum();
                let g = (-0.5 * x2 / (width_x * width_x) - 0.5 * v2 / (width_v * width_v)).exp();
                for k in 0..d {
                    out[k] = -gamma * x[k] / width_x * g;
                }
            }
            KernelVariant::VelocityOnly(VelocityProfile::Gaussian { gamma, width }) => {
                let v2: f64 = v[..d].iter().map(|a| a * a).sum();
                let g = (-0.5 * v2 / (width * width)).exp();
                for k in 0..d {
                    out[k] = -gamma * v[k] / width * g;
                }
            }
            KernelVariant::VelocityOnly(VelocityProfile::Sine { gamma, wavenumber }) => {
                for k in 0..d {
                    out[k] = -gamma * (wavenumber * v[k]).sin();
                }
            }
        }
    }
}

/// `b(x, v)`; the Riesz kernel at `x = 0` is reported as a singular evaluation.
pub fn kernel_eval(k: &KernelSpec, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(x.len(), k.dim);
    assert_eq!(v.len(), k.dim);
    if k.is_singular() && x.iter().all(|&a| a == 0.0) {
        return Err(Error::SingularEvaluation);
    }
    let mut out = vec![0.0; k.dim];
    k.eval_raw(x, v, &mut out);
    Ok(out)
}

/// Product bump `φ(z) = Π ψ(z_k)` on `[−1, 1]^{2d}` with a tensor Gauss–Legendre rule.
#[derive(Clone, Debug, PartialEq)]
pub struct MollifierSpec {
    pub alpha: f64,
    pub dim: usize,
    pub zeta: f64,
    pub quad_order: usize,
    /// Row-major `Q × 2d` node table: `d` position then `d` velocity coordinates.
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl MollifierSpec {
    pub fn new(alpha: f64, dim: usize, zeta: f64, quad_order: usize) -> Result<Self> {
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::param("mollifier.zeta", zeta, "must lie in (0, 1]"));
        }
        if quad_order == 0 || quad_order > 64 {
            return Err(Error::param("mollifier.quad_order", quad_order, "must lie in 1..=64"));
        }
        let (gx, gw) = gauss_legendre(quad_order);
        let w1: Vec<f64> = gx.iter().zip(&gw).map(|(x, w)| w * bump(*x)).collect();
        let n2 = 2 * dim;
        let q = quad_order.pow(n2 as u32);
        let mut nodes = Vec::with_capacity(q * n2);
        let mut weights = Vec::with_capacity(q);
        let mut idx = vec![0usize; n2];
        for _ in 0..q {
            let mut w = 1.0;
            for &i in &idx {
                nodes.push(gx[i]);
                w *= w1[i];
            }
            weights.push(w);
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < quad_order {
                    break;
                }
                *slot = 0;
            }
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(MollifierSpec {
            alpha,
            dim,
            zeta,
            quad_order,
            nodes,
            weights,
        })
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// `λ = N^ζ`.
    pub fn lambda(&self, n: usize) -> f64 {
        (n as f64).powf(self.zeta)
    }

    /// Base density `φ(x, v)`.
    pub fn base_density(&self, x: &[f64], v: &[f64]) -> f64 {
        x.iter().chain(v).map(|&s| bump(s)).product()
    }

    pub fn scaled(&self, n: usize) -> ScaledMollifier {
        self.with_lambda(self.lambda(n))
    }

    pub fn with_lambda(&self, lambda: f64) -> ScaledMollifier {
        let d = self.dim;
        let hx = lambda.powf(-(1.0 + self.alpha));
        let hv = 1.0 / lambda;
        let nodes = self
            .nodes
            .chunks_exact(2 * d)
            .flat_map(|z| {
                z[..d]
                    .iter()
                    .map(move |x| x * hx)
                    .chain(z[d..].iter().map(move |v| v * hv))
            })
            .collect();
        ScaledMollifier {
            alpha: self.alpha,
            dim: d,
            lambda,
            hx,
            hv,
            nodes,
            weights: self.weights.clone(),
        }
    }
}

/// `φ_N` at a fixed scale `λ`, with scaled quadrature nodes `(y_q, w_q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMollifier {
    pub alpha: f64,
    pub dim: usize,
    pub lambda: f64,
    /// Per-coordinate position half-width `λ^{−(1+α)}`.
    pub hx: f64,
    /// Per-coordinate velocity half-width `λ^{−1}`.
    pub hv: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ScaledMollifier {
    /// `Γ_t φ_N(x, v) = λ^{(2+α)d} φ(λ^{1+α}(x − tv), λv)`.
    pub fn density(&self, t: f64, x: &[f64], v: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 1.0;
        for k in 0..d {
            acc *= bump((x[k] - t * v[k]) / self.hx) * bump(v[k] / self.hv);
            if acc == 0.0 {
                return 0.0;
            }
        }
        acc / (self.hx * self.hv).powi(d as i32)
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn node(&self, q: usize) -> (&[f64], &[f64], f64) {
        let d = self.dim;
        let z = &self.nodes[q * 2 * d..(q + 1) * 2 * d];
        (&z[..d], &z[d..], self.weights[q])
    }

    /// Euclidean radius of the position support of `φ_N`.
    pub fn x_radius(&self) -> f64 {
        self.hx * (self.dim as f64).sqrt()
    }

    /// Euclidean radius of the velocity support of `φ_N`.
    pub fn v_radius(&self) -> f64 {
        self.hv * (self.dim as f64).sqrt()
    }

    /// `Σ_q w_q cos(κ s_q)` and `Σ_q w_q sin(κ s_q)` per coordinate, with
    /// `s_q = y_q + t w_q` (axis X) or `s_q = w_q` (axis V).
    pub fn harmonic_moments(&self, kappa: f64, t: f64, axis: Axis) -> Vec<(f64, f64)> {
        let d = self.dim;
        (0..d)
            .map(|k| {
                let (mut c, mut s) = (0.0, 0.0);
                for q in 0..self.node_count() {
                    let (y, w, wt) = self.node(q);
                    let arg = match axis {
                        Axis::X => y[k] + t * w[k],
                        Axis::V => w[k],
                    };
                    let (sn, cs) = (kappa * arg).sin_cos();
                    c += wt * cs;
                    s += wt * sn;
                }
                (c, s)
            })
            .collect()
    }
}

/// Evaluation of `φ_N` from a spec: `mollifier_eval(m, N, t, z)`.
pub fn mollifier_eval(m: &MollifierSpec, n: usize, t: f64, x: &[f64], v: &[f64]) -> f64 {
    m.scaled(n).density(t, x, v)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapStats {
    pub capped: u64,
    pub total: u64,
}

impl CapStats {
    pub fn merge(&mut self, other: CapStats) {
        self.capped += other.capped;
        self.total += other.total;
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.capped as f64 / self.total as f64
        }
    }

    pub fn check(&self, threshold: Option<f64>) -> Result<()> {
        match threshold {
            Some(th) if self.fraction() > th => Err(Error::ExcessCapping {
                capped: self.capped as usize,
                total: self.total as usize,
                threshold: th,
            }),
            _ => Ok(()),
        }
    }
}

/// `b^N_t = b ∗ Γ_t φ_N` by node-shift quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct MollifiedKernel {
    pub kernel: KernelSpec,
    pub mollifier: ScaledMollifier,
    /// Singular evaluations with `|x| < eps_sing` are evaluated at radius `eps_sing`.
    pub eps_sing: f64,
    /// Maximal tolerated fraction of capped evaluations.
    pub cap_threshold: Option<f64>,
}

impl MollifiedKernel {
    pub fn new(kernel: KernelSpec, mollifier: ScaledMollifier) -> Self {
        let eps_sing = 0.1 * mollifier.x_radius();
        MollifiedKernel {
            kernel,
            mollifier,
            eps_sing,
            cap_threshold: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    /// Adds `b^N_t(x, v)` to `out` scaled by `scale`.
    #[inline]
    pub fn accumulate(&self, t: f64, x: &[f64], v: &[f64], scale: f64, out: &mut [f64], stats: &mut CapStats) {
        let d = self.dim();
        let mut xs = [0.0; 8];
        let mut vs = [0.0; 8];
        let mut val = [0.0; 8];
        let singular = self.kernel.is_singular();
        let eps2 = self.eps_sing * self.eps_sing;
        for q in 0..self.mollifier.node_count() {
            let (y, w, wt) = self.mollifier.node(q);
            for k in 0..d {
                xs[k] = x[k] - y[k] - t * w[k];
                vs[k] = v[k] - w[k];
            }
            if singular {
                stats.total += 1;
                let r2: f64 = xs[..d].iter().map(|a| a * a).sum();
                if r2 < eps2 {
                    stats.capped += 1;
                    if r2 == 0.0 {
                        continue;
                    }
                    let f = self.eps_sing / r2.sqrt();
                    for a in xs[..d].iter_mut() {
                        *a *= f;
                    }
                }
            }
            self.kernel.eval_raw(&xs[..d], &vs[..d], &mut val[..d]);
            for k in 0..d {
                out[k] += scale * wt * val[k];
            }
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], v: &[f64]) -> (Vec<f64>, CapStats) {
        let mut out = vec![0.0; self.dim()];
        let mut stats = CapStats::default();
        self.accumulate(t, x, v, 1.0, &mut out, &mut stats);
        (out, stats)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MollifiedValue {
    pub value: Vec<f64>,
    pub stats: CapStats,
}

/// `b^N_t(z)` with capped-evaluation accounting; excess capping is an error
/// when `cap_threshold` is set.
pub fn mollified_kernel_eval(
    k: &KernelSpec,
    m: &MollifierSpec,
    n: usize,
    t: f64,
    x: &[f64],
    v: &[f64],
    cap_threshold: Option<f64>,
) -> Result<MollifiedValue> {
    let mut mk = MollifiedKernel::new(*k, m.scaled(n));
    mk.cap_threshold = cap_threshold;
    let (value, stats) = mk.eval(t, x, v);
    stats.check(cap_threshold)?;
    Ok(MollifiedValue { value, stats })
}
