//! Isotropic α-stable increments with counter-based, per-particle streams.
//!
//! Normalization: `E[exp(i ξ·L_t)] = exp(−t|ξ|^α)`, so at α = 2 every
//! coordinate has variance `2t`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub dim: usize,
    /// Diagnostic only: clips the Euclidean norm of each increment.
    pub jump_cap: Option<f64>,
}

impl NoiseSpec {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(Error::param("alpha", alpha, "stability index must lie in (1, 2]"));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::param("dim", dim, format!("must lie in 1..={MAX_DIM}")));
        }
        Ok(NoiseSpec {
            alpha,
            dim,
            jump_cap: None,
        })
    }

    /// 32-bit words consumed per step: Box–Muller pairs plus the subordinator draw.
    fn words_per_step(&self) -> u128 {
        (4 * self.dim.div_ceil(2) + 4) as u128
    }
}

pub const MAX_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    Increment = 0,
    Initial = 1,
    Chf = 2,
    Aux = 3,
}

/// Identity of one random draw. Equal keys give equal draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub particle: u64,
    pub step: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, replica: u64, particle: u64, step: u64, purpose: Purpose) -> Self {
        StreamKey {
            seed,
            replica,
            particle,
            step,
            purpose,
        }
    }

    fn stream_id(&self) -> u64 {
        assert!(self.particle < 1 << 32, "particle index exceeds 2^32");
        assert!(self.replica < 1 << 24, "replica index exceeds 2^24");
        self.particle | (self.purpose as u64) << 32 | self.replica << 40
    }

    /// Generator positioned at the start of this key's block of `words` words.
    pub fn rng(&self, words: u128) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id());
        rng.set_word_pos(self.step as u128 * words);
        rng
    }
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn open_uniform(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Pair of independent standard normals (Box–Muller).
#[inline]
pub fn normal_pair(rng: &mut impl RngCore) -> (f64, f64) {
    let u1 = open_uniform(rng);
    let u2 = open_uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (r * c, r * s)
}

pub fn fill_normals(rng: &mut impl RngCore, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = normal_pair(rng);
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        *last = normal_pair(rng).0;
    }
}

/// Totally skewed positive stable variable with Laplace transform `exp(−u^a)`,
/// `a ∈ (0, 1)`, by the Chambers–Mallows–Stuck (Kanter) construction.
pub fn positive_stable(a: f64, rng: &mut impl RngCore) -> f64 {
    let u = PI * open_uniform(rng);
    let w = -open_uniform(rng).ln();
    let left = (a * u).sin() / u.sin().powf(1.0 / a);
    let right = (((1.0 - a) * u).sin() / w).powf((1.0 - a) / a);
    left * right
}

/// Writes one increment of `L` over a step of length `dt` into `out[..dim]`.
pub fn sample_increment_into(spec: &NoiseSpec, dt: f64, key: &StreamKey, out: &mut [f64]) {
    let mut rng = key.rng(spec.words_per_step());
    draw(spec, dt, &mut rng, out);
}

/// Consumes exactly `words_per_step` words so that sequential draws from one
/// generator coincide with keyed draws at consecutive steps.
fn draw(spec: &NoiseSpec, dt: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let d = spec.dim;
    fill_normals(rng, &mut out[..d]);
    let scale = if spec.alpha == 2.0 {
        let _ = rng.next_u64();
        let _ = rng.next_u64();
        (2.0 * dt).sqrt()
    } else {
        let a = positive_stable(spec.alpha / 2.0, rng);
        dt.powf(1.0 / spec.alpha) * (2.0 * a).sqrt()
    };
    for o in out[..d].iter_mut() {
        *o *= scale;
    }
    if let Some(cap) = spec.jump_cap {
        let norm = out[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > cap {
            let f = cap / norm;
            for o in out[..d].iter_mut() {
                *o *= f;
            }
        }
    }
}

/// Sequential reader of one particle's increment stream. Reading step `k`
/// right after step `k − 1` avoids re-seeking the generator; any other order
/// falls back to keyed access, so results never depend on access pattern.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    spec: NoiseSpec,
    key: StreamKey,
    rng: ChaCha8Rng,
    next_step: u64,
}

impl NoiseStream {
    pub fn new(spec: NoiseSpec, key: StreamKey) -> Self {
        let rng = key.rng(spec.words_per_step());
        NoiseStream {
            spec,
            next_step: key.step,
            key,
            rng,
        }
    }

    fn fine(&mut self, step: u64, dt: f64, out: &mut [f64]) {
        if step != self.next_step {
            let mut k = self.key;
            k.step = step;
            self.rng = k.rng(self.spec.words_per_step());
        }
        draw(&self.spec, dt, &mut self.rng, out);
        self.next_step = step + 1;
    }

    /// Same value as [`sample_refined_into`] for this stream's key at `step`.
    pub fn increment(&mut self, step: u64, dt: f64, substeps: u32, out: &mut [f64]) {
        let d = self.spec.dim;
        if substeps <= 1 {
            self.fine(step, dt, out);
            return;
        }
        let fine = dt / substeps as f64;
        let mut tmp = [0.0; MAX_DIM];
        out[..d].fill(0.0);
        for k in 0..substeps as u64 {
            self.fine(step * substeps as u64 + k, fine, &mut tmp[..d]);
            for (o, t) in out[..d].iter_mut().zip(&tmp[..d]) {
                *o += t;
            }
        }
    }
}

pub fn sample_increment(spec: &NoiseSpec, dt: f64, key: &StreamKey) -> Result<Vec<f64>> {
    if !(spec.alpha > 1.0 && spec.alpha <= 2.0) {
        return Err(Error::param("alpha", spec.alpha, "stability index must lie in (1, 2]"));
    }
    if !(dt >= 0.0) {
        return Err(Error::param("dt", dt, "must be nonnegative"));
    }
    let mut out = vec![0.0; spec.dim];
    sample_increment_into(spec, dt, key, &mut out);
    Ok(out)
}

/// Increment over a coarse step assembled from `substeps` fine increments keyed
/// at fine step indices `substeps·step + k`. A run with `(dt, substeps = 2)` and
/// a run with `(dt/2, substeps = 1)` therefore see the same Brownian path.
pub fn sample_refined_into(spec: &NoiseSpec, dt: f64, key: &StreamKey, substeps: u32, out: &mut [f64]) {
    if substeps <= 1 {
        sample_increment_into(spec, dt, key, out);
        return;
    }
    let d = spec.dim;
    let fine = dt / substeps as f64;
    let mut tmp = [0.0; MAX_DIM];
    out[..d].fill(0.0);
    for k in 0..substeps as u64 {
        let mut kk = *key;
        kk.step = key.step * substeps as u64 + k;
        sample_increment_into(spec, fine, &kk, &mut tmp[..d]);
        for (o, t) in out[..d].iter_mut().zip(&tmp[..d]) {
            *o += t;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChfEstimate {
    pub value: Complex64,
    pub se_re: f64,
    pub se_im: f64,
}

/// Monte-Carlo estimate of `E[exp(i ξ·L_t)]` from `n` independent draws.
pub fn empirical_chf(spec: &NoiseSpec, t: f64, xi: &[f64], n: usize, seed: u64) -> ChfEstimate {
    empirical_chf_many(spec, t, &[xi.to_vec()], n, seed)[0]
}

/// Same as [`empirical_chf`] for several frequencies, reusing one set of draws.
pub fn empirical_chf_many(spec: &NoiseSpec, t: f64, xis: &[Vec<f64>], n: usize, seed: u64) -> Vec<ChfEstimate> {
    assert!(n >= 1);
    let mut acc = vec![[0.0f64; 4]; xis.len()];
    let mut buf = vec![0.0; spec.dim];
    for i in 0..n as u64 {
        let key = StreamKey::new(seed, 0, i, 0, Purpose::Chf);
        sample_increment_into(spec, t, &key, &mut buf);
        for (a, xi) in acc.iter_mut().zip(xis) {
            assert_eq!(xi.len(), spec.dim);
            let phase: f64 = xi.iter().zip(&buf).map(|(a, b)| a * b).sum();
            let (s, c) = phase.sin_cos();
            a[0] += c;
            a[1] += s;
            a[2] += c * c;
            a[3] += s * s;
        }
    }
    let nf = n as f64;
    let sd = |m2: f64, m: f64| ((m2 / nf - m * m).max(0.0) * nf / (nf - 1.0).max(1.0)).sqrt();
    acc.iter()
        .zip(xis)
        .map(|(a, xi)| {
            if xi.iter().all(|&x| x == 0.0) {
                return ChfEstimate {
                    value: Complex64::new(1.0, 0.0),
                    se_re: 0.0,
                    se_im: 0.0,
                };
            }
            let (mr, mi) = (a[0] / nf, a[1] / nf);
            ChfEstimate {
                value: Complex64::new(mr, mi),
                se_re: sd(a[2], mr) / nf.sqrt(),
                se_im: sd(a[3], mi) / nf.sqrt(),
            }
        })
        .collect()
}
