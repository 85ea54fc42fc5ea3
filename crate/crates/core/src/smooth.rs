//! Smooth compactly supported building blocks: smooth steps, bumps, and
//! Gauss–Legendre rules.

/// `exp(−1/u)` for `u > 0`, zero otherwise.
#[inline]
fn flat(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp()
    } else {
        0.0
    }
}

/// C∞ step: 1 for `s ≤ 0`, 0 for `s ≥ 1`, strictly monotone in between.
#[inline]
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    if s >= 1.0 {
        return 0.0;
    }
    let a = flat(1.0 - s);
    a / (a + flat(s))
}

/// Radial cutoff profile: 1 on `[0, 1]`, 0 on `[2, ∞)`.
#[inline]
pub fn cutoff(r: f64) -> f64 {
    smooth_step(r - 1.0)
}

/// `∫_{−1}^{1} exp(−1/(1−s²)) ds`.
pub const BUMP_MASS: f64 = 0.443_993_816_168_079_4;

/// Unit-mass even bump on `(−1, 1)`.
#[inline]
pub fn bump(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (-1.0 / q).exp() / BUMP_MASS
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_mass_matches_fine_simpson() {
        let m = 200_000;
        let h = 2.0 / m as f64;
        let f = |s: f64| {
            let q = 1.0 - s * s;
            if q <= 0.0 {
                0.0
            } else {
                (-1.0 / q).exp()
            }
        };
        let mut acc = f(-1.0) + f(1.0);
        for i in 1..m {
            let s = -1.0 + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(s);
        }
        let mass = acc * h / 3.0;
        assert!((mass - BUMP_MASS).abs() < 1e-13, "{mass}");
    }

    #[test]
    fn smooth_step_edges() {
        assert_eq!(smooth_step(-0.1), 1.0);
        assert_eq!(smooth_step(1.0), 0.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(cutoff(0.7), 1.0);
        assert_eq!(cutoff(2.0), 0.0);
        let mut last = 1.0;
        for i in 1..100 {
            let v = smooth_step(i as f64 / 100.0);
            assert!(v <= last);
            if (10..90).contains(&i) {
                assert!(v < last);
            }
            last = v;
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg} q={q}");
            }
            for i in 0..n {
                assert_eq!(x[i], -x[n - 1 - i]);
            }
        }
    }
}
