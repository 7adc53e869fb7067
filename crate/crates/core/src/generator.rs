//! The infinitesimal generating function `a(s) = Σ a_n s^n` of the absorbed-count process.
//!
//! `a` solves `a'(s) a(s) = 2c a(s) + 2(s - f(s))` with `a(q') = a(1) = 0`. Its
//! coefficients are the jump rates `q_n = a_n` (`n ≠ 1`) and `a_1 = -α`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::law::{DriftParams, OffspringLaw};
use crate::ode::{Adaptive, OdeError};
use crate::par::Parallelism;
use crate::series::{self, CompensatedSum, SeriesError, TruncatedSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("zero-intercept recursion needs p_0 = 0, got {0}")]
    PreconditionP0(f64),
    #[error("shooting needs p_0 > 0")]
    NoExtinctionMass,
    #[error("drift {c} is below the critical drift {c0}")]
    DriftBelowCritical { c: f64, c0: f64 },
    #[error("series order must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("no sign change of the shooting residual for a_0 in [1e-6, 10]")]
    BracketNotFound,
    #[error("shooting did not converge: {0}")]
    NoConvergence(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Coefficient block used for the symmetric convolution sums.
const BLOCK: usize = 1 << 13;

/// `Σ_{i=2}^{n-1} i b_i b_{n+1-i}`, the known part of the `s^n` coefficient of `b' b`.
///
/// Uses the symmetry of the pair sum; blocks are summed independently and then combined
/// in order, so the result does not depend on `par`.
fn known_part(b: &[f64], n: usize, par: Parallelism) -> f64 {
    if n < 3 {
        return 0.0;
    }
    let h = n / 2;
    let pair = |lo: usize, hi: usize| -> f64 { (lo..hi).map(|i| b[i] * b[n + 1 - i]).collect::<CompensatedSum>().value() };
    let mut total = if h < 2 {
        0.0
    } else if h - 1 <= 2 * BLOCK {
        2.0 * pair(2, h + 1)
    } else {
        let blocks = (h - 1).div_ceil(BLOCK);
        let parts = par.map(blocks, |k| pair(2 + k * BLOCK, (2 + (k + 1) * BLOCK).min(h + 1)));
        2.0 * parts.into_iter().collect::<CompensatedSum>().value()
    };
    if n % 2 == 1 && n >= 3 {
        let mid = b[n.div_ceil(2)];
        total += mid * mid;
    }
    0.5 * (n + 1) as f64 * total
}

/// Coefficients `b_0 = 0, b_1, …, b_order` of the solution of `b'b = 2cb + 2(e - g(e))`
/// where `g(e) = Σ t_k e^k` and `t_0 = 0`, taking the negative root for `b_1`.
///
/// Every term in the recursion has the same sign, so no cancellation occurs.
fn vanishing_intercept_recursion(t: &[f64], c: f64, order: usize, par: Parallelism) -> Vec<f64> {
    let tk = |k: usize| t.get(k).copied().unwrap_or(0.0);
    let mut b = vec![0.0; order + 1];
    if order == 0 {
        return b;
    }
    b[1] = c - (c * c + 2.0 * (1.0 - tk(1))).sqrt();
    for n in 2..=order {
        let num = -2.0 * tk(n) - known_part(&b, n, par);
        b[n] = num / ((n + 1) as f64 * b[1] - 2.0 * c);
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolveMethod {
    /// Exact coefficient recursion (`p_0 = 0`).
    ZeroIntercept,
    /// Shooting on `a_0`, then continuation from the fixed point and circle extraction.
    Shooting {
        a0_shooting: f64,
        radius: f64,
        samples: usize,
        imag_residue: f64,
        alias_warning: bool,
    },
}

/// Truncated series of `a` together with how it was obtained.
#[derive(Debug, Clone)]
pub struct GeneratorSeries {
    series: TruncatedSeries,
    c: f64,
    q_smallest_zero: f64,
    method: SolveMethod,
}

impl GeneratorSeries {
    pub fn series(&self) -> &TruncatedSeries {
        &self.series
    }

    pub fn coeffs(&self) -> &[f64] {
        self.series.coeffs()
    }

    pub fn order(&self) -> usize {
        self.series.order()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn method(&self) -> SolveMethod {
        self.method
    }

    /// Total jump rate `α = -a_1`.
    pub fn alpha(&self) -> f64 {
        -self.coeffs()[1]
    }

    /// Smallest zero of `a` in `[0, 1)`, equal to the law's fixed point.
    pub fn q_smallest_zero(&self) -> f64 {
        self.q_smallest_zero
    }

    /// Jump rates `(n, q_n)` for `n ≠ 1`.
    pub fn q_rates(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.coeffs().iter().copied().enumerate().filter(|&(n, _)| n != 1)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.series.eval(s).0
    }

    pub fn eval_real(&self, s: f64) -> f64 {
        self.series.eval_real(s)
    }

    /// Tail sums `Σ_{k>n} q_k = -Σ_{k≤n} a_k` for `n = 0..=order`, using `a(1) = 0`.
    pub fn tail_sums(&self) -> Vec<f64> {
        let mut acc = CompensatedSum::default();
        self.coeffs()
            .iter()
            .map(|&a| {
                acc.add(a);
                -acc.value()
            })
            .collect()
    }

    /// Same metadata with replaced coefficients.
    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Self {
        Self { series: TruncatedSeries::new(coeffs), ..self.clone() }
    }
}

fn check_drift(law: &OffspringLaw, c: f64, order: usize) -> Result<(), GeneratorError> {
    if order < 2 {
        return Err(GeneratorError::OrderTooSmall(order));
    }
    if !DriftParams::new(law, c).regime.extinct() {
        return Err(GeneratorError::DriftBelowCritical { c, c0: law.c0() });
    }
    Ok(())
}

/// Exact recursion for laws without extinction mass.
pub fn solve_a_zero_intercept(
    law: &OffspringLaw,
    c: f64,
    order: usize,
    par: Parallelism,
) -> Result<GeneratorSeries, GeneratorError> {
    if law.p(0) != 0.0 {
        return Err(GeneratorError::PreconditionP0(law.p(0)));
    }
    check_drift(law, c, order)?;
    let coeffs = vanishing_intercept_recursion(law.probs(), c, order, par);
    Ok(GeneratorSeries {
        series: TruncatedSeries::new(coeffs),
        c,
        q_smallest_zero: 0.0,
        method: SolveMethod::ZeroIntercept,
    })
}

/// Power series of `a` about its zero `q'`, convergent for `|s - q'| < 1 - q'`.
#[derive(Debug, Clone)]
pub struct FixedPointExpansion {
    pub center: f64,
    pub coeffs: Vec<f64>,
}

impl FixedPointExpansion {
    pub fn new(law: &OffspringLaw, c: f64, order: usize) -> Self {
        let center = law.q_prime();
        let mut t = law.taylor_at(center);
        t[0] = 0.0;
        let coeffs = vanishing_intercept_recursion(&t, c, order, Parallelism::Sequential);
        Self { center, coeffs }
    }

    pub fn radius(&self) -> f64 {
        1.0 - self.center
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        let e = s - self.center;
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &b| acc * e + b)
    }

    pub fn eval_real(&self, s: f64) -> f64 {
        let e = s - self.center;
        self.coeffs.iter().rev().fold(0.0, |acc, &b| acc * e + b)
    }
}

/// Sign-carrying miss distance of the trajectory started at `a(0) = a0`.
///
/// Positive: `a(q')` of a trajectory that stays positive. Negative: minus the distance
/// from the point where the trajectory reaches zero to `q'`.
fn shooting_residual(law: &OffspringLaw, c: f64, a0: f64) -> f64 {
    let q = law.q_prime();
    let rhs = |s: f64, y: &[f64; 1]| [2.0 * c + 2.0 * (s - law.pgf_real(s)) / y[0]];
    let floor = 1e-13 * a0;
    let mut last = 0.0;
    let out = Adaptive::new(1e-13).solve(rhs, 0.0, [a0], q, |s, y| {
        last = s;
        y[0] > floor
    });
    match out {
        Ok((s, y)) if y[0] > floor && s == q => y[0],
        Ok((s, _)) => -(q - s).max(f64::MIN_POSITIVE),
        Err(_) => -(q - last).max(f64::MIN_POSITIVE),
    }
}

/// Finds `a_0` by bisection on the sign of the shooting residual.
pub fn shoot_a0(law: &OffspringLaw, c: f64) -> Result<f64, GeneratorError> {
    let grid: Vec<f64> = (0..=28).map(|k| 1e-6 * 10f64.powf(k as f64 * 0.25)).collect();
    let signs: Vec<bool> = grid.iter().map(|&a0| shooting_residual(law, c, a0) > 0.0).collect();
    let k = signs.windows(2).position(|w| !w[0] && w[1]).ok_or(GeneratorError::BracketNotFound)?;
    let (mut lo, mut hi) = (grid[k], grid[k + 1]);
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if shooting_residual(law, c, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(GeneratorError::NoConvergence(format!("bracket [{lo}, {hi}] after 200 halvings")))
}

/// `a` on the circle `|s| = r` at `s_j = r e^{2πij/M}`, `j = 0..=M/2`.
///
/// The value at `-r` is carried along the real axis from the fixed-point expansion, then
/// the arc is followed from angle π down to 0. Both legs move away from `q'`, where
/// neighbouring solutions separate, and towards `s = 1`, where they merge.
pub fn continue_on_circle(
    law: &OffspringLaw,
    c: f64,
    expansion: &FixedPointExpansion,
    r: f64,
    m: usize,
) -> Result<Vec<Complex64>, GeneratorError> {
    let q = expansion.center;
    let start = q - 0.5 * expansion.radius();
    let real_rhs = |s: f64, y: &[f64; 1]| [2.0 * c + 2.0 * (s - law.pgf_real(s)) / y[0]];
    let tol = Adaptive::new(1e-14);
    let (_, left) = tol.solve(real_rhs, start, [expansion.eval_real(start)], -r, |_, _| true)?;

    let arc_rhs = |theta: f64, y: &[f64; 2]| {
        let s = Complex64::from_polar(r, theta);
        let a = Complex64::new(y[0], y[1]);
        let d = (2.0 * c + 2.0 * (s - law.pgf(s)) / a) * Complex64::i() * s;
        [d.re, d.im]
    };
    let half = m / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); half + 1];
    out[half] = Complex64::new(left[0], 0.0);
    let mut y = [left[0], 0.0];
    let step = std::f64::consts::TAU / m as f64;
    let mut h = step;
    for j in (0..half).rev() {
        let from = (j + 1) as f64 * step;
        let to = j as f64 * step;
        let mut last_h = h;
        let mut prev = from;
        let opts = Adaptive { h_init: Some(h.min(from - to)), ..tol };
        let (_, yn) = opts.solve(arc_rhs, from, y, to, |t, _| {
            if t != from {
                last_h = (prev - t).abs();
            }
            prev = t;
            true
        })?;
        h = last_h.max(step * 1e-6);
        y = yn;
        out[j] = Complex64::new(yn[0], if j == 0 { 0.0 } else { yn[1] });
    }
    Ok(out)
}

/// Laws with extinction mass: shooting on `a_0`, then coefficients by circle extraction.
///
/// The forward coefficient recursion about 0 amplifies rounding by `q'^{-n}`; the
/// coefficients are instead read off values of `a` on `|s| = 1 - 4/N`.
pub fn solve_a_shooting(
    law: &OffspringLaw,
    c: f64,
    order: usize,
    par: Parallelism,
) -> Result<GeneratorSeries, GeneratorError> {
    if law.p(0) == 0.0 {
        return Err(GeneratorError::NoExtinctionMass);
    }
    check_drift(law, c, order)?;
    let a0_shooting = shoot_a0(law, c)?;
    let expansion = FixedPointExpansion::new(law, c, 256);
    let r = 1.0 - 4.0 / order as f64;
    let m = series::default_sample_count(order);
    let half = continue_on_circle(law, c, &expansion, r, m)?;
    let extracted = series::coefficients_from_samples(series::mirror(half, m), r, order)?;
    let _ = par;
    Ok(GeneratorSeries {
        series: TruncatedSeries::new(extracted.coeffs),
        c,
        q_smallest_zero: law.q_prime(),
        method: SolveMethod::Shooting {
            a0_shooting,
            radius: r,
            samples: m,
            imag_residue: extracted.imag_residue,
            alias_warning: extracted.alias_warning,
        },
    })
}

/// Dispatches on `p_0`.
pub fn solve_a(law: &OffspringLaw, c: f64, order: usize, par: Parallelism) -> Result<GeneratorSeries, GeneratorError> {
    if law.p(0) == 0.0 {
        solve_a_zero_intercept(law, c, order, par)
    } else {
        solve_a_shooting(law, c, order, par)
    }
}

/// Largest coefficient of `a'a - 2ca - 2(s - f)` over orders `0..N`, relative to `max |a_n|`.
pub fn ode_residual(gen: &GeneratorSeries, law: &OffspringLaw, par: Parallelism) -> f64 {
    let a = gen.coeffs();
    let n_top = gen.order();
    let c = gen.c();
    // Σ_{j<n} (j+1) a_{j+1} a_{n-j} = (n+1)/2 Σ_{i=1}^{n} a_i a_{n+1-i}, halved again by symmetry.
    let res = par.map(n_top, |n| {
        let half: f64 = (1..=n / 2).map(|i| a[i] * a[n + 1 - i]).collect::<CompensatedSum>().value();
        let middle = if n % 2 == 1 { a[n.div_ceil(2)].powi(2) } else { 0.0 };
        let mut acc = CompensatedSum::default();
        acc.add(0.5 * (n + 1) as f64 * (2.0 * half + middle));
        acc.add((n + 1) as f64 * a[n + 1] * a[0]);
        acc.add(-2.0 * c * a[n]);
        let rhs = if n == 1 { 1.0 } else { 0.0 } - law.p(n);
        acc.add(-2.0 * rhs);
        acc.value().abs()
    });
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    res.into_iter().fold(0.0, f64::max) / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dyadic(c: f64, n: usize) -> GeneratorSeries {
        solve_a_zero_intercept(&OffspringLaw::dyadic(), c, n, Parallelism::Sequential).unwrap()
    }

    #[test]
    fn known_part_matches_direct_sum() {
        let b: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        for n in [2usize, 3, 4, 5, 10, 11, 150, 297] {
            let direct: f64 = (1..=n.saturating_sub(2)).map(|j| (j + 1) as f64 * b[j + 1] * b[n - j]).sum();
            let fast = known_part(&b, n, Parallelism::Sequential);
            assert!((direct - fast).abs() <= 1e-12 * direct.abs().max(1.0), "n={n}: {direct} vs {fast}");
        }
    }

    #[test]
    fn blocked_sum_is_parallel_invariant() {
        let b: Vec<f64> = (0..60_000).map(|i| 1.0 / (1.0 + i as f64).powi(3)).collect();
        let n = 59_990;
        assert_eq!(known_part(&b, n, Parallelism::Sequential), known_part(&b, n, Parallelism::Available));
    }

    #[test]
    fn low_order_subcritical() {
        let g = dyadic(1.5, 10);
        let a1 = 1.5 - 4.25f64.sqrt();
        assert!((g.coeffs()[1] - a1).abs() < 1e-15);
        assert!((g.coeffs()[2] - 2.0 / (3.0 - 3.0 * a1)).abs() < 1e-15);
        assert!((g.alpha() + a1).abs() < 1e-15);
        assert_eq!(g.coeffs()[0], 0.0);
    }

    #[test]
    fn low_order_critical() {
        let g = dyadic(2f64.sqrt(), 10);
        assert!((g.coeffs()[1] - (2f64.sqrt() - 2.0)).abs() < 1e-15);
        assert!((g.coeffs()[2] - 2.0 / (6.0 - 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn odd_span_kills_even_rates() {
        let law = OffspringLaw::new([(3, 1.0)]).unwrap();
        let g = solve_a_zero_intercept(&law, 2.5, 400, Parallelism::Sequential).unwrap();
        for (n, a) in g.coeffs().iter().enumerate() {
            if n % 2 == 0 {
                assert!(a.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_is_small_and_sensitive() {
        let law = OffspringLaw::dyadic();
        let g = dyadic(1.5, 500);
        assert!(ode_residual(&g, &law, Parallelism::Sequential) < 1e-10);
        let mut c = g.coeffs().to_vec();
        c[2] += 1e-3;
        assert!(ode_residual(&g.with_coeffs(c), &law, Parallelism::Sequential) > 1e-4);
    }

    #[test]
    fn preconditions() {
        let dy = OffspringLaw::dyadic();
        assert!(matches!(
            solve_a_zero_intercept(&dy, 1.0, 10, Parallelism::Sequential),
            Err(GeneratorError::DriftBelowCritical { .. })
        ));
        let p0 = OffspringLaw::new([(0, 0.2), (3, 0.8)]).unwrap();
        assert!(matches!(
            solve_a_zero_intercept(&p0, 1.7, 10, Parallelism::Sequential),
            Err(GeneratorError::PreconditionP0(_))
        ));
        assert!(matches!(solve_a_shooting(&dy, 1.5, 10, Parallelism::Sequential), Err(GeneratorError::NoExtinctionMass)));
    }

    #[test]
    fn rates_are_positive_and_sum_to_alpha() {
        let g = dyadic(1.5, 4000);
        assert!(g.q_rates().all(|(_, q)| q >= -1e-12));
        let total: f64 = g.q_rates().map(|(_, q)| q).sum();
        assert!(total <= g.alpha() + 1e-12);
        assert!(g.alpha() - total < 1e-5);
    }

    #[test]
    fn series_is_convex() {
        let g = dyadic(2f64.sqrt(), 4000);
        let d2 = g.series().derivative().derivative();
        for k in 0..50 {
            let s = 0.95 * k as f64 / 49.0;
            assert!(d2.eval_real(s) >= -1e-9);
        }
    }

    #[test]
    fn shooting_hits_fixed_point() {
        let law = OffspringLaw::new([(0, 0.2), (3, 0.8)]).unwrap();
        let g = solve_a_shooting(&law, 1.7, 2048, Parallelism::Available).unwrap();
        let q = (2f64.sqrt() - 1.0) / 2.0;
        assert!(g.eval_real(q).abs() < 1e-10, "a(q') = {}", g.eval_real(q));
        let a = g.coeffs();
        assert!(a[0] > 0.0);
        assert!((a[1] - (2.0 * 1.7 - 2.0 * 0.2 / a[0])).abs() < 1e-10);
        let SolveMethod::Shooting { a0_shooting, .. } = g.method() else { panic!() };
        assert!((a0_shooting - a[0]).abs() < 1e-9, "{a0_shooting} vs {}", a[0]);
        let fp = FixedPointExpansion::new(&law, 1.7, 256);
        assert!((fp.eval_real(0.0) - a[0]).abs() < 1e-12);
        assert!(ode_residual(&g, &law, Parallelism::Available) < 1e-10);
        assert!(g.q_rates().all(|(_, q)| q >= -1e-12));
    }
}
