//! Travelling-wave oracle for `a` and `F_x` on the real segment `(q', 1)`.
//!
//! The wave `φ` solves `½φ'' + cφ' = f(1-φ) - (1-φ)`, decreasing from the saddle `1 - q'`
//! to 0. Then `a(1-u) = φ'(φ^{-1}(u))` and `F_x(1-u) = 1 - φ(φ^{-1}(u) - x)`.
//!
//! The wave is integrated forward from the saddle along its unstable manifold, in the
//! variables `ℓ = log φ` and `v = φ'/φ`, which keep full relative precision as `φ → 0`.

use serde::Serialize;
use thiserror::Error;

use crate::law::{DriftParams, OffspringLaw, Regime};
use crate::ode::{self, Adaptive, OdeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("drift {c} is below the critical drift {c0}")]
    DriftBelowCritical { c: f64, c0: f64 },
    #[error("wave lost monotonicity at x = {x}")]
    NotMonotone { x: f64 },
    #[error("wave integration failed: {0}")]
    Blowup(#[from] OdeError),
    #[error("u = {u} lies outside the solved range [{lo}, {hi}]")]
    OutOfRange { u: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveOptions {
    /// Right end of the solved range after normalisation.
    pub x_max: f64,
    /// Integration stops once `φ` drops below this.
    pub eps_tail: f64,
    pub tol: f64,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self { x_max: 40.0, eps_tail: 1e-12, tol: 1e-12 }
    }
}

/// `G(u) / u` where `G(u) = f(1-u) - (1-u)`, accurate as `u → 0`.
#[derive(Debug, Clone)]
struct Reaction {
    law: OffspringLaw,
    quotient: Vec<f64>,
    derivative: Vec<f64>,
}

impl Reaction {
    fn new(law: &OffspringLaw) -> Self {
        let g = law.tail_polynomial();
        let quotient = g[1..].to_vec();
        let derivative = g.iter().enumerate().skip(1).map(|(k, &x)| k as f64 * x).collect();
        Self { law: law.clone(), quotient, derivative }
    }

    fn over_u(&self, u: f64) -> f64 {
        if u < 0.25 {
            self.quotient.iter().rev().fold(0.0, |acc, &x| acc * u + x)
        } else {
            (self.law.pgf_real(1.0 - u) - (1.0 - u)) / u
        }
    }

    /// `G'(u) = 1 - f'(1-u)`.
    fn derivative(&self, u: f64) -> f64 {
        if u < 0.25 {
            self.derivative.iter().rev().fold(0.0, |acc, &x| acc * u + x)
        } else {
            1.0 - self.law.pgf_derivative(1.0 - u)
        }
    }
}

/// Sampled wave with exact re-evaluation between nodes.
#[derive(Debug, Clone)]
pub struct WaveSolution {
    law: OffspringLaw,
    c: f64,
    reaction: Reaction,
    xs: Vec<f64>,
    ell: Vec<f64>,
    v: Vec<f64>,
    /// Saddle value `1 - q'` and the local expansion `a(q' + e) ≈ b1 e + b2 e²`.
    saddle: f64,
    b1: f64,
    b2: f64,
    k_hat: Option<f64>,
}

fn rhs(reaction: &Reaction, c: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + '_ {
    move |_x, y| {
        let phi = y[0].exp();
        let v = y[1];
        [v, 2.0 * reaction.over_u(phi) - 2.0 * c * v - v * v]
    }
}

pub fn solve_wave(law: &OffspringLaw, c: f64, opts: WaveOptions) -> Result<WaveSolution, WaveError> {
    let params = DriftParams::new(law, c);
    if !params.regime.extinct() {
        return Err(WaveError::DriftBelowCritical { c, c0: law.c0() });
    }
    let reaction = Reaction::new(law);
    let q = law.q_prime();
    let t = law.taylor_at(q);
    let b1 = c - (c * c + 2.0 * (1.0 - t[1])).sqrt();
    let b2 = -2.0 * t.get(2).copied().unwrap_or(0.0) / (3.0 * b1 - 2.0 * c);
    let saddle = 1.0 - q;
    let e0 = 1e-8 * saddle;
    let phi0 = saddle - e0;
    let dphi0 = b1 * e0 + b2 * e0 * e0;

    let half = (0.5 * saddle).ln();
    let floor = opts.eps_tail.ln();
    let (mut xs, mut ell, mut v) = (Vec::new(), Vec::new(), Vec::new());
    let mut x_half = None;
    let mut bad = None;
    let solver = Adaptive { rtol: opts.tol, atol: 1e-3 * opts.tol, h_init: Some(1e-3), h_max: 0.05, max_steps: 10_000_000 };
    solver.solve(rhs(&reaction, c), 0.0, [phi0.ln(), dphi0 / phi0], f64::INFINITY, |x, y| {
        if y[1] >= 0.0 && !xs.is_empty() {
            bad = Some(x);
            return false;
        }
        if x_half.is_none() && y[0] <= half {
            x_half = Some(x);
        }
        xs.push(x);
        ell.push(y[0]);
        v.push(y[1]);
        y[0] > floor && x_half.is_none_or(|xh| x - xh < opts.x_max)
    })?;
    if let Some(x) = bad {
        return Err(WaveError::NotMonotone { x });
    }
    let mut wave = WaveSolution { law: law.clone(), c, reaction, xs, ell, v, saddle, b1, b2, k_hat: None };
    let (x_half, _) = wave.locate(0.5 * saddle)?;
    wave.xs.iter_mut().for_each(|x| *x -= x_half);
    if params.regime == Regime::Critical {
        let i = wave.xs.len() - 1;
        let x = wave.xs[i];
        wave.k_hat = Some((wave.ell[i] + law.c0() * x).exp() / x);
    }
    Ok(wave)
}

impl WaveSolution {
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn phi(&self) -> Vec<f64> {
        self.ell.iter().map(|l| l.exp()).collect()
    }

    pub fn dphi(&self) -> Vec<f64> {
        self.ell.iter().zip(&self.v).map(|(l, v)| l.exp() * v).collect()
    }

    /// `φ(x) / (x e^{-c0 x})` at the right end of the grid (critical drift only).
    pub fn k_hat(&self) -> Option<f64> {
        self.k_hat
    }

    /// Smallest `u` the grid reaches.
    pub fn u_min(&self) -> f64 {
        self.ell[self.ell.len() - 1].exp()
    }

    pub fn saddle(&self) -> f64 {
        self.saddle
    }

    fn step_from(&self, i: usize, h: f64) -> [f64; 2] {
        if h == 0.0 {
            return [self.ell[i], self.v[i]];
        }
        let mut f = rhs(&self.reaction, self.c);
        ode::step(&mut f, self.xs[i], &[self.ell[i], self.v[i]], h)
    }

    /// `(log φ, φ'/φ)` at `x`, if `x` lies on the grid.
    pub fn state_at(&self, x: f64) -> Option<[f64; 2]> {
        let n = self.xs.len();
        if !(x >= self.xs[0] && x <= self.xs[n - 1]) {
            return None;
        }
        let i = self.xs.partition_point(|&xi| xi <= x).saturating_sub(1).min(n - 1);
        Some(self.step_from(i, x - self.xs[i]))
    }

    /// `x` with `φ(x) = u`, and the state there.
    pub fn locate(&self, u: f64) -> Result<(f64, [f64; 2]), WaveError> {
        let target = u.ln();
        let n = self.ell.len();
        let out = || WaveError::OutOfRange { u, lo: self.u_min(), hi: self.ell[0].exp() };
        if !(target <= self.ell[0] && target >= self.ell[n - 1]) {
            return Err(out());
        }
        let i = self.ell.partition_point(|&l| l > target).saturating_sub(1);
        if self.ell[i] == target || i + 1 == n {
            return Ok((self.xs[i], [self.ell[i], self.v[i]]));
        }
        let width = self.xs[i + 1] - self.xs[i];
        let (mut lo, mut hi) = (0.0, width);
        let mut h = width * (target - self.ell[i]) / (self.ell[i + 1] - self.ell[i]);
        let mut y = self.step_from(i, h);
        for _ in 0..60 {
            let g = y[0] - target;
            if g == 0.0 {
                break;
            }
            if g > 0.0 {
                lo = h;
            } else {
                hi = h;
            }
            let mut next = h - g / y[1];
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - h).abs() <= 1e-15 * width.max(1.0);
            h = next;
            y = self.step_from(i, h);
            if done {
                break;
            }
        }
        Ok((self.xs[i] + h, y))
    }

    /// Inside the saddle zone `a(q' + e) ≈ b1 e + b2 e²` is exact to rounding.
    fn saddle_zone(&self, u: f64) -> Option<f64> {
        let phi0 = self.ell[0].exp();
        (u > phi0 && u <= self.saddle).then(|| {
            let e = self.saddle - u;
            self.b1 * e + self.b2 * e * e
        })
    }

    /// `a(1 - u)` for `u` in `(0, 1 - q']`.
    pub fn a_one_minus(&self, u: f64) -> Result<f64, WaveError> {
        if let Some(a) = self.saddle_zone(u) {
            return Ok(a);
        }
        let (_, y) = self.locate(u)?;
        Ok(u * y[1])
    }

    /// `a(s)` for real `s` in `[q', 1)`.
    pub fn a(&self, s: f64) -> Result<f64, WaveError> {
        self.a_one_minus(1.0 - s)
    }

    /// `a'(1 - u)`, from the generator equation.
    pub fn a_prime_one_minus(&self, u: f64) -> Result<f64, WaveError> {
        if let Some(e) = self.saddle_zone(u).map(|_| self.saddle - u) {
            return Ok(self.b1 + 2.0 * self.b2 * e);
        }
        let (_, y) = self.locate(u)?;
        Ok(2.0 * self.c - 2.0 * self.reaction.over_u(u) / y[1])
    }

    /// `a''(1 - u)`, from the differentiated generator equation.
    pub fn a_second_one_minus(&self, u: f64) -> Result<f64, WaveError> {
        let (_, y) = self.locate(u)?;
        let ap = 2.0 * self.c - 2.0 * self.reaction.over_u(u) / y[1];
        Ok((2.0 * self.c * ap + 2.0 * self.reaction.derivative(u) - ap * ap) / (u * y[1]))
    }

    /// `φ(x)` anywhere left of the grid's right end; left of the grid the saddle
    /// linearisation `e' = -(b1 e + b2 e²)` is solved exactly.
    pub fn phi_at(&self, x: f64) -> Result<f64, WaveError> {
        if x < self.xs[0] {
            let e0 = self.saddle - self.ell[0].exp();
            let t = x - self.xs[0];
            let w0 = 1.0 / e0;
            let k = self.b2 / self.b1;
            let w = (w0 + k) * (self.b1 * t).exp() - k;
            return Ok(self.saddle - 1.0 / w);
        }
        self.state_at(x)
            .map(|y| y[0].exp())
            .ok_or(WaveError::OutOfRange { u: f64::NAN, lo: self.u_min(), hi: self.saddle })
    }

    /// `F_x(1 - u)` by translating the wave.
    pub fn f_one_minus(&self, x: f64, u: f64) -> Result<f64, WaveError> {
        if x == 0.0 {
            return Ok(1.0 - u);
        }
        if u > self.ell[0].exp() && u <= self.saddle {
            let e = self.saddle - u;
            let xe = self.xs[0] + (1.0 / e + self.b2 / self.b1).ln() / self.b1
                - (1.0 / (self.saddle - self.ell[0].exp()) + self.b2 / self.b1).ln() / self.b1;
            return Ok(1.0 - self.phi_at(xe - x)?);
        }
        let (xu, _) = self.locate(u)?;
        Ok(1.0 - self.phi_at(xu - x)?)
    }

    /// `F_x(s)` for real `s` in `[q', 1)`.
    pub fn f(&self, x: f64, s: f64) -> Result<f64, WaveError> {
        if x == 0.0 {
            return Ok(s);
        }
        self.f_one_minus(x, 1.0 - s)
    }

    /// Largest `|½φ'' + cφ' - G(φ)|` from central differences of `φ` with step `h` on the
    /// grid's interior.
    pub fn difference_residual(&self, h: f64) -> f64 {
        let (lo, hi) = (self.xs[0] + h, self.xs[self.xs.len() - 1] - h);
        let n = ((hi - lo) / (50.0 * h)).ceil().max(1.0) as usize;
        (0..=n)
            .filter_map(|k| {
                let x = lo + (hi - lo) * k as f64 / n as f64;
                let p = |t: f64| self.state_at(t).map(|y| y[0].exp());
                let (pm, p0, pp) = (p(x - h)?, p(x)?, p(x + h)?);
                let d2 = (pp - 2.0 * p0 + pm) / (h * h);
                let d1 = (pp - pm) / (2.0 * h);
                Some((0.5 * d2 + self.c * d1 - p0 * self.reaction.over_u(p0)).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Writes `x,phi,dphi` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        use crate::series::fmt_real;
        writeln!(out, "x,phi,dphi")?;
        for (i, &x) in self.xs.iter().enumerate() {
            let phi = self.ell[i].exp();
            writeln!(out, "{},{},{}", fmt_real(x), fmt_real(phi), fmt_real(phi * self.v[i]))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::solve_a_zero_intercept;
    use crate::par::Parallelism;

    fn dyadic_wave(c: f64, eps_tail: f64) -> WaveSolution {
        solve_wave(&OffspringLaw::dyadic(), c, WaveOptions { eps_tail, ..Default::default() }).unwrap()
    }

    #[test]
    fn subcritical_decay_rate() {
        let w = dyadic_wave(1.5, 1e-20);
        let (l20, l30) = (w.state_at(20.0).unwrap()[0], w.state_at(30.0).unwrap()[0]);
        let rate = -(l30 - l20) / 10.0;
        assert!((rate - 1.0).abs() < 1e-3, "rate {rate}");
    }

    #[test]
    fn monotone_and_normalised() {
        let w = dyadic_wave(1.5, 1e-12);
        let phi = w.phi();
        assert!(phi.windows(2).all(|p| p[1] < p[0]));
        assert!(w.dphi().iter().all(|&d| d < 0.0));
        assert!((w.phi_at(0.0).unwrap() - 0.5).abs() < 1e-13);
        assert!(w.k_hat().is_none());
    }

    #[test]
    fn finite_difference_residual() {
        let w = dyadic_wave(2f64.sqrt(), 1e-12);
        assert!(w.difference_residual(1e-3) < 1e-5);
    }

    #[test]
    fn mean_slope_at_one() {
        for (c, lambda) in [(1.5, 1.0), (2f64.sqrt(), 2f64.sqrt())] {
            let w = dyadic_wave(c, 1e-12);
            let s = 1e-8;
            let ratio = w.a_one_minus(s).unwrap() / -s;
            if c == 1.5 {
                assert!((ratio - lambda).abs() < 1e-4, "{ratio}");
            }
            assert!((w.a_prime_one_minus(1e-11).unwrap() - lambda).abs() < if c == 1.5 { 1e-6 } else { 0.1 });
        }
    }

    #[test]
    fn matches_series_inside_disk() {
        let law = OffspringLaw::dyadic();
        let g = solve_a_zero_intercept(&law, 1.5, 2000, Parallelism::Sequential).unwrap();
        let w = dyadic_wave(1.5, 1e-12);
        assert!((g.eval_real(0.5) - w.a(0.5).unwrap()).abs() < 1e-10);
        assert!((g.eval_real(0.01) - w.a(0.01).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn node_consistency() {
        let w = dyadic_wave(1.5, 1e-12);
        let phi = w.phi();
        let dphi = w.dphi();
        for i in [phi.len() / 4, phi.len() / 2, 3 * phi.len() / 4] {
            let got = w.a_one_minus(phi[i]).unwrap();
            assert!((got - dphi[i]).abs() <= 1e-13 * dphi[i].abs(), "{got} vs {}", dphi[i]);
        }
    }

    #[test]
    fn translation_identities() {
        let w = dyadic_wave(1.5, 1e-12);
        assert_eq!(w.f(0.0, 0.3).unwrap(), 0.3);
        for (x, y, s) in [(0.2, 0.3, 0.4), (0.5, 0.5, 0.9), (1.0, 0.1, 0.05)] {
            let lhs = w.f(x + y, s).unwrap();
            let rhs = w.f(x, w.f(y, s).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-8, "{x} {y} {s}: {lhs} vs {rhs}");
        }
        let x = 0.5;
        let h = 1e-6;
        let slope = (w.f_one_minus(x, 2.0 * h).unwrap() - w.f_one_minus(x, h).unwrap()) / -h;
        assert!((slope - (x).exp()).abs() < 1e-4, "{slope}");
    }

    #[test]
    fn below_critical_is_rejected() {
        assert!(matches!(
            solve_wave(&OffspringLaw::dyadic(), 1.0, WaveOptions::default()),
            Err(WaveError::DriftBelowCritical { .. })
        ));
    }

    #[test]
    fn out_of_range() {
        let w = dyadic_wave(1.5, 1e-12);
        assert!(matches!(w.a_one_minus(1e-15), Err(WaveError::OutOfRange { .. })));
        assert!(matches!(w.a_one_minus(1.5), Err(WaveError::OutOfRange { .. })));
    }
}
