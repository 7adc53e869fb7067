//! The semigroup `F_x(s) = E[s^{Z_x}]`, the law of `Z_x`, and the integral identities.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::generator::GeneratorSeries;
use crate::law::{DriftParams, OffspringLaw};
use crate::ode::{self, Adaptive, OdeError};
use crate::par::Parallelism;
use crate::quad::{self, QuadError};
use crate::series::{self, fmt_real, SeriesError};
use crate::wave::WaveSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GwError {
    #[error("regime of drift {c} has no almost surely finite absorbed count")]
    Regime { c: f64 },
    #[error("F left the closed unit disk (|F| = {modulus})")]
    DomainEscape { modulus: f64 },
    #[error("no generator value available at s = {s}")]
    Unavailable { s: Complex64 },
    #[error("step-size control failed: {0}")]
    ToleranceFailure(#[from] OdeError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Something that evaluates `a(s)`.
pub trait Generator: Sync {
    /// `None` outside the evaluator's domain.
    fn a(&self, s: Complex64) -> Option<Complex64>;
}

impl Generator for GeneratorSeries {
    fn a(&self, s: Complex64) -> Option<Complex64> {
        (s.norm() < 1.0).then(|| self.eval(s))
    }
}

impl Generator for WaveSolution {
    fn a(&self, s: Complex64) -> Option<Complex64> {
        (s.im == 0.0).then(|| self.a(s.re).ok()).flatten().map(|v| Complex64::new(v, 0.0))
    }
}

/// Series inside `|s| <= 0.9`, wave for real `s` beyond.
pub struct Hybrid<'a> {
    pub series: &'a GeneratorSeries,
    pub wave: &'a WaveSolution,
}

impl Generator for Hybrid<'_> {
    fn a(&self, s: Complex64) -> Option<Complex64> {
        if s.norm() <= 0.9 {
            return Generator::a(self.series, s);
        }
        if s.im.abs() <= 1e-15 && s.re >= self.series.q_smallest_zero() {
            return Generator::a(self.wave, Complex64::new(s.re, 0.0));
        }
        Generator::a(self.series, s)
    }
}

/// Integrates `dF/dx = a(F)` from `F_0 = s0` to `x` with error control.
pub fn evolve_f<G: Generator + ?Sized>(gen: &G, x: f64, s0: Complex64) -> Result<Complex64, GwError> {
    if x == 0.0 {
        return Ok(s0);
    }
    let real = s0.im == 0.0;
    let mut missing = None;
    let mut escaped = None;
    let rhs = |_x: f64, y: &[f64; 2]| {
        let s = Complex64::new(y[0], if real { 0.0 } else { y[1] });
        match gen.a(s) {
            Some(v) => [v.re, if real { 0.0 } else { v.im }],
            None => {
                missing = Some(s);
                [f64::NAN, f64::NAN]
            }
        }
    };
    let opts = Adaptive { rtol: 1e-13, atol: 1e-14, ..Adaptive::new(1e-13) };
    let out = opts.solve(rhs, 0.0, [s0.re, s0.im], x, |_, y| {
        let modulus = y[0].hypot(y[1]);
        if modulus > 1.0 + 1e-9 {
            escaped = Some(modulus);
        }
        escaped.is_none()
    });
    if let Some(modulus) = escaped {
        return Err(GwError::DomainEscape { modulus });
    }
    if let Some(s) = missing {
        return Err(GwError::Unavailable { s });
    }
    let (_, y) = out?;
    Ok(Complex64::new(y[0], y[1]))
}

/// Integrates the pair `F' = A`, `A' = 2cA + 2(F - f(F))` with `n` fixed steps.
///
/// `A` tracks `a(F)` because `(a∘F)' = a'(F) a(F)` and `a` solves the generator equation;
/// only the starting value `a(s0)` is needed.
pub fn evolve_pair(law: &OffspringLaw, c: f64, x: f64, s0: Complex64, a0: Complex64, n: usize) -> (Complex64, Complex64) {
    let rhs = |_x: f64, y: &[f64; 4]| {
        let f = Complex64::new(y[0], y[1]);
        let a = Complex64::new(y[2], y[3]);
        let da = 2.0 * c * a + 2.0 * (f - law.pgf(f));
        [a.re, a.im, da.re, da.im]
    };
    let y = ode::integrate_fixed(rhs, 0.0, [s0.re, s0.im, a0.re, a0.im], x, n);
    (Complex64::new(y[0], y[1]), Complex64::new(y[2], y[3]))
}

/// Distribution of `Z_x` on `0..=N`.
#[derive(Debug, Clone, Serialize)]
pub struct AbsorptionDistribution {
    pub x: f64,
    pub radius: f64,
    pub samples: usize,
    pub probs: Vec<f64>,
    /// `1 - Σ probs`.
    pub mass_defect: f64,
    /// `Σ n P(Z = n)` plus a fitted power-law tail where the fit is usable.
    pub mean: f64,
    pub tail_correction: Option<f64>,
    pub imag_residue: f64,
    pub alias_warning: bool,
}

impl AbsorptionDistribution {
    fn new(x: f64, ext: series::CauchyCoefficients, delta: usize) -> Self {
        let probs = ext.coeffs;
        let mass: f64 = probs.iter().sum();
        let head: f64 = probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        let tail_correction = pareto_tail(&probs, delta);
        Self {
            x,
            radius: ext.radius,
            samples: ext.samples,
            mass_defect: 1.0 - mass,
            mean: head + tail_correction.unwrap_or(0.0),
            tail_correction,
            probs,
            imag_residue: ext.imag_residue,
            alias_warning: ext.alias_warning,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,p")?;
        for (n, p) in self.probs.iter().enumerate() {
            writeln!(out, "{n},{}", fmt_real(*p))?;
        }
        Ok(())
    }
}

/// `Σ_{n>N} n C n^{-β}` from a log-log fit `P(n) ≈ C n^{-β}` on the last decade of the lattice.
fn pareto_tail(probs: &[f64], delta: usize) -> Option<f64> {
    let n_max = probs.len() - 1;
    let pts: Vec<(f64, f64)> = (n_max / 10..=n_max)
        .filter(|n| n % delta == 1 % delta && probs[*n] > 0.0)
        .map(|n| ((n as f64).ln(), probs[n].ln()))
        .collect();
    if pts.len() < 8 {
        return None;
    }
    let (slope, intercept) = least_squares(&pts);
    let beta = -slope;
    (beta > 2.0).then(|| {
        let c = intercept.exp();
        c * (n_max as f64 + 0.5).powf(2.0 - beta) / ((beta - 2.0) * delta as f64)
    })
}

/// Slope and intercept of the least-squares line through `pts`.
pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Settings for [`distribution`].
#[derive(Debug, Clone, Copy)]
pub struct DistributionOptions {
    pub radius: f64,
    pub samples: usize,
    /// Fixed RK steps per unit of `x`.
    pub steps_per_unit: usize,
}

impl DistributionOptions {
    /// `r = 1 - 4/N` and `M` the next power of two above `8(N + 1)`.
    pub fn for_order(n_max: usize) -> Self {
        Self {
            radius: 1.0 - 4.0 / n_max.max(8) as f64,
            samples: series::default_sample_count(n_max),
            steps_per_unit: 250,
        }
    }
}

/// `P(Z_x = n)` for `n <= n_max` from the generator's coefficients.
///
/// `a` is evaluated on the circle by one transform of its coefficients; each point is then
/// carried to `x` by [`evolve_pair`] and the coefficients of `F_x` are extracted. When
/// `p_0 = 0` the count never decreases, so truncating `a` at order `>= n_max` leaves these
/// probabilities unchanged.
pub fn distribution(
    gen: &GeneratorSeries,
    law: &OffspringLaw,
    x: f64,
    n_max: usize,
    opts: DistributionOptions,
    par: Parallelism,
) -> Result<AbsorptionDistribution, GwError> {
    let c = gen.c();
    if !DriftParams::new(law, c).regime.extinct() {
        return Err(GwError::Regime { c });
    }
    let (r, m) = (opts.radius, opts.samples);
    if !(r > 0.0 && r < 1.0) {
        return Err(SeriesError::InvalidRadius(r).into());
    }
    if !m.is_power_of_two() {
        return Err(SeriesError::NotPowerOfTwo(m).into());
    }
    let a_vals = series::evaluate_on_circle(gen.coeffs(), r, m);
    let steps = ((x * opts.steps_per_unit as f64).ceil() as usize).max(8);
    let half = par.map(m / 2 + 1, |j| {
        let s = Complex64::from_polar(r, std::f64::consts::TAU * j as f64 / m as f64);
        evolve_pair(law, c, x, s, a_vals[j], steps).0
    });
    let ext = series::coefficients_from_samples(series::mirror(half, m), r, n_max)?;
    Ok(AbsorptionDistribution::new(x, ext, law.delta()))
}

/// Same extraction with `F_x` evaluated by [`evolve_f`] on any generator.
pub fn distribution_with<G: Generator + ?Sized>(
    gen: &G,
    law: &OffspringLaw,
    x: f64,
    n_max: usize,
    radius: f64,
    samples: usize,
    par: Parallelism,
) -> Result<AbsorptionDistribution, GwError> {
    let r = radius;
    let evaluated = par.map(samples / 2 + 1, |j| {
        evolve_f(gen, x, Complex64::from_polar(r, std::f64::consts::TAU * j as f64 / samples as f64))
    });
    let half = evaluated.into_iter().collect::<Result<Vec<_>, _>>()?;
    if !samples.is_power_of_two() {
        return Err(SeriesError::NotPowerOfTwo(samples).into());
    }
    let ext = series::coefficients_from_samples(series::mirror(half, samples), r, n_max)?;
    Ok(AbsorptionDistribution::new(x, ext, law.delta()))
}

/// Residuals of the two integral identities at one grid point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IdentityPoint {
    pub s: f64,
    pub f: f64,
    /// `|∫_s^{F} dr / a(r) - x|`.
    pub integral_defect: f64,
    /// Relative defect of `1 - F = e^{λx}(1-s) exp(-∫_s^{F} f*)`.
    pub exponential_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub x: f64,
    pub points: Vec<IdentityPoint>,
    /// Grid points within `1e-3` of `q'`, where `1/a` is not integrable numerically.
    pub excluded: Vec<f64>,
    pub max_integral_defect: f64,
    pub max_exponential_defect: f64,
}

/// Checks `∫_s^{F_x(s)} dr/a(r) = x` and the `f*` exponential identity on real `s`.
pub fn verify_identities<G: Generator + ?Sized>(
    gen: &G,
    law: &OffspringLaw,
    c: f64,
    x: f64,
    s_grid: &[f64],
) -> Result<IdentityReport, GwError> {
    let lambda = DriftParams::new(law, c).lambda().filter(|_| DriftParams::new(law, c).regime.extinct());
    let lambda = lambda.ok_or(GwError::Regime { c })?;
    let q = law.q_prime();
    let a_real = |r: f64| gen.a(Complex64::new(r, 0.0)).map(|z| z.re).unwrap_or(f64::NAN);
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for &s in s_grid {
        if s - q < 1e-3 || s >= 1.0 {
            excluded.push(s);
            continue;
        }
        let f = evolve_f(gen, x, Complex64::new(s, 0.0))?.re;
        let i1 = quad::integrate(|r| 1.0 / a_real(r), s, f, 1e-13)?;
        let i2 = quad::integrate(|r| lambda / a_real(r) + 1.0 / (1.0 - r), s, f, 1e-13)?;
        let rhs = (lambda * x).exp() * (1.0 - s) * (-i2).exp();
        points.push(IdentityPoint {
            s,
            f,
            integral_defect: (i1 - x).abs(),
            exponential_defect: ((1.0 - f) - rhs).abs() / (1.0 - f),
        });
    }
    let max_integral_defect = points.iter().map(|p| p.integral_defect).fold(0.0, f64::max);
    let max_exponential_defect = points.iter().map(|p| p.exponential_defect).fold(0.0, f64::max);
    Ok(IdentityReport { x, points, excluded, max_integral_defect, max_exponential_defect })
}
