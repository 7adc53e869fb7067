//! Asymptotic right-hand sides, constant fits and convergence diagnostics.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::gw::{least_squares, AbsorptionDistribution};
use crate::law::{DriftParams, OffspringLaw, Regime};
use crate::series::fmt_real;
use crate::sim::{wilson, EmpiricalDist};
use crate::wave::{WaveError, WaveSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("requires the {expected} regime, found {found:?}")]
    RegimeMismatch { expected: &'static str, found: Regime },
    #[error("the subcritical density of Z_x needs a fitted constant")]
    MissingConstant,
    #[error("index must be at least 2, got {0}")]
    IndexTooSmall(usize),
    #[error("window [{lo}, {hi}] holds too few usable points")]
    WindowTooShort { lo: usize, hi: usize },
    #[error("rate q_{n} = {q} is too small to divide by")]
    DivisionBySmall { n: usize, q: f64 },
    #[error("second difference at s = {s} is below rounding level")]
    StepTooSmall { s: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

type Result<T> = std::result::Result<T, AsymptoticsError>;

fn require(law: &OffspringLaw, c: f64, regime: Regime) -> Result<DriftParams> {
    let p = DriftParams::new(law, c);
    if p.regime != regime {
        let expected = match regime {
            Regime::Critical => "critical",
            _ => "subcritical-speed",
        };
        return Err(AsymptoticsError::RegimeMismatch { expected, found: p.regime });
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsKind {
    /// `Σ_{k>=n} q_k` (critical).
    TailRates,
    /// `P(Z_x > n)` (critical).
    TailProb,
    /// `q_{δn+1}`.
    DensityRates,
    /// `P(Z_x = δn+1)`.
    DensityProb,
}

/// Multiplier turning rate asymptotics into those of `Z_x`.
pub fn x_factor(law: &OffspringLaw, c: f64, x: f64) -> Result<f64> {
    let p = DriftParams::new(law, c);
    match (p.regime, p.lambda_minus, p.lambda_plus) {
        (Regime::Critical, _, _) => Ok(x * (law.c0() * x).exp()),
        (Regime::SubcriticalSpeed, Some(lo), Some(hi)) => Ok(((hi * x).exp() - (lo * x).exp()) / (hi - lo)),
        _ => Err(AsymptoticsError::RegimeMismatch { expected: "critical or subcritical-speed", found: p.regime }),
    }
}

/// The asymptotic equivalent of `kind` at index `n`.
///
/// `k` is the fitted constant of the subcritical density law.
pub fn theorem_rhs(kind: RhsKind, n: usize, x: f64, law: &OffspringLaw, c: f64, k: Option<f64>) -> Result<f64> {
    if n < 2 {
        return Err(AsymptoticsError::IndexTooSmall(n));
    }
    let nf = n as f64;
    let log2 = nf.ln().powi(2);
    let c0 = law.c0();
    let regime = DriftParams::new(law, c).regime;
    match kind {
        RhsKind::TailRates => {
            require(law, c, Regime::Critical)?;
            Ok(c0 / (nf * log2))
        }
        RhsKind::TailProb => {
            require(law, c, Regime::Critical)?;
            Ok(c0 / (nf * log2) * x_factor(law, c, x)?)
        }
        RhsKind::DensityRates | RhsKind::DensityProb => {
            let rates = match regime {
                Regime::Critical => c0 / (law.delta() as f64 * nf * nf * log2),
                Regime::SubcriticalSpeed => {
                    let d = DriftParams::new(law, c).d.expect("subcritical d");
                    k.ok_or(AsymptoticsError::MissingConstant)? / nf.powf(d + 1.0)
                }
                found => return Err(AsymptoticsError::RegimeMismatch { expected: "critical or subcritical-speed", found }),
            };
            match kind {
                RhsKind::DensityRates => Ok(rates),
                _ => Ok(rates * x_factor(law, c, x)?),
            }
        }
    }
}

/// Fit of `q_{δn+1} ≈ K n^{-(d+1)}`.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticFit {
    pub exponent_hat: f64,
    pub constant_hat: f64,
    /// Lattice indices `n` of the window.
    pub window: (usize, usize),
    /// `|K_hi - K_lo| / K_hi` for the raw products at the window ends.
    pub drift_diag: f64,
    pub method: &'static str,
}

/// Fits the subcritical density law on the last decade of lattice indices.
pub fn fit_constant(q: &[f64], law: &OffspringLaw, c: f64) -> Result<AsymptoticFit> {
    let p = require(law, c, Regime::SubcriticalSpeed)?;
    let d = p.d.expect("subcritical d");
    let delta = law.delta();
    let hi = q.len().saturating_sub(2) / delta;
    let lo = hi / 10;
    let lattice = |n: usize| q[delta * n + 1];
    let pts: Vec<(f64, f64)> = (lo.max(1)..=hi)
        .filter(|&n| lattice(n) > 0.0)
        .map(|n| ((n as f64).ln(), lattice(n).ln()))
        .collect();
    if lo < 2 || pts.len() < 10 {
        return Err(AsymptoticsError::WindowTooShort { lo, hi });
    }
    let (exponent_hat, _) = least_squares(&pts);
    let product = |n: usize| lattice(n) * (n as f64).powf(d + 1.0);
    // Richardson in 1/n: 2 K(2n) - K(n) removes a first-order correction.
    let mut extrapolated: Vec<f64> = (lo..=hi / 2).map(|n| 2.0 * product(2 * n) - product(n)).collect();
    extrapolated.sort_by(f64::total_cmp);
    let constant_hat = extrapolated[extrapolated.len() / 2];
    let drift_diag = ((product(hi) - product(lo)) / product(hi)).abs();
    Ok(AsymptoticFit { exponent_hat, constant_hat, window: (lo, hi), drift_diag, method: "loglog_last_decade+richardson_median" })
}

/// `P(Z_x = δn+1) / q_{δn+1}` along the lattice.
#[derive(Debug, Clone, Serialize)]
pub struct RatioDiagnostic {
    pub x: f64,
    pub target: f64,
    /// `(n, r_n)` for lattice indices `n >= 1`.
    pub ratios: Vec<(usize, f64)>,
}

impl RatioDiagnostic {
    pub fn at(&self, n: usize) -> Option<f64> {
        self.ratios.iter().find(|r| r.0 == n).map(|r| r.1)
    }

    /// `|r_n / target - 1|`.
    pub fn relative_error(&self, n: usize) -> Option<f64> {
        self.at(n).map(|r| (r / self.target - 1.0).abs())
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,ratio")?;
        for (n, r) in &self.ratios {
            writeln!(out, "{n},{}", fmt_real(*r))?;
        }
        Ok(())
    }
}

/// Ratio of the two independently computed densities; their common constant cancels.
pub fn ratio_diagnostic(dist: &AbsorptionDistribution, q: &[f64], x: f64, law: &OffspringLaw, c: f64) -> Result<RatioDiagnostic> {
    let target = x_factor(law, c, x)?;
    let delta = law.delta();
    let top = (dist.probs.len().min(q.len()) - 1) / delta;
    let ratios = (1..=top)
        .map(|n| {
            let i = delta * n + 1;
            if i >= dist.probs.len().min(q.len()) {
                return Ok(None);
            }
            if q[i].abs() < 1e-300 {
                return Err(AsymptoticsError::DivisionBySmall { n: i, q: q[i] });
            }
            Ok(Some((n, dist.probs[i] / q[i])))
        })
        .filter_map(Result::transpose)
        .collect::<Result<Vec<_>>>()?;
    Ok(RatioDiagnostic { x, target, ratios })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvaturePoint {
    pub s: f64,
    /// `a''(1-s) s (log 1/s)² / c0` from the wave's analytic second derivative.
    pub ratio: f64,
    /// The same from second differences with step `s/100`.
    pub fd_ratio: f64,
    /// `[a(1-s) - three-term expansion] / (s / (log 1/s)²)`.
    pub defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub points: Vec<CurvaturePoint>,
    /// Largest `|defect|`.
    pub max_defect: f64,
}

/// Curvature of `a` at `1 - s` on a critical wave.
pub fn curvature_check(wave: &WaveSolution, s_grid: &[f64]) -> Result<CurvatureReport> {
    let law = wave.law();
    require(law, wave.c(), Regime::Critical)?;
    let c0 = law.c0();
    let points = s_grid
        .iter()
        .map(|&s| {
            let big_l = (1.0 / s).ln();
            let scale = s * big_l * big_l / c0;
            let ratio = wave.a_second_one_minus(s)? * scale;
            let h = s / 100.0;
            let (gm, g0, gp) = (wave.a_one_minus(s - h)?, wave.a_one_minus(s)?, wave.a_one_minus(s + h)?);
            let second = gp - 2.0 * g0 + gm;
            if second.abs() < 1e3 * f64::EPSILON * g0.abs() {
                return Err(AsymptoticsError::StepTooSmall { s });
            }
            let fd_ratio = second / (h * h) * scale;
            let expansion = -c0 * s + c0 * s / big_l - c0 * s * big_l.ln() / (big_l * big_l);
            let defect = (g0 - expansion) / (s / (big_l * big_l));
            Ok(CurvaturePoint { s, ratio, fd_ratio, defect })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_defect = points.iter().map(|p| p.defect.abs()).fold(0.0, f64::max);
    Ok(CurvatureReport { points, max_defect })
}

/// `F_x''(1-s) s (log 1/s)² / (c0 x e^{c0 x})` on a critical wave.
///
/// Uses `F_x'' = a(F)(a'(F) - a'(s)) / a(s)²`, which follows from `F_x' a = a∘F_x`.
pub fn f_curvature_ratio(wave: &WaveSolution, x: f64, s: f64) -> Result<f64> {
    let law = wave.law();
    require(law, wave.c(), Regime::Critical)?;
    let c0 = law.c0();
    let u_f = 1.0 - wave.f_one_minus(x, s)?;
    let (a_s, ap_s) = (wave.a_one_minus(s)?, wave.a_prime_one_minus(s)?);
    let (a_f, ap_f) = (wave.a_one_minus(u_f)?, wave.a_prime_one_minus(u_f)?);
    let second = a_f * (ap_f - ap_s) / (a_s * a_s);
    let big_l = (1.0 / s).ln();
    Ok(second * s * big_l * big_l / (c0 * x * (c0 * x).exp()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailPoint {
    pub n: u64,
    pub exceedances: u64,
    /// `n^d P̂(Z > n)`.
    pub statistic: f64,
    /// Simultaneous 95% lower confidence bound of the statistic.
    pub lower: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailBound {
    pub d: f64,
    pub points: Vec<TailPoint>,
    pub min_statistic: f64,
    /// Minimum of the lower bounds; positive confirms the bound's shape.
    pub lower_bound: f64,
    /// Log-log slope of the statistic against `n`.
    pub slope: f64,
    /// The statistic trends away from a constant; `d` looks misspecified.
    pub slope_alarm: bool,
}

/// Least number of replicas the tail check accepts.
pub const MIN_TAIL_REPLICAS: u64 = 100_000;

/// Windowed minimum of `n^d P̂(Z > n)` over log-spaced `n` in `[n_lo, n_hi]`.
///
/// Lower bounds are one-sided Wilson bounds with a Bonferroni correction across the grid.
pub fn tail_lower_bound_check(emp: &EmpiricalDist, d: f64, n_lo: u64, n_hi: u64) -> Result<TailBound> {
    if emp.observed() < MIN_TAIL_REPLICAS {
        return Err(AsymptoticsError::InsufficientData(format!("{} replicas, need {MIN_TAIL_REPLICAS}", emp.observed())));
    }
    if !(n_lo >= 1 && n_lo < n_hi) {
        return Err(AsymptoticsError::InsufficientData(format!("empty window [{n_lo}, {n_hi}]")));
    }
    let per_decade = 6.0;
    let k = ((n_hi as f64 / n_lo as f64).log10() * per_decade).round().max(1.0) as usize;
    let mut grid: Vec<u64> = (0..=k)
        .map(|i| (n_lo as f64 * (n_hi as f64 / n_lo as f64).powf(i as f64 / k as f64)).round() as u64)
        .collect();
    grid.dedup();
    let z = Normal::standard().inverse_cdf(1.0 - 0.05 / grid.len() as f64);
    let total = emp.observed();
    let points = grid
        .iter()
        .map(|&n| {
            let hits = emp.exceedances(n);
            if hits == 0 {
                return Err(AsymptoticsError::InsufficientData(format!("no exceedances of n = {n}")));
            }
            let w = (n as f64).powf(d);
            Ok(TailPoint { n, exceedances: hits, statistic: w * hits as f64 / total as f64, lower: w * wilson(hits, total, z).0 })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_statistic = points.iter().map(|p| p.statistic).fold(f64::INFINITY, f64::min);
    let lower_bound = points.iter().map(|p| p.lower).fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = points.iter().map(|p| ((p.n as f64).ln(), p.statistic.ln())).collect();
    let (slope, _) = least_squares(&pts);
    Ok(TailBound { d, points, min_statistic, lower_bound, slope, slope_alarm: slope.abs() > 0.5 })
}

/// `n (log n)² Σ_{k>n} q_k / c0` from precomputed tail sums.
pub fn tail_rate_ratio(tail_sums: &[f64], n: usize, law: &OffspringLaw) -> f64 {
    let nf = n as f64;
    nf * nf.ln().powi(2) * tail_sums[n] / law.c0()
}
