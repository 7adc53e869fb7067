//! Reproduction laws and the drift-derived constants of the model.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("negative or non-finite offspring mass {p} at k = {k}")]
    NegativeMass { k: usize, p: f64 },
    #[error("offspring masses sum to {sum}, not 1")]
    SumNotOne { sum: f64 },
    #[error("offspring mass at 1 must be zero, got {p}")]
    OneChildMass { p: f64 },
    #[error("mean offspring {mean} does not exceed 1")]
    NotSupercritical { mean: f64 },
    #[error("scale parameters must be positive (beta = {beta}, sigma = {sigma})")]
    NonPositiveScale { beta: f64, sigma: f64 },
}

/// A finitely supported reproduction law with `P(L = 1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    p: Vec<f64>,
    m: f64,
    c0: f64,
    delta: usize,
    q_prime: f64,
    v: f64,
}

impl OffspringLaw {
    /// Validates `(k, p_k)` pairs and derives the law's constants.
    ///
    /// Repeated `k` accumulate. Masses are renormalised after the sum check.
    pub fn new<I>(pairs: I) -> Result<Self, LawError>
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut p: Vec<f64> = Vec::new();
        for (k, pk) in pairs {
            if !pk.is_finite() || pk < 0.0 {
                return Err(LawError::NegativeMass { k, p: pk });
            }
            if p.len() <= k {
                p.resize(k + 1, 0.0);
            }
            p[k] += pk;
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(LawError::SumNotOne { sum });
        }
        if p.len() > 1 && p[1] != 0.0 {
            return Err(LawError::OneChildMass { p: p[1] });
        }
        p.iter_mut().for_each(|x| *x /= sum);
        while p.last() == Some(&0.0) {
            p.pop();
        }
        let mean: f64 = p.iter().enumerate().map(|(k, &x)| k as f64 * x).sum();
        if mean <= 1.0 {
            return Err(LawError::NotSupercritical { mean });
        }
        let m = mean - 1.0;
        let delta = p
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(k, _)| k.abs_diff(1))
            .fold(0, gcd);
        let v = p.iter().enumerate().map(|(k, &x)| (k * k.saturating_sub(1)) as f64 * x).sum();
        let mut law = Self { p, m, c0: (2.0 * m).sqrt(), delta, q_prime: 0.0, v };
        law.q_prime = law.smallest_fixed_point();
        Ok(law)
    }

    /// The dyadic law `L = 2`.
    pub fn dyadic() -> Self {
        Self::new([(2, 1.0)]).expect("dyadic law is valid")
    }

    /// Masses `p_0, …, p_kmax` (dense).
    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    /// Support points with their masses.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.p.iter().copied().enumerate().filter(|&(_, x)| x > 0.0)
    }

    pub fn p(&self, k: usize) -> f64 {
        self.p.get(k).copied().unwrap_or(0.0)
    }

    pub fn max_offspring(&self) -> usize {
        self.p.len() - 1
    }

    /// `E[L] - 1`.
    pub fn m(&self) -> f64 {
        self.m
    }

    /// Critical drift `sqrt(2m)`.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// Span of `L - 1`.
    pub fn delta(&self) -> usize {
        self.delta
    }

    /// Smallest fixed point of the pgf in `[0, 1)`.
    pub fn q_prime(&self) -> f64 {
        self.q_prime
    }

    /// `E[L(L-1)]`.
    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn pgf(&self, s: Complex64) -> Complex64 {
        self.p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &pk| acc * s + pk)
    }

    pub fn pgf_real(&self, s: f64) -> f64 {
        self.p.iter().rev().fold(0.0, |acc, &pk| acc * s + pk)
    }

    pub fn pgf_derivative(&self, s: f64) -> f64 {
        self.p.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, &pk)| acc * s + k as f64 * pk)
    }

    /// Taylor coefficients of the pgf about `point`: `f(point + e) = Σ t_k e^k`.
    pub fn taylor_at(&self, point: f64) -> Vec<f64> {
        let n = self.p.len();
        (0..n)
            .map(|k| {
                let mut binom = 1.0;
                let mut acc = 0.0;
                for j in k..n {
                    if j > k {
                        binom = binom * j as f64 / (j - k) as f64;
                    }
                    acc += self.p[j] * binom * point.powi((j - k) as i32);
                }
                acc
            })
            .collect()
    }

    fn smallest_fixed_point(&self) -> f64 {
        if self.p(0) == 0.0 {
            return 0.0;
        }
        let h = |s: f64| self.pgf_real(s) - s;
        let (mut lo, mut hi) = (0.0, 1.0 - 1e-9);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut s = 0.5 * (lo + hi);
        for _ in 0..3 {
            let slope = self.pgf_derivative(s) - 1.0;
            if slope.abs() > 1e-3 {
                s -= h(s) / slope;
            }
        }
        s
    }

    /// Coefficients `g_k` of `G(u) = f(1-u) - (1-u)`, so `G(u) = Σ_{k≥1} g_k u^k`.
    pub fn tail_polynomial(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self
            .taylor_at(1.0)
            .into_iter()
            .enumerate()
            .map(|(k, t)| if k % 2 == 0 { t } else { -t })
            .collect();
        if g.len() < 2 {
            g.resize(2, 0.0);
        }
        g[0] = 0.0;
        g[1] += 1.0;
        g
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Serialize)]
struct LawView {
    probs: Vec<(usize, f64)>,
    m: f64,
    c0: f64,
    delta: usize,
    q_prime: f64,
    v: f64,
}

impl Serialize for OffspringLaw {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LawView {
            probs: self.support().collect(),
            m: self.m,
            c0: self.c0,
            delta: self.delta,
            q_prime: self.q_prime,
            v: self.v,
        }
        .serialize(serializer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `c = c0`.
    Critical,
    /// `c > c0`.
    SubcriticalSpeed,
    /// `|c| < c0`: survival has positive probability.
    SupercriticalSpeed,
    /// `c <= -c0`.
    NegativeDrift,
}

impl Regime {
    /// Absorbed counts are almost surely finite.
    pub fn extinct(self) -> bool {
        matches!(self, Regime::Critical | Regime::SubcriticalSpeed)
    }
}

/// Roots of `λ² - 2cλ + c0² = 0` and the regime they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftParams {
    pub c: f64,
    pub c0: f64,
    /// `sqrt(c² - c0²)`, when real.
    pub rho: Option<f64>,
    pub lambda_minus: Option<f64>,
    pub lambda_plus: Option<f64>,
    /// `λ̄ / λ`.
    pub d: Option<f64>,
    pub regime: Regime,
}

impl DriftParams {
    pub fn new(law: &OffspringLaw, c: f64) -> Self {
        let c0 = law.c0();
        let c0_sq = 2.0 * law.m();
        let regime = if (c - c0).abs() <= 1e-12 * c0 {
            Regime::Critical
        } else if c > c0 {
            Regime::SubcriticalSpeed
        } else if c > -c0 {
            Regime::SupercriticalSpeed
        } else {
            Regime::NegativeDrift
        };
        let (rho, lm, lp) = match regime {
            Regime::Critical => (Some(0.0), Some(c), Some(c)),
            Regime::SupercriticalSpeed => (None, None, None),
            Regime::SubcriticalSpeed => {
                let rho = ((c - c0) * (c + c0)).sqrt();
                (Some(rho), Some(c0_sq / (c + rho)), Some(c + rho))
            }
            Regime::NegativeDrift => {
                let rho = ((c - c0) * (c + c0)).sqrt();
                (Some(rho), Some(c - rho), Some(c0_sq / (c - rho)))
            }
        };
        let d = match (lm, lp) {
            (Some(a), Some(b)) => Some(b / a),
            _ => None,
        };
        Self { c, c0, rho, lambda_minus: lm, lambda_plus: lp, d, regime }
    }

    /// `λ_c`, the mean growth rate `log E[Z_x] / x`, for extinct regimes.
    pub fn lambda(&self) -> Option<f64> {
        self.lambda_minus
    }
}

/// Maps the model with branching rate `beta` and diffusivity `sigma` onto the unit model.
///
/// Returns the unit-model drift and the factor multiplying the unit-model rates.
pub fn rescale(beta: f64, c: f64, sigma: f64) -> Result<(f64, f64), LawError> {
    if !(beta > 0.0 && sigma > 0.0) {
        return Err(LawError::NonPositiveScale { beta, sigma });
    }
    let sb = beta.sqrt();
    Ok((c / (sigma * sb), sb / sigma))
}
