//! Truncated power series about 0 and coefficient recovery by circle sampling.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::par::Parallelism;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("sampling radius {0} must lie in (0, 1)")]
    InvalidRadius(f64),
    #[error("sample count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("sample count {m} must exceed the largest requested index {n_max}")]
    TooFewSamples { m: usize, n_max: usize },
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        iter.into_iter().for_each(|x| acc.add(x));
        acc
    }
}

/// Coefficients `a_0, …, a_N` of a power series, exact modulo `s^{N+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSeries {
    coeffs: Vec<f64>,
}

impl TruncatedSeries {
    /// Panics on an empty coefficient vector.
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a series needs at least one coefficient");
        Self { coeffs }
    }

    pub fn one(order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = 1.0;
        Self::new(c)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Horner evaluation with the heuristic tail bound `|a_N| |s|^{N+1} / (1 - |s|)`.
    pub fn eval(&self, s: Complex64) -> (Complex64, f64) {
        let value = self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c);
        let r = s.norm();
        let bound = if r < 1.0 {
            self.coeffs[self.order()].abs() * r.powi(self.order() as i32 + 1) / (1.0 - r)
        } else {
            f64::INFINITY
        };
        (value, bound)
    }

    pub fn eval_real(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    /// Termwise derivative; the order drops by one.
    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::new(vec![0.0]);
        }
        Self::new(self.coeffs.iter().enumerate().skip(1).map(|(n, &c)| n as f64 * c).collect())
    }

    /// Cauchy product truncated at the smaller order.
    pub fn mul(&self, other: &Self, par: Parallelism) -> Self {
        ser_mul(self, other, par)
    }

    /// Writes `n,<column>` rows in 17-digit scientific notation.
    pub fn write_csv<W: Write>(&self, mut out: W, column: &str) -> std::io::Result<()> {
        writeln!(out, "n,{column}")?;
        for (n, c) in self.coeffs.iter().enumerate() {
            writeln!(out, "{n},{}", fmt_real(*c))?;
        }
        Ok(())
    }
}

/// Round-trip exact formatting used in every CSV artifact.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Compensated dot product of `a[i]` and `b[n - i]` for `i` in `range`.
pub(crate) fn conv_term(a: &[f64], b: &[f64], n: usize, range: std::ops::Range<usize>) -> f64 {
    range.map(|i| a[i] * b[n - i]).collect::<CompensatedSum>().value()
}

pub fn ser_mul(a: &TruncatedSeries, b: &TruncatedSeries, par: Parallelism) -> TruncatedSeries {
    let order = a.order().min(b.order());
    let (x, y) = (a.coeffs(), b.coeffs());
    let coeffs = par.map(order + 1, |n| conv_term(x, y, n, 0..n + 1));
    TruncatedSeries::new(coeffs)
}

/// Coefficients recovered from samples on a circle.
#[derive(Debug, Clone)]
pub struct CauchyCoefficients {
    pub coeffs: Vec<f64>,
    pub radius: f64,
    pub samples: usize,
    /// Largest imaginary part among the returned coefficients, relative to the largest modulus.
    pub imag_residue: f64,
    /// Top frequency bin carries more than `1e-12` of the peak: coefficients beyond the
    /// sample count are folding back.
    pub alias_warning: bool,
}

fn check_circle(r: f64, m: usize, n_max: usize) -> Result<(), SeriesError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(SeriesError::InvalidRadius(r));
    }
    if !m.is_power_of_two() {
        return Err(SeriesError::NotPowerOfTwo(m));
    }
    if n_max >= m {
        return Err(SeriesError::TooFewSamples { m, n_max });
    }
    Ok(())
}

/// Smallest power of two that is at least `8 (n_max + 1)`.
pub fn default_sample_count(n_max: usize) -> usize {
    (8 * (n_max + 1)).next_power_of_two()
}

/// Sample points `r e^{2πij/M}`.
pub fn circle_points(r: f64, m: usize) -> impl Iterator<Item = Complex64> {
    (0..m).map(move |j| Complex64::from_polar(r, std::f64::consts::TAU * j as f64 / m as f64))
}

/// Recovers `c_0..=c_{n_max}` of a real-coefficient analytic function on `|s| <= r`.
///
/// Only the upper half circle is evaluated; the rest follows from `f(conj s) = conj f(s)`.
pub fn cauchy_extract<F>(
    f: F,
    r: f64,
    m: usize,
    n_max: usize,
    par: Parallelism,
) -> Result<CauchyCoefficients, SeriesError>
where
    F: Fn(Complex64) -> Complex64 + Sync + Send,
{
    check_circle(r, m, n_max)?;
    let half = par.map(m / 2 + 1, |j| {
        f(Complex64::from_polar(r, std::f64::consts::TAU * j as f64 / m as f64))
    });
    coefficients_from_samples(mirror(half, m), r, n_max)
}

/// Same as [`cauchy_extract`] but samples the full circle, so the imaginary residue is a
/// genuine diagnostic of how far the input is from having real coefficients.
pub fn cauchy_extract_full<F>(
    f: F,
    r: f64,
    m: usize,
    n_max: usize,
    par: Parallelism,
) -> Result<CauchyCoefficients, SeriesError>
where
    F: Fn(Complex64) -> Complex64 + Sync + Send,
{
    check_circle(r, m, n_max)?;
    let samples = par.map(m, |j| {
        f(Complex64::from_polar(r, std::f64::consts::TAU * j as f64 / m as f64))
    });
    coefficients_from_samples(samples, r, n_max)
}

/// Extends samples at `j = 0..=M/2` to the whole circle by conjugate symmetry.
pub fn mirror(mut half: Vec<Complex64>, m: usize) -> Vec<Complex64> {
    debug_assert_eq!(half.len(), m / 2 + 1);
    for j in m / 2 + 1..m {
        let v = half[m - j].conj();
        half.push(v);
    }
    half
}

/// Coefficient recovery from the `M` samples `f(r e^{2πij/M})`.
pub fn coefficients_from_samples(
    mut samples: Vec<Complex64>,
    r: f64,
    n_max: usize,
) -> Result<CauchyCoefficients, SeriesError> {
    let m = samples.len();
    check_circle(r, m, n_max)?;
    FftPlanner::new().plan_fft_forward(m).process(&mut samples);
    let scale = 1.0 / m as f64;
    let peak_raw = samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let alias_warning = samples[m - 1].norm() > 1e-12 * peak_raw;
    let mut inv_rn = 1.0;
    let mut coeffs = Vec::with_capacity(n_max + 1);
    let mut max_im: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for z in samples.iter().take(n_max + 1) {
        let c = z * (scale * inv_rn);
        coeffs.push(c.re);
        max_im = max_im.max(c.im.abs());
        max_abs = max_abs.max(c.norm());
        inv_rn /= r;
    }
    let imag_residue = if max_abs > 0.0 { max_im / max_abs } else { 0.0 };
    Ok(CauchyCoefficients { coeffs, radius: r, samples: m, imag_residue, alias_warning })
}

/// Values `Σ_n c_n (r ω^j)^n` at the `M` circle points, by one inverse transform.
///
/// Coefficients beyond `M` fold onto their residue class.
pub fn evaluate_on_circle(coeffs: &[f64], r: f64, m: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut rn = 1.0;
    for (n, &c) in coeffs.iter().enumerate() {
        buf[n % m] += c * rn;
        rn *= r;
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn product_of_conjugates() {
        let a = TruncatedSeries::new(vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        let b = TruncatedSeries::new(vec![1.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ser_mul(&a, &b, Parallelism::Sequential).coeffs(), &[1.0, 0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_is_neutral() {
        let a = TruncatedSeries::new(vec![0.3, -1.5, 2.0, 7.0]);
        assert_eq!(a.mul(&TruncatedSeries::one(3), Parallelism::Available), a);
    }

    #[test]
    fn product_truncates_to_smaller_order() {
        let a = TruncatedSeries::new(vec![1.0; 6]);
        let b = TruncatedSeries::new(vec![1.0; 3]);
        assert_eq!(ser_mul(&a, &b, Parallelism::Sequential).coeffs(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn geometric_evaluation() {
        let a = TruncatedSeries::new((0..200).map(|n| 0.5f64.powi(n)).collect());
        let (v, bound) = a.eval(Complex64::new(0.5, 0.0));
        assert!((v.re - 4.0 / 3.0).abs() < 1e-14);
        assert!(bound < 1e-100);
        assert_eq!(a.eval(Complex64::new(0.0, 0.0)).0.re, 1.0);
    }

    #[test]
    fn extract_monomial() {
        let c = cauchy_extract(|s| s * s, 0.5, 16, 15, Parallelism::Sequential).unwrap();
        for (n, &x) in c.coeffs.iter().enumerate() {
            let want = if n == 2 { 1.0 } else { 0.0 };
            assert!((x - want).abs() < 1e-12, "n={n} x={x}");
        }
        assert!(!c.alias_warning);
    }

    #[test]
    fn extract_geometric() {
        let f = |s: Complex64| 1.0 / (1.0 - s / 2.0);
        let c = cauchy_extract(f, 0.9, 1 << 12, 100, Parallelism::Available).unwrap();
        for (n, &x) in c.coeffs.iter().enumerate() {
            assert!((x - 0.5f64.powi(n as i32)).abs() < 1e-10);
        }
        let full = cauchy_extract_full(f, 0.9, 1 << 12, 100, Parallelism::Available).unwrap();
        assert!(full.imag_residue < 1e-9);
        assert!(!full.alias_warning);
    }

    #[test]
    fn alias_warning_fires_when_undersampled() {
        let f = |s: Complex64| 1.0 / (1.0 - 0.99 * s);
        let c = cauchy_extract(f, 0.99, 16, 8, Parallelism::Sequential).unwrap();
        assert!(c.alias_warning);
    }

    #[test]
    fn rejects_bad_circles() {
        let f = |s: Complex64| s;
        assert!(matches!(cauchy_extract(f, 1.0, 16, 3, Parallelism::Sequential), Err(SeriesError::InvalidRadius(_))));
        assert!(matches!(cauchy_extract(f, 0.5, 12, 3, Parallelism::Sequential), Err(SeriesError::NotPowerOfTwo(12))));
        assert!(matches!(cauchy_extract(f, 0.5, 16, 16, Parallelism::Sequential), Err(SeriesError::TooFewSamples { .. })));
    }

    #[test]
    fn circle_evaluation_matches_horner() {
        let a = TruncatedSeries::new(vec![0.1, -0.4, 0.25, 0.05, 0.01]);
        let vals = evaluate_on_circle(a.coeffs(), 0.8, 32);
        for (z, v) in circle_points(0.8, 32).zip(vals) {
            assert!((a.eval(z).0 - v).norm() < 1e-15);
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        TruncatedSeries::new(vec![0.5, -1.0]).write_csv(&mut buf, "q").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "n,q\n0,5.0000000000000000e-1\n1,-1.0000000000000000e0\n");
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(xs.iter().copied().collect::<CompensatedSum>().value(), 2.0);
    }

    fn coeffs(n: usize) -> impl Strategy<Value = TruncatedSeries> {
        prop::collection::vec(-1.0f64..1.0, n).prop_map(TruncatedSeries::new)
    }

    proptest! {
        #[test]
        fn mul_commutes_and_associates(a in coeffs(24), b in coeffs(24), c in coeffs(24)) {
            let p = Parallelism::Sequential;
            let ab = ser_mul(&a, &b, p);
            let ba = ser_mul(&b, &a, p);
            for (x, y) in ab.coeffs().iter().zip(ba.coeffs()) {
                prop_assert!((x - y).abs() < 1e-14);
            }
            let l = ser_mul(&ab, &c, p);
            let r = ser_mul(&a, &ser_mul(&b, &c, p), p);
            for (x, y) in l.coeffs().iter().zip(r.coeffs()) {
                prop_assert!((x - y).abs() < 1e-14 * 24.0);
            }
        }

        #[test]
        fn extraction_inverts_evaluation(a in coeffs(5), r in 0.1f64..0.99) {
            let got = cauchy_extract(|s| a.eval(s).0, r, 64, 4, Parallelism::Sequential).unwrap();
            for (x, y) in got.coeffs.iter().zip(a.coeffs()) {
                prop_assert!((x - y).abs() < 1e-12, "{} vs {}", x, y);
            }
        }

        #[test]
        fn extraction_inverts_evaluation_high_degree(a in coeffs(20), r in 0.7f64..0.99) {
            let got = cauchy_extract(|s| a.eval(s).0, r, 64, 19, Parallelism::Sequential).unwrap();
            for (x, y) in got.coeffs.iter().zip(a.coeffs()) {
                prop_assert!((x - y).abs() < 1e-12, "{} vs {}", x, y);
            }
        }

        #[test]
        fn extraction_is_radius_independent(r1 in 0.5f64..0.9, r2 in 0.5f64..0.9) {
            let f = |s: Complex64| (1.0 - s * 0.5).ln() / (1.0 - s * s * 0.25);
            let a = cauchy_extract(f, r1, 256, 12, Parallelism::Sequential).unwrap();
            let b = cauchy_extract(f, r2, 256, 12, Parallelism::Sequential).unwrap();
            for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }

        #[test]
        fn mul_is_parallel_deterministic(a in coeffs(64), b in coeffs(64)) {
            prop_assert_eq!(ser_mul(&a, &b, Parallelism::Sequential), ser_mul(&a, &b, Parallelism::Available));
        }
    }
}
