//! Dormand–Prince 5(4) integration for small real systems.
//!
//! Complex equations are written as real systems of twice the size.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at x = {x}")]
    StepTooSmall { x: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("non-finite state at x = {x}")]
    NonFinite { x: f64 },
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand–Prince step from `(x, y)` with slope `k1 = f(x, y)`.
///
/// Returns the fifth-order solution, its slope (first stage of the next step) and the
/// embedded error estimate.
fn stages<const N: usize, F>(f: &mut F, x: f64, y: &[f64; N], k1: [f64; N], h: f64) -> ([f64; N], [f64; N], [f64; N])
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let mut k = [[0.0; N]; 7];
    k[0] = k1;
    for s in 1..7 {
        let mut yt = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    yt[i] += h * a * kj[i];
                }
            }
        }
        if s == 6 {
            k[6] = f(x + h, &yt);
            let mut err = [0.0; N];
            for (j, kj) in k.iter().enumerate() {
                for i in 0..N {
                    err[i] += h * E[j] * kj[i];
                }
            }
            return (yt, k[6], err);
        }
        k[s] = f(x + C[s] * h, &yt);
    }
    unreachable!()
}

/// A single fifth-order step without error control.
pub fn step<const N: usize, F>(f: &mut F, x: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(x, y);
    stages(f, x, y, k1, h).0
}

/// `n` equal steps from `x0` to `x1`.
pub fn integrate_fixed<const N: usize, F>(mut f: F, x0: f64, y0: [f64; N], x1: f64, n: usize) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let h = (x1 - x0) / n as f64;
    let mut y = y0;
    let mut k1 = f(x0, &y);
    for i in 0..n {
        let (yn, kn, _) = stages(&mut f, x0 + i as f64 * h, &y, k1, h);
        y = yn;
        k1 = kn;
    }
    y
}

/// Error-controlled integration settings.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Adaptive {
    pub fn new(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, h_init: None, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    /// Integrates from `x0` towards `x1` (either direction).
    ///
    /// `observe` sees every accepted node, including the first; returning `false` stops the
    /// integration there. The final node is returned.
    pub fn solve<const N: usize, F, O>(
        &self,
        mut f: F,
        x0: f64,
        y0: [f64; N],
        x1: f64,
        mut observe: O,
    ) -> Result<(f64, [f64; N]), OdeError>
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
        O: FnMut(f64, &[f64; N]) -> bool,
    {
        let span = x1 - x0;
        if !observe(x0, &y0) || span == 0.0 {
            return Ok((x0, y0));
        }
        let dir = span.signum();
        let mut h = self.h_init.unwrap_or(1e-3 * span.abs()).min(self.h_max).min(span.abs()) * dir;
        let (mut x, mut y) = (x0, y0);
        let mut k1 = f(x, &y);
        for _ in 0..self.max_steps {
            let remaining = x1 - x;
            let last = h.abs() >= remaining.abs();
            if last {
                h = remaining;
            }
            let (yn, kn, err) = stages(&mut f, x, &y, k1, h);
            let mut norm: f64 = 0.0;
            let mut finite = true;
            for i in 0..N {
                finite &= yn[i].is_finite();
                let scale = self.atol + self.rtol * y[i].abs().max(yn[i].abs());
                norm = norm.max((err[i] / scale).abs());
            }
            if finite && norm <= 1.0 {
                x = if last { x1 } else { x + h };
                y = yn;
                k1 = kn;
                if !observe(x, &y) || last {
                    return Ok((x, y));
                }
                let grow = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h * grow).abs().min(self.h_max) * dir;
            } else {
                if !finite && !y.iter().all(|v| v.is_finite()) {
                    return Err(OdeError::NonFinite { x });
                }
                let shrink = if finite { (0.9 * norm.powf(-0.2)).clamp(0.1, 0.9) } else { 0.25 };
                h *= shrink;
                if h.abs() < 1e-14 * x.abs().max(1.0) {
                    return Err(if finite { OdeError::StepTooSmall { x } } else { OdeError::NonFinite { x } });
                }
            }
        }
        Err(OdeError::TooManySteps(self.max_steps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let (x, y) = Adaptive::new(1e-12).solve(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 3.0, |_, _| true).unwrap();
        assert_eq!(x, 3.0);
        assert!((y[0] - (-3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_backwards() {
        let f = |_: f64, y: &[f64; 2]| [y[1], -y[0]];
        let (_, y) = Adaptive::new(1e-12).solve(f, 2.0, [2f64.sin(), 2f64.cos()], 0.0, |_, _| true).unwrap();
        assert!(y[0].abs() < 1e-11 && (y[1] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let f = |x: f64, _: &[f64; 1]| [x.cos()];
        let e1 = (integrate_fixed(f, 0.0, [0.0], 2.0, 10)[0] - 2f64.sin()).abs();
        let e2 = (integrate_fixed(f, 0.0, [0.0], 2.0, 20)[0] - 2f64.sin()).abs();
        assert!(e1 / e2 > 25.0, "{e1} {e2}");
    }

    #[test]
    fn observer_stops_early() {
        let mut nodes = 0;
        let (x, y) = Adaptive::new(1e-10)
            .solve(|_, _: &[f64; 1]| [1.0], 0.0, [0.0], 10.0, |_, y| {
                nodes += 1;
                y[0] < 1.0
            })
            .unwrap();
        assert!(y[0] >= 1.0 && x < 10.0 && nodes >= 2);
    }

    #[test]
    fn blowup_is_reported() {
        let r = Adaptive::new(1e-10).solve(|_, y: &[f64; 1]| [y[0] * y[0]], 0.0, [1.0], 2.0, |_, _| true);
        assert!(r.is_err());
    }
}
