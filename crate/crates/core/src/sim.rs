//! Event-driven Monte Carlo of branching Brownian motion killed at one or two barriers.
//!
//! Replica `r` of a run with seed `s` draws from `ChaCha8Rng::seed_from_u64(s)` switched to
//! stream `r`. Replicas are grouped in fixed blocks whose tallies are merged in block
//! order, so results do not depend on the number of threads.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::law::{DriftParams, OffspringLaw};
use crate::par::Parallelism;
use crate::quad::{self, QuadError};
use crate::series::fmt_real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("bridge duration must be positive, got {t}")]
    NonPositiveDuration { t: f64 },
    #[error("invalid barrier: {0}")]
    InvalidBarrier(String),
    #[error("drift {c} is below the critical drift {c0}; the absorbed count is not almost surely finite")]
    DriftBelowCritical { c: f64, c0: f64 },
    #[error("caps and step size must be positive")]
    InvalidCaps,
    #[error("at least one replica is required")]
    NoReplicas,
    #[error("interval is too wide for finite moments")]
    InfiniteMoments,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Probability that a Brownian bridge from `y0` to `yt` over time `t` reaches `x` from below.
pub fn bridge_crossing_prob(y0: f64, yt: f64, t: f64, x: f64) -> Result<f64, SimError> {
    if !(t > 0.0) {
        return Err(SimError::NonPositiveDuration { t });
    }
    Ok(crossing(y0, yt, t, x))
}

#[inline]
fn crossing(y0: f64, yt: f64, t: f64, x: f64) -> f64 {
    if y0 >= x || yt >= x {
        1.0
    } else {
        (-2.0 * (x - y0) * (x - yt) / t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Barrier {
    /// Killing at `x > 0`, start at 0.
    Single { x: f64 },
    /// Killing at `a` and `b`, start at `y`.
    Interval { a: f64, b: f64, y: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub law: OffspringLaw,
    pub c: f64,
    pub barrier: Barrier,
    pub seed: u64,
    /// Particles processed per replica before the replica is censored.
    pub max_events: u64,
    /// Particles pending at once before the replica is censored.
    pub max_population: usize,
    /// Substep for the two-barrier walk.
    pub dt: f64,
}

pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;
pub const DEFAULT_MAX_POPULATION: usize = 1_000_000;
pub const DEFAULT_DT: f64 = 1e-3;

impl SimConfig {
    pub fn single(law: OffspringLaw, c: f64, x: f64, seed: u64) -> Self {
        Self::with_barrier(law, c, Barrier::Single { x }, seed)
    }

    pub fn interval(law: OffspringLaw, c: f64, a: f64, b: f64, y: f64, seed: u64) -> Self {
        Self::with_barrier(law, c, Barrier::Interval { a, b, y }, seed)
    }

    fn with_barrier(law: OffspringLaw, c: f64, barrier: Barrier, seed: u64) -> Self {
        Self {
            law,
            c,
            barrier,
            seed,
            max_events: DEFAULT_MAX_EVENTS,
            max_population: DEFAULT_MAX_POPULATION,
            dt: DEFAULT_DT,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_events == 0 || self.max_population == 0 || !(self.dt > 0.0) {
            return Err(SimError::InvalidCaps);
        }
        match self.barrier {
            Barrier::Single { x } => {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(SimError::InvalidBarrier(format!("x = {x} must be positive")));
                }
                let p = DriftParams::new(&self.law, self.c);
                if !p.regime.extinct() {
                    return Err(SimError::DriftBelowCritical { c: self.c, c0: p.c0 });
                }
            }
            Barrier::Interval { a, b, y } => {
                if !(a < y && y < b && a.is_finite() && b.is_finite()) {
                    return Err(SimError::InvalidBarrier(format!("need a < y < b, got a = {a}, y = {y}, b = {b}")));
                }
            }
        }
        Ok(())
    }

    /// The random stream of one replica.
    pub fn replica_rng(&self, replica: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replica);
        rng
    }
}

/// Result of one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome<T> {
    Observed(T),
    /// A cap was hit; the replica carries no count.
    Censored,
}

/// Counts at the lower and upper barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExitCounts {
    pub lower: u64,
    pub upper: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

/// Deepest refinement of a substep in which both barriers fired.
const MAX_REFINE: u32 = 8;

/// A validated configuration with its offspring sampler.
pub struct Simulator {
    cfg: SimConfig,
    children: Vec<usize>,
    offspring: WeightedIndex<f64>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let (children, weights): (Vec<usize>, Vec<f64>) = cfg.law.support().unzip();
        let offspring = WeightedIndex::new(weights).expect("validated law has positive mass");
        Ok(Self { cfg, children, offspring })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn brood<R: Rng>(&self, rng: &mut R) -> usize {
        self.children[self.offspring.sample(rng)]
    }

    /// One replica of `Z_x`; lifetimes, endpoints and crossings are exact draws.
    pub fn absorbed<R: Rng>(&self, rng: &mut R) -> Outcome<u64> {
        let Barrier::Single { x } = self.cfg.barrier else {
            panic!("single-barrier replica requested for an interval configuration");
        };
        let c = self.cfg.c;
        let mut stack = vec![0.0_f64];
        let (mut z, mut events) = (0u64, 0u64);
        while let Some(y) = stack.pop() {
            events += 1;
            if events > self.cfg.max_events {
                return Outcome::Censored;
            }
            let t: f64 = Exp1.sample(rng);
            let g: f64 = StandardNormal.sample(rng);
            let end = y + c * t + t.sqrt() * g;
            if rng.random::<f64>() < crossing(y, end, t, x) {
                z += 1;
                continue;
            }
            let k = self.brood(rng);
            if stack.len() + k > self.cfg.max_population {
                return Outcome::Censored;
            }
            stack.extend(std::iter::repeat_n(end, k));
        }
        Outcome::Observed(z)
    }

    fn interval(&self) -> (f64, f64, f64) {
        match self.cfg.barrier {
            Barrier::Interval { a, b, y } => (a, b, y),
            Barrier::Single { .. } => panic!("interval replica requested for a single-barrier configuration"),
        }
    }

    /// Crossing probabilities of the bridge `y -> end` over `h` at `a` and `b`.
    fn probs(&self, y: f64, end: f64, h: f64) -> (f64, f64) {
        let (a, b, _) = self.interval();
        (crossing(-y, -end, h, -a), crossing(y, end, h, b))
    }

    /// Exit decision for one substep; ties are resampled on a four-way split of the bridge.
    fn exit_in_step<R: Rng>(&self, y: f64, end: f64, h: f64, rng: &mut R, depth: u32) -> Option<Side> {
        let (pa, pb) = self.probs(y, end, h);
        let fa = rng.random::<f64>() < pa;
        let fb = rng.random::<f64>() < pb;
        match (fa, fb) {
            (false, false) => None,
            (true, false) => Some(Side::Lower),
            (false, true) => Some(Side::Upper),
            (true, true) if depth >= MAX_REFINE => Some(if pa >= pb { Side::Lower } else { Side::Upper }),
            (true, true) => self.refine(y, end, h, rng, depth + 1),
        }
    }

    fn refine<R: Rng>(&self, y: f64, end: f64, h: f64, rng: &mut R, depth: u32) -> Option<Side> {
        let piece = h / 4.0;
        let mut cur = y;
        for i in 0..4 {
            let remaining = h - piece * i as f64;
            let next = if i == 3 {
                end
            } else {
                let mean = cur + (end - cur) * piece / remaining;
                let var = piece * (remaining - piece) / remaining;
                let g: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * g
            };
            if let Some(side) = self.exit_in_step(cur, next, piece, rng, depth) {
                return Some(side);
            }
            cur = next;
        }
        None
    }

    /// One replica of the exit counts from `(a, b)` with substep `dt`.
    pub fn two_barrier<R: Rng>(&self, rng: &mut R) -> Outcome<ExitCounts> {
        let (_, _, y_start) = self.interval();
        let (c, dt) = (self.cfg.c, self.cfg.dt);
        let mut stack = vec![y_start];
        let mut counts = ExitCounts::default();
        let mut events = 0u64;
        while let Some(mut y) = stack.pop() {
            events += 1;
            if events > self.cfg.max_events {
                return Outcome::Censored;
            }
            let mut left: f64 = Exp1.sample(rng);
            let mut exit = None;
            while left > 0.0 && exit.is_none() {
                let h = dt.min(left);
                left -= h;
                let g: f64 = StandardNormal.sample(rng);
                let end = y + c * h + h.sqrt() * g;
                exit = self.exit_in_step(y, end, h, rng, 0);
                y = end;
            }
            match exit {
                Some(Side::Lower) => counts.lower += 1,
                Some(Side::Upper) => counts.upper += 1,
                None => {
                    let k = self.brood(rng);
                    if stack.len() + k > self.cfg.max_population {
                        return Outcome::Censored;
                    }
                    stack.extend(std::iter::repeat_n(y, k));
                }
            }
        }
        Outcome::Observed(counts)
    }

    /// Exit counts with substeps `dt` and `dt/2` on one shared tree.
    ///
    /// Each coarse substep samples its midpoint; the two versions reuse one uniform per
    /// barrier, firing on `U < p` and `U < 1 - (1 - p1)(1 - p2)` respectively. A particle
    /// killed in one version keeps moving in the other.
    pub fn two_barrier_coupled<R: Rng>(&self, rng: &mut R) -> Outcome<[ExitCounts; 2]> {
        let (_, _, y_start) = self.interval();
        let (c, dt) = (self.cfg.c, self.cfg.dt);
        let mut stack = vec![(y_start, [true, true])];
        let mut counts = [ExitCounts::default(); 2];
        let mut events = 0u64;
        while let Some((mut y, mut alive)) = stack.pop() {
            events += 1;
            if events > self.cfg.max_events {
                return Outcome::Censored;
            }
            let mut left: f64 = Exp1.sample(rng);
            while left > 0.0 && alive.iter().any(|&v| v) {
                let h = dt.min(left);
                left -= h;
                let g1: f64 = StandardNormal.sample(rng);
                let g2: f64 = StandardNormal.sample(rng);
                let mid = y + c * h / 2.0 + (h / 2.0).sqrt() * g1;
                let end = mid + c * h / 2.0 + (h / 2.0).sqrt() * g2;
                let (ua, ub) = (rng.random::<f64>(), rng.random::<f64>());
                let (pa, pb) = self.probs(y, end, h);
                let (pa1, pb1) = self.probs(y, mid, h / 2.0);
                let (pa2, pb2) = self.probs(mid, end, h / 2.0);
                let fine_a = 1.0 - (1.0 - pa1) * (1.0 - pa2);
                let fine_b = 1.0 - (1.0 - pb1) * (1.0 - pb2);
                let decide = |fa: bool, fb: bool, rng: &mut R, fine: bool| match (fa, fb) {
                    (false, false) => None,
                    (true, false) => Some(Side::Lower),
                    (false, true) => Some(Side::Upper),
                    (true, true) if fine => self
                        .exit_in_step(y, mid, h / 2.0, rng, 0)
                        .or_else(|| self.exit_in_step(mid, end, h / 2.0, rng, 0)),
                    (true, true) => self.refine(y, end, h, rng, 1),
                };
                let verdicts = [
                    alive[0].then(|| decide(ua < pa, ub < pb, rng, false)).flatten(),
                    alive[1].then(|| decide(ua < fine_a, ub < fine_b, rng, true)).flatten(),
                ];
                for (v, verdict) in verdicts.into_iter().enumerate() {
                    match verdict {
                        Some(Side::Lower) => counts[v].lower += 1,
                        Some(Side::Upper) => counts[v].upper += 1,
                        None => continue,
                    }
                    alive[v] = false;
                }
                y = end;
            }
            if alive.iter().any(|&v| v) {
                let k = self.brood(rng);
                if stack.len() + k > self.cfg.max_population {
                    return Outcome::Censored;
                }
                stack.extend(std::iter::repeat_n((y, alive), k));
            }
        }
        Outcome::Observed(counts)
    }
}

/// One replica of `Z_x` for `cfg` on stream `replica`.
pub fn simulate_absorbed(cfg: &SimConfig, replica: u64) -> Result<Outcome<u64>, SimError> {
    let sim = Simulator::new(cfg.clone())?;
    if !matches!(cfg.barrier, Barrier::Single { .. }) {
        return Err(SimError::InvalidBarrier("single-barrier mode required".into()));
    }
    Ok(sim.absorbed(&mut cfg.replica_rng(replica)))
}

/// One replica of the exit counts for `cfg` on stream `replica`.
pub fn simulate_two_barrier(cfg: &SimConfig, replica: u64) -> Result<Outcome<ExitCounts>, SimError> {
    let sim = Simulator::new(cfg.clone())?;
    if !matches!(cfg.barrier, Barrier::Interval { .. }) {
        return Err(SimError::InvalidBarrier("two-barrier mode required".into()));
    }
    Ok(sim.two_barrier(&mut cfg.replica_rng(replica)))
}

/// Empirical law of a count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalDist {
    pub counts: BTreeMap<u64, u64>,
    pub replicas: u64,
    pub censored: u64,
}

/// Two-sided 95% normal quantile.
fn z95() -> f64 {
    Normal::standard().inverse_cdf(0.975)
}

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

impl EmpiricalDist {
    fn record(&mut self, outcome: Outcome<u64>) {
        self.replicas += 1;
        match outcome {
            Outcome::Observed(z) => *self.counts.entry(z).or_default() += 1,
            Outcome::Censored => self.censored += 1,
        }
    }

    pub fn merge(&mut self, other: &EmpiricalDist) {
        for (&n, &k) in &other.counts {
            *self.counts.entry(n).or_default() += k;
        }
        self.replicas += other.replicas;
        self.censored += other.censored;
    }

    /// Uncensored replicas.
    pub fn observed(&self) -> u64 {
        self.replicas - self.censored
    }

    pub fn censoring_rate(&self) -> f64 {
        self.censored as f64 / self.replicas.max(1) as f64
    }

    /// `E[Z^k]` over uncensored replicas.
    pub fn moment(&self, k: i32) -> f64 {
        let total: f64 = self.counts.iter().map(|(&n, &w)| w as f64 * (n as f64).powi(k)).sum();
        total / self.observed().max(1) as f64
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let ss: f64 = self.counts.iter().map(|(&n, &w)| w as f64 * (n as f64 - mu).powi(2)).sum();
        ss / (self.observed().max(2) - 1) as f64
    }

    /// Standard error of the sample `k`-th moment.
    pub fn moment_se(&self, k: i32) -> f64 {
        let n = self.observed().max(2) as f64;
        let var = (self.moment(2 * k) - self.moment(k).powi(2)) * n / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }

    pub fn mean_se(&self) -> f64 {
        (self.variance() / self.observed().max(1) as f64).sqrt()
    }

    pub fn frequency(&self, n: u64) -> f64 {
        self.counts.get(&n).copied().unwrap_or(0) as f64 / self.observed().max(1) as f64
    }

    /// 95% Wilson interval for `P(Z = n)`.
    pub fn interval(&self, n: u64) -> (f64, f64) {
        wilson(self.counts.get(&n).copied().unwrap_or(0), self.observed(), z95())
    }

    /// Replicas with `Z > n`.
    pub fn exceedances(&self, n: u64) -> u64 {
        self.counts.range(n + 1..).map(|(_, &k)| k).sum()
    }

    /// `1/2 Σ_{n <= n_max} |P̂(Z = n) - probs[n]|`.
    pub fn tv_distance(&self, probs: &[f64], n_max: usize) -> f64 {
        0.5 * (0..=n_max)
            .map(|n| (self.frequency(n as u64) - probs.get(n).copied().unwrap_or(0.0)).abs())
            .sum::<f64>()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,occurrences")?;
        for (n, k) in &self.counts {
            writeln!(out, "{n},{k}")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct IntervalRow {
    n: u64,
    occurrences: u64,
    lo: f64,
    hi: f64,
}

impl Serialize for EmpiricalDist {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View {
            replicas: u64,
            censored: u64,
            mean: f64,
            mean_se: f64,
            variance: f64,
            counts: Vec<IntervalRow>,
        }
        View {
            replicas: self.replicas,
            censored: self.censored,
            mean: self.mean(),
            mean_se: self.mean_se(),
            variance: self.variance(),
            counts: self
                .counts
                .iter()
                .map(|(&n, &occurrences)| {
                    let (lo, hi) = self.interval(n);
                    IntervalRow { n, occurrences, lo, hi }
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

/// Replicas per work item.
const BLOCK: u64 = 1024;

fn blocks<T, F>(n: u64, par: Parallelism, mut merge: impl FnMut(T), run: F)
where
    T: Send,
    F: Fn(std::ops::Range<u64>) -> T + Sync + Send,
{
    let nb = n.div_ceil(BLOCK) as usize;
    par.map(nb, |i| run(i as u64 * BLOCK..((i as u64 + 1) * BLOCK).min(n)))
        .into_iter()
        .for_each(&mut merge);
}

/// `n` single-barrier replicas.
pub fn run_ensemble(cfg: &SimConfig, n: u64, par: Parallelism) -> Result<EmpiricalDist, SimError> {
    if n == 0 {
        return Err(SimError::NoReplicas);
    }
    if !matches!(cfg.barrier, Barrier::Single { .. }) {
        return Err(SimError::InvalidBarrier("single-barrier mode required".into()));
    }
    let sim = Simulator::new(cfg.clone())?;
    let mut total = EmpiricalDist::default();
    blocks(n, par, |d: EmpiricalDist| total.merge(&d), |range| {
        let mut d = EmpiricalDist::default();
        for r in range {
            d.record(sim.absorbed(&mut cfg.replica_rng(r)));
        }
        d
    });
    Ok(total)
}

/// Empirical laws of the counts at both barriers.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TwoBarrierDist {
    pub lower: EmpiricalDist,
    pub upper: EmpiricalDist,
}

impl TwoBarrierDist {
    fn record(&mut self, outcome: Outcome<ExitCounts>) {
        match outcome {
            Outcome::Observed(e) => {
                self.lower.record(Outcome::Observed(e.lower));
                self.upper.record(Outcome::Observed(e.upper));
            }
            Outcome::Censored => {
                self.lower.record(Outcome::Censored);
                self.upper.record(Outcome::Censored);
            }
        }
    }

    fn merge(&mut self, other: &TwoBarrierDist) {
        self.lower.merge(&other.lower);
        self.upper.merge(&other.upper);
    }
}

fn interval_sim(cfg: &SimConfig, n: u64) -> Result<Simulator, SimError> {
    if n == 0 {
        return Err(SimError::NoReplicas);
    }
    if !matches!(cfg.barrier, Barrier::Interval { .. }) {
        return Err(SimError::InvalidBarrier("two-barrier mode required".into()));
    }
    Simulator::new(cfg.clone())
}

/// `n` two-barrier replicas.
pub fn run_two_barrier_ensemble(cfg: &SimConfig, n: u64, par: Parallelism) -> Result<TwoBarrierDist, SimError> {
    let sim = interval_sim(cfg, n)?;
    let mut total = TwoBarrierDist::default();
    blocks(n, par, |d: TwoBarrierDist| total.merge(&d), |range| {
        let mut d = TwoBarrierDist::default();
        for r in range {
            d.record(sim.two_barrier(&mut cfg.replica_rng(r)));
        }
        d
    });
    Ok(total)
}

/// Effect of halving the substep on the lower-barrier count.
#[derive(Debug, Clone, Serialize)]
pub struct StepStudy {
    pub coarse: TwoBarrierDist,
    pub fine: TwoBarrierDist,
    /// Fine minus coarse mean at the lower barrier.
    pub shift: f64,
    /// Standard error of `shift` from the paired replicas.
    pub shift_se: f64,
}

/// Runs the coupled `dt` / `dt/2` walk on `n` replicas.
pub fn step_halving_study(cfg: &SimConfig, n: u64, par: Parallelism) -> Result<StepStudy, SimError> {
    let sim = interval_sim(cfg, n)?;
    let mut coarse = TwoBarrierDist::default();
    let mut fine = TwoBarrierDist::default();
    let (mut sd, mut sd2) = (0.0, 0.0);
    blocks(
        n,
        par,
        |(c, f, s1, s2): (TwoBarrierDist, TwoBarrierDist, f64, f64)| {
            coarse.merge(&c);
            fine.merge(&f);
            sd += s1;
            sd2 += s2;
        },
        |range| {
            let (mut c, mut f) = (TwoBarrierDist::default(), TwoBarrierDist::default());
            let (mut s1, mut s2) = (0.0, 0.0);
            for r in range {
                match sim.two_barrier_coupled(&mut cfg.replica_rng(r)) {
                    Outcome::Observed([ec, ef]) => {
                        c.record(Outcome::Observed(ec));
                        f.record(Outcome::Observed(ef));
                        let diff = ef.lower as f64 - ec.lower as f64;
                        s1 += diff;
                        s2 += diff * diff;
                    }
                    Outcome::Censored => {
                        c.record(Outcome::Censored);
                        f.record(Outcome::Censored);
                    }
                }
            }
            (c, f, s1, s2)
        },
    );
    let k = coarse.lower.observed().max(2) as f64;
    let shift = sd / k;
    let shift_se = ((sd2 / k - shift * shift).max(0.0) / (k - 1.0)).sqrt();
    Ok(StepStudy { coarse, fine, shift, shift_se })
}

/// `sinh(zρ)/ρ` for `ρ² = rho_sq` of either sign.
fn sinh_over(z: f64, rho_sq: f64) -> f64 {
    if rho_sq > 0.0 {
        let r = rho_sq.sqrt();
        (z * r).sinh() / r
    } else if rho_sq < 0.0 {
        let r = (-rho_sq).sqrt();
        (z * r).sin() / r
    } else {
        z
    }
}

fn interval_checks(a: f64, b: f64, y: f64, rho_sq: f64) -> Result<(), SimError> {
    if !(a < y && y < b) {
        return Err(SimError::InvalidBarrier(format!("need a < y < b, got a = {a}, y = {y}, b = {b}")));
    }
    if rho_sq < 0.0 && (b - a) * (-rho_sq).sqrt() >= std::f64::consts::PI {
        return Err(SimError::InfiniteMoments);
    }
    Ok(())
}

/// `E^y[Z_{a,b}]`, the mean number of particles leaving `(a, b)` through `a`.
pub fn two_barrier_mean(law: &OffspringLaw, c: f64, a: f64, b: f64, y: f64) -> Result<f64, SimError> {
    let rho_sq = c * c - 2.0 * law.m();
    interval_checks(a, b, y, rho_sq)?;
    Ok((c * (a - y)).exp() * sinh_over(b - y, rho_sq) / sinh_over(b - a, rho_sq))
}

/// `E^y[Z_{a,b}^2]` by adaptive quadrature of its two integrals.
pub fn two_barrier_second_moment(law: &OffspringLaw, c: f64, a: f64, b: f64, y: f64) -> Result<f64, SimError> {
    let rho_sq = c * c - 2.0 * law.m();
    let mean = two_barrier_mean(law, c, a, b, y)?;
    let s = |z: f64| sinh_over(z, rho_sq);
    let left = quad::integrate(|r| (c * (a - r)).exp() * s(b - r).powi(2) * s(r - a), a, y, 1e-13)?;
    let right = quad::integrate(|r| (c * (a - r)).exp() * s(b - r).powi(3), y, b, 1e-13)?;
    let bracket = s(b - y) * left + s(y - a) * right;
    Ok(2.0 * law.v() * (c * (a - y)).exp() / s(b - a).powi(3) * bracket + mean)
}

/// Rows `(n, P̂(Z = n), lo, hi)` as CSV.
pub fn write_intervals_csv<W: std::io::Write>(dist: &EmpiricalDist, mut out: W) -> std::io::Result<()> {
    writeln!(out, "n,frequency,lo,hi")?;
    for &n in dist.counts.keys() {
        let (lo, hi) = dist.interval(n);
        writeln!(out, "{n},{},{},{}", fmt_real(dist.frequency(n)), fmt_real(lo), fmt_real(hi))?;
    }
    Ok(())
}
