//! Command execution, write-once artifacts, manifests and artifact comparison.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asymptotics::{self, AsymptoticsError};
use crate::config::{Command, ConfigError, RunConfig};
use crate::generator::{self, GeneratorError, GeneratorSeries};
use crate::gw::{self, DistributionOptions, GwError, Hybrid};
use crate::law::{DriftParams, Regime};
use crate::par::Parallelism;
use crate::series::fmt_real;
use crate::sim::{self, SimConfig, SimError};
use crate::wave::{self, WaveError, WaveOptions, WaveSolution};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "BBM_ABSORB_THREADS";

/// Documented in every manifest so a run can be repeated from it alone.
const RNG_RULE: &str = "ChaCha8Rng::seed_from_u64(seed) with stream = replica index";
const TIE_RULE: &str = "both barriers firing in one substep: resample the bridge on a four-way split, up to 8 levels, then the larger crossing probability wins";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("censored fraction {rate} exceeds {limit}")]
    Censored { rate: f64, limit: f64 },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Validation(_) | RunError::SchemaMismatch(_) | RunError::Io { .. } => 2,
            RunError::Numerical(_) => 3,
            RunError::Censored { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) | RunError::Validation(_) => "validation",
            RunError::Numerical(_) => "numerical",
            RunError::Censored { .. } => "censoring",
            RunError::SchemaMismatch(_) => "schema_mismatch",
            RunError::Io { .. } => "io",
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        RunError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

impl From<GeneratorError> for RunError {
    fn from(e: GeneratorError) -> Self {
        match e {
            GeneratorError::PreconditionP0(_)
            | GeneratorError::NoExtinctionMass
            | GeneratorError::DriftBelowCritical { .. }
            | GeneratorError::OrderTooSmall(_) => RunError::Validation(e.to_string()),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<WaveError> for RunError {
    fn from(e: WaveError) -> Self {
        match e {
            WaveError::DriftBelowCritical { .. } => RunError::Validation(e.to_string()),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<GwError> for RunError {
    fn from(e: GwError) -> Self {
        match e {
            GwError::Regime { .. } => RunError::Validation(e.to_string()),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InfiniteMoments | SimError::Quadrature(_) => RunError::Numerical(e.to_string()),
            _ => RunError::Validation(e.to_string()),
        }
    }
}

impl From<AsymptoticsError> for RunError {
    fn from(e: AsymptoticsError) -> Self {
        match e {
            AsymptoticsError::RegimeMismatch { .. } | AsymptoticsError::MissingConstant | AsymptoticsError::IndexTooSmall(_) => {
                RunError::Validation(e.to_string())
            }
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

/// Resolves the thread setting: flag, then environment, then the ambient pool.
pub fn parallelism(threads: Option<usize>) -> Result<Parallelism, RunError> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| RunError::Validation(format!("{THREADS_ENV}=`{v}` is not a thread count")))?),
        Err(_) => None,
    };
    match threads.or(from_env) {
        Some(0) => Err(RunError::Validation("thread count must be positive".into())),
        Some(1) => Ok(Parallelism::Sequential),
        Some(k) => Ok(Parallelism::Threads(k)),
        None => Ok(Parallelism::Available),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Output directory in which nothing is overwritten.
///
/// A file whose name is taken by different content is written as `stem.<hash>.ext`.
pub struct Artifacts {
    dir: PathBuf,
    pub written: Vec<ArtifactRecord>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, RunError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
        Ok(Self { dir, written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, RunError> {
        let hash = format!("{:x}", Sha256::digest(bytes));
        let mut path = self.dir.join(name);
        if path.exists() {
            let existing = fs::read(&path).map_err(|e| RunError::io(&path, e))?;
            if existing != bytes {
                let p = Path::new(name);
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(name);
                let alt = match p.extension().and_then(|s| s.to_str()) {
                    Some(ext) => format!("{stem}.{}.{ext}", &hash[..12]),
                    None => format!("{stem}.{}", &hash[..12]),
                };
                path = self.dir.join(alt);
            }
        }
        if !path.exists() {
            let mut f = fs::File::create_new(&path).map_err(|e| RunError::io(&path, e))?;
            f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| RunError::io(&path, e))?;
        }
        self.written.push(ArtifactRecord { name: name.to_string(), path: path.clone(), sha256: hash });
        Ok(path)
    }

    fn write_with<F>(&mut self, name: &str, fill: F) -> Result<PathBuf, RunError>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| RunError::io(&self.dir.join(name), e))?;
        self.write(name, &buf)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Option<&'static str>,
    pub config: Option<RunConfig>,
    pub config_text: Option<String>,
    pub seed: Option<u64>,
    pub threads: String,
    pub rng: &'static str,
    pub two_barrier_tie_rule: &'static str,
    pub wall_time_s: f64,
    pub artifacts: Vec<ArtifactRecord>,
    pub diagnostics: Value,
    pub status: &'static str,
    pub error: Option<ErrorRecord>,
    pub exit_code: i32,
}

impl Manifest {
    pub fn failed(err: &RunError, config_text: Option<String>, threads: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: None,
            config: None,
            config_text,
            seed: None,
            threads,
            rng: RNG_RULE,
            two_barrier_tie_rule: TIE_RULE,
            wall_time_s: 0.0,
            artifacts: Vec::new(),
            diagnostics: Value::Null,
            status: "error",
            error: Some(ErrorRecord { kind: err.kind(), message: err.to_string() }),
            exit_code: err.exit_code(),
        }
    }

    /// Writes the manifest as `manifest.json` (write-once) in `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, RunError> {
        let mut arts = Artifacts::new(dir)?;
        let text = serde_json::to_vec_pretty(self).map_err(|e| RunError::Numerical(e.to_string()))?;
        arts.write("manifest.json", &text)
    }
}

/// Runs `cfg`, writing its artifacts and returning the manifest (also on failure).
pub fn execute(cfg: &RunConfig, par: Parallelism, config_text: Option<String>) -> Manifest {
    let start = Instant::now();
    let mut diagnostics = Map::new();
    let mut written = Vec::new();
    let result = Artifacts::new(&cfg.out).and_then(|mut arts| {
        let r = dispatch(cfg, par, &mut arts, &mut diagnostics);
        written = arts.written;
        r
    });
    let error = result.err();
    Manifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: Some(cfg.command.name()),
        config: Some(cfg.clone()),
        config_text,
        seed: Some(cfg.seed),
        threads: format!("{par:?}"),
        rng: RNG_RULE,
        two_barrier_tie_rule: TIE_RULE,
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: written,
        diagnostics: Value::Object(diagnostics),
        status: if error.is_none() { "ok" } else { "error" },
        exit_code: error.as_ref().map_or(0, RunError::exit_code),
        error: error.map(|e| ErrorRecord { kind: e.kind(), message: e.to_string() }),
    }
}

fn dispatch(cfg: &RunConfig, par: Parallelism, arts: &mut Artifacts, diag: &mut Map<String, Value>) -> Result<(), RunError> {
    match cfg.command {
        Command::SolveA => solve_a(cfg, par, arts, diag).map(|_| ()),
        Command::Wave => run_wave(cfg, arts, diag).map(|_| ()),
        Command::Dist => run_dist(cfg, par, arts, diag),
        Command::Simulate => simulate(cfg, par, arts, diag),
        Command::Verify => verify(cfg, par, diag),
        Command::Report => report(cfg, par, arts, diag),
    }
}

/// `s` grid on `[q', 0.9]` shared by the series and wave evaluations of `a`.
fn a_grid(q: f64) -> Vec<f64> {
    (0..=180).map(|k| q + (0.9 - q) * k as f64 / 180.0).collect()
}

fn write_grid(arts: &mut Artifacts, rows: &[(f64, f64)]) -> Result<PathBuf, RunError> {
    arts.write_with("a_on_grid.csv", |out| {
        writeln!(out, "s,a")?;
        rows.iter().try_for_each(|(s, a)| writeln!(out, "{},{}", fmt_real(*s), fmt_real(*a)))
    })
}

fn put(diag: &mut Map<String, Value>, key: &str, value: impl Serialize) {
    diag.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
}

fn solve_a(cfg: &RunConfig, par: Parallelism, arts: &mut Artifacts, diag: &mut Map<String, Value>) -> Result<GeneratorSeries, RunError> {
    let g = generator::solve_a(&cfg.law, cfg.c, cfg.order, par)?;
    arts.write_with("a.csv", |out| g.series().write_csv(out, "a"))?;
    let rows: Vec<(f64, f64)> = a_grid(cfg.law.q_prime()).into_iter().map(|s| (s, g.eval_real(s))).collect();
    write_grid(arts, &rows)?;
    put(diag, "N", g.order());
    put(diag, "alpha", g.alpha());
    put(diag, "q_smallest_zero", g.q_smallest_zero());
    put(diag, "method", g.method());
    put(diag, "ode_residual", generator::ode_residual(&g, &cfg.law, par));
    Ok(g)
}

fn run_wave(cfg: &RunConfig, arts: &mut Artifacts, diag: &mut Map<String, Value>) -> Result<WaveSolution, RunError> {
    let w = wave::solve_wave(&cfg.law, cfg.c, WaveOptions::default())?;
    arts.write_with("wave.csv", |out| w.write_csv(out))?;
    let rows = a_grid(cfg.law.q_prime()).into_iter().map(|s| Ok((s, w.a(s)?))).collect::<Result<Vec<_>, WaveError>>()?;
    write_grid(arts, &rows)?;
    put(diag, "grid_points", w.xs().len());
    put(diag, "u_min", w.u_min());
    put(diag, "k_hat", w.k_hat());
    put(diag, "difference_residual", w.difference_residual(1e-3));
    Ok(w)
}

fn dist_options(cfg: &RunConfig) -> DistributionOptions {
    let mut opts = DistributionOptions::for_order(cfg.n_max);
    if let Some(r) = cfg.radius {
        opts.radius = r;
    }
    if let Some(m) = cfg.samples {
        opts.samples = m;
    }
    opts
}

fn x_of(cfg: &RunConfig) -> Result<f64, RunError> {
    cfg.x.ok_or_else(|| RunError::Validation("barrier x is required".into()))
}

fn run_dist(cfg: &RunConfig, par: Parallelism, arts: &mut Artifacts, diag: &mut Map<String, Value>) -> Result<(), RunError> {
    let x = x_of(cfg)?;
    let g = generator::solve_a(&cfg.law, cfg.c, cfg.order.max(cfg.n_max), par)?;
    let d = gw::distribution(&g, &cfg.law, x, cfg.n_max, dist_options(cfg), par)?;
    arts.write_with("dist.csv", |out| d.write_csv(out))?;
    let lambda = DriftParams::new(&cfg.law, cfg.c).lambda().unwrap_or(f64::NAN);
    put(diag, "x", x);
    put(diag, "radius", d.radius);
    put(diag, "samples", d.samples);
    put(diag, "mass_defect", d.mass_defect);
    put(diag, "mean", d.mean);
    put(diag, "mean_exact", (lambda * x).exp());
    put(diag, "tail_correction", d.tail_correction);
    put(diag, "imag_residue", d.imag_residue);
    put(diag, "alias_warning", d.alias_warning);
    Ok(())
}

fn check_censoring(rate: f64, cfg: &RunConfig) -> Result<(), RunError> {
    if rate > cfg.tolerances.censoring {
        return Err(RunError::Censored { rate, limit: cfg.tolerances.censoring });
    }
    Ok(())
}

fn sim_config(cfg: &RunConfig) -> SimConfig {
    let mut sc = match (cfg.interval, cfg.x) {
        (Some(iv), _) => {
            let mut sc = SimConfig::interval(cfg.law.clone(), cfg.c, iv.a, iv.b, iv.y, cfg.seed);
            sc.dt = iv.dt;
            sc
        }
        (None, x) => SimConfig::single(cfg.law.clone(), cfg.c, x.unwrap_or(crate::config::DEFAULT_X), cfg.seed),
    };
    sc.max_events = cfg.max_events;
    sc.max_population = cfg.max_population;
    sc
}

fn simulate(cfg: &RunConfig, par: Parallelism, arts: &mut Artifacts, diag: &mut Map<String, Value>) -> Result<(), RunError> {
    let sc = sim_config(cfg);
    put(diag, "replicas", cfg.replicas);
    if let Some(iv) = cfg.interval {
        let d = sim::run_two_barrier_ensemble(&sc, cfg.replicas, par)?;
        arts.write_with("counts_lower.csv", |out| d.lower.write_csv(out))?;
        arts.write_with("counts_upper.csv", |out| d.upper.write_csv(out))?;
        put(diag, "censored", d.lower.censored);
        put(diag, "mean_lower", d.lower.mean());
        put(diag, "mean_lower_se", d.lower.mean_se());
        put(diag, "second_moment_lower", d.lower.moment(2));
        put(diag, "second_moment_lower_se", d.lower.moment_se(2));
        put(diag, "mean_upper", d.upper.mean());
        if let Ok(m) = sim::two_barrier_mean(&cfg.law, cfg.c, iv.a, iv.b, iv.y) {
            put(diag, "mean_lower_exact", m);
        }
        if let Ok(m2) = sim::two_barrier_second_moment(&cfg.law, cfg.c, iv.a, iv.b, iv.y) {
            put(diag, "second_moment_lower_exact", m2);
        }
        return check_censoring(d.lower.censoring_rate(), cfg);
    }
    let x = x_of(cfg)?;
    let d = sim::run_ensemble(&sc, cfg.replicas, par)?;
    arts.write_with("counts.csv", |out| d.write_csv(out))?;
    arts.write_with("intervals.csv", |out| sim::write_intervals_csv(&d, out))?;
    let lambda = DriftParams::new(&cfg.law, cfg.c).lambda().unwrap_or(f64::NAN);
    put(diag, "censored", d.censored);
    put(diag, "mean", d.mean());
    put(diag, "mean_se", d.mean_se());
    put(diag, "mean_exact", (lambda * x).exp());
    check_censoring(d.censoring_rate(), cfg)
}

/// Cross-oracle and identity checks between the series and wave representations.
#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub cross_oracle_sup: f64,
    pub flow_sup: f64,
    pub identity: gw::IdentityReport,
    pub passed: bool,
}

pub fn verify_pipelines(cfg: &RunConfig, par: Parallelism) -> Result<VerifySummary, RunError> {
    let x = x_of(cfg)?;
    let (law, c) = (&cfg.law, cfg.c);
    let g = generator::solve_a(law, c, cfg.order, par)?;
    let w = wave::solve_wave(law, c, WaveOptions::default())?;
    let q = law.q_prime();
    let cross = a_grid(q).into_iter().map(|s| Ok((g.eval_real(s) - w.a(s)?).abs())).collect::<Result<Vec<f64>, WaveError>>()?;
    let cross_oracle_sup = cross.into_iter().fold(0.0, f64::max);
    let hybrid = Hybrid { series: &g, wave: &w };
    let pairs: Vec<(f64, f64)> = (1..=10)
        .flat_map(|i| (0..10).map(move |j| (0.1 * i as f64, q + 0.02 + (0.97 - q) * j as f64 / 9.0)))
        .collect();
    let diffs = par.map(pairs.len(), |k| {
        let (x, s) = pairs[k];
        let series = gw::evolve_f(&hybrid, x, Complex64::new(s, 0.0))?.re;
        Ok::<f64, RunError>((series - w.f(x, s)?).abs())
    });
    let flow_sup = diffs.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().fold(0.0, f64::max);
    let s_grid: Vec<f64> = (0..10).map(|k| q + 0.06 + (0.94 - q - 0.06) * k as f64 / 9.0).collect();
    let identity = gw::verify_identities(&hybrid, law, c, x, &s_grid)?;
    let t = cfg.tolerances;
    let passed = cross_oracle_sup < t.cross_oracle
        && flow_sup < t.flow
        && identity.max_integral_defect < t.identity
        && identity.max_exponential_defect < t.identity;
    Ok(VerifySummary { cross_oracle_sup, flow_sup, identity, passed })
}

fn verify(cfg: &RunConfig, par: Parallelism, diag: &mut Map<String, Value>) -> Result<(), RunError> {
    let v = verify_pipelines(cfg, par)?;
    put(diag, "verify", &v);
    if !v.passed {
        return Err(RunError::Numerical("verification residuals exceed tolerances".into()));
    }
    Ok(())
}

fn report(cfg: &RunConfig, par: Parallelism, arts: &mut Artifacts, diag: &mut Map<String, Value>) -> Result<(), RunError> {
    let x = x_of(cfg)?;
    let (law, c) = (&cfg.law, cfg.c);
    let order = cfg.order.max(cfg.n_max);
    let g = generator::solve_a(law, c, order, par)?;
    let regime = DriftParams::new(law, c).regime;
    let mut out = Map::new();
    match regime {
        Regime::SubcriticalSpeed => put(&mut out, "fit", asymptotics::fit_constant(g.coeffs(), law, c)?),
        _ => {
            let tails = g.tail_sums();
            let rows: Vec<(usize, f64)> = std::iter::successors(Some(10usize), |n| Some(n * 10))
                .take_while(|&n| n < tails.len())
                .map(|n| (n, asymptotics::tail_rate_ratio(&tails, n, law)))
                .collect();
            put(&mut out, "tail_rate_ratios", rows);
        }
    }
    let d = gw::distribution(&g, law, x, cfg.n_max, dist_options(cfg), par)?;
    let ratios = asymptotics::ratio_diagnostic(&d, g.coeffs(), x, law, c)?;
    arts.write_with("ratios.csv", |w| ratios.write_csv(w))?;
    let sampled: Vec<(usize, f64)> = std::iter::successors(Some(10usize), |n| Some(n * 10)).filter_map(|n| ratios.at(n).map(|r| (n, r))).collect();
    put(&mut out, "ratio_target", ratios.target);
    put(&mut out, "ratios", sampled);
    put(&mut out, "distribution", json!({ "mass_defect": d.mass_defect, "mean": d.mean, "alias_warning": d.alias_warning }));
    let emp = sim::run_ensemble(&sim_config(cfg), cfg.replicas, par)?;
    put(
        &mut out,
        "monte_carlo",
        json!({
            "replicas": emp.replicas,
            "censored": emp.censored,
            "mean": emp.mean(),
            "mean_se": emp.mean_se(),
            "tv_distance_n_le_20": emp.tv_distance(&d.probs, 20.min(cfg.n_max)),
        }),
    );
    let body = serde_json::to_vec_pretty(&out).map_err(|e| RunError::Numerical(e.to_string()))?;
    arts.write("report.json", &body)?;
    diag.extend(out);
    check_censoring(emp.censoring_rate(), cfg)
}

/// Thresholds for [`compare`].
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CompareTolerances {
    pub abs: f64,
    pub rel: f64,
}

impl CompareTolerances {
    pub fn set(&mut self, spec: &str) -> Result<(), RunError> {
        let bad = || RunError::Validation(format!("expected abs=<value> or rel=<value>, got `{spec}`"));
        let (name, value) = spec.split_once('=').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        match name.trim() {
            "abs" => self.abs = value,
            "rel" => self.rel = value,
            _ => return Err(bad()),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnDiff {
    pub column: String,
    pub max_abs: f64,
    pub max_rel: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub rows: usize,
    pub tolerances: CompareTolerances,
    pub columns: Vec<ColumnDiff>,
    pub passed: bool,
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), RunError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| RunError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    let headers = rdr
        .headers()
        .map_err(|e| RunError::SchemaMismatch(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| RunError::SchemaMismatch(e.to_string()))?;
            rec.iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| RunError::SchemaMismatch(format!("non-numeric field `{f}` in {}", path.display()))))
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    Ok((headers, rows))
}

/// Column-wise deviations between two CSV artifacts of one schema.
pub fn compare(a: &Path, b: &Path, tol: CompareTolerances) -> Result<CompareReport, RunError> {
    let (ha, ra) = read_table(a)?;
    let (hb, rb) = read_table(b)?;
    if ha != hb {
        return Err(RunError::SchemaMismatch(format!("columns {ha:?} vs {hb:?}")));
    }
    if ra.len() != rb.len() {
        return Err(RunError::SchemaMismatch(format!("{} rows vs {} rows", ra.len(), rb.len())));
    }
    let columns: Vec<ColumnDiff> = ha
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mut max_abs, mut max_rel) = (0.0_f64, 0.0_f64);
            for (x, y) in ra.iter().zip(&rb).map(|(p, q)| (p[j], q[j])) {
                let d = (x - y).abs();
                let scale = x.abs().max(y.abs());
                max_abs = max_abs.max(d);
                max_rel = max_rel.max(if scale > 0.0 { d / scale } else { 0.0 });
            }
            ColumnDiff { column: name.clone(), max_abs, max_rel, passed: max_abs <= tol.abs || max_rel <= tol.rel }
        })
        .collect();
    let passed = columns.iter().all(|c| c.passed);
    Ok(CompareReport { rows: ra.len(), tolerances: tol, columns, passed })
}
