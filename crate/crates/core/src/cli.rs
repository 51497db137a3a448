//! Command-line front end: problem configs, presets and the `solve`,
//! `sweep`, `check` and `example` commands.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 diagnosed
//! non-convergence, 3 hypothesis violation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigensolver::{rho_grid, solve_eigenpair, sweep_rho, SolverOptions};
use crate::elliptic::{BoundaryOperatorSpec, EllipticOperatorSpec};
use crate::error::Error;
use crate::expr::Expr;
use crate::functionals::{example_functionals, FunctionalSpec};
use crate::hypotheses::{
    check_all, compute_phi, example_hypotheses, HypothesisDecl, PhiValues, Verdict,
    DEFAULT_SAMPLES, DEFAULT_SEED,
};
use crate::mesh::Mesh;
use crate::system::{ComponentSpec, EigenPair, ProblemSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

/// Environment variable overriding the default sampling seed.
pub const SEED_ENV: &str = "CONE_RAY_SEED";

pub const PRESETS: [&str; 3] = ["kirchhoff-disk", "linear-disk", "linear-square"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshConfig {
    Disk { radius: f64, n_r: usize, n_theta: usize },
    Rectangle { lx: f64, ly: f64, nx: usize, ny: usize },
}

fn zero() -> Expr {
    Expr::num(0.0)
}

fn zeros() -> [Expr; 2] {
    [zero(), zero()]
}

/// `−Σ a_jl ∂_j∂_l u + Σ b_j ∂_j u + a0 u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub a: [[Expr; 2]; 2],
    #[serde(default = "zeros")]
    pub b: [Expr; 2],
    #[serde(default = "zero")]
    pub a0: Expr,
    pub mu0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Dirichlet {},
    Neumann {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<[Expr; 2]>,
    },
    Oblique {
        b: Expr,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<[Expr; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub operator: OperatorConfig,
    pub boundary: BoundaryConfig,
    pub zeta: Expr,
    pub f: Expr,
    pub w: FunctionalSpec,
    pub h: FunctionalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mesh: MeshConfig,
    pub components: Vec<ComponentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<HypothesisDecl>,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> anyhow::Result<ProblemConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<ProblemConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ProblemConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact serialization of the parsed config.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn mesh(&self) -> crate::Result<Mesh> {
        match self.mesh {
            MeshConfig::Disk {
                radius,
                n_r,
                n_theta,
            } => Mesh::disk(radius, n_r, n_theta),
            MeshConfig::Rectangle { lx, ly, nx, ny } => Mesh::rectangle(lx, ly, nx, ny),
        }
    }

    pub fn build(&self) -> crate::Result<ProblemSpec> {
        let mesh = Arc::new(self.mesh()?);
        let mut specs = Vec::with_capacity(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            let op = &c.operator;
            let operator = EllipticOperatorSpec::new(op.a.clone(), op.b.clone(), op.a0.clone(), op.mu0)
                .map_err(|e| Error::Config(format!("component {}: {e}", i + 1)))?;
            let boundary = match &c.boundary {
                BoundaryConfig::Dirichlet {} => BoundaryOperatorSpec::dirichlet(),
                BoundaryConfig::Neumann { direction } => {
                    with_direction(BoundaryOperatorSpec::neumann(), direction)
                }
                BoundaryConfig::Oblique { b, direction } => {
                    with_direction(BoundaryOperatorSpec::oblique(b.clone()), direction)
                }
            };
            specs.push(ComponentSpec {
                operator,
                boundary,
                zeta: c.zeta.clone(),
                f: c.f.clone(),
                w: c.w.clone(),
                h: c.h.clone(),
            });
        }
        ProblemSpec::new(mesh, specs)
    }
}

fn with_direction(b: BoundaryOperatorSpec, direction: &Option<[Expr; 2]>) -> BoundaryOperatorSpec {
    match direction {
        Some(d) => b.with_direction(d.clone()),
        None => b,
    }
}

fn expr(s: &str) -> Expr {
    Expr::parse(s).expect("valid preset expression")
}

fn laplacian_config() -> OperatorConfig {
    OperatorConfig {
        a: [[expr("1"), expr("0")], [expr("0"), expr("1")]],
        b: zeros(),
        a0: zero(),
        mu0: 1.0,
    }
}

fn linear_component() -> ComponentConfig {
    ComponentConfig {
        operator: laplacian_config(),
        boundary: BoundaryConfig::Dirichlet {},
        zeta: expr("1"),
        f: expr("u1"),
        w: FunctionalSpec::constant(0.0),
        h: FunctionalSpec::constant(0.0),
    }
}

/// Named presets; `None` for an unknown name.
pub fn preset(name: &str) -> Option<ProblemConfig> {
    match name {
        "kirchhoff-disk" => {
            let [w1, w2, h1, h2] = example_functionals();
            let comp = |f: &str, w, h| ComponentConfig {
                operator: laplacian_config(),
                boundary: BoundaryConfig::Dirichlet {},
                zeta: expr("1"),
                f: expr(f),
                w,
                h,
            };
            Some(ProblemConfig {
                mesh: MeshConfig::Disk {
                    radius: 1.0,
                    n_r: 64,
                    n_theta: 128,
                },
                components: vec![
                    comp("exp(u1)*(1 + gn2sq)*w", w1, h1),
                    comp("u2^2*gn1sq*w", w2, h2),
                ],
                hypotheses: Some(example_hypotheses()),
            })
        }
        "linear-disk" => Some(ProblemConfig {
            mesh: MeshConfig::Disk {
                radius: 1.0,
                n_r: 32,
                n_theta: 64,
            },
            components: vec![linear_component()],
            hypotheses: None,
        }),
        "linear-square" => Some(ProblemConfig {
            mesh: MeshConfig::Rectangle {
                lx: std::f64::consts::PI,
                ly: std::f64::consts::PI,
                nx: 33,
                ny: 33,
            },
            components: vec![linear_component()],
            hypotheses: None,
        }),
        _ => None,
    }
}

#[derive(Debug, Parser)]
#[command(name = "cone-ray", version, about = "Positive eigenpairs of elliptic systems with functional boundary conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute one eigenpair on the sphere ‖u‖₁ = ρ.
    Solve {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Follow the eigenvalue along a range of ρ.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        rho_min: f64,
        #[arg(long)]
        rho_max: f64,
        #[arg(long, default_value_t = 8)]
        points: usize,
        #[arg(long)]
        log_spacing: bool,
        /// Solve every point independently (in parallel) from the default start.
        #[arg(long)]
        no_warm_start: bool,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check the declared hypotheses by sampling.
    Check {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        /// Defaults to $CONE_RAY_SEED, then 42.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a preset problem config.
    Example {
        #[arg(long)]
        name: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Problem config (JSON).
    pub config: Option<PathBuf>,
    /// Use a named preset instead of a file.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Defaults to 1e-6·ρ.
    #[arg(long)]
    pub residual_tol: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    pub relax: f64,
    /// Keep ω fixed instead of halving it on oscillation.
    #[arg(long)]
    pub fixed_relax: bool,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            residual_tol: self.residual_tol,
            max_iter: self.max_iter,
            relaxation: self.relax,
            adapt_relaxation: !self.fixed_relax,
            ..SolverOptions::default()
        }
    }
}

/// A failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    error: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    }
}

/// Exit code for a library error raised while solving.
fn solve_code(e: &Error) -> i32 {
    match e {
        Error::NoConvergence { .. }
        | Error::NormCollapse { .. }
        | Error::Uncertified { .. }
        | Error::AtNode { .. }
        | Error::Expr(_) => EXIT_NO_CONVERGENCE,
        _ => EXIT_CONFIG,
    }
}

fn status_label(e: &Error) -> &'static str {
    match e {
        Error::NoConvergence { .. } => "no_convergence",
        Error::NormCollapse { .. } => "norm_collapse",
        Error::Uncertified { .. } => "uncertified",
        Error::AtNode { .. } | Error::Expr(_) => "evaluation_error",
        _ => "error",
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

fn execute(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Solve {
            source,
            rho,
            solver,
            out,
        } => cmd_solve(&source, rho, &solver.options(), &out),
        Command::Sweep {
            source,
            rho_min,
            rho_max,
            points,
            log_spacing,
            no_warm_start,
            solver,
            out,
        } => cmd_sweep(
            &source,
            rho_min,
            rho_max,
            points,
            log_spacing,
            !no_warm_start,
            &solver.options(),
            &out,
        ),
        Command::Check {
            source,
            rho,
            samples,
            seed,
            out,
        } => {
            let seed = match seed {
                Some(s) => s,
                None => default_seed().map_err(config_err)?,
            };
            cmd_check(&source, rho, samples, seed, &out)
        }
        Command::Example { name, emit } => cmd_example(&name, emit.as_deref()),
    }
}

/// `$CONE_RAY_SEED` if set, else the built-in default.
pub fn default_seed() -> anyhow::Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| anyhow!("{SEED_ENV} must be a non-negative integer, got `{v}`")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn load_source(source: &Source) -> Result<ProblemConfig, Failure> {
    match (&source.config, &source.preset) {
        (Some(path), _) => ProblemConfig::load(path).map_err(config_err),
        (None, Some(name)) => preset(name)
            .ok_or_else(|| config_err(anyhow!("unknown preset `{name}`; known: {}", PRESETS.join(", ")))),
        (None, None) => Err(config_err(anyhow!("no problem config given"))),
    }
}

fn build(config: &ProblemConfig) -> Result<ProblemSpec, Failure> {
    let p = config.build().map_err(config_err)?;
    for w in p.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(p)
}

fn create_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(config_err)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(&path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(config_err)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    version: &'a str,
    digest: &'a str,
    created_unix: u64,
    warnings: Vec<String>,
}

fn write_meta(out: &Path, command: &str, digest: &str, p: &ProblemSpec) -> Result<(), Failure> {
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = Meta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        digest,
        created_unix,
        warnings: p.warnings(),
    };
    write(out.join("meta.json"), json(&meta))
}

#[derive(Serialize)]
struct EigenRecord<'a> {
    digest: &'a str,
    rho: f64,
    lambda: f64,
    residual: f64,
    iterations: usize,
    clip: f64,
    relaxation: f64,
}

fn field_csv(pair: &EigenPair, i: usize) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x1", "x2", "value", "du_dx1", "du_dx2"])?;
    let u = &pair.u;
    for (node, p) in u.mesh().nodes().iter().enumerate() {
        let g = u.grad(i)[node];
        w.write_record([p[0], p[1], u.field(i)[node], g[0], g[1]].map(|v| v.to_string()))?;
    }
    Ok(w.into_inner()?)
}

fn check_rho_arg(name: &str, rho: f64) -> Result<(), Failure> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(config_err(anyhow!("precondition violated: {name} must be positive, got {rho}")))
    }
}

fn cmd_solve(source: &Source, rho: f64, opts: &SolverOptions, out: &Path) -> Result<i32, Failure> {
    check_rho_arg("rho", rho)?;
    opts.validate().map_err(config_err)?;
    let config = load_source(source)?;
    let digest = config.digest();
    let p = build(&config)?;
    let pair = solve_eigenpair(&p, rho, opts, None).map_err(|e| Failure {
        code: solve_code(&e),
        error: e.into(),
    })?;
    create_out(out)?;
    let record = EigenRecord {
        digest: &digest,
        rho,
        lambda: pair.lambda,
        residual: pair.residual,
        iterations: pair.iterations,
        clip: pair.clip,
        relaxation: pair.relaxation,
    };
    write(out.join("eigenpair.json"), json(&record))?;
    for i in 0..p.n() {
        let bytes = field_csv(&pair, i).map_err(config_err)?;
        write(out.join(format!("u{}.csv", i + 1)), bytes)?;
    }
    write_meta(out, "solve", &digest, &p)?;
    eprintln!(
        "lambda = {} (rho = {rho}, residual = {:e}, {} iterations)",
        pair.lambda, pair.residual, pair.iterations
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BranchRecord<'a> {
    digest: &'a str,
    rho: f64,
    lambda: Option<f64>,
    residual: Option<f64>,
    iterations: Option<usize>,
    clip: Option<f64>,
    relaxation: Option<f64>,
    status: &'static str,
    message: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    source: &Source,
    rho_min: f64,
    rho_max: f64,
    points: usize,
    log_spacing: bool,
    warm_start: bool,
    opts: &SolverOptions,
    out: &Path,
) -> Result<i32, Failure> {
    check_rho_arg("rho-min", rho_min)?;
    check_rho_arg("rho-max", rho_max)?;
    if points == 0 {
        return Err(config_err(anyhow!("precondition violated: points must be at least 1")));
    }
    if points > 1 && rho_min >= rho_max {
        return Err(config_err(anyhow!(
            "precondition violated: rho-min ({rho_min}) must be below rho-max ({rho_max})"
        )));
    }
    opts.validate().map_err(config_err)?;
    let config = load_source(source)?;
    let digest = config.digest();
    let p = build(&config)?;
    let rhos = rho_grid(rho_min, rho_max, points, log_spacing);
    let results = sweep_rho(&p, &rhos, opts, warm_start).map_err(config_err)?;

    let records: Vec<BranchRecord> = results
        .iter()
        .map(|pt| match &pt.outcome {
            Ok(pair) => BranchRecord {
                digest: &digest,
                rho: pt.rho,
                lambda: Some(pair.lambda),
                residual: Some(pair.residual),
                iterations: Some(pair.iterations),
                clip: Some(pair.clip),
                relaxation: Some(pair.relaxation),
                status: "ok",
                message: None,
            },
            Err(e) => BranchRecord {
                digest: &digest,
                rho: pt.rho,
                lambda: None,
                residual: None,
                iterations: None,
                clip: None,
                relaxation: None,
                status: status_label(e),
                message: Some(e.to_string()),
            },
        })
        .collect();

    create_out(out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let csv_result: anyhow::Result<Vec<u8>> = (|| {
        w.write_record(["rho", "lambda", "residual", "iterations", "status"])?;
        for r in &records {
            w.write_record([
                r.rho.to_string(),
                opt(r.lambda),
                opt(r.residual),
                r.iterations.map(|k| k.to_string()).unwrap_or_default(),
                r.status.to_string(),
            ])?;
        }
        Ok(w.into_inner()?)
    })();
    write(out.join("branch.csv"), csv_result.map_err(config_err)?)?;
    write(out.join("branch.json"), json(&records))?;
    write_meta(out, "sweep", &digest, &p)?;

    let ok = records.iter().filter(|r| r.status == "ok").count();
    for r in records.iter().filter(|r| r.status != "ok") {
        eprintln!("rho = {}: {}", r.rho, r.message.as_deref().unwrap_or(r.status));
    }
    eprintln!("{ok} of {} points converged", records.len());
    if ok == 0 {
        return Err(Failure {
            code: EXIT_NO_CONVERGENCE,
            error: anyhow!("no point of the sweep converged"),
        });
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CheckOutput<'a> {
    digest: &'a str,
    rho: f64,
    samples: usize,
    seed: u64,
    verdict: Verdict,
    conditions: std::collections::BTreeMap<String, Verdict>,
    phi: PhiValues,
    checks: &'a [crate::hypotheses::Check],
}

fn cmd_check(source: &Source, rho: f64, samples: usize, seed: u64, out: &Path) -> Result<i32, Failure> {
    check_rho_arg("rho", rho)?;
    if samples == 0 {
        return Err(config_err(anyhow!("precondition violated: samples must be at least 1")));
    }
    let config = load_source(source)?;
    let Some(decl) = config.hypotheses.clone() else {
        return Err(config_err(anyhow!("the config has no `hypotheses` section")));
    };
    let digest = config.digest();
    let p = build(&config)?;
    let phi = compute_phi(&p, &decl, rho).map_err(config_err)?;
    let report = check_all(&p, &decl, rho, samples, seed).map_err(config_err)?;
    let verdict = report.verdict();
    let output = CheckOutput {
        digest: &digest,
        rho,
        samples,
        seed,
        verdict,
        conditions: report.condition_verdicts(),
        phi,
        checks: &report.checks,
    };
    create_out(out)?;
    write(out.join("report.json"), json(&output))?;
    write_meta(out, "check", &digest, &p)?;
    for (name, v) in &output.conditions {
        eprintln!("{name}: {}", serde_json::to_string(v).expect("verdict serializes"));
    }
    if verdict == Verdict::Violated {
        for c in report.checks.iter().filter(|c| c.verdict == Verdict::Violated) {
            eprintln!(
                "violated: {} (component {:?}): {} of {} evaluations, witness {}",
                c.condition,
                c.component,
                c.violations,
                c.evaluated,
                serde_json::to_string(&c.witness).expect("witness serializes")
            );
        }
        return Ok(EXIT_VIOLATION);
    }
    Ok(EXIT_OK)
}

fn cmd_example(name: &str, emit: Option<&Path>) -> Result<i32, Failure> {
    let Some(config) = preset(name) else {
        return Err(config_err(anyhow!("unknown example `{name}`; known: {}", PRESETS.join(", "))));
    };
    let mut text = config.to_json_pretty();
    text.push('\n');
    match emit {
        Some(path) => write(path.to_path_buf(), text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}
