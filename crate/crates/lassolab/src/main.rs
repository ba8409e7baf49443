//! Command-line front end. Every subcommand prints a JSON document to
//! stdout; `experiment` additionally writes `records.csv` + `summary.json`
//! to the output directory. Exit codes: 0 success, 1 semantic failure (a
//! certificate that fails, a found counterexample, a certified record
//! missing its bound), 2 usage or runtime error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use lassolab::certificate::check_stationarity;
use lassolab::ensembles::{
    default_scale, generate_matrix, mix_seed, random_conditioned_b, EnsembleKind, EnsembleSpec,
};
use lassolab::harness::{ExperimentConfig, ExperimentKind, LambdaGridSpec};
use lassolab::io::{read_matrix_csv, read_vector, write_matrix_csv, write_vector};
use lassolab::model::{Dict, ProblemInstance, ProblemParams, DEFAULT_SUPPORT_ETA};
use lassolab::rip::{
    exact_enumeration_feasible, nsp_check_vector, nsp_constants_from_rip, nsp_falsify,
    rip_estimate, rip_exact_l2, RipReport,
};
use lassolab::solver::{solve, solve_path, SolverOptions};
use lassolab::{Error, Result};
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lassolab",
    version,
    about = "LASSO-type programs: solve, certify, and measure the matrices behind them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print the solution with its certificate.
    Solve(SolveArgs),
    /// Check the stationarity certificate of a candidate point.
    Certify(CertifyArgs),
    /// Sweep a lambda grid and print the regularization path.
    Path(PathArgs),
    /// Measure restricted isometry constants of a measurement matrix.
    Rip(RipArgs),
    /// Derive robust null-space constants and hunt for counterexamples.
    Nsp(NspArgs),
    /// Draw a seeded random matrix (and optional dictionary) to CSV.
    Generate(GenerateArgs),
    /// Run an experiment campaign from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Measurement matrix CSV: one row per line, comma-separated.
    #[arg(long)]
    matrix: PathBuf,
    /// Dictionary matrix CSV; identity when omitted.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Observation vector: one value per line.
    #[arg(long)]
    obs: PathBuf,
}

impl InstanceArgs {
    fn load(&self) -> Result<ProblemInstance> {
        let a = read_matrix_csv(&self.matrix)?;
        let dict = self.dict.as_ref().map(|p| read_matrix_csv(p)).transpose()?;
        let y = read_vector(&self.obs)?;
        ProblemInstance::new(a, dict, y)
    }
}

#[derive(Args)]
struct ParamArgs {
    /// Fidelity norm exponent, in [1, 2].
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Fidelity power, >= 1.
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Penalty power, >= 1.
    #[arg(long, default_value_t = 1.0)]
    r: f64,
}

#[derive(Args)]
struct TolArgs {
    /// Relative support threshold.
    #[arg(long, default_value_t = DEFAULT_SUPPORT_ETA)]
    eta: f64,
    /// Certificate tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol_kkt: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    tols: TolArgs,
    /// Also write the minimizer as a vector file `solution.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    lambda: f64,
    /// Candidate minimizer, vector file.
    #[arg(long)]
    candidate: PathBuf,
    #[command(flatten)]
    tols: TolArgs,
}

#[derive(Args)]
struct PathArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    lambda_min: f64,
    #[arg(long)]
    lambda_max: f64,
    #[arg(long, default_value_t = 20)]
    grid_points: usize,
    /// Linear spacing instead of the default log spacing.
    #[arg(long)]
    linear: bool,
    #[command(flatten)]
    tols: TolArgs,
    /// Also write the path as `path.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RipModeArg {
    /// Exhaustive support enumeration; p = 2 only, budgeted.
    Exact,
    /// Sampled supports with local polish.
    Estimate,
}

#[derive(Args)]
struct RipArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Isometry order: supports of B^{-1}z up to this size.
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Exact when feasible at p = 2, else estimated; override to force one.
    #[arg(long, value_enum)]
    mode: Option<RipModeArg>,
    /// Sampling trials in estimated mode.
    #[arg(long, default_value_t = 64)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NspArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Null-space property order (size of the index set S).
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Isometry order for the constants' derivation.
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, value_enum)]
    mode: Option<RipModeArg>,
    #[arg(long, default_value_t = 64)]
    trials: usize,
    /// Candidate vectors for the falsification search; 0 skips the search.
    #[arg(long, default_value_t = 0)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EnsembleArg {
    Gaussian,
    Rademacher,
    Laplace,
}

impl From<EnsembleArg> for EnsembleKind {
    fn from(e: EnsembleArg) -> Self {
        match e {
            EnsembleArg::Gaussian => EnsembleKind::Gaussian,
            EnsembleArg::Rademacher => EnsembleKind::Rademacher,
            EnsembleArg::Laplace => EnsembleKind::Laplace,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = EnsembleArg::Gaussian)]
    ensemble: EnsembleArg,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    /// Entry scale; `m^{-1/p}` when omitted.
    #[arg(long)]
    scale: Option<f64>,
    /// Norm exponent the default scale calibrates for.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also draw a conditioned dictionary `dict.csv` with this target.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment name; must match the config's `experiment` field.
    name: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Solve(args) => cmd_solve(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Path(args) => cmd_path(args),
        Command::Rip(args) => cmd_rip(args),
        Command::Nsp(args) => cmd_nsp(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn solver_options(tols: &TolArgs) -> SolverOptions {
    SolverOptions { tol_kkt: tols.tol_kkt, eta: tols.eta, ..SolverOptions::default() }
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode> {
    let instance = args.instance.load()?;
    let params = ProblemParams::new(args.params.p, args.params.q, args.params.r, args.lambda)?;
    let opts = solver_options(&args.tols);
    let solution = solve(&params, &instance, &opts, None)?;
    let z = solution.z_vector();
    let certificate = check_stationarity(&params, &instance, &z, args.tols.tol_kkt, args.tols.eta)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_vector(&dir.join("solution.csv"), &z)?;
    }
    print_json(&json!({ "solution": solution, "certificate": certificate }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_certify(args: CertifyArgs) -> Result<ExitCode> {
    let instance = args.instance.load()?;
    let params = ProblemParams::new(args.params.p, args.params.q, args.params.r, args.lambda)?;
    let z = read_vector(&args.candidate)?;
    let certificate = check_stationarity(&params, &instance, &z, args.tols.tol_kkt, args.tols.eta)?;
    let passed = certificate.passed;
    print_json(&certificate)?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct PathRow {
    lambda: f64,
    objective: f64,
    residual_p: f64,
    support_w: usize,
    kkt_residual: f64,
    certified: bool,
}

fn cmd_path(args: PathArgs) -> Result<ExitCode> {
    let instance = args.instance.load()?;
    let grid = LambdaGridSpec {
        min: args.lambda_min,
        max: args.lambda_max,
        points: args.grid_points,
        log: !args.linear,
    }
    .build()?;
    let params = ProblemParams::new(args.params.p, args.params.q, args.params.r, grid[0])?;
    let opts = solver_options(&args.tols);
    let path = solve_path(&params, &instance, &grid, &opts)?;
    let rows: Vec<PathRow> = path
        .solutions
        .iter()
        .enumerate()
        .map(|(i, sol)| PathRow {
            lambda: path.lambda_grid[i],
            objective: sol.objective,
            residual_p: path.residual_p_norms[i],
            support_w: sol.support.len(),
            kkt_residual: sol.kkt_residual,
            certified: sol.certified,
        })
        .collect();
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let mut writer = csv::Writer::from_path(dir.join("path.csv"))?;
        for row in &rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
    }
    print_json(&rows)?;
    Ok(ExitCode::SUCCESS)
}

fn load_dict(n: usize, path: &Option<PathBuf>) -> Result<Dict> {
    match path {
        Some(p) => Dict::from_matrix(read_matrix_csv(p)?),
        None => Ok(Dict::identity(n)),
    }
}

fn measure_rip(
    a: &nalgebra::DMatrix<f64>,
    dict: &Dict,
    t: usize,
    p: f64,
    mode: Option<RipModeArg>,
    trials: usize,
    seed: u64,
) -> Result<RipReport> {
    let exact = match mode {
        Some(RipModeArg::Exact) => {
            if p != 2.0 {
                return Err(Error::InvalidParams(format!(
                    "exact mode enumerates an l2 eigenproblem and requires p = 2, got p = {p}"
                )));
            }
            true
        }
        Some(RipModeArg::Estimate) => false,
        None => p == 2.0 && exact_enumeration_feasible(a.ncols(), t),
    };
    if exact {
        rip_exact_l2(a, dict, t)
    } else {
        rip_estimate(a, dict, t, p, trials, seed)
    }
}

fn cmd_rip(args: RipArgs) -> Result<ExitCode> {
    let a = read_matrix_csv(&args.matrix)?;
    let dict = load_dict(a.ncols(), &args.dict)?;
    let report = measure_rip(&a, &dict, args.t, args.p, args.mode, args.trials, args.seed)?;
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_nsp(args: NspArgs) -> Result<ExitCode> {
    let a = read_matrix_csv(&args.matrix)?;
    let dict = load_dict(a.ncols(), &args.dict)?;
    let report = measure_rip(&a, &dict, args.t, args.p, args.mode, args.trials, args.seed)?;
    let norms = dict.operator_norms();
    let derivation = nsp_constants_from_rip(&report, &norms, args.rho, args.s)?;
    let counterexample = if args.budget > 0 {
        nsp_falsify(&a, &dict, &derivation.params, args.p, args.budget, mix_seed(args.seed, 7))?
    } else {
        None
    };
    let counterexample_json = counterexample
        .as_ref()
        .map(|(v, s_set)| {
            let margin = nsp_check_vector(&a, &dict, v, s_set, &derivation.params, args.p)?;
            Ok::<_, Error>(json!({
                "v": v.as_slice(),
                "support": s_set,
                "margin": margin,
            }))
        })
        .transpose()?;
    let found = counterexample.is_some();
    print_json(&json!({
        "rip": report,
        "derivation": derivation,
        "counterexample": counterexample_json,
    }))?;
    Ok(if found { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    let spec = EnsembleSpec {
        kind: args.ensemble.into(),
        m: args.m,
        n: args.n,
        scale: args.scale.unwrap_or_else(|| default_scale(args.p, args.m)),
        seed: args.seed,
    };
    let a = generate_matrix(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    write_matrix_csv(&args.out.join("matrix.csv"), &a)?;
    let dict_sidecar = match args.kappa {
        Some(kappa) => {
            let dict_seed = mix_seed(args.seed, 1);
            let b = random_conditioned_b(args.n, kappa, dict_seed)?;
            write_matrix_csv(&args.out.join("dict.csv"), &b)?;
            json!({ "kappa_target": kappa, "n": args.n, "seed": dict_seed })
        }
        None => serde_json::Value::Null,
    };
    let sidecar = json!({ "matrix": spec, "dict": dict_sidecar });
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(args.out.join("spec.json"), text)?;
    print_json(&sidecar)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode> {
    let requested: ExperimentKind = args.name.parse()?;
    let text = std::fs::read_to_string(&args.config)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if config.experiment != requested {
        return Err(Error::Config(format!(
            "config declares experiment \"{}\" but \"{}\" was requested",
            config.experiment, requested
        )));
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(workers) = args.workers {
        config.workers = Some(workers);
    }
    config.validate()?;
    let report = lassolab::harness::run(&config)?;
    report.write_to_dir(&args.out)?;
    print_json(&report.summary)?;
    Ok(if report.all_certified_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
