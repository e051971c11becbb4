//! Command-line driver: `gen`, `solve`, `distance`, `cluster`, `bench`, `eval`.
//!
//! Exit status is 0 on success, 1 for usage or input errors and 2 for
//! numerical failures.

pub mod format;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::badmm::{solve_badmm_from, BadmmConfig};
use crate::cluster::{d2_cluster, ClusterConfig};
use crate::datagen::{generate, Family, GenSpec, NtSpec};
use crate::model::{evaluate_objval, BarycenterProblem, BarycenterState, DiscreteDistribution, Method, SolveReport};
use crate::pam::{init_state, solve_barycenter_from, PamConfig};
use crate::transport::w2_distance;
use crate::{Error, Result};

pub use format::{parse_distributions, read_report, write_distributions, write_report};

#[derive(Debug, Parser)]
#[command(name = "wbary", version, about = "Free-support Wasserstein barycenters")]
pub struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Compute a barycenter and write a report.
    Solve(SolveArgs),
    /// Print the W2 distance between two distributions.
    Distance(DistanceArgs),
    /// D2-clustering of a dataset.
    Cluster(ClusterArgs),
    /// Run several methods on a dataset and write a CSV row per run.
    Bench(BenchArgs),
    /// Exact objective of a given barycenter (w, x).
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    /// Support size, or START:STEP:STOP for varied-nt.
    #[arg(long, value_parser = parse_nt)]
    pub nt: NtSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, default_value = "pam", value_parser = parse_method)]
    pub method: Method,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub pinf_tol: f64,
    /// Outer iteration cap (default 100 for pam, 2000 for badmm).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// KL penalty for badmm (default: mean squared distance at the start).
    #[arg(long)]
    pub rho_kl: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the barycenter weights, one per line.
    #[arg(long)]
    pub w_out: Option<PathBuf>,
    /// Also write the barycenter support, one point per line.
    #[arg(long)]
    pub x_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Which distribution of A to use.
    #[arg(long, default_value_t = 0)]
    pub index_a: usize,
    #[arg(long, default_value_t = 0)]
    pub index_b: usize,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub input: PathBuf,
    /// Centroid support size (default: largest support in the input).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub max_rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "pam,badmm", value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub m: Vec<usize>,
    /// Use only the first N distributions; several values give several rows.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub pinf_tol: f64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub w: PathBuf,
    #[arg(long)]
    pub x: PathBuf,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_nt(s: &str) -> std::result::Result<NtSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status. Normal output goes to `out`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => 2,
        _ => 1,
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be positive"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::invalid(e.to_string()))?;
    let printed = pool.install(|| match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| None),
        Command::Solve(a) => cmd_solve(a).map(|_| None),
        Command::Distance(a) => cmd_distance(a).map(Some),
        Command::Cluster(a) => cmd_cluster(a).map(|_| None),
        Command::Bench(a) => cmd_bench(a).map(|_| None),
        Command::Eval(a) => cmd_eval(a).map(Some),
    })?;
    if let Some(v) = printed {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = GenSpec { family: a.family, n: a.n, d: a.d, nt: a.nt, seed: a.seed };
    let data = generate(&spec)?;
    write_distributions(&data, &a.output)?;
    info!("wrote {} distributions to {}", data.len(), a.output.display());
    Ok(())
}

fn load(path: &Path) -> Result<Vec<DiscreteDistribution>> {
    parse_distributions(path).map_err(|e| match e {
        Error::Parse { line, message } => Error::invalid(format!("{}:{line}: {message}", path.display())),
        other => other,
    })
}

/// Runs one method from the shared seeded start.
fn run_method(
    method: Method,
    problem: &BarycenterProblem,
    init: BarycenterState,
    seed: u64,
    pinf_tol: f64,
    max_iter: Option<usize>,
    rho_kl: Option<f64>,
) -> Result<(BarycenterState, SolveReport)> {
    match method {
        Method::Pam => {
            let config = PamConfig {
                seed,
                pinf_tol,
                k_max: max_iter.unwrap_or(PamConfig::default().k_max),
                ..PamConfig::default()
            };
            let sol = solve_barycenter_from(problem, &config, init)?;
            Ok((sol.state, sol.report))
        }
        Method::Badmm => {
            let config = BadmmConfig {
                seed,
                pinf_tol,
                rho_kl,
                k_max: max_iter.unwrap_or(BadmmConfig::default().k_max),
                ..BadmmConfig::default()
            };
            let sol = solve_badmm_from(problem, &config, init)?;
            Ok((sol.state.to_barycenter_state(), sol.report))
        }
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let problem = BarycenterProblem::new(load(&a.input)?, a.m)?;
    let init = init_state(&problem, a.seed);
    let (state, report) = run_method(a.method, &problem, init, a.seed, a.pinf_tol, a.max_iter, a.rho_kl)?;
    write_report(&report, &a.output)?;
    if let Some(p) = &a.w_out {
        fs::write(p, format::serialize_vector(&state.w))?;
    }
    if let Some(p) = &a.x_out {
        fs::write(p, format::serialize_matrix(&state.x))?;
    }
    info!("{}: objval {:e}, pinfeas {:e}", report.method, report.objval, report.pinfeas);
    Ok(())
}

fn pick(data: Vec<DiscreteDistribution>, index: usize, path: &Path) -> Result<DiscreteDistribution> {
    let n = data.len();
    data.into_iter()
        .nth(index)
        .ok_or_else(|| Error::invalid(format!("{} holds {n} distributions, no index {index}", path.display())))
}

fn cmd_distance(a: &DistanceArgs) -> Result<f64> {
    let p = pick(load(&a.a)?, a.index_a, &a.a)?;
    let q = pick(load(&a.b)?, a.index_b, &a.b)?;
    w2_distance(&p, &q)
}

fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let data = load(&a.input)?;
    let m = a.m.unwrap_or_else(|| data.iter().map(|p| p.len()).max().unwrap_or(1));
    let config = ClusterConfig {
        k: a.k,
        m,
        max_rounds: a.max_rounds,
        seed: a.seed,
        pam: PamConfig { seed: a.seed, ..PamConfig::default() },
    };
    let model = d2_cluster(&data, &config)?;
    fs::write(&a.output, format::serialize_model(&model)?)?;
    info!("objective {:e} after {} rounds", model.within_cluster_objective, model.rounds);
    Ok(())
}

pub const BENCH_HEADER: &str = "method,N,m,mean_nt,time_s,objval,pinfeas,iters";

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let data = load(&a.input)?;
    let sizes = if a.sizes.is_empty() { vec![data.len()] } else { a.sizes.clone() };
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for &n in &sizes {
        if n == 0 || n > data.len() {
            return Err(Error::invalid(format!("size {n} outside 1..={}", data.len())));
        }
        for &m in &a.m {
            let problem = BarycenterProblem::new(data[..n].to_vec(), m)?;
            let init = init_state(&problem, a.seed);
            for &method in &a.methods {
                let (_, r) = run_method(method, &problem, init.clone(), a.seed, a.pinf_tol, None, None)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    method,
                    problem.n_distributions(),
                    m,
                    problem.mean_support(),
                    r.wall_time_s,
                    format::fmt_f64(r.objval),
                    format::fmt_f64(r.pinfeas),
                    r.outer_iterations
                );
            }
        }
    }
    fs::write(&a.output, csv)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<f64> {
    let data = load(&a.input)?;
    let w = format::parse_vector_str(&fs::read_to_string(&a.w)?)?;
    let x = format::parse_matrix_str(&fs::read_to_string(&a.x)?)?;
    let problem = BarycenterProblem::new(data, w.len())?;
    if x.nrows() != w.len() || x.ncols() != problem.dim() {
        return Err(Error::dim(format!(
            "x is {}x{}, expected {}x{}",
            x.nrows(),
            x.ncols(),
            w.len(),
            problem.dim()
        )));
    }
    if w.iter().any(|v| *v < 0.0) || (w.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("barycenter weights must be nonnegative and sum to 1"));
    }
    evaluate_objval(&w, x.view(), &problem)
}
