//! `htlr-bench`: runs the uniform-grid, rank-sweep and quasi-uniform
//! experiments and writes CSV or JSON records.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use htlr::bench::{rank_explore, DomainPair, QuasiBench, UniformBench};
use htlr::grid::AdmissibilityRule;
use htlr::quasi::{load_mesh, structured_trimesh};
use htlr::Error;

#[derive(Parser, Debug)]
#[command(name = "htlr-bench", version, about = "Benchmarks for hierarchical Tucker low-rank matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and apply an operator on a uniform grid, optionally with the
    /// H-matrix baseline.
    BenchUniform(UniformArgs),
    /// Compression error of interpolation, SVD and STHOSVD on fixed box pairs.
    RankExplore(RankArgs),
    /// Apply the quasi-uniform pipeline over a sweep of oversampling ratios.
    BenchQuasi(QuasiArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Adm {
    Weak,
    Strong,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Domain {
    Neighbor,
    Separated,
    Both,
}

#[derive(Args, Debug)]
struct Output {
    /// Write records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads for construction and oracles.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct UniformArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: u8,
    #[arg(long, default_value = "gaussian", value_parser = ["gaussian", "slp2d", "slp3d"])]
    kernel: String,
    /// Points per direction; must be the leaf side times a power of two.
    #[arg(long)]
    n: usize,
    /// Tucker rank per mode.
    #[arg(long, default_value_t = 8)]
    p: usize,
    /// Leaf side n0 (N0 = n0^d points per leaf).
    #[arg(long, default_value_t = 16)]
    leaf: usize,
    #[arg(long, value_enum, default_value = "weak")]
    adm: Adm,
    /// Strong admissibility parameter; defaults to sqrt(d).
    #[arg(long)]
    eta: Option<f64>,
    /// Also build the H-matrix baseline.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows sampled for the error estimate.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Timing repetitions; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: u8,
    #[arg(long, default_value = "gaussian", value_parser = ["gaussian", "slp2d", "slp3d"])]
    kernel: String,
    #[arg(long, value_enum, default_value = "both")]
    domain: Domain,
    /// Points per direction in each box; defaults to 32 in 2D and 16 in 3D.
    #[arg(long)]
    points: Option<usize>,
    /// Largest rank per mode; the sweep covers 1..=p.
    #[arg(long)]
    p: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct QuasiArgs {
    #[arg(long, default_value = "gaussian", value_parser = ["gaussian", "slp2d"])]
    kernel: String,
    /// Number of triangles of a structured mesh (2 k^2).
    #[arg(long, conflicts_with = "mesh", required_unless_present = "mesh")]
    n: Option<usize>,
    /// Mesh file to read instead of generating one.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Oversampling ratios.
    #[arg(long, value_delimiter = ',', default_value = "1.5,2,3")]
    rho: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    p: usize,
    #[arg(long, default_value_t = 16)]
    leaf: usize,
    #[arg(long, value_enum, default_value = "weak")]
    adm: Adm,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[command(flatten)]
    output: Output,
}

/// Failure with its exit code: 2 for bad input, 1 for runtime errors.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::IndivisibleGrid { .. } | Error::RankTooLarge { .. } => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn rule(adm: Adm, eta: Option<f64>, dim: usize) -> Result<AdmissibilityRule, Failure> {
    match adm {
        Adm::Weak => Ok(AdmissibilityRule::Weak),
        Adm::Strong => Ok(AdmissibilityRule::strong(eta.unwrap_or((dim as f64).sqrt()))?),
    }
}

fn emit<T: Serialize>(records: &[T], output: &Output) -> Result<(), Failure> {
    let runtime = |e: String| Failure { code: 1, message: e };
    let mut sink: Box<dyn Write> = match &output.out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    match output.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for r in records {
                w.serialize(r).map_err(|e| runtime(e.to_string()))?;
            }
            w.flush().map_err(|e| runtime(e.to_string()))?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut sink, records).map_err(|e| runtime(e.to_string()))?;
            writeln!(sink).map_err(|e| runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn set_threads(n: usize) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure { code: 1, message: e.to_string() })
}

fn bench_uniform(a: UniformArgs) -> Result<(), Failure> {
    set_threads(a.output.threads)?;
    let dim = a.dim as usize;
    let bench = UniformBench {
        dim,
        kernel: a.kernel,
        n: a.n,
        p: a.p,
        leaf: a.leaf,
        rule: rule(a.adm, a.eta, dim)?,
        baseline: a.baseline,
        seed: a.seed,
        sample_size: a.samples,
        repeats: a.repeats,
    };
    // reject bad flag combinations before any work
    bench.config()?;
    emit(&bench.run()?, &a.output)
}

fn rank(a: RankArgs) -> Result<(), Failure> {
    set_threads(a.output.threads)?;
    let dim = a.dim as usize;
    let points = a.points.unwrap_or(if dim == 2 { 32 } else { 16 });
    let pmax = a.p.unwrap_or(if dim == 2 { 16 } else { 8 });
    if pmax == 0 || pmax > points {
        return Err(Failure::usage(format!("--p must lie in 1..={points}")));
    }
    let ps: Vec<usize> = (1..=pmax).collect();
    let domains = match a.domain {
        Domain::Neighbor => vec![DomainPair::Neighbor],
        Domain::Separated => vec![DomainPair::Separated],
        Domain::Both => vec![DomainPair::Neighbor, DomainPair::Separated],
    };
    let mut records = Vec::new();
    for d in domains {
        records.extend(rank_explore(dim, &a.kernel, d, points, &ps)?);
    }
    emit(&records, &a.output)
}

fn bench_quasi(a: QuasiArgs) -> Result<(), Failure> {
    set_threads(a.output.threads)?;
    let mesh = match (&a.mesh, a.n) {
        (Some(path), _) => load_mesh(path)?,
        (None, Some(n)) => {
            let k = ((n / 2) as f64).sqrt().round() as usize;
            if n == 0 || 2 * k * k != n {
                return Err(Failure::usage(format!("--n {n} is not 2 k^2 for an integer k")));
            }
            structured_trimesh(k)?
        }
        (None, None) => return Err(Failure::usage("either --n or --mesh is required")),
    };
    if a.rho.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
        return Err(Failure::usage("--rho values must be positive"));
    }
    let bench = QuasiBench {
        kernel: a.kernel,
        p: a.p,
        leaf: a.leaf,
        rule: rule(a.adm, a.eta, 2)?,
        rhos: a.rho,
        seed: a.seed,
        sample_size: a.samples,
        repeats: a.repeats,
    };
    bench.config()?;
    emit(&bench.run(&mesh)?, &a.output)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BenchUniform(a) => bench_uniform(a),
        Command::RankExplore(a) => rank(a),
        Command::BenchQuasi(a) => bench_quasi(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
