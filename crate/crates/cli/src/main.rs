use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use tkz_cli::config::{ChangeSpec, RunConfig};
use tkz_cli::output::{rng, sample_branches, sample_points, to_json};
use tkz_cli::pipeline::{analyze_change, run_pipeline, solve_local, StageError};
use tkz_core::connection::{euler_contraction, flatness_residual, ConnectionSystem};
use tkz_core::liealg::{build_algebra, dual_basis, AlgebraSpec, StructureReport};
use tkz_core::linalg::CMatrix;
use tkz_core::serial;
use tkz_core::singular::{TransformedSystem, DEFAULT_PRUNE_TOL};
use tkz_core::transport::{branch_states, monodromy_loop, transport_matrix, BranchState, PathSpec};
use tkz_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tkz", version, about = "Twisted Knizhnik-Zamolodchikov connections: build, analyze, solve, transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lie algebra data and structure checks.
    Algebra {
        #[command(subcommand)]
        command: AlgebraCommand,
    },
    /// Build the connection matrices.
    Connection {
        #[command(subcommand)]
        command: ConnectionCommand,
    },
    /// Flatness and Euler-contraction checks on a saved connection.
    Check {
        #[command(subcommand)]
        command: CheckCommand,
    },
    /// Exact singularity analysis after a change of variables.
    Singular {
        #[command(subcommand)]
        command: SingularCommand,
    },
    /// Local Frobenius solutions.
    Solve {
        #[command(subcommand)]
        command: SolveCommand,
    },
    /// Transport the identity fundamental matrix along a path.
    Transport {
        #[arg(long)]
        conn: PathBuf,
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monodromy of a closed loop.
    Monodromy {
        #[arg(long)]
        conn: PathBuf,
        #[arg(long = "loop")]
        loop_path: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage requested by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report destination; overrides the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AlgebraCommand {
    Info {
        #[arg(long, default_value = "sl(2)")]
        algebra: String,
    },
}

#[derive(Subcommand)]
enum ConnectionCommand {
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CheckCommand {
    Flatness {
        #[arg(long)]
        conn: PathBuf,
        /// JSON array of points; random points are drawn when absent.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Euler {
        #[arg(long)]
        conn: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum SingularCommand {
    Analyze {
        #[arg(long)]
        conn: PathBuf,
        #[arg(long)]
        change: PathBuf,
        /// Cutoff for every variable, such as `6` or `13/2`; overrides the change file.
        #[arg(long)]
        cutoff: Option<Rational64>,
        #[arg(long, default_value_t = DEFAULT_PRUNE_TOL)]
        prune: f64,
        /// Where to save the transformed system for `solve local`.
        #[arg(long)]
        system_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SolveCommand {
    Local {
        /// Transformed system written by `singular analyze`.
        #[arg(long)]
        system: PathBuf,
        /// Expansion coordinate, from 1.
        #[arg(long)]
        component: usize,
        #[arg(long, default_value_t = tkz_core::frobenius::DEFAULT_ORDER)]
        order: usize,
        /// Values of the other coordinates as a JSON array of [re, im].
        #[arg(long)]
        at: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TKZ_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn at(stage: &'static str) -> impl Fn(Error) -> StageError {
    move |error| StageError { stage, error }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = to_json(value)?;
    match out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}

fn points_or_random(conn: &ConnectionSystem, file: Option<&Path>, count: usize, seed: u64) -> Result<Vec<Vec<C>>> {
    match file {
        Some(p) => {
            let raw: Vec<Vec<[f64; 2]>> = read_json(p)?;
            if raw.iter().any(|z| z.len() != conn.n) {
                return Err(Error::Config(format!("every point needs {} coordinates", conn.n)));
            }
            Ok(raw.iter().map(|z| z.iter().map(|&v| serial::complex_from_json(v)).collect()).collect())
        }
        None => Ok(sample_points(&mut rng(seed), conn.n, count)),
    }
}

#[derive(Serialize)]
struct AlgebraInfo {
    name: String,
    dim: usize,
    dual_coxeter: serial::JsonRational,
    basis_labels: Vec<String>,
    roots: Option<Vec<Vec<i64>>>,
    #[serde(with = "serial::matrix")]
    form: CMatrix,
    dual_basis_error: f64,
    structure: StructureReport,
}

#[derive(Serialize)]
struct FlatnessPoint {
    #[serde(with = "serial::complex_vec")]
    point: Vec<C>,
    residual: f64,
    est_error: f64,
    worst_pair: Option<(usize, usize)>,
}

#[derive(Serialize)]
struct FlatnessOutput {
    max_residual: f64,
    points: Vec<FlatnessPoint>,
}

#[derive(Serialize)]
struct EulerOutput {
    #[serde(with = "serial::matrix")]
    mean: CMatrix,
    deviation: f64,
}

#[derive(Serialize)]
struct TransportOutput {
    path: PathSpec,
    #[serde(with = "serial::matrix")]
    value: CMatrix,
    est_error: f64,
    end_branches: Vec<i64>,
    tracked: Vec<BranchState>,
}

fn dispatch(cmd: Command) -> std::result::Result<(), StageError> {
    match cmd {
        Command::Algebra { command: AlgebraCommand::Info { algebra } } => {
            let stage = at("algebra");
            let spec: AlgebraSpec = algebra.parse().map_err(&stage)?;
            let alg = build_algebra(&spec).map_err(&stage)?;
            let duals = dual_basis(&alg).map_err(&stage)?;
            let mut err: f64 = 0.0;
            for (i, d) in duals.iter().enumerate() {
                for j in 0..alg.dim {
                    let target = if i == j { 1.0 } else { 0.0 };
                    err = err.max((alg.pairing(d, &alg.basis_vector(j)) - target).norm());
                }
            }
            let info = AlgebraInfo {
                name: alg.name.clone(),
                dim: alg.dim,
                dual_coxeter: alg.dual_coxeter.into(),
                basis_labels: alg.basis_labels.clone(),
                roots: alg.roots.clone(),
                form: alg.form.clone(),
                dual_basis_error: err,
                structure: alg.validate(),
            };
            emit(&info, None).map_err(stage)
        }
        Command::Connection { command: ConnectionCommand::Build { config, out } } => {
            let cfg = load_config(&config).map_err(at("config"))?;
            let built = cfg.build().map_err(at("connection"))?;
            emit(&built.connection, out.as_deref()).map_err(at("connection"))
        }
        Command::Check { command: CheckCommand::Flatness { conn, points, count, seed } } => {
            let stage = at("flatness");
            let conn: ConnectionSystem = read_json(&conn).map_err(&stage)?;
            let pts = points_or_random(&conn, points.as_deref(), count, seed).map_err(&stage)?;
            let mut rows = Vec::new();
            for z in pts {
                let rep = flatness_residual(&conn, &z, &vec![0; conn.n]).map_err(&stage)?;
                rows.push(FlatnessPoint { point: z, residual: rep.residual, est_error: rep.est_error, worst_pair: rep.worst_pair });
            }
            let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            emit(&FlatnessOutput { max_residual, points: rows }, None).map_err(stage)
        }
        Command::Check { command: CheckCommand::Euler { conn, points, count, seed } } => {
            let stage = at("euler");
            let conn: ConnectionSystem = read_json(&conn).map_err(&stage)?;
            let pts = points_or_random(&conn, points.as_deref(), count, seed).map_err(&stage)?;
            let mut r = rng(seed.wrapping_add(1));
            let branches = sample_branches(&mut r, conn.n, pts.len());
            let rep = euler_contraction(&conn, &pts, &branches).map_err(&stage)?;
            emit(&EulerOutput { mean: rep.mean, deviation: rep.deviation }, None).map_err(stage)
        }
        Command::Singular { command: SingularCommand::Analyze { conn, change, cutoff, prune, system_out, out } } => {
            let stage = at("singular");
            let conn: ConnectionSystem = read_json(&conn).map_err(&stage)?;
            let spec: ChangeSpec = read_json(&change).map_err(&stage)?;
            let cutoffs = match cutoff {
                Some(q) => vec![q; conn.n],
                None => spec.cutoffs().map_err(&stage)?,
            };
            if cutoffs.len() != conn.n {
                return Err(stage(Error::Config(format!("{} cutoffs supplied for n = {}", cutoffs.len(), conn.n))));
            }
            let (summary, ts) = analyze_change(&conn, &spec, 0, &cutoffs, prune).map_err(&stage)?;
            if let Some(p) = system_out {
                emit(&ts, Some(&p)).map_err(&stage)?;
            }
            emit(&summary, out.as_deref()).map_err(stage)
        }
        Command::Solve { command: SolveCommand::Local { system, component, order, at: point, out } } => {
            let stage = at("local");
            let ts: TransformedSystem = read_json(&system).map_err(&stage)?;
            if component == 0 || component > ts.n {
                return Err(stage(Error::Config(format!("component must lie in 1..={}", ts.n))));
            }
            let eta: Vec<C> = match point {
                Some(text) => {
                    let raw: Vec<[f64; 2]> = serde_json::from_str(&text)
                        .map_err(|e| stage(Error::Config(format!("cannot parse --at: {e}"))))?;
                    raw.into_iter().map(serial::complex_from_json).collect()
                }
                None if ts.n == 1 => vec![C::new(0.0, 0.0)],
                None => return Err(stage(Error::Config("--at is required when there is more than one coordinate".into()))),
            };
            let summary = solve_local(&ts, component - 1, &eta, &vec![0; ts.n], order).map_err(&stage)?;
            emit(&summary, out.as_deref()).map_err(stage)
        }
        Command::Transport { conn, path, tol, out } => {
            let stage = at("transport");
            let conn: ConnectionSystem = read_json(&conn).map_err(&stage)?;
            let path: PathSpec = read_json(&path).map_err(&stage)?;
            let seed = CMatrix::identity(conn.state_dim, conn.state_dim);
            let res = transport_matrix(&conn, &path, &seed, tol).map_err(&stage)?;
            let output = TransportOutput {
                end_branches: res.coord_branches(),
                tracked: branch_states(&conn, &res.end, &res.tracked_logs),
                value: res.value,
                est_error: res.est_error,
                path,
            };
            emit(&output, out.as_deref()).map_err(stage)
        }
        Command::Monodromy { conn, loop_path, tol, out } => {
            let stage = at("monodromy");
            let conn: ConnectionSystem = read_json(&conn).map_err(&stage)?;
            let path: PathSpec = read_json(&loop_path).map_err(&stage)?;
            let seed = CMatrix::identity(conn.state_dim, conn.state_dim);
            let res = monodromy_loop(&conn, &path, &seed, tol).map_err(&stage)?;
            emit(&res, out.as_deref()).map_err(stage)
        }
        Command::Run { config, out } => {
            let cfg = load_config(&config).map_err(at("config"))?;
            let run = run_pipeline(&cfg)?;
            let stage = at("report");
            if let Some(p) = &cfg.output.connection {
                emit(&run.connection, Some(p)).map_err(&stage)?;
            }
            if let Some(dir) = &cfg.output.csv_dir {
                let csv = &run.report.csv;
                for (name, text) in [("exponents.csv", &csv.exponents), ("flatness.csv", &csv.flatness), ("euler.csv", &csv.euler)] {
                    write_file(&dir.join(name), text).map_err(&stage)?;
                }
            }
            emit(&run.report, out.as_deref().or(cfg.output.report.as_deref())).map_err(stage)
        }
    }
}
