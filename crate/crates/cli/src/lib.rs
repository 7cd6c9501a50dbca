//! `wassfem solve|convergence|info --config PATH [--out DIR] [--deterministic]`

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use wassfem_core::alg2::IterationRecord;
use wassfem_core::io::{self, config_dir, load_config, load_convergence_config};
use wassfem_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Log an iteration line to stderr every this many iterations.
const PROGRESS_EVERY: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "wassfem", version, about = "Space-time finite elements for OT, MFP and MFG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run ALG2 and write the summary, iteration log and snapshots.
    Solve(RunArgs),
    /// Run the traveling-wave refinement study and write the error table.
    Convergence(RunArgs),
    /// Print version and build options.
    Info,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Single-threaded, bitwise-reproducible run.
    #[arg(long)]
    deterministic: bool,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SolverNotConverged { .. } | Error::Prox { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn output_dir(args: &RunArgs, configured: Option<&Path>) -> PathBuf {
    match (&args.out, configured) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) if c.is_relative() => config_dir(&args.config).join(c),
        (None, Some(c)) => c.to_path_buf(),
        (None, None) => PathBuf::from("wassfem-out"),
    }
}

fn progress(rec: &IterationRecord) {
    if rec.iter.is_multiple_of(PROGRESS_EVERY) {
        eprintln!("iter {:>6}  err_a {:.3e}  err_r {:.3e}  cg {}", rec.iter, rec.err_a, rec.err_r, rec.cg_iters);
    }
}

fn solve(args: &RunArgs) -> Result<i32, Error> {
    let mut cfg = load_config(&args.config)?;
    cfg.deterministic |= args.deterministic;
    let out = output_dir(args, cfg.output_dir.as_deref());
    let outcome = io::solve(&cfg, &config_dir(&args.config), &out, &mut progress)?;
    let s = &outcome.summary;
    println!(
        "{} after {} iterations (err_a {:.3e}, err_r {:.3e}); W2^2 = {:.6e}, mass drift {:.3e}",
        if s.converged { "converged" } else { "NOT converged" },
        s.iterations,
        s.err_a,
        s.err_r,
        s.metrics.w2,
        s.metrics.mass_drift
    );
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if s.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: iteration cap {} reached before tol {}", cfg.max_iter, cfg.tol);
        Ok(EXIT_NUMERICAL)
    }
}

fn convergence(args: &RunArgs) -> Result<i32, Error> {
    let mut cfg = load_convergence_config(&args.config)?;
    cfg.study.deterministic |= args.deterministic;
    let out = output_dir(args, cfg.output_dir.as_deref());
    let (rows, files) = io::convergence(&cfg, &out)?;
    println!("{:>2} {:>5} {:>5} {:>7} {:>12} {:>6}", "k", "level", "cells", "iters", "L2(rho)", "order");
    let mut code = EXIT_OK;
    for r in &rows {
        match (&r.error, r.l2_rho) {
            (Some(e), _) => {
                eprintln!("k={} level={}: {e}", r.k, r.level);
                code = EXIT_NUMERICAL;
            }
            (None, l2) => println!(
                "{:>2} {:>5} {:>5} {:>7} {:>12.4e} {:>6}",
                r.k,
                r.level,
                r.cells,
                r.iterations,
                l2.unwrap_or(f64::NAN),
                r.order_rho.map(|o| format!("{o:.2}")).unwrap_or_else(|| "-".into())
            ),
        }
    }
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(code)
}

fn info() -> i32 {
    println!("wassfem {}", env!("CARGO_PKG_VERSION"));
    println!("target: {}-{}", std::env::consts::ARCH, std::env::consts::OS);
    println!("profile: {}", if cfg!(debug_assertions) { "debug" } else { "release" });
    println!(
        "threads available: {}",
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    println!("image input: PGM P2/P5 (8/16-bit)");
    println!("outputs: CSV snapshots, P2 rasters, JSON summaries");
    EXIT_OK
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Convergence(a) => convergence(a),
        Command::Info => Ok(info()),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}
