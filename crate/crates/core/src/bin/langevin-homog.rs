use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use langevin_homog::cli_io::{parse_config_with, run, Kind, Overrides};

/// Runs one experiment described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "langevin-homog", version)]
struct Args {
    /// validate, simulate, ladder-strong, ladder-momentum, ladder-integral,
    /// drift, cell, lyapunov or dbcheck
    kind: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (falls back to the config, then LH_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(kind) = Kind::parse(&args.kind) else {
        eprintln!("unknown kind `{}`", args.kind);
        return ExitCode::from(1);
    };
    let ov = Overrides { kind: Some(kind), seed: args.seed, threads: args.threads, out: args.out };
    let plan = match parse_config_with(&args.config, &ov) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let outcome = run(&plan);
    let dir = plan.out_dir();
    if let Some(e) = &outcome.record.error {
        eprintln!("error: {e}");
    }
    for v in &outcome.record.verdicts {
        let value = v.value.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!("{:<24} {:>10}  {}", v.name, value, if v.passed { "pass" } else { "FAIL" });
    }
    println!("wrote {} files to {} in {:.2}s", outcome.files.len(), dir.display(), outcome.wall_time);
    ExitCode::from(outcome.exit_code() as u8)
}
