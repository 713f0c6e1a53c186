use std::path::PathBuf;
use std::process::ExitCode;

use bne_verify::bounds::Mode;
use bne_verify::run::{self, GridWidths, RunConfig, RunOptions};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bne-verify", version, about = "Certified equilibrium verification for sealed-bid auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification job described by a JSON config.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ExInterim,
    ExAnte,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, conflicts_with = "grid_sweep")]
    grid_w: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    grid_sweep: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Attach oracle diagnostics (never replaces certified terms).
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads_from_env() -> Result<(), String> {
    let Ok(v) = std::env::var("BNE_VERIFY_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| format!("BNE_VERIFY_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("BNE_VERIFY_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn apply(args: &VerifyArgs, cfg: &mut RunConfig) {
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::ExInterim => Mode::ExInterim,
            ModeArg::ExAnte => Mode::ExAnte,
        };
    }
    if let Some(w) = args.grid_w {
        cfg.grid_w = GridWidths::Single(w);
    }
    if let Some(ws) = &args.grid_sweep {
        cfg.grid_w = GridWidths::Sweep(ws.clone());
    }
    if let Some(d) = args.delta {
        cfg.delta_total = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
}

fn verify(args: VerifyArgs) -> ExitCode {
    if let Err(e) = threads_from_env() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(run::error_exit_code(&e) as u8);
        }
    };
    apply(&args, &mut cfg);
    let opts = RunOptions {
        oracle: args.oracle,
        ..RunOptions::default()
    };
    match run::run(&cfg, &opts) {
        Ok(out) => {
            for r in &out.reports {
                let b = &r.bound;
                println!(
                    "agent {} w={} empirical={:.6} total={:.6} (x H = {:.6}) confidence={:.4}{}",
                    b.agent,
                    b.grid_w,
                    b.empirical,
                    b.total,
                    b.total_denormalized,
                    b.confidence,
                    if b.vacuous { " VACUOUS" } else { "" }
                );
                for f in &b.flags {
                    println!("  flag: {f}");
                }
                if let Some(a) = r.oracle.as_ref().and_then(|o| o.analytic_loss.as_ref()) {
                    println!("  oracle loss: {:.6} ({:?})", a.value, a.method);
                }
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::error_exit_code(&e) as u8)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Verify(args) => verify(args),
    }
}
