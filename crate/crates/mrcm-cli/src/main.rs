use clap::Parser;
use std::path::PathBuf;

/// Simulation and verification laboratory for marked random connection
/// models. The command (kernels, simulate, scan, fit, validate, report)
/// and every experiment parameter live in the configuration document.
#[derive(Parser)]
#[command(name = "mrcm", version, about)]
struct Args {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Worker threads (overrides MRCM_THREADS and the config; 0 = auto).
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory (overrides the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() {
    let args = Args::parse();
    let code = mrcm_cli::run(&args.config, args.workers, args.out_dir.as_deref());
    std::process::exit(code);
}
