use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fueter::cli::{self, CliError};

/// Verification suites and discrete Neumann experiments for the
/// k-Cauchy-Fueter complex on domains in R^4.
#[derive(Parser)]
#[command(name = "fueter-neumann", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the suites requested by a JSON config and write its report.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
    },
    /// Repeat grid-dependent measurements over several resolutions and
    /// print (or write) a CSV convergence table.
    Converge {
        /// Path to the experiment config (JSON); its grid.n is overridden.
        config: PathBuf,
        /// Comma-separated resolutions, e.g. 8,12,16.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
    },
    /// Sweep the exact polynomial suites over a range of k.
    Verify {
        /// Range "2..6" (inclusive) or a single value "3".
        #[arg(long)]
        k: String,
        /// Seed for the randomized sweeps.
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("FUETER_NEUMANN_THREADS") {
        match v.parse::<usize>() {
            Ok(t) if t > 0 => {
                // a failure here means a pool already exists, which is fine
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global();
            }
            _ => eprintln!("ignoring invalid FUETER_NEUMANN_THREADS={v:?}"),
        }
    }
}

fn real_main() -> Result<i32, CliError> {
    init_threads();
    match Cli::parse().cmd {
        Cmd::Run { config } => {
            let cfg = cli::load_config(&config.to_string_lossy())?;
            let report = cli::run(&cfg)?;
            cli::emit_report(&cfg, &report)
        }
        Cmd::Converge { config, n } => {
            let cfg = cli::load_config(&config.to_string_lossy())?;
            let rows = cli::report_convergence(&cfg, &n)?;
            let csv = cli::convergence_csv(&rows);
            match &cfg.output {
                Some(out) => {
                    std::fs::write(&out.path, &csv).map_err(|source| CliError::Io {
                        path: out.path.clone(),
                        source,
                    })?;
                    eprintln!("wrote {}", out.path);
                }
                None => print!("{csv}"),
            }
            Ok(0)
        }
        Cmd::Verify { k, seed } => {
            let ks = cli::parse_k_range(&k)?;
            let reports = cli::verify(&ks, seed);
            let mut all = true;
            for r in &reports {
                for s in &r.suites {
                    let verdict = if s.pass { "pass" } else { "FAIL" };
                    println!("k={} suite {:<10} {}", r.k, s.suite, verdict);
                }
                all &= r.pass;
            }
            Ok(if all { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
