//! deadmem: static analyzer for EVM bytecode that detects write memory
//! accesses that are never read.

mod fetch;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deadmem::fixpoint::SolveOrder;
use deadmem::pipeline::{
    self, analyze_contract, render_report, render_summary, AnalyzeConfig, CorpusOptions, Format,
    Status,
};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "deadmem", version, about = "EVM bytecode needless-write analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct AnalyzeFlags {
    /// Output format.
    #[arg(long, value_parser = ["json", "text"], default_value = "text")]
    format: String,
    /// Per-contract wall-clock timeout in seconds (0 disables).
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Maximum clones per basic block before aborting the contract.
    #[arg(long, default_value_t = 64)]
    max_clones: u32,
}

impl AnalyzeFlags {
    fn config(&self) -> AnalyzeConfig {
        AnalyzeConfig {
            max_clones: self.max_clones,
            timeout: (self.timeout_secs > 0).then(|| Duration::from_secs(self.timeout_secs)),
            solve_order: SolveOrder::Fifo,
            record_timing: true,
            strip_metadata: true,
        }
    }

    fn format(&self) -> Format {
        if self.format == "json" {
            Format::Json
        } else {
            Format::Text
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one contract (raw binary or hex file).
    Analyze {
        file: PathBuf,
        #[command(flatten)]
        flags: AnalyzeFlags,
        /// Write a DOT rendering of the cloned CFG to this file.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Analyze every .hex/.bin/.json contract in a directory.
    Corpus {
        dir: PathBuf,
        #[command(flatten)]
        flags: AnalyzeFlags,
        /// Run the concrete-execution soundness checkers on descriptor
        /// entries.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Fetch deployed runtime bytecode for an address and print it as hex.
    Fetch {
        /// 20-byte hex address (0x-prefixed or not).
        address: String,
        /// Explorer API endpoint (etherscan-compatible proxy API).
        #[arg(long, env = "DEADMEM_ENDPOINT", default_value = "https://api.etherscan.io/api")]
        endpoint: String,
        /// Cache directory for fetched bytecode.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit with 1; --help/--version print normally.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Analyze { file, flags, dot } => {
            let data =
                std::fs::read(&file).with_context(|| format!("cannot read {}", file.display()))?;
            let code = deadmem::parse_input(&data)?;
            let id = file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| file.display().to_string());
            let config = flags.config();
            if let Some(dot_path) = dot {
                match pipeline::analyze(&code, &config) {
                    Ok(analysis) => std::fs::write(&dot_path, analysis.cfg.to_dot())
                        .with_context(|| format!("cannot write {}", dot_path.display()))?,
                    Err(e) => eprintln!("note: no CFG to export: {e}"),
                }
            }
            let report = analyze_contract(&code, &id, &config);
            print!("{}", render_report(&report, flags.format()));
            Ok(exit_for(&[report.status]))
        }
        Command::Corpus { dir, flags, oracle_check } => {
            let summary =
                pipeline::run_corpus(&dir, &flags.config(), &CorpusOptions { oracle_check })?;
            print!("{}", render_summary(&summary, flags.format()));
            let statuses: Vec<Status> =
                summary.rows.iter().map(|r| r.report.status.clone()).collect();
            Ok(exit_for(&statuses))
        }
        Command::Fetch { address, endpoint, cache_dir } => {
            let config = fetch::FetchConfig {
                endpoint,
                api_key: std::env::var("DEADMEM_API_KEY").ok(),
                cache_dir: cache_dir.unwrap_or_else(fetch::default_cache_dir),
                max_retries: 3,
            };
            let code = fetch::fetch_bytecode(&address, &config)?;
            println!("0x{}", hex::encode(code));
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// 0 when every contract analyzed, 2 when any analysis failed or timed
/// out.
fn exit_for(statuses: &[Status]) -> ExitCode {
    if statuses.iter().any(|s| !matches!(s, Status::Ok)) {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
