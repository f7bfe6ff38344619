pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use sgp_core::decoder::Variant;
use sgp_core::metrics::MetricReport;
use sgp_core::{Result, SgpError};

pub use commands::Workspace;
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "sgp",
    version,
    about = "Spatiotemporal forecasting with precomputed reservoir embeddings",
    after_help = "Any configuration key can be overridden with --section.key=value."
)]
struct Cli {
    /// Directory that relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the embedding store for the configured dataset.
    Precompute,
    /// Train a decoder on an existing store and write a run directory.
    Train,
    /// Score a checkpoint on the test period.
    Eval {
        /// Checkpoint file; defaults to <run_dir>/checkpoint.sgpc.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the synthetic diffusion dataset as CSV files.
    Synth,
    /// Measure training updates per second at several graph sizes.
    Benchmark,
    /// Train architecture variants with shared settings.
    Ablate {
        /// full, no_space_enc, fc_dec or gc_dec; repeatable, all when omitted.
        #[arg(long)]
        variant: Vec<String>,
    },
}

/// Splits `--section.key=value` overrides from the arguments clap parses.
pub fn split_overrides<I, T>(args: I) -> Result<(Vec<OsString>, Vec<(String, String)>)>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let arg: OsString = arg.into();
        let Some(flag) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(arg);
            continue;
        };
        let name = flag.split('=').next().unwrap_or_default();
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let (key, value) = flag
            .split_once('=')
            .ok_or_else(|| SgpError::Usage(format!("override --{flag} needs the form --section.key=value")))?;
        overrides.push((key.to_string(), value.to_string()));
    }
    Ok((rest, overrides))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SGP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SgpError::Config(format!("SGP_THREADS must be a positive integer, got `{raw}`")))?;
    // a pool built by an earlier call in the same process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_report(out: &mut impl Write, prefix: &str, report: &MetricReport) -> Result<()> {
    for line in report.to_text().lines() {
        writeln!(out, "{prefix}{line}")?;
    }
    Ok(())
}

/// Runs one command line, writing `key=value` results to `out`.
pub fn run<I, T, W>(args: I, out: &mut W) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
    W: Write,
{
    let (args, overrides) = split_overrides(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return Err(SgpError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let ws = Workspace::new(cli.workdir);
    let cfg = RunConfig::load(cli.config.map(|c| ws.resolve(&c)).as_deref(), &overrides)?;
    configure_threads()?;

    match cli.command {
        Command::Precompute => {
            let s = commands::precompute(&ws, &cfg)?;
            writeln!(
                out,
                "store={} nodes={} steps={} width={}",
                s.path.display(),
                s.num_nodes,
                s.num_steps,
                s.width
            )?;
        }
        Command::Train => {
            let s = commands::train(&ws, &cfg)?;
            let best = s.outcome.best_epoch.map_or("none".to_string(), |e| e.to_string());
            writeln!(
                out,
                "run_dir={} epochs={} updates={} best_epoch={best}",
                s.run_dir.display(),
                s.outcome.history.len(),
                s.outcome.updates
            )?;
            write_report(out, "", &s.report)?;
        }
        Command::Eval { checkpoint } => {
            let report = commands::eval(&ws, &cfg, checkpoint.as_deref())?;
            write_report(out, "", &report)?;
        }
        Command::Synth => {
            for p in commands::synth(&ws, &cfg)? {
                writeln!(out, "wrote={}", p.display())?;
            }
        }
        Command::Benchmark => {
            let r = commands::benchmark(&ws, &cfg)?;
            for (nodes, t) in &r.rows {
                writeln!(
                    out,
                    "nodes={nodes} batch_per_sec={:.2} median_ms={:.4}",
                    t.batches_per_sec,
                    t.median_secs * 1e3
                )?;
            }
            writeln!(out, "time_ratio={:.4}", r.ratio())?;
        }
        Command::Ablate { variant } => {
            let variants = if variant.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variant.iter().map(|v| Variant::from_str(v)).collect::<Result<Vec<_>>>()?
            };
            for row in commands::ablate(&ws, &cfg, &variants)? {
                writeln!(out, "variant={} run_dir={}", row.variant, row.summary.run_dir.display())?;
                write_report(out, &format!("{} ", row.variant), &row.summary.report)?;
            }
        }
    }
    Ok(())
}

/// One-line machine-parseable description of a failure.
pub fn error_line(err: &SgpError) -> String {
    format!("error: kind={} msg={:?}", err.kind(), err.to_string())
}

pub fn exit_code(err: &SgpError) -> i32 {
    match err {
        SgpError::Config(_) | SgpError::Usage(_) => 2,
        _ => 1,
    }
}
