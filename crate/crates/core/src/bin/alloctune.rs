use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use alloctune::campaign::{
    cmd_capture, cmd_optimize, cmd_profile, cmd_report, cmd_select, cmd_validate, CampaignConfig, OptimizeOptions,
    ValidateOptions, VALIDATION_DIR,
};
use alloctune::evaluator::TimingSource;
use alloctune::space::{builtin_space, Allocator};
use alloctune::{Error, Result};

#[derive(Parser)]
#[command(name = "alloctune", version, about = "Multi-objective tuning of heap allocator parameters")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record the allocation trace of a command through the interposer.
    Capture {
        /// Trace file to write.
        #[arg(short, long)]
        output: PathBuf,
        /// Interposer library (defaults to $ALLOCTUNE_SHIM).
        #[arg(long)]
        shim: Option<PathBuf>,
        #[arg(last = true, required = true)]
        command: Vec<String>,
    },
    /// Distill a trace into a workload profile.
    Profile {
        trace: PathBuf,
        /// Allocation events the synthetic workload replays.
        #[arg(long)]
        ops: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run (or resume) an optimization campaign.
    Optimize {
        config: PathBuf,
        /// Continue from the newest checkpoint.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        /// Discard an existing campaign in the output directory.
        #[arg(long)]
        force: bool,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Write min-time, min-memory and knee recipes from a campaign's front.
    Select { campaign: PathBuf },
    /// Compare a recipe against the unmodified allocator on a real command.
    Validate(ValidateArgs),
    /// Write CSV and markdown reports for a campaign.
    Report { campaign: PathBuf },
    /// Print a built-in parameter space as TOML.
    Space { allocator: Allocator },
}

#[derive(Clone, Copy, ValueEnum)]
enum TimingArg {
    Internal,
    Posix,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    recipe: PathBuf,
    /// Baseline allocator (defaults to the recipe's).
    #[arg(long)]
    baseline: Option<Allocator>,
    #[arg(long)]
    runs: usize,
    /// Per-run timeout in seconds.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
    /// Also count instructions.
    #[arg(long)]
    instructions: bool,
    #[arg(long)]
    heap_template: Option<String>,
    #[arg(long)]
    timing_template: Option<String>,
    #[arg(long)]
    instructions_template: Option<String>,
    #[arg(long, value_enum)]
    timing_source: Option<TimingArg>,
    /// Report file to write.
    #[arg(long, conflicts_with = "campaign")]
    output: Option<PathBuf>,
    /// Store the report under <campaign>/validation/ for `report`.
    #[arg(long)]
    campaign: Option<PathBuf>,
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

fn validate(args: ValidateArgs) -> Result<i32> {
    let mut opts = ValidateOptions::new(args.recipe.clone(), args.command, args.runs);
    opts.baseline = args.baseline;
    opts.timeout_seconds = args.timeout;
    opts.measure_instructions = args.instructions;
    if let Some(t) = args.heap_template {
        opts.harness.heap_template = t;
    }
    if let Some(t) = args.timing_template {
        opts.harness.timing_template = t;
    }
    if let Some(t) = args.instructions_template {
        opts.harness.instructions_template = t;
    }
    if let Some(t) = args.timing_source {
        opts.harness.timing_source = match t {
            TimingArg::Internal => TimingSource::Internal,
            TimingArg::Posix => TimingSource::Posix,
        };
    }
    opts.output = match (args.output, args.campaign) {
        (Some(p), _) => Some(p),
        (None, Some(dir)) => {
            let stem = args
                .recipe
                .file_stem()
                .ok_or_else(|| Error::Config("recipe path has no file name".into()))?;
            Some(dir.join(VALIDATION_DIR).join(stem).with_extension("json"))
        }
        (None, None) => None,
    };
    let report = cmd_validate(&opts)?;
    if opts.output.is_none() {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for (metric, d) in report.deltas.values() {
            if let Some(d) = d {
                println!("{metric}: {:+.4}%", 100.0 * d);
            }
        }
        if report.no_change {
            println!("no change beyond run-to-run noise");
        }
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Capture { output, shim, command } => {
            let s = cmd_capture(&command, &output, shim.as_deref())?;
            println!("{} events written to {}", s.events, s.trace.display());
            Ok(s.exit_code)
        }
        Command::Profile { trace, ops, output } => {
            let p = cmd_profile(&trace, ops, &output)?;
            println!(
                "total_ops={} free_probability={:.4} max_live_blocks={}",
                p.total_ops, p.free_probability, p.max_live_blocks
            );
            for (bucket, w) in &p.size_histogram {
                println!("  size >= {bucket:>12} B  {:6.2}%", 100.0 * w);
            }
            Ok(0)
        }
        Command::Optimize {
            config,
            resume,
            force,
            stop_after,
        } => {
            let cfg = CampaignConfig::load(&config)?;
            let s = cmd_optimize(&cfg, &OptimizeOptions { resume, force, stop_after })?;
            println!(
                "{}: {} records through generation {}{}; front of {} points, hypervolume {}",
                s.dir.display(),
                s.records,
                s.completed_generation,
                if s.stopped_early { " (stopped early)" } else { "" },
                s.analytics.front_size,
                s.analytics.hypervolume
            );
            Ok(0)
        }
        Command::Select { campaign } => {
            for (kind, path) in cmd_select(&campaign)? {
                println!("{}: {}", kind.as_str(), path.display());
            }
            Ok(0)
        }
        Command::Validate(args) => validate(args),
        Command::Report { campaign } => {
            let s = cmd_report(&campaign)?;
            for f in &s.files {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Space { allocator } => {
            print!("{}", builtin_space(allocator).to_toml()?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("alloctune: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
