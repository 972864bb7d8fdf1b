use std::fs::File;
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::warn;

use crate::error::{Error, Result};
use crate::evaluator::harness::sibling_binary;
use crate::workload::{extract_profile, parse_trace_str, read_trace, WorkloadProfile};

/// Variable through which the interposer learns where to write its trace.
pub const TRACE_ENV: &str = "ALLOCTUNE_TRACE";
/// Fallback location of the interposer library when `--shim` is absent.
pub const SHIM_ENV: &str = "ALLOCTUNE_SHIM";
const SHIM_FILE: &str = "liballoctrace.so";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptureSummary {
    pub trace: PathBuf,
    /// Events parsed from the trace; for a damaged trace, its line count.
    pub events: usize,
    /// Target exit status; `128 + signal` when it was killed.
    pub exit_code: i32,
}

fn locate_shim(explicit: Option<&Path>) -> Result<PathBuf> {
    let shim = explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(SHIM_ENV).map(PathBuf::from))
        .or_else(|| sibling_binary(SHIM_FILE))
        .ok_or_else(|| {
            Error::Config(format!(
                "interposer library not found; pass --shim or set {SHIM_ENV}"
            ))
        })?;
    if !shim.is_file() {
        return Err(Error::Config(format!("interposer library {} does not exist", shim.display())));
    }
    std::path::absolute(&shim).map_err(|e| Error::io(&shim, e))
}

/// Runs `target` with the interposer preloaded and reports what it logged.
pub fn cmd_capture(target: &[String], trace: &Path, shim: Option<&Path>) -> Result<CaptureSummary> {
    let Some((program, args)) = target.split_first() else {
        return Err(Error::Config("no target command given".into()));
    };
    let shim = locate_shim(shim)?;
    // Fail before launching anything if the trace cannot be written.
    File::create(trace).map_err(|e| Error::Data(format!("cannot write trace {}: {e}", trace.display())))?;
    let trace = std::path::absolute(trace).map_err(|e| Error::io(trace, e))?;

    let preload = match std::env::var("LD_PRELOAD") {
        Ok(existing) if !existing.is_empty() => format!("{}:{existing}", shim.display()),
        _ => shim.display().to_string(),
    };
    let status = Command::new(program)
        .args(args)
        .env("LD_PRELOAD", preload)
        .env(TRACE_ENV, &trace)
        .status()
        .map_err(|e| Error::Subprocess(format!("cannot run {program}: {e}")))?;
    let exit_code = status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(1);

    let text = std::fs::read_to_string(&trace).map_err(|e| Error::io(&trace, e))?;
    let events = match parse_trace_str(&text) {
        Ok(ev) => ev.len(),
        Err(e) => {
            warn!("trace {} is damaged ({e}); counting lines", trace.display());
            text.lines().filter(|l| !l.trim().is_empty()).count()
        }
    };
    if exit_code != 0 {
        warn!("target exited with status {exit_code}; keeping the partial trace");
    }
    if events == 0 {
        warn!("no allocation events were captured");
    }
    Ok(CaptureSummary {
        trace,
        events,
        exit_code,
    })
}

/// Distills a trace into a profile and writes it as TOML.
pub fn cmd_profile(trace: &Path, target_ops: u64, output: &Path) -> Result<WorkloadProfile> {
    let events = read_trace(trace)?;
    let mut profile = extract_profile(&events, target_ops)?;
    profile.source = format!("{} ({})", trace.display(), profile.source);
    std::fs::write(output, profile.to_toml()?).map_err(|e| Error::io(output, e))?;
    Ok(profile)
}
