//! Campaign directories and the commands that operate on them.
//!
//! ```text
//! <output>/
//!   config.toml          resolved copy of the launch configuration
//!   evaluations.jsonl    one EvaluationRecord per line, archive order
//!   cache.jsonl          evaluator cache keyed by candidate hash
//!   checkpoints/         gen-NNNN.json after every generation
//!   front.json           final Pareto front
//!   analytics.json       FrontAnalytics of the final archive
//!   recipes/             written by `select`
//!   validation/          written by `validate --campaign`
//!   report/              written by `report`
//! ```

mod capture;
mod config;
mod optimize;
mod recipe;
mod report;
mod validate;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use capture::{cmd_capture, cmd_profile, CaptureSummary, SHIM_ENV, TRACE_ENV};
pub use config::{CampaignConfig, EvaluationSection, HarnessSection, MockSection};
pub use optimize::{cmd_optimize, OptimizeOptions, OptimizeSummary};
pub use recipe::{cmd_select, Recipe, RecipeKind};
pub use report::{cmd_report, ReportSummary};
pub use validate::{cmd_validate, MetricDeltas, RunEntry, ValidateOptions, ValidationReport};

use crate::error::{Error, Result};
use crate::evaluator::EvaluationRecord;
use crate::moo::Checkpoint;

pub const CONFIG_FILE: &str = "config.toml";
pub const EVALUATIONS_FILE: &str = "evaluations.jsonl";
pub const CACHE_FILE: &str = "cache.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FRONT_FILE: &str = "front.json";
pub const ANALYTICS_FILE: &str = "analytics.json";
pub const RECIPE_DIR: &str = "recipes";
pub const VALIDATION_DIR: &str = "validation";
pub const REPORT_DIR: &str = "report";
const LOCK_FILE: &str = ".lock";

/// Paths inside one campaign directory.
#[derive(Clone, Debug)]
pub struct CampaignDir {
    pub root: PathBuf,
}

impl CampaignDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CampaignDir { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint_path(&self, generation: usize) -> PathBuf {
        self.root
            .join(CHECKPOINT_DIR)
            .join(format!("gen-{generation:04}.json"))
    }

    /// Whether this looks like a directory `optimize` created.
    pub fn is_campaign(&self) -> bool {
        self.path(CONFIG_FILE).is_file() && self.path(EVALUATIONS_FILE).exists()
    }

    pub fn config(&self) -> Result<CampaignConfig> {
        CampaignConfig::from_toml(&read_text(&self.path(CONFIG_FILE))?)
    }

    pub fn evaluations(&self) -> Result<Vec<EvaluationRecord>> {
        read_jsonl(&self.path(EVALUATIONS_FILE))
    }

    /// Newest checkpoint by generation number, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<Checkpoint>> {
        let dir = self.path(CHECKPOINT_DIR);
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut newest: Option<(usize, PathBuf)> = None;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let generation = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("gen-")?.strip_suffix(".json")?.parse::<usize>().ok());
            if let Some(g) = generation {
                if newest.as_ref().is_none_or(|(best, _)| g > *best) {
                    newest = Some((g, path));
                }
            }
        }
        newest.map(|(_, p)| read_json(&p)).transpose()
    }

    /// A short identifier derived from the stored configuration.
    pub fn campaign_id(&self) -> Result<String> {
        let text = read_text(&self.path(CONFIG_FILE))?;
        let name = self
            .root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "campaign".into());
        Ok(format!("{name}-{}", &crate::evaluator::hex_digest(text.as_bytes())[..12]))
    }
}

/// Exclusive claim on a campaign directory, released on drop.
#[derive(Debug)]
pub struct CampaignLock {
    path: PathBuf,
}

impl CampaignLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(CampaignLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<i32>().ok());
                    match holder {
                        Some(pid) if process_alive(pid) => {
                            return Err(Error::Data(format!(
                                "{} is in use by process {pid}",
                                dir.display()
                            )))
                        }
                        _ => {
                            log::warn!("removing stale lock {}", path.display());
                            let _ = fs::remove_file(&path);
                        }
                    }
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::Data(format!("could not lock {}", dir.display())))
    }
}

impl Drop for CampaignLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn process_alive(pid: i32) -> bool {
    if pid <= 0 {
        return false;
    }
    // SAFETY: signal 0 performs only the existence and permission check.
    let rc = unsafe { libc::kill(pid, 0) };
    rc == 0 || std::io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(format!("missing input: {}", path.display())),
        _ => Error::io(path, e),
    })
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Strict JSON-lines reader: unlike the cache, a log must be intact.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(format!("missing input: {}", path.display())),
        _ => Error::io(path, e),
    })?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(&name, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub(crate) fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item)?);
        buf.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}
