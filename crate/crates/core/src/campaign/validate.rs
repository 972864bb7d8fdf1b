use std::path::PathBuf;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{write_json, Recipe, RecipeKind};
use crate::error::{Error, Result};
use crate::evaluator::harness::{candidate_env, measure, TemplateVars};
use crate::evaluator::{HarnessConfig, RunOutcome, TimingSource};
use crate::metrics::MeasuredObjectives;
use crate::space::{builtin_space, Allocator, EnvMap};

pub const VALIDATE_HEAP_TEMPLATE: &str = "valgrind -q --tool=massif --time-unit=i --massif-out-file={out} {cmd}";
pub const VALIDATE_TIMING_TEMPLATE: &str = "{cmd}";
pub const VALIDATE_INSTRUCTIONS_TEMPLATE: &str = "perf stat -x, -e instructions -o {out} -- {cmd}";

/// Relative differences below this are never reported as a change.
const NOISE_FLOOR: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct ValidateOptions {
    pub recipe: PathBuf,
    /// Allocator for the baseline; defaults to the recipe's allocator.
    pub baseline: Option<Allocator>,
    pub target: Vec<String>,
    pub runs: usize,
    pub timeout_seconds: f64,
    pub harness: HarnessConfig,
    pub measure_instructions: bool,
    pub output: Option<PathBuf>,
}

impl ValidateOptions {
    pub fn new(recipe: PathBuf, target: Vec<String>, runs: usize) -> Self {
        ValidateOptions {
            recipe,
            baseline: None,
            target,
            runs,
            timeout_seconds: 3600.0,
            harness: HarnessConfig {
                heap_template: VALIDATE_HEAP_TEMPLATE.into(),
                timing_template: VALIDATE_TIMING_TEMPLATE.into(),
                timing_source: TimingSource::Internal,
                instructions_template: VALIDATE_INSTRUCTIONS_TEMPLATE.into(),
            },
            measure_instructions: false,
            output: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunEntry {
    Ok { objectives: MeasuredObjectives },
    Failed { error: String },
}

impl RunEntry {
    pub fn objectives(&self) -> Option<&MeasuredObjectives> {
        match self {
            RunEntry::Ok { objectives } => Some(objectives),
            RunEntry::Failed { .. } => None,
        }
    }
}

/// `(tuned − baseline) / baseline` per metric; `null` where undefined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub peak_heap_bytes: Option<f64>,
    pub avg_heap_bytes: Option<f64>,
    pub free_rate: Option<f64>,
    pub wallclock_seconds: Option<f64>,
    pub instructions: Option<f64>,
}

impl MetricDeltas {
    pub fn values(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("peak_heap_bytes", self.peak_heap_bytes),
            ("avg_heap_bytes", self.avg_heap_bytes),
            ("free_rate", self.free_rate),
            ("wallclock_seconds", self.wallclock_seconds),
            ("instructions", self.instructions),
        ]
    }
}

/// Negative deltas are improvements for heap, time and instructions;
/// positive ones for free rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub recipe: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe_kind: Option<RecipeKind>,
    pub target: Vec<String>,
    pub runs: usize,
    pub baseline_allocator: Allocator,
    pub baseline_env: EnvMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_preload: Option<String>,
    pub tuned_env: EnvMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned_preload: Option<String>,
    pub baseline: Vec<RunEntry>,
    pub tuned: Vec<RunEntry>,
    pub baseline_median: MeasuredObjectives,
    pub tuned_median: MeasuredObjectives,
    pub deltas: MetricDeltas,
    /// Relative run-to-run spread that a delta must exceed to count.
    pub noise: MetricDeltas,
    /// Every defined delta lies within its noise band.
    pub no_change: bool,
}

fn relative(b: f64, t: f64) -> Option<f64> {
    if b != 0.0 {
        Some((t - b) / b)
    } else if t == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn per_metric(f: impl Fn(fn(&MeasuredObjectives) -> Option<f64>) -> Option<f64>) -> MetricDeltas {
    MetricDeltas {
        peak_heap_bytes: f(|m| Some(m.peak_heap_bytes)),
        avg_heap_bytes: f(|m| Some(m.avg_heap_bytes)),
        free_rate: f(|m| Some(m.free_rate)),
        wallclock_seconds: f(|m| Some(m.wallclock_seconds)),
        instructions: f(|m| m.instructions),
    }
}

/// Medians, deltas, noise bands and the no-change flag.
pub(crate) fn compare(
    baseline: &[MeasuredObjectives],
    tuned: &[MeasuredObjectives],
) -> (MeasuredObjectives, MeasuredObjectives, MetricDeltas, MetricDeltas, bool) {
    let bm = MeasuredObjectives::median_of(baseline).expect("nonempty");
    let tm = MeasuredObjectives::median_of(tuned).expect("nonempty");
    let deltas = per_metric(|get| relative(get(&bm)?, get(&tm)?));
    let spread = |runs: &[MeasuredObjectives], get: fn(&MeasuredObjectives) -> Option<f64>| {
        let v: Vec<f64> = runs.iter().filter_map(get).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if v.is_empty() {
            0.0
        } else {
            hi - lo
        }
    };
    let noise = per_metric(|get| {
        let scale = get(&bm)?.abs();
        let width = spread(baseline, get).max(spread(tuned, get));
        Some(if scale > 0.0 { (width / scale).max(NOISE_FLOOR) } else { NOISE_FLOOR })
    });
    let no_change = deltas
        .values()
        .iter()
        .zip(noise.values())
        .all(|((_, d), (_, n))| match (d, n) {
            (Some(d), Some(n)) => d.abs() <= n,
            _ => true,
        });
    (bm, tm, deltas, noise, no_change)
}

fn measure_once(
    opts: &ValidateOptions,
    env: &EnvMap,
    preload: Option<&str>,
) -> RunEntry {
    let child_env = candidate_env(env, preload);
    let deadline = Instant::now() + Duration::from_secs_f64(opts.timeout_seconds);
    let vars = |out: &std::path::Path| {
        TemplateVars::default()
            .set("out", out.display().to_string())
            .with_cmd(opts.target.clone())
    };
    match measure(&opts.harness, &vars, &child_env, opts.measure_instructions, deadline) {
        RunOutcome::Ok(objectives) => RunEntry::Ok { objectives },
        RunOutcome::Crash(e) => RunEntry::Failed { error: e },
        RunOutcome::Timeout => RunEntry::Failed {
            error: format!("timed out after {} s", opts.timeout_seconds),
        },
    }
}

/// Measures the target under the baseline and the recipe, alternating runs.
pub fn cmd_validate(opts: &ValidateOptions) -> Result<ValidationReport> {
    if opts.runs == 0 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    if opts.target.is_empty() {
        return Err(Error::Config("no target command given".into()));
    }
    let recipe = Recipe::load(&opts.recipe)?;
    let baseline_allocator = opts.baseline.or(recipe.allocator).unwrap_or(Allocator::Glibc);
    let baseline_preload = match baseline_allocator {
        Allocator::Glibc => None,
        Allocator::Tcmalloc => recipe
            .preload
            .clone()
            .or_else(|| builtin_space(Allocator::Tcmalloc).preload_library),
    };
    let baseline_env = EnvMap::default();

    let mut baseline = Vec::with_capacity(opts.runs);
    let mut tuned = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let b = measure_once(opts, &baseline_env, baseline_preload.as_deref());
        let t = measure_once(opts, &recipe.env, recipe.preload.as_deref());
        for (label, entry) in [("baseline", &b), ("tuned", &t)] {
            if let RunEntry::Failed { error } = entry {
                warn!("run {} ({label}) failed: {error}", run + 1);
            }
        }
        baseline.push(b);
        tuned.push(t);
    }

    let ok = |runs: &[RunEntry]| runs.iter().filter_map(RunEntry::objectives).copied().collect::<Vec<_>>();
    let (b_ok, t_ok) = (ok(&baseline), ok(&tuned));
    if b_ok.is_empty() || t_ok.is_empty() {
        let first = baseline
            .iter()
            .chain(&tuned)
            .find_map(|r| match r {
                RunEntry::Failed { error } => Some(error.clone()),
                RunEntry::Ok { .. } => None,
            })
            .unwrap_or_default();
        return Err(Error::Subprocess(format!(
            "validation needs at least one successful baseline and tuned run ({} and {} succeeded): {first}",
            b_ok.len(),
            t_ok.len()
        )));
    }

    let (baseline_median, tuned_median, deltas, noise, no_change) = compare(&b_ok, &t_ok);
    let report = ValidationReport {
        recipe: opts.recipe.clone(),
        recipe_kind: recipe.kind,
        target: opts.target.clone(),
        runs: opts.runs,
        baseline_allocator,
        baseline_env,
        baseline_preload,
        tuned_env: recipe.env,
        tuned_preload: recipe.preload,
        baseline,
        tuned,
        baseline_median,
        tuned_median,
        deltas,
        noise,
        no_change,
    };
    if let Some(path) = &opts.output {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_json(path, &report)?;
        info!("validation report written to {}", path.display());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(peak: f64, time: f64) -> MeasuredObjectives {
        MeasuredObjectives {
            peak_heap_bytes: peak,
            avg_heap_bytes: peak / 2.0,
            free_rate: 0.5,
            wallclock_seconds: time,
            instructions: None,
        }
    }

    #[test]
    fn self_comparison_is_no_change() {
        let b = [m(1000.0, 1.0), m(1000.0, 1.2), m(1000.0, 1.1)];
        let t = [m(1000.0, 1.15), m(1000.0, 1.05), m(1000.0, 1.0)];
        let (_, _, d, _, same) = compare(&b, &t);
        assert_eq!(d.peak_heap_bytes, Some(0.0));
        assert_eq!(d.instructions, None);
        assert!(same);
    }

    #[test]
    fn real_shift_is_flagged() {
        let b = [m(1000.0, 1.0), m(1000.0, 1.0)];
        let t = [m(900.0, 1.0), m(900.0, 1.0)];
        let (_, _, d, n, same) = compare(&b, &t);
        assert!((d.peak_heap_bytes.unwrap() + 0.1).abs() < 1e-12);
        assert_eq!(n.peak_heap_bytes, Some(NOISE_FLOOR));
        assert!(!same);
    }

    #[test]
    fn zero_baseline_delta() {
        assert_eq!(relative(0.0, 0.0), Some(0.0));
        assert_eq!(relative(0.0, 1.0), None);
        assert_eq!(relative(2.0, 1.0), Some(-0.5));
    }

    #[test]
    fn zero_runs_rejected() {
        let opts = ValidateOptions::new("r.env".into(), vec!["true".into()], 0);
        assert!(matches!(cmd_validate(&opts), Err(Error::Config(_))));
    }
}
