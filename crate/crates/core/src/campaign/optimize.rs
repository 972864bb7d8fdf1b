use std::fs;
use std::path::PathBuf;

use log::info;

use super::{
    append_jsonl, write_atomic, write_json, CampaignConfig, CampaignDir, CampaignLock, ANALYTICS_FILE,
    CACHE_FILE, CHECKPOINT_DIR, CONFIG_FILE, EVALUATIONS_FILE, FRONT_FILE, RECIPE_DIR, REPORT_DIR,
    VALIDATION_DIR,
};
use crate::error::{Error, Result};
use crate::evaluator::{CandidateRunner, EvaluationRecord, Evaluator, MockRunner, ProcessRunner, RecordCache};
use crate::moo::{nsga2_run, Checkpoint, Resume, RunObserver};
use crate::pareto::{analyze, FrontAnalytics};
use crate::space::ParameterSpace;

#[derive(Clone, Debug, Default)]
pub struct OptimizeOptions {
    /// Continue from the newest checkpoint in an existing campaign.
    pub resume: bool,
    /// Discard an existing campaign in the output directory.
    pub force: bool,
    /// Stop once this generation has completed (simulated interruption).
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct OptimizeSummary {
    pub dir: PathBuf,
    pub records: usize,
    pub executions: usize,
    pub completed_generation: usize,
    pub stopped_early: bool,
    pub analytics: FrontAnalytics,
}

struct Persist<'a> {
    dir: &'a CampaignDir,
    stop_after: Option<usize>,
}

impl RunObserver for Persist<'_> {
    fn on_records(&mut self, _generation: usize, records: &[EvaluationRecord]) -> Result<()> {
        append_jsonl(&self.dir.path(EVALUATIONS_FILE), records)
    }

    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        write_json(&self.dir.checkpoint_path(checkpoint.completed_generation), checkpoint).map_err(|e| {
            Error::Data(format!(
                "checkpoint write failed after generation {} ({e}); rerun with --resume",
                checkpoint.completed_generation
            ))
        })
    }

    fn should_stop(&mut self, next_generation: usize) -> bool {
        self.stop_after.is_some_and(|k| next_generation > k)
    }
}

const GENERATED: &[&str] = &[
    CONFIG_FILE,
    EVALUATIONS_FILE,
    CACHE_FILE,
    CHECKPOINT_DIR,
    FRONT_FILE,
    ANALYTICS_FILE,
    RECIPE_DIR,
    VALIDATION_DIR,
    REPORT_DIR,
];

fn clear_campaign(dir: &CampaignDir) -> Result<()> {
    for name in GENERATED {
        let p = dir.path(name);
        let res = if p.is_dir() {
            fs::remove_dir_all(&p)
        } else if p.exists() {
            fs::remove_file(&p)
        } else {
            Ok(())
        };
        res.map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Runs (or continues) a campaign and writes its artifacts.
pub fn cmd_optimize(cfg: &CampaignConfig, opts: &OptimizeOptions) -> Result<OptimizeSummary> {
    cfg.check()?;
    if opts.resume && opts.force {
        return Err(Error::Config("--resume and --force are mutually exclusive".into()));
    }
    let dir = CampaignDir::new(&cfg.output);
    fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    let _lock = CampaignLock::acquire(&dir.root)?;

    let existing = dir.is_campaign();
    if opts.resume {
        if !existing {
            return Err(Error::Data(format!("{} holds no campaign to resume", dir.root.display())));
        }
        if !dir.config()?.same_search(cfg) {
            return Err(Error::Config(
                "configuration differs from the campaign being resumed (only generations and the time budget may change)"
                    .into(),
            ));
        }
    } else if existing && opts.force {
        clear_campaign(&dir)?;
    } else if existing || !only_lock_inside(&dir)? {
        return Err(Error::Data(format!(
            "{} is not empty; pass --resume to continue or --force to start over",
            dir.root.display()
        )));
    }

    write_atomic(&dir.path(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    fs::create_dir_all(dir.path(CHECKPOINT_DIR)).map_err(|e| Error::io(dir.path(CHECKPOINT_DIR), e))?;

    let space = cfg.parameter_space()?;
    match &cfg.mock {
        Some(m) => drive(cfg, opts, &dir, &space, MockRunner::new(m.function, space.clone())),
        None => {
            let runner = ProcessRunner::new(
                cfg.driver()?,
                cfg.profile.clone().expect("checked"),
                cfg.harness.templates.clone(),
                space.preload_library.clone(),
            )?
            .touch(cfg.evaluation.touch)
            .measure_instructions(cfg.evaluation.settings.measure_instructions);
            drive(cfg, opts, &dir, &space, runner)
        }
    }
}

fn only_lock_inside(dir: &CampaignDir) -> Result<bool> {
    let mut names = fs::read_dir(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    Ok(names.all(|e| e.map(|e| e.file_name() == ".lock").unwrap_or(false)))
}

fn resume_state(dir: &CampaignDir) -> Result<Option<Resume>> {
    let Some(checkpoint) = dir.latest_checkpoint()? else {
        return Ok(None);
    };
    let mut archive = dir.evaluations()?;
    if archive.len() < checkpoint.archive_len {
        return Err(Error::Data(format!(
            "{} has {} records but checkpoint {} expects {}",
            EVALUATIONS_FILE,
            archive.len(),
            checkpoint.completed_generation,
            checkpoint.archive_len
        )));
    }
    if archive.len() > checkpoint.archive_len {
        info!(
            "discarding {} records written after generation {}",
            archive.len() - checkpoint.archive_len,
            checkpoint.completed_generation
        );
        archive.truncate(checkpoint.archive_len);
    }
    Ok(Some(Resume { checkpoint, archive }))
}

fn drive<R: CandidateRunner>(
    cfg: &CampaignConfig,
    opts: &OptimizeOptions,
    dir: &CampaignDir,
    space: &ParameterSpace,
    runner: R,
) -> Result<OptimizeSummary> {
    let cache = RecordCache::open(&dir.path(CACHE_FILE))?;
    let evaluator = Evaluator::new(
        space.clone(),
        runner,
        cfg.evaluation.settings.clone(),
        cfg.evaluation.workload_seed,
    )?
    .with_cache(cache);

    let resume = if opts.resume { resume_state(dir)? } else { None };
    // The log must hold exactly the checkpointed prefix before appending.
    let log = dir.path(EVALUATIONS_FILE);
    match &resume {
        Some(r) => {
            let mut text = String::new();
            for rec in &r.archive {
                text.push_str(&serde_json::to_string(rec)?);
                text.push('\n');
            }
            write_atomic(&log, text.as_bytes())?;
            info!("resuming after generation {}", r.checkpoint.completed_generation);
        }
        None => {
            write_atomic(&log, b"")?;
            let cps = dir.path(CHECKPOINT_DIR);
            fs::remove_dir_all(&cps).map_err(|e| Error::io(&cps, e))?;
            fs::create_dir_all(&cps).map_err(|e| Error::io(&cps, e))?;
        }
    }

    let mut observer = Persist {
        dir,
        stop_after: opts.stop_after,
    };
    let result = nsga2_run(space, &evaluator, &cfg.ga, resume, &mut observer)?;
    let (front, analytics) = analyze(&result.archive)?;
    write_json(&dir.path(FRONT_FILE), &front)?;
    write_json(&dir.path(ANALYTICS_FILE), &analytics)?;
    info!(
        "front of {} points, hypervolume {} against reference ({}, {})",
        analytics.front_size, analytics.hypervolume, analytics.reference_point.0[0], analytics.reference_point.0[1]
    );
    Ok(OptimizeSummary {
        dir: dir.root.clone(),
        records: result.archive.len(),
        executions: evaluator.executions(),
        completed_generation: result.completed_generation,
        stopped_early: result.stopped_early,
        analytics,
    })
}
