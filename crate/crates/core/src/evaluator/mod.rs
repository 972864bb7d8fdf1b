//! Candidate evaluation: environment injection, repeated measurement,
//! median aggregation, caching and death-penalty objectives.

pub mod cache;
pub mod harness;
pub mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::RecordCache;
pub use harness::{HarnessConfig, ProcessRunner, TimingSource};
pub use mock::{FnRunner, MockFunction, MockRunner};

use crate::error::{Error, Result};
use crate::metrics::MeasuredObjectives;
use crate::moo::ObjectiveVector;
use crate::space::{to_env, validate, EnvMap, Genotype, ParameterSpace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPolicy {
    /// Every repetition replays the same schedule.
    #[default]
    Fixed,
    /// Repetition `k` uses `seed + k`.
    PerRepetition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSettings {
    pub repetitions: usize,
    pub timeout_seconds: f64,
    pub parallelism: usize,
    pub seed_policy: SeedPolicy,
    pub measure_instructions: bool,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            repetitions: 3,
            timeout_seconds: 300.0,
            parallelism: 1,
            seed_policy: SeedPolicy::Fixed,
            measure_instructions: false,
        }
    }
}

impl EvaluationSettings {
    pub fn check(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if self.timeout_seconds.is_nan() || self.timeout_seconds <= 0.0 {
            return Err(Error::Config("timeout_seconds must be > 0".into()));
        }
        if self.parallelism < 1 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }

    fn rep_seed(&self, seed: u64, rep: usize) -> u64 {
        match self.seed_policy {
            SeedPolicy::Fixed => seed,
            SeedPolicy::PerRepetition => seed.wrapping_add(rep as u64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Timeout,
    Crash,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub genotype: Genotype,
    pub env: EnvMap,
    /// Medians of `per_rep` when ok; penalty values otherwise.
    pub objectives: MeasuredObjectives,
    pub per_rep: Vec<MeasuredObjectives>,
    pub status: Status,
    pub candidate_hash: String,
    /// Wallclock spent evaluating this candidate.
    pub eval_seconds: f64,
    #[serde(default)]
    pub generation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl EvaluationRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn objective_vector(&self) -> ObjectiveVector {
        ObjectiveVector::new(
            self.objectives.peak_heap_bytes,
            self.objectives.wallclock_seconds,
        )
    }
}

/// Outcome of one measured repetition.
#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Ok(MeasuredObjectives),
    Crash(String),
    Timeout,
}

/// Measures one repetition of a candidate.
pub trait CandidateRunner: Sync {
    /// Identifies the workload in candidate hashes.
    fn workload_identity(&self) -> String;

    fn run(&self, env: &EnvMap, genotype: &Genotype, seed: u64, deadline: Instant) -> RunOutcome;

    /// Whether records should carry the measured evaluation wallclock.
    /// Analytic runners return `false` so their records are reproducible.
    fn records_eval_time(&self) -> bool {
        true
    }
}

/// Worst feasible objectives seen so far; infeasible candidates receive
/// twice these values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTracker {
    worst: Option<[f64; 2]>,
}

/// Used before any feasible candidate has been seen.
const FALLBACK_PENALTY: [f64; 2] = [1e18, 1e9];

impl PenaltyTracker {
    pub fn observe(&mut self, v: &ObjectiveVector) {
        let w = self.worst.get_or_insert(v.0);
        for (w, x) in w.iter_mut().zip(v.0) {
            *w = w.max(x);
        }
    }

    pub fn vector(&self) -> ObjectiveVector {
        match self.worst {
            None => ObjectiveVector(FALLBACK_PENALTY),
            Some(w) => ObjectiveVector(w.map(|x| if x > 0.0 { 2.0 * x } else { 1.0 })),
        }
    }

    pub fn objectives(&self) -> MeasuredObjectives {
        let v = self.vector();
        MeasuredObjectives {
            peak_heap_bytes: v.peak_heap(),
            avg_heap_bytes: v.peak_heap(),
            free_rate: 0.0,
            wallclock_seconds: v.wallclock(),
            instructions: None,
        }
    }
}

/// What the GA loop needs from an evaluation layer.
pub trait BatchEvaluator {
    /// One record per genotype, in input order.
    fn evaluate_batch(&self, genotypes: &[Genotype]) -> Vec<EvaluationRecord>;

    fn penalty(&self) -> PenaltyTracker;

    fn restore_penalty(&self, tracker: PenaltyTracker);
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Evaluates candidates of one space on one workload.
pub struct Evaluator<R> {
    space: ParameterSpace,
    runner: R,
    settings: EvaluationSettings,
    seed: u64,
    cache: Mutex<RecordCache>,
    penalty: Mutex<PenaltyTracker>,
    executions: AtomicUsize,
    #[cfg(feature = "parallel")]
    pool: std::sync::OnceLock<rayon::ThreadPool>,
}

impl<R: CandidateRunner> Evaluator<R> {
    pub fn new(space: ParameterSpace, runner: R, settings: EvaluationSettings, seed: u64) -> Result<Self> {
        settings.check()?;
        Ok(Evaluator {
            space,
            runner,
            settings,
            seed,
            cache: Mutex::new(RecordCache::in_memory()),
            penalty: Mutex::new(PenaltyTracker::default()),
            executions: AtomicUsize::new(0),
            #[cfg(feature = "parallel")]
            pool: std::sync::OnceLock::new(),
        })
    }

    pub fn with_cache(self, cache: RecordCache) -> Self {
        *self.cache.lock().unwrap() = cache;
        self
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn settings(&self) -> &EvaluationSettings {
        &self.settings
    }

    pub fn runner(&self) -> &R {
        &self.runner
    }

    /// Number of candidates actually executed (cache hits excluded).
    pub fn executions(&self) -> usize {
        self.executions.load(Ordering::SeqCst)
    }

    pub fn candidate_hash(&self, env: &EnvMap) -> String {
        let key = serde_json::json!({
            "env": env,
            "workload": self.runner.workload_identity(),
            "seed": self.seed,
            "seed_policy": self.settings.seed_policy,
            "repetitions": self.settings.repetitions,
        });
        hex_digest(key.to_string().as_bytes())
    }

    fn infeasible(&self, g: &Genotype, detail: String) -> EvaluationRecord {
        let key = serde_json::json!({ "infeasible": g });
        EvaluationRecord {
            genotype: g.clone(),
            env: EnvMap::default(),
            objectives: self.penalty.lock().unwrap().objectives(),
            per_rep: Vec::new(),
            status: Status::Infeasible,
            candidate_hash: hex_digest(key.to_string().as_bytes()),
            eval_seconds: 0.0,
            generation: 0,
            detail: Some(detail),
        }
    }

    /// Runs every repetition of a valid candidate. Objectives of failed
    /// candidates are left for the caller to penalize.
    fn execute(&self, g: &Genotype, env: EnvMap, hash: String) -> EvaluationRecord {
        self.executions.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let deadline = start + Duration::from_secs_f64(self.settings.timeout_seconds);
        let mut per_rep = Vec::with_capacity(self.settings.repetitions);
        let mut failure = None;
        for rep in 0..self.settings.repetitions {
            let seed = self.settings.rep_seed(self.seed, rep);
            match self.runner.run(&env, g, seed, deadline) {
                RunOutcome::Ok(m) => per_rep.push(m),
                RunOutcome::Crash(msg) => {
                    failure = Some((Status::Crash, Some(msg)));
                    break;
                }
                RunOutcome::Timeout => {
                    failure = Some((Status::Timeout, None));
                    break;
                }
            }
        }
        let (status, detail) = failure.unwrap_or((Status::Ok, None));
        let objectives = if status == Status::Ok {
            MeasuredObjectives::median_of(&per_rep).expect("repetitions >= 1")
        } else {
            self.penalty.lock().unwrap().objectives()
        };
        EvaluationRecord {
            genotype: g.clone(),
            env,
            objectives,
            per_rep,
            status,
            candidate_hash: hash,
            eval_seconds: if self.runner.records_eval_time() {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            generation: 0,
            detail,
        }
    }

    /// Evaluates one candidate without consulting the cache.
    pub fn evaluate(&self, g: &Genotype) -> EvaluationRecord {
        if let Err(v) = validate(&self.space, g) {
            return self.infeasible(g, Error::InvalidGenotype(v).to_string());
        }
        let env = to_env(&self.space, g).expect("validated");
        let hash = self.candidate_hash(&env);
        self.execute(g, env, hash)
    }

    fn run_jobs(&self, jobs: &[(Genotype, EnvMap, String)]) -> Vec<EvaluationRecord> {
        let one = |(g, env, hash): &(Genotype, EnvMap, String)| self.execute(g, env.clone(), hash.clone());
        #[cfg(feature = "parallel")]
        if self.settings.parallelism > 1 && jobs.len() > 1 {
            use rayon::prelude::*;
            let pool = self.pool.get_or_init(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(self.settings.parallelism)
                    .build()
                    .expect("thread pool")
            });
            return pool.install(|| jobs.par_iter().map(one).collect());
        }
        jobs.iter().map(one).collect()
    }
}

impl<R: CandidateRunner> BatchEvaluator for Evaluator<R> {
    fn evaluate_batch(&self, genotypes: &[Genotype]) -> Vec<EvaluationRecord> {
        enum Slot {
            Done(EvaluationRecord),
            Hash(String),
        }
        let mut slots = Vec::with_capacity(genotypes.len());
        let mut jobs: Vec<(Genotype, EnvMap, String)> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            for g in genotypes {
                if let Err(v) = validate(&self.space, g) {
                    slots.push(Slot::Done(self.infeasible(g, Error::InvalidGenotype(v).to_string())));
                    continue;
                }
                let env = to_env(&self.space, g).expect("validated");
                let hash = self.candidate_hash(&env);
                if cache.lookup(&hash).is_none() && !jobs.iter().any(|(_, _, h)| *h == hash) {
                    jobs.push((g.clone(), env, hash.clone()));
                }
                slots.push(Slot::Hash(hash));
            }
        }

        let executed = self.run_jobs(&jobs);

        let mut cache = self.cache.lock().unwrap();
        for r in &executed {
            if let Err(e) = cache.store(r) {
                log::warn!("cache write failed: {e}");
            }
        }
        let mut out: Vec<EvaluationRecord> = slots
            .into_iter()
            .zip(genotypes)
            .map(|(slot, g)| match slot {
                Slot::Done(r) => r,
                Slot::Hash(h) => {
                    let mut r = cache.lookup(&h).cloned().expect("executed or cached");
                    r.genotype = g.clone();
                    r
                }
            })
            .collect();
        drop(cache);

        let mut penalty = self.penalty.lock().unwrap();
        for r in out.iter().filter(|r| r.is_ok()) {
            penalty.observe(&r.objective_vector());
        }
        let objectives = penalty.objectives();
        for r in out.iter_mut().filter(|r| !r.is_ok()) {
            r.objectives = objectives;
        }
        out
    }

    fn penalty(&self) -> PenaltyTracker {
        self.penalty.lock().unwrap().clone()
    }

    fn restore_penalty(&self, tracker: PenaltyTracker) {
        *self.penalty.lock().unwrap() = tracker;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moo::dominates;
    use crate::space::{Allocator, ParameterSpec};

    fn space() -> ParameterSpace {
        ParameterSpace::new(
            Allocator::Glibc,
            vec![
                ParameterSpec::integer("a", "A", 0, 10, 1),
                ParameterSpec::integer("b", "B", 0, 10, 1),
            ],
            None,
        )
        .unwrap()
    }

    fn settings(parallelism: usize) -> EvaluationSettings {
        EvaluationSettings {
            repetitions: 3,
            parallelism,
            ..Default::default()
        }
    }

    /// Crashes when a == 7; otherwise objectives depend on (a, b, seed).
    fn runner() -> FnRunner<impl Fn(&Genotype, u64) -> RunOutcome + Sync> {
        FnRunner(|g: &Genotype, seed: u64| {
            if g.0[0] == 7.0 {
                return RunOutcome::Crash("boom".into());
            }
            let peak = 100.0 + g.0[0] * 10.0 + (seed % 3) as f64;
            RunOutcome::Ok(MeasuredObjectives {
                peak_heap_bytes: peak,
                avg_heap_bytes: peak / 2.0,
                free_rate: 0.1,
                wallclock_seconds: 1.0 + g.0[1] + seed as f64 * 0.01,
                instructions: None,
            })
        })
    }

    #[test]
    fn repeated_batch_entry_runs_once() {
        let ev = Evaluator::new(space(), runner(), settings(1), 5).unwrap();
        let g = Genotype(vec![1.0, 2.0]);
        let out = ev.evaluate_batch(&[g.clone(), g.clone()]);
        assert_eq!(ev.executions(), 1);
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0].per_rep.len(), 3);
        // later batches hit the cache too
        ev.evaluate_batch(&[g]);
        assert_eq!(ev.executions(), 1);
    }

    #[test]
    fn invalid_genotype_is_infeasible_without_running() {
        let ev = Evaluator::new(space(), runner(), settings(1), 5).unwrap();
        let out = ev.evaluate_batch(&[Genotype(vec![1.0, 2.0]), Genotype(vec![11.0, 0.0]), Genotype(vec![3.0, 0.0])]);
        assert_eq!(ev.executions(), 2);
        assert_eq!(out[0].status, Status::Ok);
        assert_eq!(out[1].status, Status::Infeasible);
        assert!(out[1].per_rep.is_empty());
        assert_eq!(out[2].status, Status::Ok);
    }

    #[test]
    fn ok_records_hold_per_metric_medians() {
        let ev = Evaluator::new(
            space(),
            runner(),
            EvaluationSettings {
                seed_policy: SeedPolicy::PerRepetition,
                ..settings(1)
            },
            0,
        )
        .unwrap();
        let r = ev.evaluate(&Genotype(vec![2.0, 3.0]));
        assert_eq!(r.per_rep.len(), 3);
        // seeds 0, 1, 2
        assert_eq!(r.objectives.peak_heap_bytes, 121.0);
        assert!((r.objectives.wallclock_seconds - 4.01).abs() < 1e-12);
    }

    #[test]
    fn hash_is_deterministic_and_seed_sensitive() {
        let a = Evaluator::new(space(), runner(), settings(1), 5).unwrap();
        let b = Evaluator::new(space(), runner(), settings(1), 5).unwrap();
        let c = Evaluator::new(space(), runner(), settings(1), 6).unwrap();
        let g = Genotype(vec![1.0, 2.0]);
        assert_eq!(a.evaluate(&g).candidate_hash, b.evaluate(&g).candidate_hash);
        assert_ne!(a.evaluate(&g).candidate_hash, c.evaluate(&g).candidate_hash);
    }

    #[test]
    fn penalties_are_worse_than_every_feasible_result() {
        let ev = Evaluator::new(space(), runner(), settings(1), 5).unwrap();
        let batch: Vec<Genotype> = (0..=10)
            .flat_map(|a| (0..=10).step_by(5).map(move |b| Genotype(vec![a as f64, b as f64])))
            .collect();
        let out = ev.evaluate_batch(&batch);
        let crashed: Vec<_> = out.iter().filter(|r| r.status == Status::Crash).collect();
        assert!(!crashed.is_empty());
        for bad in &crashed {
            for good in out.iter().filter(|r| r.is_ok()) {
                assert!(dominates(&good.objective_vector(), &bad.objective_vector()));
            }
        }
        assert_eq!(crashed[0].objectives.peak_heap_bytes, 2.0 * (100.0 + 100.0 + 2.0));
    }

    #[test]
    fn fallback_penalty_before_any_feasible() {
        let ev = Evaluator::new(space(), runner(), settings(1), 5).unwrap();
        let out = ev.evaluate_batch(&[Genotype(vec![7.0, 0.0])]);
        assert_eq!(out[0].status, Status::Crash);
        assert_eq!(out[0].objective_vector(), ObjectiveVector(FALLBACK_PENALTY));
        assert_eq!(out[0].detail.as_deref(), Some("boom"));
    }

    #[test]
    fn parallelism_does_not_change_records() {
        let batch: Vec<Genotype> = (0..10).map(|a| Genotype(vec![a as f64, (10 - a) as f64])).collect();
        let seq = Evaluator::new(space(), runner(), settings(1), 9).unwrap();
        let par = Evaluator::new(space(), runner(), settings(4), 9).unwrap();
        assert_eq!(seq.evaluate_batch(&batch), par.evaluate_batch(&batch));
    }

    #[test]
    fn settings_invariants() {
        for bad in [
            EvaluationSettings { repetitions: 0, ..Default::default() },
            EvaluationSettings { timeout_seconds: 0.0, ..Default::default() },
            EvaluationSettings { parallelism: 0, ..Default::default() },
        ] {
            assert!(bad.check().is_err());
        }
    }
}
