//! NSGA-II over mixed discrete/continuous genotypes.
//!
//! Randomness comes from independent ChaCha streams derived from one root
//! seed and the (generation, operator, individual) triple. A generation can
//! therefore be replayed from a checkpoint without saving generator state,
//! and evaluation order or parallelism never perturbs the search.

pub mod operators;
pub mod sort;

use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use operators::{crossover, mutate, random_genotype, tournament_select};
pub use sort::{crowding_distance, dominates, non_dominated_sort, non_dominated_sort_seq, ObjectiveVector};
#[cfg(feature = "parallel")]
pub use sort::non_dominated_sort_par;

use crate::error::{Error, Result};
use crate::evaluator::{BatchEvaluator, EvaluationRecord, PenaltyTracker};
use crate::space::{default_genotype, Genotype, ParameterSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub seed: u64,
    pub crossover_probability: f64,
    pub sbx_eta: f64,
    /// Per-gene mutation probability; `None` means `1 / number of genes`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation_probability: Option<f64>,
    pub mutation_eta: f64,
    /// Stop after the generation during which this much wallclock elapsed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget_seconds: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 24,
            generations: 500,
            seed: 0,
            crossover_probability: 0.9,
            sbx_eta: 15.0,
            mutation_probability: None,
            mutation_eta: 20.0,
            time_budget_seconds: None,
        }
    }
}

impl GaConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return bad("population_size must be even and >= 4");
        }
        if self.generations < 1 {
            return bad("generations must be >= 1");
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.crossover_probability)
            || self.mutation_probability.is_some_and(|p| !unit.contains(&p))
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.sbx_eta >= 0.0 && self.mutation_eta >= 0.0) {
            return bad("distribution indices must be >= 0");
        }
        Ok(())
    }

    /// Equal apart from the stopping rules, which a resumed run may change.
    pub fn same_search(&self, other: &GaConfig) -> bool {
        let strip = |g: &GaConfig| GaConfig {
            generations: 0,
            time_budget_seconds: None,
            ..g.clone()
        };
        strip(self) == strip(other)
    }

    pub fn mutation_probability_for(&self, genes: usize) -> f64 {
        self.mutation_probability
            .unwrap_or(1.0 / genes.max(1) as f64)
    }
}

#[derive(Clone, Copy, Debug)]
#[repr(u64)]
enum Stream {
    Init = 1,
    Select = 2,
    Crossover = 3,
    Mutate = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, generation: usize, stream: Stream, index: usize) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ generation as u64);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ index as u64);
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub genotype: Genotype,
    pub objectives: ObjectiveVector,
    pub feasible: bool,
    pub rank: usize,
    pub crowding: f64,
}

impl Member {
    fn from_record(r: &EvaluationRecord) -> Self {
        Member {
            genotype: r.genotype.clone(),
            objectives: r.objective_vector(),
            feasible: r.is_ok(),
            rank: 0,
            crowding: 0.0,
        }
    }
}

/// Sets `rank` and `crowding` of every member.
pub fn assign_rank_and_crowding(members: &mut [Member]) {
    let points: Vec<_> = members.iter().map(|m| m.objectives).collect();
    for (rank, front) in non_dominated_sort(&points).into_iter().enumerate() {
        let objs: Vec<_> = front.iter().map(|&i| points[i]).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&objs)) {
            members[i].rank = rank;
            members[i].crowding = d;
        }
    }
}

/// μ+λ survivor selection: whole fronts while they fit, then the most
/// spread-out members of the first front that does not.
pub fn environmental_selection(combined: Vec<Member>, size: usize) -> Vec<Member> {
    let points: Vec<_> = combined.iter().map(|m| m.objectives).collect();
    let mut keep: Vec<usize> = Vec::with_capacity(size);
    for front in non_dominated_sort(&points) {
        if keep.len() + front.len() <= size {
            keep.extend(front);
            if keep.len() == size {
                break;
            }
            continue;
        }
        let objs: Vec<_> = front.iter().map(|&i| points[i]).collect();
        let dist = crowding_distance(&objs);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        keep.extend(order.into_iter().take(size - keep.len()).map(|k| front[k]));
        break;
    }
    keep.sort_unstable();
    let mut slots: Vec<Option<Member>> = combined.into_iter().map(Some).collect();
    let mut survivors: Vec<Member> = keep.into_iter().map(|i| slots[i].take().unwrap()).collect();
    assign_rank_and_crowding(&mut survivors);
    survivors
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberState {
    pub genotype: Genotype,
    pub objectives: ObjectiveVector,
    pub feasible: bool,
}

/// Everything needed to continue a run after `completed_generation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub ga: GaConfig,
    /// Generation 0 is the initial population.
    pub completed_generation: usize,
    /// The generator streams are a pure function of the root seed and the
    /// generation, so these two numbers are the whole RNG state.
    pub rng_root_seed: u64,
    pub next_generation: usize,
    pub population: Vec<MemberState>,
    pub penalty: PenaltyTracker,
    /// Records in the archive when the checkpoint was taken.
    pub archive_len: usize,
}

/// Hooks into a run; the campaign layer uses them for persistence.
pub trait RunObserver {
    fn on_records(&mut self, _generation: usize, _records: &[EvaluationRecord]) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }

    /// Polled before each generation; `true` ends the run there.
    fn should_stop(&mut self, _next_generation: usize) -> bool {
        false
    }
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug)]
pub struct RunResult {
    pub population: Vec<Member>,
    pub archive: Vec<EvaluationRecord>,
    pub completed_generation: usize,
    /// The run ended before `ga.generations` (budget or observer).
    pub stopped_early: bool,
}

/// State to continue from: the checkpoint plus the archive prefix it counts.
pub struct Resume {
    pub checkpoint: Checkpoint,
    pub archive: Vec<EvaluationRecord>,
}

fn offspring(space: &ParameterSpace, parents: &[Member], ga: &GaConfig, generation: usize) -> Vec<Genotype> {
    let mut out = Vec::with_capacity(ga.population_size);
    for pair in 0..ga.population_size / 2 {
        let mut sel = stream_rng(ga.seed, generation, Stream::Select, pair);
        let a = tournament_select(parents, &mut sel);
        let b = tournament_select(parents, &mut sel);
        let mut xr = stream_rng(ga.seed, generation, Stream::Crossover, pair);
        let (c1, c2) = crossover(space, &parents[a].genotype, &parents[b].genotype, &mut xr, ga);
        for (k, child) in [(2 * pair, c1), (2 * pair + 1, c2)] {
            let mut mr = stream_rng(ga.seed, generation, Stream::Mutate, k);
            out.push(mutate(space, &child, &mut mr, ga));
        }
    }
    out
}

fn tag(records: &mut [EvaluationRecord], generation: usize) {
    for r in records {
        r.generation = generation;
    }
}

fn rescore_infeasible(members: &mut [Member], penalty: ObjectiveVector) {
    for m in members.iter_mut().filter(|m| !m.feasible) {
        m.objectives = penalty;
    }
}

/// Runs NSGA-II. Generation 0 is the default configuration plus uniform
/// random genotypes; each later generation breeds `population_size`
/// offspring and keeps the best `population_size` of parents ∪ offspring.
pub fn nsga2_run<E: BatchEvaluator + ?Sized>(
    space: &ParameterSpace,
    evaluator: &E,
    ga: &GaConfig,
    resume: Option<Resume>,
    observer: &mut dyn RunObserver,
) -> Result<RunResult> {
    ga.check()?;
    let started = Instant::now();
    let (mut population, mut archive, first_generation) = match resume {
        Some(Resume { checkpoint, archive }) => {
            if !checkpoint.ga.same_search(ga) {
                return Err(Error::Config("checkpoint was written with a different GA configuration".into()));
            }
            if archive.len() != checkpoint.archive_len {
                return Err(Error::Data(format!(
                    "checkpoint expects {} archived records, found {}",
                    checkpoint.archive_len,
                    archive.len()
                )));
            }
            evaluator.restore_penalty(checkpoint.penalty.clone());
            let mut members: Vec<Member> = checkpoint
                .population
                .into_iter()
                .map(|s| Member {
                    genotype: s.genotype,
                    objectives: s.objectives,
                    feasible: s.feasible,
                    rank: 0,
                    crowding: 0.0,
                })
                .collect();
            assign_rank_and_crowding(&mut members);
            (members, archive, checkpoint.next_generation)
        }
        None => {
            let mut initial = vec![default_genotype(space)];
            initial.extend(
                (1..ga.population_size).map(|i| random_genotype(space, &mut stream_rng(ga.seed, 0, Stream::Init, i))),
            );
            let mut records = evaluator.evaluate_batch(&initial);
            tag(&mut records, 0);
            observer.on_records(0, &records)?;
            let mut members: Vec<Member> = records.iter().map(Member::from_record).collect();
            rescore_infeasible(&mut members, evaluator.penalty().vector());
            assign_rank_and_crowding(&mut members);
            let archive = records;
            observer.on_checkpoint(&checkpoint_of(ga, 0, &members, evaluator, archive.len()))?;
            (members, archive, 1)
        }
    };

    let mut completed = first_generation - 1;
    let mut stopped_early = false;
    for generation in first_generation..=ga.generations {
        if observer.should_stop(generation)
            || ga
                .time_budget_seconds
                .is_some_and(|b| started.elapsed().as_secs_f64() >= b)
        {
            stopped_early = true;
            break;
        }
        let children = offspring(space, &population, ga, generation);
        let mut records = evaluator.evaluate_batch(&children);
        tag(&mut records, generation);
        observer.on_records(generation, &records)?;

        let penalty = evaluator.penalty().vector();
        let mut combined = population;
        combined.extend(records.iter().map(Member::from_record));
        rescore_infeasible(&mut combined, penalty);
        population = environmental_selection(combined, ga.population_size);
        archive.extend(records);
        completed = generation;

        observer.on_checkpoint(&checkpoint_of(ga, generation, &population, evaluator, archive.len()))?;
        if generation % 10 == 0 || generation == ga.generations {
            info!("generation {generation}/{}: {} records", ga.generations, archive.len());
        }
    }

    Ok(RunResult {
        population,
        archive,
        completed_generation: completed,
        stopped_early,
    })
}

fn checkpoint_of<E: BatchEvaluator + ?Sized>(
    ga: &GaConfig,
    generation: usize,
    members: &[Member],
    evaluator: &E,
    archive_len: usize,
) -> Checkpoint {
    Checkpoint {
        ga: ga.clone(),
        completed_generation: generation,
        rng_root_seed: ga.seed,
        next_generation: generation + 1,
        population: members
            .iter()
            .map(|m| MemberState {
                genotype: m.genotype.clone(),
                objectives: m.objectives,
                feasible: m.feasible,
            })
            .collect(),
        penalty: evaluator.penalty(),
        archive_len,
    }
}
