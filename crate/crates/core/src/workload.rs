//! Allocation traces, the statistical profile distilled from them, and the
//! seeded synthetic schedule that replays the profile.
//!
//! Trace lines are `A <id> <size>`, `F <id>` or `R <old_id> <id> <size>`.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Alloc { id: u64, size: u64 },
    Free { id: u64 },
    Realloc { old_id: u64, id: u64, size: u64 },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Alloc { id, size } => write!(f, "A {id} {size}"),
            TraceEvent::Free { id } => write!(f, "F {id}"),
            TraceEvent::Realloc { old_id, id, size } => write!(f, "R {old_id} {id} {size}"),
        }
    }
}

pub fn serialize_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

fn parse_line(line: &str, lineno: usize, name: &str) -> Result<TraceEvent> {
    let mut fields = line.split_ascii_whitespace();
    let op = fields.next().unwrap_or_default();
    let mut num = |what: &str| -> Result<u64> {
        let raw = fields
            .next()
            .ok_or_else(|| Error::parse(name, lineno, format!("missing {what}")))?;
        raw.parse::<u64>()
            .map_err(|_| Error::parse(name, lineno, format!("bad {what} `{raw}`")))
    };
    let event = match op {
        "A" => TraceEvent::Alloc {
            id: num("id")?,
            size: num("size")?,
        },
        "F" => TraceEvent::Free { id: num("id")? },
        "R" => TraceEvent::Realloc {
            old_id: num("old id")?,
            id: num("id")?,
            size: num("size")?,
        },
        other => return Err(Error::parse(name, lineno, format!("unknown op `{other}`"))),
    };
    if fields.next().is_some() {
        return Err(Error::parse(name, lineno, "trailing fields"));
    }
    Ok(event)
}

/// Parses a trace, checking that every free or reallocation names a live id
/// and that no id is issued twice while live. Blank lines are ignored.
pub fn parse_trace<R: BufRead>(reader: R, name: &str) -> Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    let mut live: HashMap<u64, ()> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(name, lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let event = parse_line(line, lineno, name)?;
        match event {
            TraceEvent::Alloc { id, .. } => {
                if live.insert(id, ()).is_some() {
                    return Err(Error::parse(name, lineno, format!("id {id} is already live")));
                }
            }
            TraceEvent::Free { id } => {
                if live.remove(&id).is_none() {
                    return Err(Error::parse(
                        name,
                        lineno,
                        format!("free of unknown or already-freed id {id}"),
                    ));
                }
            }
            TraceEvent::Realloc { old_id, id, .. } => {
                if live.remove(&old_id).is_none() {
                    return Err(Error::parse(
                        name,
                        lineno,
                        format!("realloc of unknown or already-freed id {old_id}"),
                    ));
                }
                if live.insert(id, ()).is_some() {
                    return Err(Error::parse(name, lineno, format!("id {id} is already live")));
                }
            }
        }
        events.push(event);
    }
    Ok(events)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceEvent>> {
    parse_trace(text.as_bytes(), "<trace>")
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(std::io::BufReader::new(file), &path.display().to_string())
}

/// Lower bound of the log2 bucket holding `v`; 0 maps to bucket 0.
pub fn log2_bucket(v: u64) -> u64 {
    if v == 0 {
        0
    } else {
        1u64 << (63 - v.leading_zeros())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub total_ops: u64,
    /// (bucket lower bound in bytes, weight)
    pub size_histogram: Vec<(u64, f64)>,
    pub free_probability: f64,
    /// (bucket lower bound in allocation steps, weight)
    #[serde(default)]
    pub lifetime_histogram: Vec<(u64, f64)>,
    pub max_live_blocks: u64,
    #[serde(default)]
    pub source: String,
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

impl WorkloadProfile {
    pub fn check(&self) -> Result<()> {
        if self.total_ops < 1 {
            return Err(Error::Data("total_ops >= 1 required".into()));
        }
        if self.max_live_blocks < 1 {
            return Err(Error::Data("max_live_blocks >= 1 required".into()));
        }
        if !(0.0..=1.0).contains(&self.free_probability) {
            return Err(Error::Data("free_probability must lie in [0, 1]".into()));
        }
        check_histogram("size_histogram", &self.size_histogram, false)?;
        check_histogram("lifetime_histogram", &self.lifetime_histogram, true)?;
        for &(bucket, _) in &self.size_histogram {
            if bucket != log2_bucket(bucket) {
                return Err(Error::Data(format!(
                    "size bucket {bucket} is not a power of two"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: WorkloadProfile = toml::from_str(text)?;
        p.check()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Serde(m) | Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Largest size a schedule of this profile can request.
    pub fn max_block_size(&self) -> u64 {
        self.size_histogram
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|&(b, _)| bucket_max(b))
            .max()
            .unwrap_or(0)
    }
}

fn check_histogram(name: &str, h: &[(u64, f64)], allow_empty: bool) -> Result<()> {
    if h.is_empty() {
        return if allow_empty {
            Ok(())
        } else {
            Err(Error::Data(format!("{name} is empty")))
        };
    }
    if h.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::Data(format!("{name} has a negative weight")));
    }
    let sum: f64 = h.iter().map(|(_, w)| w).sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::Data(format!("{name} weights sum to {sum}, not 1")));
    }
    Ok(())
}

fn bucket_max(bucket: u64) -> u64 {
    if bucket == 0 {
        0
    } else {
        bucket.saturating_mul(2) - 1
    }
}

fn normalized(counts: std::collections::BTreeMap<u64, u64>) -> Vec<(u64, f64)> {
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(b, c)| (b, c as f64 / total as f64))
        .collect()
}

pub fn extract_profile(events: &[TraceEvent], target_ops: u64) -> Result<WorkloadProfile> {
    if events.is_empty() {
        return Err(Error::Data("cannot build a profile from an empty trace".into()));
    }
    if target_ops < 1 {
        return Err(Error::Data("total_ops >= 1 required".into()));
    }
    let mut sizes = std::collections::BTreeMap::new();
    let mut lifetimes = std::collections::BTreeMap::new();
    // id -> position (event index) of the allocation that created it
    let mut born: HashMap<u64, usize> = HashMap::new();
    let mut releases = 0u64;
    let mut max_live = 0usize;

    for (pos, e) in events.iter().enumerate() {
        match *e {
            TraceEvent::Alloc { id, size } => {
                *sizes.entry(log2_bucket(size)).or_insert(0u64) += 1;
                born.insert(id, pos);
            }
            TraceEvent::Free { id } => {
                releases += 1;
                let start = born.remove(&id).ok_or_else(|| {
                    Error::Data(format!("event {}: free of unknown id {id}", pos + 1))
                })?;
                *lifetimes.entry(log2_bucket((pos - start) as u64)).or_insert(0u64) += 1;
            }
            TraceEvent::Realloc { old_id, id, size } => {
                releases += 1;
                *sizes.entry(log2_bucket(size)).or_insert(0u64) += 1;
                let start = born.remove(&old_id).ok_or_else(|| {
                    Error::Data(format!("event {}: realloc of unknown id {old_id}", pos + 1))
                })?;
                *lifetimes.entry(log2_bucket((pos - start) as u64)).or_insert(0u64) += 1;
                born.insert(id, pos);
            }
        }
        max_live = max_live.max(born.len());
    }
    if sizes.is_empty() {
        return Err(Error::Data("trace contains no allocations".into()));
    }

    Ok(WorkloadProfile {
        total_ops: target_ops,
        size_histogram: normalized(sizes),
        free_probability: releases as f64 / events.len() as f64,
        lifetime_histogram: if lifetimes.is_empty() {
            Vec::new()
        } else {
            normalized(lifetimes)
        },
        max_live_blocks: max_live.max(1) as u64,
        source: format!("{} trace events", events.len()),
    })
}

/// One step of a synthetic schedule.
///
/// `Free::slot` is the index of the victim in the live table at the time of
/// the free; the table is compacted with swap-remove, so a replayer that
/// mirrors the table with the same discipline needs no id lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScheduleOp {
    Alloc { id: u64, size: u64 },
    Free { id: u64, slot: usize },
}

/// Streaming generator for the synthetic schedule.
///
/// Bookkeeping is a single live table of `max_live_blocks` entries, allocated
/// up front, so replaying a schedule allocates nothing proportional to
/// `total_ops`.
pub struct Schedule {
    rng: ChaCha8Rng,
    buckets: Vec<u64>,
    bucket_pick: WeightedIndex<f64>,
    free_probability: f64,
    max_live: usize,
    remaining_allocs: u64,
    next_id: u64,
    live: Vec<(u64, u64)>,
}

impl Schedule {
    pub fn new(profile: &WorkloadProfile, seed: u64) -> Result<Self> {
        profile.check()?;
        let (buckets, weights): (Vec<u64>, Vec<f64>) =
            profile.size_histogram.iter().copied().unzip();
        let bucket_pick = WeightedIndex::new(weights)
            .map_err(|e| Error::Data(format!("size_histogram: {e}")))?;
        let max_live = usize::try_from(profile.max_live_blocks)
            .map_err(|_| Error::Data("max_live_blocks too large".into()))?;
        Ok(Schedule {
            rng: ChaCha8Rng::seed_from_u64(seed),
            buckets,
            bucket_pick,
            free_probability: profile.free_probability,
            max_live,
            remaining_allocs: profile.total_ops,
            next_id: 1,
            live: Vec::with_capacity(max_live),
        })
    }

    pub fn live_blocks(&self) -> usize {
        self.live.len()
    }

    pub fn live_bytes(&self) -> u64 {
        self.live.iter().map(|&(_, s)| s).sum()
    }

    fn free_one(&mut self) -> ScheduleOp {
        let slot = self.rng.gen_range(0..self.live.len());
        let (id, _) = self.live.swap_remove(slot);
        ScheduleOp::Free { id, slot }
    }

    fn alloc_one(&mut self) -> ScheduleOp {
        let bucket = self.buckets[self.bucket_pick.sample(&mut self.rng)];
        let size = if bucket == 0 {
            0
        } else {
            self.rng.gen_range(bucket..=bucket_max(bucket))
        };
        let id = self.next_id;
        self.next_id += 1;
        self.remaining_allocs -= 1;
        self.live.push((id, size));
        ScheduleOp::Alloc { id, size }
    }
}

impl Iterator for Schedule {
    type Item = ScheduleOp;

    fn next(&mut self) -> Option<ScheduleOp> {
        if self.remaining_allocs == 0 {
            // closing drain
            return if self.live.is_empty() {
                None
            } else {
                Some(self.free_one())
            };
        }
        if self.live.len() >= self.max_live {
            return Some(self.free_one());
        }
        if !self.live.is_empty() && self.rng.gen::<f64>() < self.free_probability {
            return Some(self.free_one());
        }
        Some(self.alloc_one())
    }
}

pub fn synth_schedule(profile: &WorkloadProfile, seed: u64) -> Result<Vec<ScheduleOp>> {
    Ok(Schedule::new(profile, seed)?.collect())
}

/// Peak of the sum of live block sizes over the schedule.
pub fn analytic_max_live_bytes(profile: &WorkloadProfile, seed: u64) -> Result<u64> {
    let mut sched = Schedule::new(profile, seed)?;
    let mut live = 0u64;
    let mut peak = 0u64;
    let mut sizes: HashMap<u64, u64> = HashMap::new();
    for op in sched.by_ref() {
        match op {
            ScheduleOp::Alloc { id, size } => {
                sizes.insert(id, size);
                live += size;
                peak = peak.max(live);
            }
            ScheduleOp::Free { id, .. } => live -= sizes.remove(&id).unwrap_or(0),
        }
    }
    Ok(peak)
}
