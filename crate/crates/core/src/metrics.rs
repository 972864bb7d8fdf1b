//! Parsers for massif, `perf stat -x,` and POSIX `time -p` output, and the
//! heap metrics derived from a massif snapshot series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: u64,
    pub heap_bytes: u64,
    pub extra_bytes: u64,
}

impl Snapshot {
    pub fn total(&self) -> u64 {
        self.heap_bytes + self.extra_bytes
    }
}

/// Heap snapshots in profiler order. Never empty; times are non-decreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeapSeries {
    snapshots: Vec<Snapshot>,
    pub time_unit: String,
}

impl HeapSeries {
    pub fn new(snapshots: Vec<Snapshot>, time_unit: impl Into<String>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Data("no snapshots".into()));
        }
        if snapshots.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::Data("snapshot times decrease".into()));
        }
        Ok(HeapSeries {
            snapshots,
            time_unit: time_unit.into(),
        })
    }

    /// Builds a series from `(time, heap_bytes)` pairs with zero extra bytes.
    pub fn from_pairs(pairs: &[(u64, u64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(time, heap_bytes)| Snapshot {
                    time,
                    heap_bytes,
                    extra_bytes: 0,
                })
                .collect(),
            "i",
        )
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Default)]
struct PartialSnapshot {
    time: Option<u64>,
    heap: Option<u64>,
    extra: Option<u64>,
    line: usize,
}

impl PartialSnapshot {
    fn finish(self, name: &str) -> Result<Snapshot> {
        let missing = |f: &str| Error::parse(name, self.line, format!("snapshot lacks {f}"));
        Ok(Snapshot {
            time: self.time.ok_or_else(|| missing("time="))?,
            heap_bytes: self.heap.ok_or_else(|| missing("mem_heap_B="))?,
            extra_bytes: self.extra.ok_or_else(|| missing("mem_heap_extra_B="))?,
        })
    }
}

/// Parses massif's `massif.out` text format. Heap trees are skipped.
pub fn parse_heap_profile(text: &str) -> Result<HeapSeries> {
    parse_heap_profile_named(text, "<massif>")
}

pub fn parse_heap_profile_named(text: &str, name: &str) -> Result<HeapSeries> {
    let mut header_desc = false;
    let mut header_cmd = false;
    let mut time_unit: Option<String> = None;
    let mut snapshots = Vec::new();
    let mut snapshot_lines = Vec::new();
    let mut current: Option<PartialSnapshot> = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if is_tree_line(line) {
            continue;
        }
        if current.is_none() && snapshots.is_empty() {
            if line.starts_with("desc:") {
                header_desc = true;
                continue;
            }
            if line.starts_with("cmd:") {
                header_cmd = true;
                continue;
            }
            if let Some(v) = line.strip_prefix("time_unit:") {
                time_unit = Some(v.trim().to_string());
                continue;
            }
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(name, lineno, format!("unexpected line `{line}`")));
        };
        let number = || {
            value
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::parse(name, lineno, format!("non-numeric {key}=`{value}`")))
        };
        match key {
            "snapshot" => {
                if !(header_desc && header_cmd && time_unit.is_some()) {
                    return Err(Error::parse(name, lineno, "missing massif header"));
                }
                number()?;
                if let Some(prev) = current.take() {
                    snapshot_lines.push(prev.line);
                    snapshots.push(prev.finish(name)?);
                }
                current = Some(PartialSnapshot {
                    line: lineno,
                    ..Default::default()
                });
            }
            "time" | "mem_heap_B" | "mem_heap_extra_B" | "mem_stacks_B" | "heap_tree" => {
                let Some(cur) = current.as_mut() else {
                    return Err(Error::parse(name, lineno, format!("`{key}` outside a snapshot")));
                };
                match key {
                    "time" => cur.time = Some(number()?),
                    "mem_heap_B" => cur.heap = Some(number()?),
                    "mem_heap_extra_B" => cur.extra = Some(number()?),
                    "mem_stacks_B" => {
                        number()?;
                    }
                    _ => {}
                }
            }
            other => {
                return Err(Error::parse(name, lineno, format!("unknown field `{other}`")));
            }
        }
    }
    if let Some(last) = current.take() {
        snapshot_lines.push(last.line);
        snapshots.push(last.finish(name)?);
    }
    if snapshots.is_empty() {
        let line = text.lines().count().max(1);
        if !(header_desc && header_cmd && time_unit.is_some()) && !text.trim().is_empty() {
            return Err(Error::parse(name, line, "missing massif header"));
        }
        return Err(Error::parse(name, line, "no snapshots"));
    }
    if let Some(pos) = snapshots.windows(2).position(|w| w[1].time < w[0].time) {
        return Err(Error::parse(
            name,
            snapshot_lines[pos + 1],
            "snapshot goes back in time",
        ));
    }
    HeapSeries::new(snapshots, time_unit.unwrap_or_default())
}

/// Heap-tree lines are indented or start with `n<children>:`.
fn is_tree_line(line: &str) -> bool {
    if line.starts_with(' ') {
        return true;
    }
    line.strip_prefix('n')
        .and_then(|rest| rest.split_once(':'))
        .is_some_and(|(digits, _)| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
}

/// Largest heap footprint (payload plus allocator bookkeeping).
pub fn peak_heap(series: &HeapSeries) -> u64 {
    series.snapshots.iter().map(Snapshot::total).max().unwrap_or(0)
}

/// Time-weighted mean footprint; each snapshot's value holds until the next
/// snapshot. A zero-length span yields the last snapshot's value.
pub fn avg_heap(series: &HeapSeries) -> f64 {
    let s = &series.snapshots;
    let first = s[0].time;
    let last = s[s.len() - 1].time;
    if last == first {
        return s[s.len() - 1].total() as f64;
    }
    let area: f64 = s
        .windows(2)
        .map(|w| w[0].total() as f64 * (w[1].time - w[0].time) as f64)
        .sum();
    area / (last - first) as f64
}

/// Sum of successive decreases over the sum of all values except the last.
pub fn free_rate(series: &HeapSeries) -> f64 {
    let s = &series.snapshots;
    if s.len() < 2 {
        return 0.0;
    }
    let (released, held) = s.windows(2).fold((0.0f64, 0.0f64), |(r, h), w| {
        let a = w[0].total() as f64;
        let b = w[1].total() as f64;
        (r + (a - b).max(0.0), h + a)
    });
    if held == 0.0 {
        0.0
    } else {
        released / held
    }
}

/// Parses `perf stat -x<sep>` output and returns the instruction count.
///
/// Hybrid CPUs report one row per core type (`cpu_core/instructions/`,
/// `cpu_atom/instructions/`); counted rows are summed. `Ok(None)` means every
/// instructions row was `<not counted>` or `<not supported>`.
pub fn parse_instruction_count(text: &str) -> Result<Option<u64>> {
    let mut rows = 0usize;
    let mut total: Option<u64> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let sep = if line.contains(',') { ',' } else { ';' };
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() < 3 {
            continue;
        }
        let event = fields[2].trim();
        // `instructions`, `instructions:u`, `cpu_core/instructions/u` and so on
        if !event.split(['/', ':']).any(|part| part == "instructions") {
            continue;
        }
        rows += 1;
        let value = fields[0].trim();
        if value.starts_with('<') {
            continue;
        }
        let parsed = value
            .parse::<u64>()
            .or_else(|_| value.parse::<f64>().map(|v| v as u64))
            .map_err(|_| Error::parse("<perf>", i + 1, format!("bad counter value `{value}`")))?;
        total = Some(total.unwrap_or(0) + parsed);
    }
    if rows == 0 {
        return Err(Error::parse(
            "<perf>",
            text.lines().count().max(1),
            "no instructions row",
        ));
    }
    Ok(total)
}

/// Elapsed time from `time -p` output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wallclock {
    pub seconds: f64,
    /// The reported value is zero, i.e. below the 10 ms resolution of the
    /// POSIX format.
    pub below_resolution: bool,
}

pub fn parse_wallclock(text: &str) -> Result<Wallclock> {
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_ascii_whitespace();
        if parts.next() != Some("real") {
            continue;
        }
        let raw = parts
            .next()
            .ok_or_else(|| Error::parse("<time>", i + 1, "real line without value"))?;
        let seconds: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| Error::parse("<time>", i + 1, format!("bad real value `{raw}`")))?;
        return Ok(Wallclock {
            seconds,
            below_resolution: seconds == 0.0,
        });
    }
    Err(Error::parse(
        "<time>",
        text.lines().count().max(1),
        "missing real line",
    ))
}

/// Objectives measured for one run, or the per-metric medians of several.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredObjectives {
    pub peak_heap_bytes: f64,
    pub avg_heap_bytes: f64,
    pub free_rate: f64,
    pub wallclock_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<f64>,
}

impl MeasuredObjectives {
    pub fn from_series(series: &HeapSeries, wallclock_seconds: f64) -> Self {
        MeasuredObjectives {
            peak_heap_bytes: peak_heap(series) as f64,
            avg_heap_bytes: avg_heap(series),
            free_rate: free_rate(series),
            wallclock_seconds,
            instructions: None,
        }
    }

    /// Per-metric medians. Instructions are the median of the runs that
    /// reported them.
    pub fn median_of(runs: &[MeasuredObjectives]) -> Option<MeasuredObjectives> {
        if runs.is_empty() {
            return None;
        }
        let pick = |f: fn(&MeasuredObjectives) -> f64| median(runs.iter().map(f).collect());
        let instr: Vec<f64> = runs.iter().filter_map(|r| r.instructions).collect();
        Some(MeasuredObjectives {
            peak_heap_bytes: pick(|r| r.peak_heap_bytes),
            avg_heap_bytes: pick(|r| r.avg_heap_bytes),
            free_rate: pick(|r| r.free_rate),
            wallclock_seconds: pick(|r| r.wallclock_seconds),
            instructions: if instr.is_empty() {
                None
            } else {
                Some(median(instr))
            },
        })
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
