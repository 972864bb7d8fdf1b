//! Acceptance checks, one PASS/FAIL/SKIP line per criterion.
//!
//! Every expected value here comes from an oracle that shares no code with
//! the implementation under test: pairwise dominance peeling, inclusion-
//! exclusion and Monte-Carlo areas, exhaustive enumeration, hand-extracted
//! fixture numbers, and the analytic ZDT1 front.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alloctune::campaign::{cmd_optimize, CampaignConfig, OptimizeOptions, EVALUATIONS_FILE, FRONT_FILE};
use alloctune::evaluator::{EvaluationSettings, Evaluator, MockFunction, MockRunner};
use alloctune::metrics::{avg_heap, free_rate, parse_heap_profile, parse_instruction_count, peak_heap, HeapSeries};
use alloctune::moo::{nsga2_run, non_dominated_sort, non_dominated_sort_seq, GaConfig, NoopObserver, ObjectiveVector};
use alloctune::pareto::{extract_front, hypervolume_2d};
use alloctune::space::{default_genotype, Allocator, ParameterSpace, ParameterSpec};
use alloctune::workload::{analytic_max_live_bytes, WorkloadProfile};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(budget: Duration, started: Instant, v: Verdict) -> Verdict {
    match v {
        Verdict::Pass(d) if started.elapsed() > budget => {
            Verdict::Fail(format!("{d}; took {:.1?}, budget {budget:?}", started.elapsed()))
        }
        other => other,
    }
}

fn v(a: f64, b: f64) -> ObjectiveVector {
    ObjectiveVector([a, b])
}

fn dominates(a: &[f64; 2], b: &[f64; 2]) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Rank of every point by repeatedly peeling off the non-dominated set.
fn peel_ranks(points: &[[f64; 2]]) -> Vec<usize> {
    let mut rank = vec![usize::MAX; points.len()];
    let mut level = 0;
    while rank.contains(&usize::MAX) {
        let open: Vec<usize> = (0..points.len()).filter(|&i| rank[i] == usize::MAX).collect();
        let layer: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&i| !open.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        for i in layer {
            rank[i] = level;
        }
        level += 1;
    }
    rank
}

fn ga_correctness() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for instance in 0..100 {
        let n = rng.gen_range(1..=200);
        // coarse grid values force plenty of ties and duplicates
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if instance % 2 == 0 {
                    [rng.gen_range(0..20) as f64, rng.gen_range(0..20) as f64]
                } else {
                    [rng.gen::<f64>(), rng.gen::<f64>()]
                }
            })
            .collect();
        let expected = peel_ranks(&pts);
        let objs: Vec<ObjectiveVector> = pts.iter().map(|p| ObjectiveVector(*p)).collect();
        for fronts in [non_dominated_sort(&objs), non_dominated_sort_seq(&objs)] {
            let mut got = vec![usize::MAX; n];
            for (r, f) in fronts.iter().enumerate() {
                for &i in f {
                    got[i] = r;
                }
            }
            if got != expected {
                mismatches += 1;
            }
        }
    }
    within(
        Duration::from_secs(10),
        started,
        ensure(mismatches == 0, format!("100 instances, {mismatches} mismatches")),
    )
}

fn ga_effectiveness() -> Verdict {
    let started = Instant::now();
    let specs = (0..30)
        .map(|i| ParameterSpec::continuous(&format!("x{i}"), &format!("X{i}"), 0.0, 1.0, 0.5))
        .collect();
    let space = ParameterSpace::new(Allocator::Glibc, specs, None).unwrap();
    let evaluator = Evaluator::new(
        space.clone(),
        MockRunner::new(MockFunction::Zdt1, space.clone()),
        EvaluationSettings {
            repetitions: 1,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let ga = GaConfig {
        population_size: 24,
        generations: 250,
        seed: 7,
        ..Default::default()
    };
    let run = nsga2_run(&space, &evaluator, &ga, None, &mut NoopObserver).unwrap();
    let front = extract_front(&run.archive).unwrap();
    let inside: Vec<ObjectiveVector> = front
        .objectives()
        .into_iter()
        .filter(|p| p.0[0] < 1.0 && p.0[1] < 1.0)
        .collect();
    let hv = hypervolume_2d(&inside, v(1.0, 1.0)).unwrap();
    within(
        Duration::from_secs(60),
        started,
        ensure(hv >= 0.60, format!("hypervolume {hv:.4} (optimum 2/3)")),
    )
}

/// Union area of boxes [p, r] by inclusion-exclusion over all subsets.
fn inclusion_exclusion(points: &[[f64; 2]], r: [f64; 2]) -> f64 {
    let n = points.len();
    let mut area = 0.0;
    for mask in 1u32..(1 << n) {
        let mut lo = [f64::NEG_INFINITY; 2];
        for (i, p) in points.iter().enumerate() {
            if mask & (1 << i) != 0 {
                lo = [lo[0].max(p[0]), lo[1].max(p[1])];
            }
        }
        let box_area = (r[0] - lo[0]).max(0.0) * (r[1] - lo[1]).max(0.0);
        area += if mask.count_ones() % 2 == 1 { box_area } else { -box_area };
    }
    area
}

/// Exact union area by coordinate compression: every cell between adjacent
/// distinct coordinates is either fully covered or not.
fn compressed_area(points: &[[f64; 2]], r: [f64; 2]) -> f64 {
    let axis = |k: usize| {
        let mut c: Vec<f64> = points.iter().map(|p| p[k]).chain([r[k]]).collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    };
    let (xs, ys) = (axis(0), axis(1));
    let mut area = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            if points.iter().any(|p| p[0] <= xw[0] && p[1] <= yw[0]) {
                area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    area
}

/// Counts unit cells of an integer grid covered by some box.
fn grid_area(points: &[[f64; 2]], r: [i64; 2]) -> f64 {
    let mut cells = 0;
    for x in 0..r[0] {
        for y in 0..r[1] {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            if points.iter().any(|p| p[0] <= cx && p[1] <= cy) {
                cells += 1;
            }
        }
    }
    cells as f64
}

fn hypervolume_exactness() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    for k in 0..50 {
        let n = 1 + k % 20;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let r = [10.5, 10.5];
        let objs: Vec<ObjectiveVector> = pts.iter().map(|p| ObjectiveVector(*p)).collect();
        let hv = hypervolume_2d(&objs, ObjectiveVector(r)).unwrap();
        let exact = compressed_area(&pts, r);
        if (hv - exact).abs() > 1e-9 * exact.max(1.0) {
            failures.push(format!("front {k}: {hv} vs compressed-grid {exact}"));
        }
        if n <= 3 {
            let exact = inclusion_exclusion(&pts, r);
            if (hv - exact).abs() > 1e-9 {
                failures.push(format!("front {k}: {hv} vs inclusion-exclusion {exact}"));
            }
        } else {
            let samples = 200_000;
            let hits = (0..samples)
                .filter(|_| {
                    let q = [rng.gen_range(0.0..r[0]), rng.gen_range(0.0..r[1])];
                    pts.iter().any(|p| p[0] <= q[0] && p[1] <= q[1])
                })
                .count();
            let total = r[0] * r[1];
            let p = hits as f64 / samples as f64;
            let estimate = total * p;
            let se = total * (p * (1.0 - p) / samples as f64).sqrt();
            if (hv - estimate).abs() > 3.0 * se.max(1e-12) {
                failures.push(format!("front {k}: {hv} vs Monte-Carlo {estimate} ± {se}"));
            }
        }
        // integer-vertex variant, checked against exact cell counting
        let ints: Vec<[f64; 2]> = pts.iter().map(|p| [p[0].floor(), p[1].floor()]).collect();
        let objs: Vec<ObjectiveVector> = ints.iter().map(|p| ObjectiveVector(*p)).collect();
        let hv = hypervolume_2d(&objs, v(11.0, 11.0)).unwrap();
        let cells = grid_area(&ints, [11, 11]);
        if (hv - cells).abs() > 1e-9 {
            failures.push(format!("integer front {k}: {hv} vs grid {cells}"));
        }
    }
    within(
        Duration::from_secs(10),
        started,
        ensure(failures.is_empty(), if failures.is_empty() { "50 fronts agree".into() } else { failures.join("; ") }),
    )
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn metrics() -> Verdict {
    let mut problems = Vec::new();
    // values read off tests/data/massif.tiny.out by hand
    let text = std::fs::read_to_string(data("massif.tiny.out")).unwrap();
    let s = parse_heap_profile(&text).unwrap();
    let times: Vec<u64> = s.snapshots().iter().map(|x| x.time).collect();
    let totals: Vec<u64> = s.snapshots().iter().map(|x| x.total()).collect();
    if times != [0, 168666, 168706, 168746, 168746, 168777] {
        problems.push(format!("snapshot times {times:?}"));
    }
    if totals != [0, 1016, 1424, 1424, 408, 0] {
        problems.push(format!("snapshot totals {totals:?}"));
    }
    if peak_heap(&s) != 1424 {
        problems.push(format!("peak {}", peak_heap(&s)));
    }
    let avg = (1016.0 * 40.0 + 1424.0 * 40.0 + 408.0 * 31.0) / 168777.0;
    if (avg_heap(&s) - avg).abs() > 1e-9 {
        problems.push(format!("avg {} vs {avg}", avg_heap(&s)));
    }
    if (free_rate(&s) - 1424.0 / 4272.0).abs() > 1e-12 {
        problems.push(format!("free rate {}", free_rate(&s)));
    }

    let perf = std::fs::read_to_string(data("perf.instructions.csv")).unwrap();
    if parse_instruction_count(&perf).unwrap() != Some(48213377) {
        problems.push("hybrid perf fixture".into());
    }
    let perf = std::fs::read_to_string(data("perf.single.csv")).unwrap();
    if parse_instruction_count(&perf).unwrap() != Some(1234567890123) {
        problems.push("single perf fixture".into());
    }

    let s = HeapSeries::from_pairs(&[(0, 100), (1, 50), (2, 80), (3, 0)]).unwrap();
    if (free_rate(&s) - 130.0 / 230.0).abs() > 1e-12 {
        problems.push(format!("free_rate {{100,50,80,0}} = {}", free_rate(&s)));
    }
    let s = HeapSeries::from_pairs(&[(0, 0), (1, 100), (2, 100)]).unwrap();
    if avg_heap(&s) != 50.0 {
        problems.push(format!("avg_heap = {}", avg_heap(&s)));
    }
    ensure(problems.is_empty(), if problems.is_empty() { "fixtures reproduced".into() } else { problems.join("; ") })
}

fn mock_config(dir: &Path, name: &str, extra: &str) -> CampaignConfig {
    let text = format!(
        "allocator = \"glibc\"\noutput = \"{name}\"\n[ga]\npopulation_size = 8\ngenerations = 6\nseed = 5\n\
         [evaluation]\nrepetitions = 1\n[mock]\nfunction = \"zdt1\"\n{extra}"
    );
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, text).unwrap();
    CampaignConfig::load(&path).unwrap()
}

fn read(dir: &Path, campaign: &str, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(campaign).join(file)).unwrap()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let opts = OptimizeOptions::default();
    cmd_optimize(&mock_config(d, "a", ""), &opts).unwrap();
    cmd_optimize(&mock_config(d, "b", ""), &opts).unwrap();
    let c = mock_config(d, "c", "");
    cmd_optimize(&c, &OptimizeOptions { stop_after: Some(3), ..Default::default() }).unwrap();
    cmd_optimize(&c, &OptimizeOptions { resume: true, ..Default::default() }).unwrap();
    let same_ab = read(d, "a", EVALUATIONS_FILE) == read(d, "b", EVALUATIONS_FILE)
        && read(d, "a", FRONT_FILE) == read(d, "b", FRONT_FILE);
    let same_ac = read(d, "a", EVALUATIONS_FILE) == read(d, "c", EVALUATIONS_FILE)
        && read(d, "a", FRONT_FILE) == read(d, "c", FRONT_FILE);
    ensure(
        same_ab && same_ac,
        format!("repeat identical: {same_ab}; interrupted at generation 3 and resumed identical: {same_ac}"),
    )
}

fn mock_end_to_end() -> Verdict {
    let started = Instant::now();
    let space = ParameterSpace::new(
        Allocator::Glibc,
        vec![
            ParameterSpec::integer("a", "A", 0, 9, 0),
            ParameterSpec::integer("b", "B", 0, 9, 9),
        ],
        None,
    )
    .unwrap();
    // exhaustive enumeration of all 100 points with the analytic objective
    let objective = |a: f64, b: f64| {
        let (u, w) = (a / 9.0, b / 9.0);
        [(u * u + w * w) / 2.0, ((1.0 - u).powi(2) + (1.0 - w).powi(2)) / 2.0]
    };
    let all: Vec<[f64; 2]> = (0..10)
        .flat_map(|a| (0..10).map(move |b| objective(a as f64, b as f64)))
        .collect();
    let mut truth: Vec<[f64; 2]> = all
        .iter()
        .copied()
        .filter(|p| !all.iter().any(|q| dominates(q, p)))
        .collect();
    truth.sort_by(|x, y| x[0].total_cmp(&y[0]));
    truth.dedup();

    let evaluator = Evaluator::new(
        space.clone(),
        MockRunner::new(MockFunction::Bowl, space.clone()),
        EvaluationSettings {
            repetitions: 1,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let ga = GaConfig {
        population_size: 24,
        generations: 60,
        seed: 3,
        ..Default::default()
    };
    let run = nsga2_run(&space, &evaluator, &ga, None, &mut NoopObserver).unwrap();
    let got: Vec<[f64; 2]> = extract_front(&run.archive).unwrap().objectives().iter().map(|p| p.0).collect();
    let close = got.len() == truth.len()
        && got
            .iter()
            .zip(&truth)
            .all(|(g, t)| (g[0] - t[0]).abs() < 1e-12 && (g[1] - t[1]).abs() < 1e-12);
    within(
        Duration::from_secs(30),
        started,
        ensure(
            close,
            format!("{} of {} exhaustive front points recovered exactly", got.len(), truth.len()),
        ),
    )
}

fn have(tool: &str) -> bool {
    Command::new("sh")
        .arg("-c")
        .arg(format!("command -v {tool}"))
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn real_allocator_smoke() -> Verdict {
    if !have("valgrind") {
        return Verdict::Skip("valgrind not installed".into());
    }
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("profile.toml"),
        "total_ops = 300\nsize_histogram = [[64, 0.5], [4096, 0.3], [262144, 0.2]]\n\
         free_probability = 0.4\nmax_live_blocks = 64\n",
    )
    .unwrap();
    std::fs::write(
        d.join("smoke.toml"),
        format!(
            "allocator = \"glibc\"\nprofile = \"profile.toml\"\noutput = \"smoke\"\n\
             [ga]\npopulation_size = 8\ngenerations = 10\nseed = 1\n\
             [evaluation]\nrepetitions = 3\ntouch = true\ntimeout_seconds = 120\n\
             [harness]\ndriver = \"{}\"\n",
            env!("CARGO_BIN_EXE_alloctune-driver")
        ),
    )
    .unwrap();
    let cfg = CampaignConfig::load(&d.join("smoke.toml")).unwrap();
    let summary = match cmd_optimize(&cfg, &OptimizeOptions::default()) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(format!("campaign failed: {e}")),
    };
    let records: Vec<alloctune::evaluator::EvaluationRecord> = std::fs::read_to_string(d.join("smoke").join(EVALUATIONS_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let default = default_genotype(&cfg.parameter_space().unwrap());
    let Some(base) = records.iter().find(|r| r.genotype == default && r.is_ok()) else {
        return Verdict::Fail("default configuration did not evaluate successfully".into());
    };
    let base_peak = base.objectives.peak_heap_bytes;
    let best = records
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| r.objectives.peak_heap_bytes)
        .fold(f64::INFINITY, f64::min);
    within(
        Duration::from_secs(15 * 60),
        started,
        ensure(
            best <= base_peak && summary.records == 88,
            format!("{} records, best median peak {best} B vs default {base_peak} B", summary.records),
        ),
    )
}

fn driver_fidelity() -> Verdict {
    if !have("valgrind") {
        return Verdict::Skip("valgrind not installed".into());
    }
    let tmp = tempfile::tempdir().unwrap();
    let profile_path = tmp.path().join("p.toml");
    let text = "total_ops = 2000\nsize_histogram = [[4096, 1.0]]\nfree_probability = 0.3\nmax_live_blocks = 100\n";
    std::fs::write(&profile_path, text).unwrap();
    let profile = WorkloadProfile::from_toml(text).unwrap();
    let expected = analytic_max_live_bytes(&profile, 11).unwrap() as f64;
    let out = tmp.path().join("massif.out");
    let status = Command::new("valgrind")
        .args(["-q", "--tool=massif", "--time-unit=i"])
        .arg(format!("--massif-out-file={}", out.display()))
        .arg(env!("CARGO_BIN_EXE_alloctune-driver"))
        .arg(&profile_path)
        .args(["--seed", "11", "--touch"])
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    if !status.success() {
        return Verdict::Fail(format!("driver under massif exited with {status}"));
    }
    let series = parse_heap_profile(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let measured = peak_heap(&series) as f64;
    let err = (measured - expected).abs() / expected;
    ensure(
        err <= 0.25,
        format!("measured peak {measured} B vs analytic max-live {expected} B ({:.2}% off)", 100.0 * err),
    )
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("ga-correctness", ga_correctness),
        ("ga-effectiveness", ga_effectiveness),
        ("hypervolume-exactness", hypervolume_exactness),
        ("metrics", metrics),
        ("determinism", determinism),
        ("mock-end-to-end", mock_end_to_end),
        ("real-allocator-smoke", real_allocator_smoke),
        ("driver-fidelity", driver_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Verdict::Fail(format!("panicked: {}", panic_text(&p))));
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Verdict::Pass(d) => println!("PASS {name} ({secs:.1}s): {d}"),
            Verdict::Skip(d) => println!("SKIP {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
