use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_json, CampaignDir, ValidationReport, REPORT_DIR, VALIDATION_DIR};
use crate::error::{Error, Result};
use crate::evaluator::{EvaluationRecord, Status};
use crate::metrics::MeasuredObjectives;
use crate::pareto::{analyze, extract_front, hypervolume_2d, select_representatives, FrontAnalytics, ParetoFront};

#[derive(Clone, Debug)]
pub struct ReportSummary {
    pub front: ParetoFront,
    pub analytics: FrontAnalytics,
    pub files: Vec<PathBuf>,
    pub validations: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn env_string(env: &crate::space::EnvMap) -> String {
    env.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

fn write_front_csv(path: &Path, front: &ParetoFront, a: &FrontAnalytics) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record([
        "row",
        "record_index",
        "peak_heap_bytes",
        "wallclock_seconds",
        "hypervolume",
        "reference_peak_heap_bytes",
        "reference_wallclock_seconds",
        "front_size",
        "span_peak_heap_percent",
        "span_wallclock_percent",
        "tradeoff_slope",
        "env",
    ])
    .map_err(&err)?;
    for p in &front.points {
        w.write_record([
            "point".to_string(),
            p.record_index.to_string(),
            p.objectives.peak_heap().to_string(),
            p.objectives.wallclock().to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            env_string(&p.env),
        ])
        .map_err(&err)?;
    }
    w.write_record([
        "summary".to_string(),
        String::new(),
        String::new(),
        String::new(),
        a.hypervolume.to_string(),
        a.reference_point.peak_heap().to_string(),
        a.reference_point.wallclock().to_string(),
        a.front_size.to_string(),
        opt(a.span_percent[0]),
        opt(a.span_percent[1]),
        opt(a.tradeoff_slope),
        String::new(),
    ])
    .map_err(&err)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Ok => "ok",
        Status::Timeout => "timeout",
        Status::Crash => "crash",
        Status::Infeasible => "infeasible",
    }
}

fn write_archive_csv(path: &Path, records: &[EvaluationRecord], front: &ParetoFront) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record([
        "record_index",
        "generation",
        "status",
        "peak_heap_bytes",
        "avg_heap_bytes",
        "free_rate",
        "wallclock_seconds",
        "instructions",
        "on_front",
    ])
    .map_err(&err)?;
    for (i, r) in records.iter().enumerate() {
        let o = &r.objectives;
        let on_front = front.points.iter().any(|p| p.record_index == i);
        w.write_record([
            i.to_string(),
            r.generation.to_string(),
            status_name(r.status).to_string(),
            o.peak_heap_bytes.to_string(),
            o.avg_heap_bytes.to_string(),
            o.free_rate.to_string(),
            o.wallclock_seconds.to_string(),
            opt(o.instructions),
            on_front.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Hypervolume of the archive prefix after each generation, against the
/// final reference point.
fn hypervolume_series(records: &[EvaluationRecord], a: &FrontAnalytics) -> Result<Vec<(usize, usize, usize, f64)>> {
    let last = records.iter().map(|r| r.generation).max().unwrap_or(0);
    let mut out = Vec::new();
    for g in 0..=last {
        let end = records.iter().rposition(|r| r.generation <= g).map_or(0, |i| i + 1);
        let prefix = &records[..end];
        match extract_front(prefix) {
            Ok(front) => {
                let hv = hypervolume_2d(&front.objectives(), a.reference_point)?;
                out.push((g, end, front.len(), hv));
            }
            Err(_) => out.push((g, end, 0, 0.0)),
        }
    }
    Ok(out)
}

fn load_validations(dir: &CampaignDir) -> Result<Vec<(String, ValidationReport)>> {
    let vdir = dir.path(VALIDATION_DIR);
    if !vdir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&vdir)
        .map_err(|e| Error::io(&vdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, read_json(&p)?))
        })
        .collect()
}

type Metric = fn(&MeasuredObjectives) -> Option<f64>;

const COMPARED: [(&str, Metric); 5] = [
    ("avg_heap_bytes", |m| Some(m.avg_heap_bytes)),
    ("free_rate", |m| Some(m.free_rate)),
    ("peak_heap_bytes", |m| Some(m.peak_heap_bytes)),
    ("instructions", |m| m.instructions),
    ("wallclock_seconds", |m| Some(m.wallclock_seconds)),
];

fn delta_of(r: &ValidationReport, metric: &str) -> (Option<f64>, Option<f64>) {
    let pick = |d: &super::MetricDeltas| d.values().into_iter().find(|(n, _)| *n == metric).and_then(|(_, v)| v);
    (pick(&r.deltas), pick(&r.noise))
}

fn write_comparison_csv(path: &Path, validations: &[(String, ValidationReport)]) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record(["validation", "metric", "baseline_median", "tuned_median", "relative_delta", "noise_band"])
        .map_err(&err)?;
    for (name, r) in validations {
        for (metric, get) in COMPARED {
            let (delta, noise) = delta_of(r, metric);
            w.write_record([
                name.clone(),
                metric.to_string(),
                opt(get(&r.baseline_median)),
                opt(get(&r.tuned_median)),
                opt(delta),
                opt(noise),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>, suffix: &str) -> String {
    v.map(|x| format!("{x:.6}{suffix}")).unwrap_or_else(|| "undefined".into())
}

fn markdown(
    id: &str,
    records: &[EvaluationRecord],
    front: &ParetoFront,
    a: &FrontAnalytics,
    validations: &[(String, ValidationReport)],
) -> String {
    let mut md = String::new();
    let ok = records.iter().filter(|r| r.is_ok()).count();
    let generations = records.iter().map(|r| r.generation).max().unwrap_or(0);
    let _ = writeln!(md, "# Campaign report: {id}\n");
    let _ = writeln!(
        md,
        "{} evaluations over generations 0..={generations}; {ok} succeeded, {} failed or infeasible.\n",
        records.len(),
        records.len() - ok
    );

    let _ = writeln!(md, "## Front analytics\n");
    let _ = writeln!(md, "| quantity | value |\n|---|---|");
    let _ = writeln!(md, "| hypervolume | {} |", a.hypervolume);
    let _ = writeln!(
        md,
        "| reference point | ({}, {}) |",
        a.reference_point.peak_heap(),
        a.reference_point.wallclock()
    );
    let _ = writeln!(md, "| front size | {} |", a.front_size);
    let _ = writeln!(md, "| peak heap span | {} |", fmt_opt(a.span_percent[0], " %"));
    let _ = writeln!(md, "| wallclock span | {} |", fmt_opt(a.span_percent[1], " %"));
    let _ = writeln!(md, "| trade-off slope | {} |\n", fmt_opt(a.tradeoff_slope, ""));
    let _ = writeln!(
        md,
        "The reference point is 1.1 times the worst successful value of each objective. \
         Spans are `100 * (max - min) / min` over the front. The slope is the least-squares \
         slope of wallclock against peak heap, both as percent above the front minimum.\n"
    );

    let reps = select_representatives(&front.objectives());
    let _ = writeln!(md, "## Front\n");
    let _ = writeln!(md, "| record | peak heap (B) | wallclock (s) | representative | environment |\n|---|---|---|---|---|");
    for (i, p) in front.points.iter().enumerate() {
        let mut tags = Vec::new();
        if i == reps.min_memory {
            tags.push("min-memory");
        }
        if i == reps.min_time {
            tags.push("min-time");
        }
        if i == reps.knee {
            tags.push("knee");
        }
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | `{}` |",
            p.record_index,
            p.objectives.peak_heap(),
            p.objectives.wallclock(),
            tags.join(", "),
            env_string(&p.env)
        );
    }
    md.push('\n');

    let _ = writeln!(md, "## Baseline versus tuned\n");
    if validations.is_empty() {
        let _ = writeln!(
            md,
            "No validation data found in `{VALIDATION_DIR}/`; comparison omitted. \
             Run `alloctune validate --campaign <dir> ...` to add it.\n"
        );
        return md;
    }
    for (name, r) in validations {
        let _ = writeln!(
            md,
            "### {name}\n\nTarget `{}`, {} runs each, baseline {}{}.\n",
            r.target.join(" "),
            r.runs,
            r.baseline_allocator,
            if r.no_change { " (no change beyond run-to-run noise)" } else { "" }
        );
        let _ = writeln!(md, "| metric | baseline median | tuned median | delta |\n|---|---|---|---|");
        for (metric, get) in COMPARED {
            let (delta, _) = delta_of(r, metric);
            let show = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                md,
                "| {metric} | {} | {} | {} |",
                show(get(&r.baseline_median)),
                show(get(&r.tuned_median)),
                delta.map(|d| format!("{:+.4} %", 100.0 * d)).unwrap_or_else(|| "n/a".into())
            );
        }
        md.push('\n');
    }
    md
}

/// Writes CSV and markdown summaries of a campaign into `report/`.
pub fn cmd_report(campaign: &Path) -> Result<ReportSummary> {
    let dir = CampaignDir::new(campaign);
    let records = dir.evaluations()?;
    let id = dir.campaign_id()?;
    let (front, analytics) = analyze(&records)?;
    let validations = load_validations(&dir)?;

    let out = dir.path(REPORT_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = Vec::new();

    let p = out.join("front.csv");
    write_front_csv(&p, &front, &analytics)?;
    files.push(p);

    let p = out.join("archive.csv");
    write_archive_csv(&p, &records, &front)?;
    files.push(p);

    let p = out.join("hypervolume.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["generation", "records", "front_size", "hypervolume"]).map_err(csv_err(&p))?;
    for (g, n, size, hv) in hypervolume_series(&records, &analytics)? {
        w.write_record([g.to_string(), n.to_string(), size.to_string(), hv.to_string()])
            .map_err(csv_err(&p))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    files.push(p);

    if !validations.is_empty() {
        let p = out.join("comparison.csv");
        write_comparison_csv(&p, &validations)?;
        files.push(p);
    }

    let p = out.join("report.md");
    fs::write(&p, markdown(&id, &records, &front, &analytics, &validations)).map_err(|e| Error::io(&p, e))?;
    files.push(p);

    Ok(ReportSummary {
        front,
        analytics,
        files,
        validations: validations.len(),
    })
}
