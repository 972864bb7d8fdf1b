use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alloctune::campaign::{Recipe, RecipeKind, FRONT_FILE, RECIPE_DIR, REPORT_DIR};
use alloctune::pareto::ParetoFront;
use alloctune::workload::WorkloadProfile;

fn alloctune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alloctune"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn alloctune")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn mock_campaign(dir: &Path, name: &str) -> PathBuf {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(
        &cfg,
        format!(
            "allocator = \"glibc\"\noutput = \"{name}\"\n[ga]\npopulation_size = 8\ngenerations = 4\nseed = 2\n\
             [evaluation]\nrepetitions = 1\n[mock]\nfunction = \"zdt1\"\n"
        ),
    )
    .unwrap();
    let o = alloctune(&["-q", "optimize", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(name)
}

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn massif_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/massif.tiny.out")
}

#[test]
fn space_prints_builtin_table() {
    let o = alloctune(&["space", "glibc"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("MALLOC_MMAP_THRESHOLD_"));
    assert_eq!(code(&alloctune(&["space", "jemalloc"])), 1);
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(code(&alloctune(&[])), 1);
    assert_eq!(code(&alloctune(&["optimize", "/nonexistent/campaign.toml"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "allocator = \"glibc\"\noutput = \"x\"\nunknown_key = 1\n").unwrap();
    let o = alloctune(&["optimize", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("alloctune: "));
}

#[test]
fn missing_campaign_data_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&alloctune(&["select", tmp.path().to_str().unwrap()])), 2);
    assert_eq!(code(&alloctune(&["report", tmp.path().to_str().unwrap()])), 2);
}

#[test]
fn optimize_refuses_existing_campaign_without_flag() {
    let tmp = tempfile::tempdir().unwrap();
    mock_campaign(tmp.path(), "c");
    let cfg = tmp.path().join("c.toml");
    let again = alloctune(&["-q", "optimize", cfg.to_str().unwrap()]);
    assert_ne!(code(&again), 0);
    assert_eq!(code(&alloctune(&["-q", "optimize", cfg.to_str().unwrap(), "--force"])), 0);
    assert_eq!(code(&alloctune(&["-q", "optimize", cfg.to_str().unwrap(), "--resume"])), 0);
    assert_eq!(
        code(&alloctune(&["optimize", cfg.to_str().unwrap(), "--resume", "--force"])),
        1
    );
}

#[test]
fn profile_writes_loadable_toml() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("t.trace");
    fs::write(&trace, "A 1 16\nA 2 100\nF 1\nR 2 3 300\nA 4 16\nF 3\nF 4\n").unwrap();
    let out = tmp.path().join("p.toml");
    let o = alloctune(&["profile", trace.to_str().unwrap(), "--ops", "500", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = WorkloadProfile::load(&out).unwrap();
    assert_eq!(p.total_ops, 500);
    assert!(p.max_live_blocks >= 2);

    fs::write(&trace, "F 9\n").unwrap();
    assert_eq!(
        code(&alloctune(&["profile", trace.to_str().unwrap(), "--ops", "5", "-o", out.to_str().unwrap()])),
        2
    );
}

#[test]
fn select_and_report_cover_the_front() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = mock_campaign(tmp.path(), "c");
    let front: ParetoFront = serde_json::from_str(&fs::read_to_string(dir.join(FRONT_FILE)).unwrap()).unwrap();

    let o = alloctune(&["select", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for kind in [RecipeKind::MinTime, RecipeKind::MinMemory, RecipeKind::Knee] {
        let r = Recipe::load(&dir.join(RECIPE_DIR).join(kind.file_name())).unwrap();
        assert_eq!(r.kind, Some(kind));
        assert!(r.env.get("MALLOC_MMAP_THRESHOLD_").is_some());
    }

    let o = alloctune(&["report", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let report = dir.join(REPORT_DIR);
    let mut rows = csv::Reader::from_path(report.join("front.csv")).unwrap();
    assert_eq!(rows.records().count(), front.len() + 1);
    let md = fs::read_to_string(report.join("report.md")).unwrap();
    assert!(md.contains("omitted"));
    assert!(!report.join("comparison.csv").exists());
}

#[test]
fn validate_rejects_zero_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = mock_campaign(tmp.path(), "c");
    assert_eq!(code(&alloctune(&["select", dir.to_str().unwrap()])), 0);
    let recipe = dir.join(RECIPE_DIR).join("knee.env");
    let o = alloctune(&["validate", "--recipe", recipe.to_str().unwrap(), "--runs", "0", "--", "true"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn validate_with_identical_measurements_reports_no_change_and_scrubs_env() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = mock_campaign(tmp.path(), "c");
    assert_eq!(code(&alloctune(&["select", dir.to_str().unwrap()])), 0);
    let recipe = dir.join(RECIPE_DIR).join("knee.env");
    let dumps = tmp.path().join("dumps");
    fs::create_dir(&dumps).unwrap();
    let heap = script(
        tmp.path(),
        "heap.sh",
        &format!(
            "env > \"{}/$(date +%s%N)\"\ncp \"{}\" \"$1\"",
            dumps.display(),
            massif_fixture().display()
        ),
    );
    let timing = script(tmp.path(), "timing.sh", "echo 'real 1.50' >&2");

    let o = Command::new(env!("CARGO_BIN_EXE_alloctune"))
        .args(["-q", "validate", "--recipe", recipe.to_str().unwrap(), "--runs", "2"])
        .args(["--heap-template", &format!("{} {{out}}", heap.display())])
        .args(["--timing-template", timing.to_str().unwrap(), "--timing-source", "posix"])
        .args(["--campaign", dir.to_str().unwrap(), "--", "true"])
        .env("MALLOC_ARENA_MAX", "77")
        .env("ALLOCTUNE_STRAY", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("no change"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("validation/knee.json")).unwrap()).unwrap();
    assert_eq!(report["no_change"], true);
    assert_eq!(report["tuned_median"]["wallclock_seconds"], 1.5);
    assert_eq!(report["baseline_median"]["peak_heap_bytes"], 1424.0);

    let recipe = Recipe::load(&recipe).unwrap();
    let mut envs: Vec<String> = fs::read_dir(&dumps)
        .unwrap()
        .map(|e| fs::read_to_string(e.unwrap().path()).unwrap())
        .collect();
    assert_eq!(envs.len(), 4);
    envs.sort_by_key(|e| e.contains("MALLOC_MMAP_THRESHOLD_"));
    for e in &envs {
        assert!(!e.contains("ALLOCTUNE_STRAY"));
        assert!(!e.contains("MALLOC_ARENA_MAX=77"));
    }
    // two baseline dumps without any tunable, two tuned dumps with all of them
    assert!(envs[..2].iter().all(|e| !e.contains("MALLOC_")));
    for e in &envs[2..] {
        for (k, v) in recipe.env.iter() {
            assert!(e.lines().any(|l| l == format!("{k}={v}")), "{k}={v} missing");
        }
    }

    assert_eq!(code(&alloctune(&["-q", "report", dir.to_str().unwrap()])), 0);
    assert!(dir.join(REPORT_DIR).join("comparison.csv").exists());
}

#[test]
fn validate_fails_with_3_when_every_run_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = mock_campaign(tmp.path(), "c");
    assert_eq!(code(&alloctune(&["select", dir.to_str().unwrap()])), 0);
    let recipe = dir.join(RECIPE_DIR).join("min-time.env");
    let o = alloctune(&[
        "-q",
        "validate",
        "--recipe",
        recipe.to_str().unwrap(),
        "--runs",
        "1",
        "--heap-template",
        "false",
        "--",
        "true",
    ]);
    assert_eq!(code(&o), 3);
}
