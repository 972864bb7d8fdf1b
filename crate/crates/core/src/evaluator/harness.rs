//! Command templates and child-process execution for the measurement
//! harnesses.
//!
//! A template is split on ASCII whitespace into argv tokens *before*
//! substitution. Each `{name}` placeholder inside a token is replaced by the
//! value verbatim (values are never re-split or shell-interpreted). A token
//! that becomes empty is dropped, and a token that is exactly `{cmd}` expands
//! to the whole target command line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{CandidateRunner, RunOutcome};
use crate::error::{Error, Result};
use crate::metrics::{parse_heap_profile_named, parse_instruction_count, parse_wallclock, MeasuredObjectives};
use crate::space::{EnvMap, Genotype};

pub const DEFAULT_HEAP_TEMPLATE: &str =
    "valgrind -q --tool=massif --time-unit=i --massif-out-file={out} {driver} {profile} --seed {seed} {touch}";
pub const DEFAULT_TIMING_TEMPLATE: &str = "{driver} {profile} --seed {seed} {touch}";
pub const DEFAULT_INSTRUCTIONS_TEMPLATE: &str =
    "perf stat -x, -e instructions -o {out} -- {driver} {profile} --seed {seed} {touch}";

/// Variables passed through from the tuner's own environment. Everything
/// else, in particular allocator tunables and `LD_PRELOAD`, is dropped.
pub const BASE_ENV_ALLOWLIST: &[&str] = &["PATH", "HOME", "TMPDIR", "LANG", "LC_ALL", "USER"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingSource {
    /// Elapsed time of the timing command measured by the tuner.
    #[default]
    Internal,
    /// Parse `time -p` output from the timing command's stderr.
    Posix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub heap_template: String,
    pub timing_template: String,
    pub timing_source: TimingSource,
    pub instructions_template: String,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            heap_template: DEFAULT_HEAP_TEMPLATE.into(),
            timing_template: DEFAULT_TIMING_TEMPLATE.into(),
            timing_source: TimingSource::Internal,
            instructions_template: DEFAULT_INSTRUCTIONS_TEMPLATE.into(),
        }
    }
}

/// Placeholder values for [`expand_template`].
#[derive(Clone, Debug, Default)]
pub struct TemplateVars {
    pub values: BTreeMap<String, String>,
    pub cmd: Vec<String>,
}

impl TemplateVars {
    pub fn set(mut self, key: &str, value: impl Into<String>) -> Self {
        self.values.insert(key.to_string(), value.into());
        self
    }

    pub fn with_cmd(mut self, cmd: Vec<String>) -> Self {
        self.cmd = cmd;
        self
    }
}

pub fn expand_template(template: &str, vars: &TemplateVars) -> Result<Vec<String>> {
    let mut argv = Vec::new();
    for token in template.split_ascii_whitespace() {
        if token == "{cmd}" {
            argv.extend(vars.cmd.iter().cloned());
            continue;
        }
        let mut out = String::new();
        let mut rest = token;
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            let end = after.find('}').ok_or_else(|| {
                Error::Config(format!("unterminated placeholder in template token `{token}`"))
            })?;
            let name = &after[..end];
            let value = vars.values.get(name).ok_or_else(|| {
                Error::Config(format!("unknown placeholder `{{{name}}}` in template"))
            })?;
            out.push_str(value);
            rest = &after[end + 1..];
        }
        out.push_str(rest);
        if !out.is_empty() {
            argv.push(out);
        }
    }
    if argv.is_empty() {
        return Err(Error::Config(format!("template `{template}` expands to nothing")));
    }
    Ok(argv)
}

/// The scrubbed base environment.
pub fn base_env() -> Vec<(String, String)> {
    let mut env: Vec<(String, String)> = BASE_ENV_ALLOWLIST
        .iter()
        .filter_map(|k| std::env::var(k).ok().map(|v| (k.to_string(), v)))
        .collect();
    if !env.iter().any(|(k, _)| k == "PATH") {
        env.push(("PATH".into(), "/usr/local/bin:/usr/bin:/bin".into()));
    }
    env
}

/// Base environment plus the candidate assignments and optional preload.
pub fn candidate_env(env: &EnvMap, preload: Option<&str>) -> Vec<(String, String)> {
    let mut out = base_env();
    out.extend(env.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    if let Some(lib) = preload {
        out.push(("LD_PRELOAD".into(), lib.to_string()));
    }
    out
}

#[derive(Debug)]
pub enum ProcessResult {
    Exited {
        code: Option<i32>,
        signal: Option<i32>,
        elapsed: Duration,
        stdout: String,
        stderr: String,
    },
    TimedOut {
        elapsed: Duration,
    },
    SpawnFailed(String),
}

impl ProcessResult {
    pub fn success(&self) -> bool {
        matches!(self, ProcessResult::Exited { code: Some(0), .. })
    }

    pub fn describe(&self) -> String {
        match self {
            ProcessResult::Exited {
                code,
                signal,
                stderr,
                ..
            } => {
                let tail: String = stderr.lines().rev().take(3).collect::<Vec<_>>().join(" | ");
                match (code, signal) {
                    (Some(c), _) => format!("exit {c}: {tail}"),
                    (None, Some(s)) => format!("signal {s}: {tail}"),
                    _ => format!("abnormal exit: {tail}"),
                }
            }
            ProcessResult::TimedOut { elapsed } => format!("timed out after {elapsed:?}"),
            ProcessResult::SpawnFailed(e) => format!("spawn failed: {e}"),
        }
    }
}

fn read_back(mut f: File) -> String {
    let mut s = String::new();
    if f.seek(SeekFrom::Start(0)).is_ok() {
        let mut bytes = Vec::new();
        let _ = f.read_to_end(&mut bytes);
        s = String::from_utf8_lossy(&bytes).into_owned();
    }
    s
}

/// Runs `argv` with exactly `env`, in its own process group. On timeout the
/// whole group is killed.
pub fn run_process(argv: &[String], env: &[(String, String)], timeout: Duration) -> ProcessResult {
    let (Some(program), args) = (argv.first(), argv.get(1..).unwrap_or_default()) else {
        return ProcessResult::SpawnFailed("empty command".into());
    };
    let (out, err) = match (tempfile::tempfile(), tempfile::tempfile()) {
        (Ok(o), Ok(e)) => (o, e),
        (Err(e), _) | (_, Err(e)) => return ProcessResult::SpawnFailed(e.to_string()),
    };
    let (out_child, err_child) = match (out.try_clone(), err.try_clone()) {
        (Ok(o), Ok(e)) => (o, e),
        (Err(e), _) | (_, Err(e)) => return ProcessResult::SpawnFailed(e.to_string()),
    };
    let start = Instant::now();
    let mut child = match Command::new(program)
        .args(args)
        .env_clear()
        .envs(env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .stdout(Stdio::from(out_child))
        .stderr(Stdio::from(err_child))
        .process_group(0)
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return ProcessResult::SpawnFailed(format!("{program}: {e}")),
    };
    match child.wait_timeout(timeout) {
        Ok(Some(status)) => ProcessResult::Exited {
            code: status.code(),
            signal: status.signal(),
            elapsed: start.elapsed(),
            stdout: read_back(out),
            stderr: read_back(err),
        },
        Ok(None) => {
            // SAFETY: plain syscall on the child's process group id.
            unsafe {
                libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
            ProcessResult::TimedOut {
                elapsed: start.elapsed(),
            }
        }
        Err(e) => {
            let _ = child.kill();
            let _ = child.wait();
            ProcessResult::SpawnFailed(e.to_string())
        }
    }
}

/// Looks for `name` next to the running executable (and one level up, which
/// covers `target/<profile>/deps` test binaries).
pub fn sibling_binary(name: &str) -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?;
    [dir.join(name), dir.parent()?.join(name)]
        .into_iter()
        .find(|p| p.is_file())
}

/// Runs the synthetic driver under the configured harnesses.
#[derive(Clone, Debug)]
pub struct ProcessRunner {
    pub driver: PathBuf,
    pub profile_path: PathBuf,
    profile_digest: String,
    pub harness: HarnessConfig,
    pub touch: bool,
    pub preload: Option<String>,
    pub measure_instructions: bool,
}

impl ProcessRunner {
    pub fn new(
        driver: PathBuf,
        profile_path: PathBuf,
        harness: HarnessConfig,
        preload: Option<String>,
    ) -> Result<Self> {
        let text = std::fs::read(&profile_path).map_err(|e| Error::io(&profile_path, e))?;
        Ok(ProcessRunner {
            driver,
            profile_path,
            profile_digest: super::hex_digest(&text),
            harness,
            touch: false,
            preload,
            measure_instructions: false,
        })
    }

    pub fn touch(mut self, on: bool) -> Self {
        self.touch = on;
        self
    }

    pub fn measure_instructions(mut self, on: bool) -> Self {
        self.measure_instructions = on;
        self
    }

    fn vars(&self, seed: u64, out: &Path) -> TemplateVars {
        TemplateVars::default()
            .set("driver", self.driver.display().to_string())
            .set("profile", self.profile_path.display().to_string())
            .set("seed", seed.to_string())
            .set("out", out.display().to_string())
            .set("touch", if self.touch { "--touch" } else { "" })
    }
}

fn remaining(deadline: Instant) -> Option<Duration> {
    deadline.checked_duration_since(Instant::now()).filter(|d| !d.is_zero())
}

/// Runs one command under the deadline; maps failures onto outcomes.
fn run_step(argv: &[String], env: &[(String, String)], deadline: Instant) -> Result<ProcessResult, RunOutcome> {
    let Some(budget) = remaining(deadline) else {
        return Err(RunOutcome::Timeout);
    };
    let res = run_process(argv, env, budget);
    match res {
        ProcessResult::TimedOut { .. } => Err(RunOutcome::Timeout),
        ref r if !r.success() => Err(RunOutcome::Crash(format!("{}: {}", argv[0], r.describe()))),
        r => Ok(r),
    }
}

/// Heap, timing and (optionally) instruction measurements of one command.
pub(crate) fn measure(
    harness: &HarnessConfig,
    vars: &dyn Fn(&Path) -> TemplateVars,
    env: &[(String, String)],
    measure_instructions: bool,
    deadline: Instant,
) -> RunOutcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return RunOutcome::Crash(format!("temp dir: {e}")),
    };
    let expand = |template: &str, out: &Path| expand_template(template, &vars(out));

    let massif_out = dir.path().join("massif.out");
    let argv = match expand(&harness.heap_template, &massif_out) {
        Ok(a) => a,
        Err(e) => return RunOutcome::Crash(e.to_string()),
    };
    if let Err(o) = run_step(&argv, env, deadline) {
        return o;
    }
    let series = match std::fs::read_to_string(&massif_out)
        .map_err(|e| e.to_string())
        .and_then(|t| parse_heap_profile_named(&t, "massif.out").map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => return RunOutcome::Crash(format!("heap profile: {e}")),
    };

    let timing_out = dir.path().join("timing.out");
    let argv = match expand(&harness.timing_template, &timing_out) {
        Ok(a) => a,
        Err(e) => return RunOutcome::Crash(e.to_string()),
    };
    let timed = match run_step(&argv, env, deadline) {
        Ok(r) => r,
        Err(o) => return o,
    };
    let wallclock = match (harness.timing_source, &timed) {
        (TimingSource::Internal, ProcessResult::Exited { elapsed, .. }) => elapsed.as_secs_f64(),
        (TimingSource::Posix, ProcessResult::Exited { stderr, .. }) => match parse_wallclock(stderr) {
            // half the 10 ms resolution keeps the objective positive
            Ok(w) if w.below_resolution => 0.005,
            Ok(w) => w.seconds,
            Err(e) => return RunOutcome::Crash(format!("timing output: {e}")),
        },
        _ => unreachable!("run_step only returns exited processes"),
    };

    let mut objectives = MeasuredObjectives::from_series(&series, wallclock);
    if measure_instructions {
        let perf_out = dir.path().join("perf.out");
        let argv = match expand(&harness.instructions_template, &perf_out) {
            Ok(a) => a,
            Err(e) => return RunOutcome::Crash(e.to_string()),
        };
        let res = match run_step(&argv, env, deadline) {
            Ok(r) => r,
            Err(o) => return o,
        };
        let text = std::fs::read_to_string(&perf_out).unwrap_or_else(|_| match &res {
            ProcessResult::Exited { stderr, .. } => stderr.clone(),
            _ => String::new(),
        });
        match parse_instruction_count(&text) {
            Ok(count) => objectives.instructions = count.map(|c| c as f64),
            Err(e) => return RunOutcome::Crash(format!("instruction counter: {e}")),
        }
    }
    RunOutcome::Ok(objectives)
}

impl CandidateRunner for ProcessRunner {
    fn workload_identity(&self) -> String {
        format!(
            "driver profile={} touch={} preload={}",
            self.profile_digest,
            self.touch,
            self.preload.as_deref().unwrap_or("-")
        )
    }

    fn run(&self, env: &EnvMap, _genotype: &Genotype, seed: u64, deadline: Instant) -> RunOutcome {
        let child_env = candidate_env(env, self.preload.as_deref());
        measure(
            &self.harness,
            &|out| self.vars(seed, out),
            &child_env,
            self.measure_instructions,
            deadline,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars() -> TemplateVars {
        TemplateVars::default()
            .set("driver", "/opt/d r")
            .set("profile", "p.toml")
            .set("seed", "42")
            .set("touch", "")
    }

    #[test]
    fn expansion_is_verbatim() {
        let argv = expand_template("{driver} {profile} --seed={seed} {touch} x{seed}y", &vars()).unwrap();
        assert_eq!(argv, vec!["/opt/d r", "p.toml", "--seed=42", "x42y"]);
    }

    #[test]
    fn cmd_splices_arguments() {
        let v = vars().with_cmd(vec!["echo".into(), "a b".into()]);
        let argv = expand_template("env -i {cmd} --seed {seed}", &v).unwrap();
        assert_eq!(argv, vec!["env", "-i", "echo", "a b", "--seed", "42"]);
    }

    #[test]
    fn unknown_placeholder_rejected() {
        assert!(expand_template("{nope}", &vars()).is_err());
        assert!(expand_template("{driver", &vars()).is_err());
        assert!(expand_template("{touch}", &vars()).is_err());
    }

    #[test]
    fn candidate_env_drops_tuner_tunables() {
        let mut m = EnvMap::default();
        m.0.insert("MALLOC_ARENA_MAX".into(), "2".into());
        let env = candidate_env(&m, Some("/lib/x.so"));
        let keys: Vec<_> = env.iter().map(|(k, _)| k.as_str()).collect();
        assert!(keys.contains(&"MALLOC_ARENA_MAX"));
        assert!(keys.contains(&"LD_PRELOAD"));
        assert!(keys
            .iter()
            .all(|k| BASE_ENV_ALLOWLIST.contains(k) || *k == "MALLOC_ARENA_MAX" || *k == "LD_PRELOAD"));
    }

    #[test]
    fn timeout_kills_process_group() {
        let argv: Vec<String> = ["sh", "-c", "sleep 30 & sleep 30"].iter().map(|s| s.to_string()).collect();
        let start = Instant::now();
        let r = run_process(&argv, &base_env(), Duration::from_millis(200));
        assert!(matches!(r, ProcessResult::TimedOut { .. }));
        assert!(start.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn exit_codes_and_missing_programs() {
        let argv: Vec<String> = ["sh", "-c", "echo hi; echo oops >&2; exit 3"].iter().map(|s| s.to_string()).collect();
        match run_process(&argv, &base_env(), Duration::from_secs(10)) {
            ProcessResult::Exited { code, stdout, stderr, .. } => {
                assert_eq!(code, Some(3));
                assert_eq!(stdout, "hi\n");
                assert_eq!(stderr, "oops\n");
            }
            other => panic!("{other:?}"),
        }
        let r = run_process(&["/definitely/not/here".to_string()], &base_env(), Duration::from_secs(1));
        assert!(matches!(r, ProcessResult::SpawnFailed(_)));
    }
}
