//! Test-case execution in isolated child processes.
//!
//! Each run gets its own temporary directory and process group. The whole
//! group is killed when the wall-clock limit passes and again after the main
//! process exits, so background children cannot outlive the run.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CODE_PATH_PLACEHOLDER: &str = "{code_path}";
/// Longest a killed group may take to disappear.
pub const KILL_GRACE: Duration = Duration::from_secs(2);
const MAX_CAPTURE: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunnerConfig {
    /// Command template; `{code_path}` is replaced by the program file.
    pub run_cmd: Vec<String>,
    /// File name the program is written to inside the run directory.
    pub code_file: String,
    pub default_time_limit_s: f64,
    pub workers: usize,
    /// Parent of the per-run directories; the system default when unset.
    pub temp_root: Option<PathBuf>,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            run_cmd: vec!["sh".into(), CODE_PATH_PLACEHOLDER.into()],
            code_file: "program.sh".into(),
            default_time_limit_s: 5.0,
            workers: 1,
            temp_root: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Byte-exact stdout after trailing-newline normalization.
    Stdout(Vec<u8>),
    /// Executable receiving the program's stdout on stdin; exit 0 passes.
    Checker(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub stdin: Vec<u8>,
    pub expect: Expectation,
    pub time_limit_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    Timeout,
    WrongOutput,
    NonzeroExit,
    CheckerRejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub name: String,
    pub passed: bool,
    pub reason: Option<FailReason>,
    pub stdout: Vec<u8>,
    #[serde(skip)]
    pub duration: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRun {
    pub cases: Vec<CaseOutcome>,
    pub all_passed: bool,
}

fn normalize(out: &[u8]) -> &[u8] {
    let out = out.strip_suffix(b"\n").unwrap_or(out);
    out.strip_suffix(b"\r").unwrap_or(out)
}

fn kill_group(pgid: i32) {
    // SAFETY: plain syscall on a process group id we created.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

/// True while any process in the group is still running. Zombies count as
/// dead: a killed child whose parent is gone may never be reaped when the
/// init process of a container does not wait on orphans.
pub fn group_alive(pgid: i32) -> bool {
    // SAFETY: signal 0 only probes for existence.
    let r = unsafe { libc::kill(-pgid, 0) };
    if r != 0 && std::io::Error::last_os_error().raw_os_error() == Some(libc::ESRCH) {
        return false;
    }
    running_members(pgid).unwrap_or(true)
}

// `Some(true)` if /proc lists a non-zombie member of the group; `None`
// without a readable /proc.
fn running_members(pgid: i32) -> Option<bool> {
    let entries = std::fs::read_dir("/proc").ok()?;
    for entry in entries.flatten() {
        let Ok(stat) = std::fs::read_to_string(entry.path().join("stat")) else {
            continue;
        };
        // Fields after the parenthesised command: state, ppid, pgrp, ...
        let Some(close) = stat.rfind(')') else { continue };
        let mut fields = stat[close + 1..].split_whitespace();
        let (state, pgrp) = (fields.next(), fields.nth(1));
        if pgrp.and_then(|g| g.parse::<i32>().ok()) == Some(pgid) && !matches!(state, Some("Z" | "X")) {
            return Some(true);
        }
    }
    Some(false)
}

struct Finished {
    status: Option<ExitStatus>,
    stdout: Vec<u8>,
    timed_out: bool,
    duration: Duration,
}

fn spawn_error(program: &str, e: std::io::Error) -> Error {
    use std::io::ErrorKind;
    if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::PermissionDenied) || e.raw_os_error() == Some(libc::ENOEXEC) {
        Error::Environment(format!("cannot run {program:?}: {e}"))
    } else {
        Error::Io(e)
    }
}

fn run_limited(mut cmd: Command, program: &str, stdin: &[u8], limit: Duration) -> Result<Finished> {
    use std::os::unix::process::CommandExt;
    cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::null()).process_group(0);
    let start = Instant::now();
    let mut child: Child = cmd.spawn().map_err(|e| spawn_error(program, e))?;
    let pgid = child.id() as i32;

    let mut input = child.stdin.take().expect("stdin piped");
    let data = stdin.to_vec();
    let writer = thread::spawn(move || {
        // Programs that never read their input close the pipe early.
        let _ = input.write_all(&data);
    });
    let mut output = child.stdout.take().expect("stdout piped");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match output.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if buf.len() < MAX_CAPTURE {
                        buf.extend_from_slice(&chunk[..n.min(MAX_CAPTURE - buf.len())]);
                    }
                }
            }
        }
        buf
    });

    let deadline = start + limit;
    let mut timed_out = false;
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break Some(s);
        }
        if Instant::now() >= deadline {
            timed_out = true;
            kill_group(pgid);
            break child.wait().ok();
        }
        thread::sleep(Duration::from_millis(5));
    };
    let duration = start.elapsed();
    // Stragglers in the group would otherwise keep the pipes open.
    kill_group(pgid);
    let stdout = reader.join().unwrap_or_default();
    let _ = writer.join();
    let until = Instant::now() + KILL_GRACE;
    while group_alive(pgid) && Instant::now() < until {
        thread::sleep(Duration::from_millis(5));
    }
    Ok(Finished {
        status,
        stdout,
        timed_out,
        duration,
    })
}

fn run_one(code: &Path, tc: &TestCase, cfg: &RunnerConfig) -> Result<CaseOutcome> {
    let dir = match &cfg.temp_root {
        Some(root) => tempfile::Builder::new().prefix("gpiot-run-").tempdir_in(root)?,
        None => tempfile::Builder::new().prefix("gpiot-run-").tempdir()?,
    };
    let program = dir.path().join(&cfg.code_file);
    std::fs::copy(code, &program).map_err(Error::at_path(code))?;
    let program_str = program.to_string_lossy().into_owned();
    let argv: Vec<String> = cfg.run_cmd.iter().map(|a| a.replace(CODE_PATH_PLACEHOLDER, &program_str)).collect();
    let (bin, args) = argv
        .split_first()
        .ok_or_else(|| Error::Config("run_cmd is empty".into()))?;
    let mut cmd = Command::new(bin);
    cmd.args(args).current_dir(dir.path());
    let limit = tc.time_limit_s.unwrap_or(cfg.default_time_limit_s);
    if !(limit > 0.0) || !limit.is_finite() {
        return Err(Error::Config(format!("time limit must be positive, got {limit}")));
    }
    let f = run_limited(cmd, bin, &tc.stdin, Duration::from_secs_f64(limit))?;

    let (passed, reason) = if f.timed_out {
        (false, Some(FailReason::Timeout))
    } else if !f.status.is_some_and(|s| s.success()) {
        (false, Some(FailReason::NonzeroExit))
    } else {
        match &tc.expect {
            Expectation::Stdout(want) => {
                if normalize(&f.stdout) == normalize(want) {
                    (true, None)
                } else {
                    (false, Some(FailReason::WrongOutput))
                }
            }
            Expectation::Checker(checker) => {
                let checker_str = checker.to_string_lossy().into_owned();
                let mut c = Command::new(checker);
                c.current_dir(dir.path());
                let r = run_limited(c, &checker_str, &f.stdout, Duration::from_secs_f64(limit))?;
                if !r.timed_out && r.status.is_some_and(|s| s.success()) {
                    (true, None)
                } else {
                    (false, Some(FailReason::CheckerRejected))
                }
            }
        }
    };
    dir.close()?;
    Ok(CaseOutcome {
        name: tc.name.clone(),
        passed,
        reason,
        stdout: f.stdout,
        duration: f.duration,
    })
}

/// Runs `code` against every case, up to `cfg.workers` at a time. Outcomes
/// keep the order of `cases`.
pub fn run_test_cases(code: &Path, cases: &[TestCase], cfg: &RunnerConfig) -> Result<TestRun> {
    if cases.is_empty() {
        return Err(Error::Contract("no test cases to run".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Environment(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<CaseOutcome>> = pool.install(|| cases.par_iter().map(|tc| run_one(code, tc, cfg)).collect());
    let cases = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let all_passed = cases.iter().all(|c| c.passed);
    Ok(TestRun { cases, all_passed })
}
