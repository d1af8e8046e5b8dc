use std::ffi::OsString;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::log::CampaignLog;
use super::{
    classify, execute_run, Baseline, CampaignResult, InjectError, InjectionPlan, Outcome, OutcomeClass, RawRun,
    RunStatus, Tally,
};
use crate::cg::{generate_poisson27, io, PoissonSystem};
use crate::layout::{CgShape, StructureId};

/// Environment variable naming the directory for scratch files.
pub const SCRATCH_ENV: &str = "MEMVULN_SCRATCH";

/// Exit status of a worker that could not set up its run (as opposed to a
/// run that crashed).
pub const WORKER_SETUP_EXIT: i32 = 3;

/// Redraws allowed per run before the campaign gives up.
const MAX_ATTEMPTS: u32 = 200;

/// Extra time a worker gets on top of the hang deadline for process start-up
/// and input loading before the supervisor kills it.
const KILL_GRACE: Duration = Duration::from_secs(60);

/// Serve one worker invocation if this process was started as
/// `<exe> inject run-one ...`: execute the run, print its report as JSON and
/// return the exit code. Any executable that calls this first can act as a
/// campaign's `worker_exe`.
pub fn serve_worker() -> Option<i32> {
    let args: Vec<OsString> = std::env::args_os().skip(1).collect();
    let req = RunRequest::from_args(&args)?;
    let report = req
        .and_then(|r| r.execute())
        .and_then(|raw| serde_json::to_string(&raw).map_err(|e| InjectError::Worker(e.to_string())));
    Some(match report {
        Ok(json) => {
            println!("{json}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            WORKER_SETUP_EXIT
        }
    })
}

pub fn scratch_dir() -> PathBuf {
    std::env::var_os(SCRATCH_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("memvuln"))
}

/// Write the side³ Poisson matrix to `dir` once and reuse it afterwards.
pub fn prepare_matrix(side: usize, dir: &Path) -> Result<PathBuf, InjectError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("poisson27-side{side}.csr"));
    if let Ok(a) = io::load_matrix(&path) {
        if a.n_rows == side * side * side {
            return Ok(path);
        }
    }
    let a = generate_poisson27(side)?;
    let tmp = dir.join(format!(".poisson27-side{side}.{}.tmp", std::process::id()));
    io::save_matrix(&tmp, &a)?;
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Arguments of one worker process.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub matrix: PathBuf,
    pub tol_factor: f64,
    /// `(structure, bit, delay)`; `None` for a fault-free run.
    pub fault: Option<(StructureId, u64, u64)>,
    pub deadline_ns: Option<u64>,
    pub threads: usize,
}

impl RunRequest {
    /// Command-line arguments understood by `memvuln inject run-one`.
    pub fn to_args(&self) -> Vec<OsString> {
        let mut a: Vec<OsString> = vec![
            "inject".into(),
            "run-one".into(),
            "--matrix".into(),
            self.matrix.clone().into(),
            "--tol".into(),
            format!("{:e}", self.tol_factor).into(),
            "--threads".into(),
            self.threads.to_string().into(),
        ];
        if let Some((s, bit, delay)) = self.fault {
            a.extend([
                "--structure".into(),
                s.name().into(),
                "--bit".into(),
                bit.to_string().into(),
            ]);
            a.extend(["--delay-ns".into(), delay.to_string().into()]);
        }
        if let Some(d) = self.deadline_ns {
            a.extend(["--deadline-ns".into(), d.to_string().into()]);
        }
        a
    }

    /// Inverse of [`to_args`](Self::to_args). `None` unless `args` start
    /// with `inject run-one`.
    pub fn from_args(args: &[OsString]) -> Option<Result<Self, InjectError>> {
        match args {
            [a, b, rest @ ..] if a == "inject" && b == "run-one" => Some(Self::parse_flags(rest)),
            _ => None,
        }
    }

    fn parse_flags(flags: &[OsString]) -> Result<Self, InjectError> {
        let bad = |msg: String| InjectError::Worker(msg);
        let mut req = RunRequest {
            matrix: PathBuf::new(),
            tol_factor: f64::NAN,
            fault: None,
            deadline_ns: None,
            threads: 1,
        };
        let (mut structure, mut bit, mut delay) = (None, None, None);
        let mut it = flags.iter();
        while let Some(flag) = it.next() {
            let flag = flag.to_string_lossy();
            let value = it.next().ok_or_else(|| bad(format!("{flag} needs a value")))?;
            if flag == "--matrix" {
                req.matrix = PathBuf::from(value);
                continue;
            }
            let v = value.to_string_lossy();
            let num = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("{flag}: bad number `{v}`")));
            match flag.as_ref() {
                "--tol" => req.tol_factor = v.parse().map_err(|_| bad(format!("--tol: bad number `{v}`")))?,
                "--threads" => req.threads = num(&v)? as usize,
                "--structure" => structure = Some(v.parse::<StructureId>().map_err(|e| bad(e.to_string()))?),
                "--bit" => bit = Some(num(&v)?),
                "--delay-ns" => delay = Some(num(&v)?),
                "--deadline-ns" => req.deadline_ns = Some(num(&v)?),
                _ => return Err(bad(format!("unknown flag {flag}"))),
            }
        }
        if req.matrix.as_os_str().is_empty() || !(req.tol_factor > 0.0) {
            return Err(bad("--matrix and a positive --tol are required".into()));
        }
        req.fault = match (structure, bit, delay) {
            (Some(s), Some(b), Some(d)) => Some((s, b, d)),
            (None, None, None) => None,
            _ => return Err(bad("--structure, --bit and --delay-ns go together".into())),
        };
        Ok(req)
    }

    /// The worker side: load inputs and execute the run in this process.
    pub fn execute(&self) -> Result<RawRun, InjectError> {
        let a = io::load_matrix(&self.matrix)?;
        let side = (a.n_rows as f64).cbrt().round() as usize;
        let system = PoissonSystem::from_matrix(side, a, self.tol_factor);
        execute_run(
            &system,
            self.fault.map(|(s, bit, d)| (s, bit, Duration::from_nanos(d))),
            self.deadline_ns.map(Duration::from_nanos),
            self.threads,
        )
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// Executable providing `inject run-one`.
    pub worker_exe: PathBuf,
    pub matrix: PathBuf,
    pub tol_factor: f64,
    pub seed: u64,
    /// Concurrent worker processes.
    pub parallel: usize,
    /// Solver threads inside each worker.
    pub threads_per_run: usize,
    /// Fault-free runs whose median ROI time forms the baseline.
    pub baseline_runs: usize,
    /// Campaign log; resumed when it already exists.
    pub log: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn new(worker_exe: PathBuf, matrix: PathBuf, tol_factor: f64, seed: u64) -> Self {
        Self {
            worker_exe,
            matrix,
            tol_factor,
            seed,
            parallel: std::thread::available_parallelism().map_or(1, |n| n.get()),
            threads_per_run: 1,
            baseline_runs: 5,
            log: None,
        }
    }

    fn request(&self, fault: Option<(StructureId, u64, u64)>, deadline: Option<Duration>) -> RunRequest {
        RunRequest {
            matrix: self.matrix.clone(),
            tol_factor: self.tol_factor,
            fault,
            deadline_ns: deadline.map(|d| d.as_nanos() as u64),
            threads: self.threads_per_run,
        }
    }
}

enum Supervised {
    Finished(RawRun),
    Died(String),
    Killed,
}

fn supervise(exe: &Path, req: &RunRequest, kill_after: Duration) -> Result<Supervised, InjectError> {
    let mut child = Command::new(exe)
        .args(req.to_args())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| InjectError::Worker(format!("cannot start {}: {e}", exe.display())))?;
    let drain = |pipe: Option<Box<dyn Read + Send>>| {
        std::thread::spawn(move || {
            let mut s = String::new();
            if let Some(mut p) = pipe {
                let _ = p.read_to_string(&mut s);
            }
            s
        })
    };
    let out = drain(child.stdout.take().map(|p| Box::new(p) as _));
    let err = drain(child.stderr.take().map(|p| Box::new(p) as _));
    let started = Instant::now();
    let status = loop {
        if let Some(st) = child.try_wait()? {
            break Some(st);
        }
        if started.elapsed() > kill_after {
            let _ = child.kill();
            child.wait()?;
            break None;
        }
        std::thread::sleep(Duration::from_millis(1));
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    let Some(status) = status else {
        return Ok(Supervised::Killed);
    };
    let last_err = stderr
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
        .to_string();
    if status.success() {
        let line = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        return serde_json::from_str(line)
            .map(Supervised::Finished)
            .map_err(|e| InjectError::Worker(format!("unreadable worker report `{line}`: {e}")));
    }
    if status.code() == Some(WORKER_SETUP_EXIT) {
        return Err(InjectError::Worker(last_err));
    }
    Ok(Supervised::Died(describe_exit(status, &last_err)))
}

fn describe_exit(status: ExitStatus, last_err: &str) -> String {
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            let name = match sig {
                4 => "SIGILL",
                6 => "SIGABRT",
                7 => "SIGBUS",
                8 => "SIGFPE",
                9 => "SIGKILL",
                11 => "SIGSEGV",
                _ => "signal",
            };
            return format!("{name} ({sig})");
        }
    }
    format!("exit status {}: {last_err}", status.code().unwrap_or(-1))
}

/// Run `runs` fault-free workers and take the median ROI time. Every run
/// must converge, verify and agree on the iteration count.
pub fn measure_baseline(cfg: &CampaignConfig) -> Result<Baseline, InjectError> {
    let mut walls = Vec::new();
    let mut iterations = None;
    for _ in 0..cfg.baseline_runs.max(1) {
        let raw = match supervise(&cfg.worker_exe, &cfg.request(None, None), Duration::from_secs(3600))? {
            Supervised::Finished(raw) => raw,
            Supervised::Died(d) => return Err(InjectError::Baseline(format!("fault-free run died: {d}"))),
            Supervised::Killed => return Err(InjectError::Baseline("fault-free run timed out".into())),
        };
        if raw.status != RunStatus::Completed || !raw.converged || !raw.verified {
            return Err(InjectError::Baseline(format!("fault-free run did not verify: {raw:?}")));
        }
        if *iterations.get_or_insert(raw.iterations) != raw.iterations {
            return Err(InjectError::Baseline("fault-free iteration counts differ".into()));
        }
        walls.push(raw.wall_time);
    }
    walls.sort_by(f64::total_cmp);
    Ok(Baseline {
        iterations: iterations.expect("at least one run"),
        wall_time: walls[walls.len() / 2],
    })
}

/// Execute one plan in a worker. `None` when the flip would have landed
/// after the solve had finished.
pub fn run_plan(
    cfg: &CampaignConfig,
    baseline: &Baseline,
    plan: &InjectionPlan,
) -> Result<Option<Outcome>, InjectError> {
    let req = cfg.request(
        Some((plan.structure, plan.bit_index, plan.inject_time_ns)),
        Some(baseline.hang_deadline()),
    );
    Ok(
        match supervise(&cfg.worker_exe, &req, baseline.hang_deadline() + KILL_GRACE)? {
            Supervised::Finished(raw) if !raw.flipped => None,
            Supervised::Finished(raw) => Some(classify(&raw, baseline)),
            Supervised::Died(detail) => Some(Outcome {
                class: OutcomeClass::Crash,
                iterations: 0,
                wall_time: 0.0,
                detail,
            }),
            Supervised::Killed => Some(Outcome {
                class: OutcomeClass::Hang,
                iterations: 0,
                wall_time: 0.0,
                detail: "killed by supervisor".into(),
            }),
        },
    )
}

/// Bits of `structure` for the matrix in `cfg.matrix`.
pub fn structure_bits(cfg: &CampaignConfig, structure: StructureId) -> Result<u64, InjectError> {
    let a = io::load_matrix(&cfg.matrix)?;
    let map = CgShape {
        n_rows: a.n_rows,
        nnz: a.nnz(),
    }
    .structure_map();
    let bits = map.get(structure).map_or(0, |r| r.len * 8);
    if bits == 0 {
        return Err(InjectError::EmptyStructure(structure));
    }
    Ok(bits)
}

/// `n_runs` single-bit injections into `structure`, `cfg.parallel` at a time.
///
/// Plans depend only on the seed, structure and run index. With a log, runs
/// already recorded are not repeated and the logged baseline is reused.
pub fn run_campaign(
    cfg: &CampaignConfig,
    baseline: &Baseline,
    structure: StructureId,
    n_runs: u64,
) -> Result<CampaignResult, InjectError> {
    if n_runs == 0 {
        return Err(InjectError::NoRuns);
    }
    if baseline.iterations == 0 || !(baseline.wall_time > 0.0) {
        return Err(InjectError::Baseline(
            "baseline has no iterations or zero ROI time".into(),
        ));
    }
    let bits = structure_bits(cfg, structure)?;
    let (mut log, resume) = match &cfg.log {
        Some(path) => {
            let (log, resume) = CampaignLog::open(path, structure, cfg.seed, baseline)?;
            (Some(log), resume)
        }
        None => (None, Default::default()),
    };
    let baseline = resume.baseline.unwrap_or(*baseline);
    let mut tally = Tally::default();
    for (_, o) in resume.done.range(..n_runs) {
        tally.add(o.class);
    }
    let mut discarded = resume.discarded;
    let pending: Vec<u64> = (0..n_runs).filter(|r| !resume.done.contains_key(r)).collect();

    let next = AtomicUsize::new(0);
    let workers = cfg.parallel.max(1).min(pending.len());
    let (tx, rx) = mpsc::channel::<Result<(InjectionPlan, Option<Outcome>), InjectError>>();
    std::thread::scope(|s| -> Result<(), InjectError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending, attempts) = (&next, &pending, &resume.attempts);
            s.spawn(move || loop {
                let Some(&run) = pending.get(next.fetch_add(1, Ordering::Relaxed)) else {
                    return;
                };
                let mut attempt = attempts.get(&run).copied().unwrap_or(0);
                loop {
                    if attempt >= MAX_ATTEMPTS {
                        let _ = tx.send(Err(InjectError::TooManyRedraws { run, attempts: attempt }));
                        return;
                    }
                    let plan = InjectionPlan::draw(structure, bits, baseline.roi_ns(), cfg.seed, run, attempt);
                    let res = run_plan(cfg, &baseline, &plan);
                    let stop = !matches!(res, Ok(None));
                    if tx.send(res.map(|o| (plan, o))).is_err() || stop {
                        break;
                    }
                    attempt += 1;
                }
            });
        }
        drop(tx);
        let mut first_error = None;
        for msg in rx {
            match msg {
                Ok((plan, outcome)) => {
                    if let Some(log) = &mut log {
                        log.record(&plan, outcome.as_ref())?;
                    }
                    match outcome {
                        Some(o) => tally.add(o.class),
                        None => discarded += 1,
                    }
                }
                Err(e) => {
                    // stop handing out runs; finished ones stay logged
                    next.store(usize::MAX / 2, Ordering::Relaxed);
                    first_error.get_or_insert(e);
                }
            }
        }
        first_error.map_or(Ok(()), Err)
    })?;
    Ok(CampaignResult::from_tally(structure, tally, discarded, baseline))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_arguments() {
        let req = RunRequest {
            matrix: "m.csr".into(),
            tol_factor: 1e-8,
            fault: Some((StructureId::DPrime, 17, 900)),
            deadline_ns: Some(5000),
            threads: 1,
        };
        let args: Vec<String> = req.to_args().into_iter().map(|a| a.into_string().unwrap()).collect();
        assert_eq!(
            args.join(" "),
            "inject run-one --matrix m.csr --tol 1e-8 --threads 1 --structure d' --bit 17 --delay-ns 900 --deadline-ns 5000"
        );
        assert_eq!(RunRequest::from_args(&req.to_args()).unwrap().unwrap(), req);
        let plain = RunRequest {
            fault: None,
            deadline_ns: None,
            ..req
        };
        assert_eq!(RunRequest::from_args(&plain.to_args()).unwrap().unwrap(), plain);
    }

    #[test]
    fn malformed_worker_arguments() {
        let args = |s: &str| s.split(' ').map(OsString::from).collect::<Vec<_>>();
        assert!(RunRequest::from_args(&args("trace info x")).is_none());
        for bad in [
            "inject run-one --tol 1e-8",
            "inject run-one --matrix m --tol 1e-8 --bit 3",
            "inject run-one --matrix m --tol 1e-8 --bogus 1",
            "inject run-one --matrix m --tol",
        ] {
            assert!(
                matches!(RunRequest::from_args(&args(bad)), Some(Err(InjectError::Worker(_)))),
                "{bad}"
            );
        }
    }

    #[test]
    fn matrix_is_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = prepare_matrix(3, dir.path()).unwrap();
        let stamp = std::fs::metadata(&p).unwrap().modified().unwrap();
        assert_eq!(prepare_matrix(3, dir.path()).unwrap(), p);
        assert_eq!(std::fs::metadata(&p).unwrap().modified().unwrap(), stamp);
        assert_eq!(io::load_matrix(&p).unwrap().n_rows, 27);
    }

    #[test]
    fn worker_executes_request_in_process() {
        let dir = tempfile::tempdir().unwrap();
        let req = RunRequest {
            matrix: prepare_matrix(4, dir.path()).unwrap(),
            tol_factor: 1e-8,
            fault: None,
            deadline_ns: None,
            threads: 1,
        };
        let raw = req.execute().unwrap();
        assert!(raw.verified && raw.status == RunStatus::Completed);
    }

    #[test]
    fn zero_runs_and_missing_baseline_refused() {
        let cfg = CampaignConfig::new("none".into(), "none".into(), 1e-8, 1);
        let base = Baseline {
            iterations: 3,
            wall_time: 0.1,
        };
        assert!(matches!(
            run_campaign(&cfg, &base, StructureId::G, 0),
            Err(InjectError::NoRuns)
        ));
        let zero = Baseline {
            iterations: 0,
            wall_time: 0.0,
        };
        assert!(matches!(
            run_campaign(&cfg, &zero, StructureId::G, 5),
            Err(InjectError::Baseline(_))
        ));
    }
}
