use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::InjectError;
use crate::cg::{residual_norm_sq, AccessObserver, CgError, PoissonSystem, SolveOptions, DEFAULT_T_MAX};
use crate::layout::{FlatMemory, Region, StructureId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Breakdown,
    DeadlineExceeded,
    Panicked(String),
}

/// What a run observed, before classification against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRun {
    pub status: RunStatus,
    pub iterations: usize,
    pub converged: bool,
    /// Residual checked against the pristine A and b.
    pub verified: bool,
    /// NaN or infinite residuals travel as JSON null.
    #[serde(deserialize_with = "nullable_f64")]
    pub residual_norm_sq: f64,
    pub wall_time: f64,
    /// The injector flipped its bit while the solve was still running.
    pub flipped: bool,
}

fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Waiting,
    Running(Instant),
    Flipped,
    Finished,
}

/// Solve `system` natively, optionally with an injector thread that flips
/// `bit` of `target` once `delay` has elapsed since ROI start.
///
/// The flip only happens while the solve is running: if the solve finishes
/// first, `flipped` is false. `deadline` bounds the ROI wall time.
pub fn execute_run(
    system: &PoissonSystem,
    target: Option<(StructureId, u64, Duration)>,
    deadline: Option<Duration>,
    threads: usize,
) -> Result<RawRun, InjectError> {
    let problem = system.problem()?;
    if let Some((id, bit, _)) = target {
        if bit >= problem.region(id).len * 8 {
            return Err(InjectError::EmptyStructure(id));
        }
    }
    let state = (Mutex::new(Phase::Waiting), Condvar::new());
    let mut opts = SolveOptions::new(system.tol, DEFAULT_T_MAX);
    opts.threads = threads.max(1);

    let (result, started, flipped) = std::thread::scope(|s| {
        if let Some((id, bit, delay)) = target {
            let region = *problem.region(id);
            let memory = problem.memory();
            let state = &state;
            s.spawn(move || inject_when_due(state, memory, &region, bit, delay));
        }
        let (m, cv) = &state;
        let started = Instant::now();
        *m.lock().expect("injector state") = Phase::Running(started);
        opts.deadline = deadline.map(|d| started + d);
        cv.notify_all();

        let result = catch_unwind(AssertUnwindSafe(|| problem.solve_native(&opts)));

        let mut phase = m.lock().expect("injector state");
        if matches!(*phase, Phase::Running(_)) {
            *phase = Phase::Finished;
        }
        let flipped = *phase == Phase::Flipped;
        drop(phase);
        cv.notify_all();
        (result, started, flipped)
    });
    let elapsed = started.elapsed().as_secs_f64();

    let x = problem.solution();
    let residual = residual_norm_sq(&system.a, &system.b, &x);
    let mut raw = RawRun {
        status: RunStatus::Completed,
        iterations: 0,
        converged: false,
        verified: false,
        residual_norm_sq: residual,
        wall_time: elapsed,
        flipped,
    };
    match result {
        Ok(Ok(rec)) => {
            raw.iterations = rec.iterations;
            raw.converged = rec.converged;
            raw.verified = residual < system.tol;
            raw.wall_time = rec.roi_wall_time;
        }
        Ok(Err(CgError::Breakdown { iteration })) => {
            raw.status = RunStatus::Breakdown;
            raw.iterations = iteration;
        }
        Ok(Err(CgError::DeadlineExceeded { iterations })) => {
            raw.status = RunStatus::DeadlineExceeded;
            raw.iterations = iterations;
        }
        Ok(Err(e)) => return Err(e.into()),
        Err(payload) => raw.status = RunStatus::Panicked(panic_message(payload)),
    }
    Ok(raw)
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn inject_when_due((m, cv): &(Mutex<Phase>, Condvar), memory: &FlatMemory, region: &Region, bit: u64, delay: Duration) {
    let mut phase = cv
        .wait_while(m.lock().expect("injector state"), |p| *p == Phase::Waiting)
        .expect("injector state");
    loop {
        let Phase::Running(started) = *phase else { return };
        let now = Instant::now();
        let due = started + delay;
        if now >= due {
            memory.flip_bit(region, bit);
            *phase = Phase::Flipped;
            return;
        }
        phase = cv.wait_timeout(phase, due - now).expect("injector state").0;
    }
}

/// Memory images of the target structure around a flip performed while the
/// solver is stopped at a known access.
#[derive(Debug, Clone, PartialEq)]
pub struct PausedFlip {
    pub access_index: u64,
    pub before: Vec<u64>,
    pub after: Vec<u64>,
}

impl PausedFlip {
    pub fn differing_bits(&self) -> u32 {
        self.before
            .iter()
            .zip(&self.after)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

struct Pauser<'a> {
    count: u64,
    at: u64,
    memory: &'a FlatMemory,
    region: Region,
    bit: u64,
    flip: Option<PausedFlip>,
}

impl Pauser<'_> {
    #[inline]
    fn tick(&mut self) {
        self.count += 1;
        if self.count == self.at {
            let before = self.memory.snapshot(&self.region);
            self.memory.flip_bit(&self.region, self.bit);
            let after = self.memory.snapshot(&self.region);
            self.flip = Some(PausedFlip {
                access_index: self.at,
                before,
                after,
            });
        }
    }
}

impl AccessObserver for Pauser<'_> {
    fn load(&mut self, _addr: u64) {
        self.tick();
    }

    fn store(&mut self, _addr: u64) {
        self.tick();
    }
}

/// Run the solve single-threaded, stop it at access number `at_access`
/// (1-based), flip `bit` of `target` and capture the structure before and
/// after. Returns `None` for the flip if the solve made fewer accesses.
/// A corrupted solve that panics still yields the captured flip.
pub fn paused_flip(
    system: &PoissonSystem,
    target: StructureId,
    bit: u64,
    at_access: u64,
) -> Result<(Option<PausedFlip>, RunStatus), InjectError> {
    let problem = system.problem()?;
    let region = *problem.region(target);
    if bit >= region.len * 8 {
        return Err(InjectError::EmptyStructure(target));
    }
    let mut pauser = Pauser {
        count: 0,
        at: at_access,
        memory: problem.memory(),
        region,
        bit,
        flip: None,
    };
    let opts = SolveOptions::new(system.tol, DEFAULT_T_MAX);
    let status = match catch_unwind(AssertUnwindSafe(|| problem.solve(&opts, &mut pauser))) {
        Ok(Ok(_)) => RunStatus::Completed,
        Ok(Err(CgError::Breakdown { .. })) => RunStatus::Breakdown,
        Ok(Err(CgError::DeadlineExceeded { .. })) => RunStatus::DeadlineExceeded,
        Ok(Err(e)) => return Err(e.into()),
        Err(payload) => RunStatus::Panicked(panic_message(payload)),
    };
    Ok((pauser.flip, status))
}
