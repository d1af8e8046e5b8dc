//! Fault-injection campaigns on live CG solves.
//!
//! Each run flips one bit of one structure at a random time during the solve,
//! using an injector thread that shares the solver's memory image. Runs
//! execute in child processes so that crashes cannot take the campaign
//! driver down; the driver classifies each run and aggregates tallies.

mod campaign;
mod execute;
mod log;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use campaign::{
    measure_baseline, prepare_matrix, run_campaign, run_plan, scratch_dir, serve_worker, structure_bits,
    CampaignConfig, RunRequest, SCRATCH_ENV, WORKER_SETUP_EXIT,
};
pub use execute::{execute_run, paused_flip, PausedFlip, RawRun, RunStatus};
pub use log::LOG_SCHEMA_VERSION;

use crate::cg::CgError;
use crate::layout::StructureId;
use crate::stats::{wilson_ci, Interval};

/// Runs that outlast this multiple of the fault-free ROI time are hangs.
pub const HANG_FACTOR: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum InjectError {
    #[error("campaign needs at least one run")]
    NoRuns,
    #[error("fault-free baseline not established: {0}")]
    Baseline(String),
    #[error("structure {0} has no injectable bits")]
    EmptyStructure(StructureId),
    #[error("run {run}: gave up after {attempts} attempts that all fired after the solve ended")]
    TooManyRedraws { run: u64, attempts: u32 },
    #[error("worker process: {0}")]
    Worker(String),
    #[error("campaign log {path}: {reason}")]
    Log { path: String, reason: String },
    #[error(transparent)]
    Solve(#[from] CgError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where and when one fault strikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub structure: StructureId,
    /// Bit offset within the structure's data.
    pub bit_index: u64,
    /// Delay after ROI start, in nanoseconds; inside (0, ROI duration).
    pub inject_time_ns: u64,
    pub seed: u64,
    pub run: u64,
    /// Redraw count for this run (0 for the first plan).
    pub attempt: u32,
}

impl InjectionPlan {
    /// Plan `attempt` of run `run`. Every (structure, run) pair owns one
    /// generator stream, so plans do not depend on execution order.
    pub fn draw(structure: StructureId, structure_bits: u64, roi_ns: u64, seed: u64, run: u64, attempt: u32) -> Self {
        assert!(structure_bits > 0 && roi_ns >= 2, "non-empty structure and ROI");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((u64::from(structure.ordinal()) << 48) | run);
        let mut next = || (rng.gen_range(0..structure_bits), rng.gen_range(1..roi_ns));
        let mut pick = next();
        for _ in 0..attempt {
            pick = next();
        }
        Self {
            structure,
            bit_index: pick.0,
            inject_time_ns: pick.1,
            seed,
            run,
            attempt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeClass {
    /// Indistinguishable from a fault-free run.
    Ace,
    Crash,
    WrongResult,
    /// Correct result after more iterations than the baseline.
    ExtraWork,
    Hang,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 5] = [
        OutcomeClass::Ace,
        OutcomeClass::Crash,
        OutcomeClass::WrongResult,
        OutcomeClass::ExtraWork,
        OutcomeClass::Hang,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeClass::Ace => "ace",
            OutcomeClass::Crash => "crash",
            OutcomeClass::WrongResult => "wrong-result",
            OutcomeClass::ExtraWork => "extra-work",
            OutcomeClass::Hang => "hang",
        }
    }

    pub fn is_unace(self) -> bool {
        self != OutcomeClass::Ace
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutcomeClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown outcome class `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub class: OutcomeClass,
    pub iterations: usize,
    /// Seconds of ROI wall time (0 when the process died).
    pub wall_time: f64,
    pub detail: String,
}

/// Fault-free reference measured on the same machine and configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub iterations: usize,
    /// Median ROI wall time, seconds.
    pub wall_time: f64,
}

impl Baseline {
    pub fn roi_ns(&self) -> u64 {
        ((self.wall_time * 1e9) as u64).max(2)
    }

    /// Wall-time budget after which a run is a hang.
    pub fn hang_deadline(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.wall_time * HANG_FACTOR)
    }
}

/// Total classification of a finished child run.
pub fn classify(raw: &RawRun, baseline: &Baseline) -> Outcome {
    let (class, detail) = match &raw.status {
        RunStatus::Panicked(msg) => (OutcomeClass::Crash, format!("panic: {msg}")),
        RunStatus::Breakdown => (OutcomeClass::WrongResult, "breakdown".to_string()),
        RunStatus::DeadlineExceeded => (OutcomeClass::Hang, "exceeded 10x baseline".to_string()),
        RunStatus::Completed if !raw.verified => (
            OutcomeClass::WrongResult,
            format!("residual {:e}", raw.residual_norm_sq),
        ),
        RunStatus::Completed if raw.iterations > baseline.iterations => {
            (OutcomeClass::ExtraWork, format!("{} iterations", raw.iterations))
        }
        RunStatus::Completed => (OutcomeClass::Ace, String::new()),
    };
    Outcome {
        class,
        iterations: raw.iterations,
        wall_time: raw.wall_time,
        detail,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub ace: u64,
    pub crash: u64,
    pub wrong_result: u64,
    pub extra_work: u64,
    pub hang: u64,
}

impl Tally {
    pub fn add(&mut self, c: OutcomeClass) {
        *self.get_mut(c) += 1;
    }

    pub fn get(&self, c: OutcomeClass) -> u64 {
        match c {
            OutcomeClass::Ace => self.ace,
            OutcomeClass::Crash => self.crash,
            OutcomeClass::WrongResult => self.wrong_result,
            OutcomeClass::ExtraWork => self.extra_work,
            OutcomeClass::Hang => self.hang,
        }
    }

    fn get_mut(&mut self, c: OutcomeClass) -> &mut u64 {
        match c {
            OutcomeClass::Ace => &mut self.ace,
            OutcomeClass::Crash => &mut self.crash,
            OutcomeClass::WrongResult => &mut self.wrong_result,
            OutcomeClass::ExtraWork => &mut self.extra_work,
            OutcomeClass::Hang => &mut self.hang,
        }
    }

    pub fn total(&self) -> u64 {
        OutcomeClass::ALL.iter().map(|&c| self.get(c)).sum()
    }

    pub fn unace(&self) -> u64 {
        self.total() - self.ace
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub structure: StructureId,
    pub n_runs: u64,
    pub tally: Tally,
    /// Plans redrawn because the flip would have landed after the solve.
    pub discarded: u64,
    pub p_unace: f64,
    pub ci99: Interval,
    pub baseline: Baseline,
}

impl CampaignResult {
    pub fn from_tally(structure: StructureId, tally: Tally, discarded: u64, baseline: Baseline) -> Self {
        let n = tally.total();
        Self {
            structure,
            n_runs: n,
            tally,
            discarded,
            p_unace: if n == 0 { 0.0 } else { tally.unace() as f64 / n as f64 },
            ci99: wilson_ci(tally.unace(), n, 0.99),
            baseline,
        }
    }
}
