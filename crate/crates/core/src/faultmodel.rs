//! Exponential transient-fault model linking vulnerability to the
//! probability that a fault is consumed.
//!
//! Faults arrive at rate λ per cycle. A fault striking a location during a
//! period that ends in an unsafe access (one that reads the location) is
//! consumed. For a set U of unsafe accesses with preceding periods p_u,
//! P(F) = Σ_U (1 − e^{−λ p_u}) ≈ λ Σ_U p_u = λ T V.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats::{wilson_ci, Interval};

/// λT below this is the rare-fault regime where the linear form is accurate.
pub const RARE_REGIME_THRESHOLD: f64 = 0.01;

const MC_CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FaultModelError {
    #[error("fault rate must be finite and non-negative, got {0}")]
    Lambda(f64),
    #[error("ROI duration must be positive")]
    ZeroDuration,
    #[error("access times must be strictly increasing ({prev} then {next})")]
    NotIncreasing { prev: u64, next: u64 },
    #[error("access at {time} lies beyond ROI end {roi}")]
    BeyondRoi { time: u64, roi: u64 },
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("timeline line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultModelParams {
    /// Fault arrivals per cycle.
    pub lambda: f64,
    /// ROI duration in cycles.
    pub roi_cycles: u64,
}

impl FaultModelParams {
    pub fn new(lambda: f64, roi_cycles: u64) -> Result<Self, FaultModelError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(FaultModelError::Lambda(lambda));
        }
        if roi_cycles == 0 {
            return Err(FaultModelError::ZeroDuration);
        }
        Ok(Self { lambda, roi_cycles })
    }

    /// λT.
    pub fn expected_faults(&self) -> f64 {
        self.lambda * self.roi_cycles as f64
    }

    pub fn rare_regime(&self) -> bool {
        self.expected_faults() < RARE_REGIME_THRESHOLD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessTag {
    /// The location is overwritten: earlier faults are harmless.
    Safe,
    /// The location is read: earlier faults are consumed.
    Unsafe,
}

/// Accesses to one location over an ROI starting at cycle 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessTimeline {
    roi_cycles: u64,
    accesses: Vec<(u64, AccessTag)>,
}

impl AccessTimeline {
    pub fn new(roi_cycles: u64, accesses: Vec<(u64, AccessTag)>) -> Result<Self, FaultModelError> {
        if roi_cycles == 0 {
            return Err(FaultModelError::ZeroDuration);
        }
        for w in accesses.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(FaultModelError::NotIncreasing {
                    prev: w[0].0,
                    next: w[1].0,
                });
            }
        }
        if let Some(&(time, _)) = accesses.last() {
            if time > roi_cycles {
                return Err(FaultModelError::BeyondRoi { time, roi: roi_cycles });
            }
        }
        Ok(Self { roi_cycles, accesses })
    }

    pub fn roi_cycles(&self) -> u64 {
        self.roi_cycles
    }

    pub fn accesses(&self) -> &[(u64, AccessTag)] {
        &self.accesses
    }

    /// (p_a, tag) for every access; the first period starts at ROI start.
    pub fn periods(&self) -> impl Iterator<Item = (u64, AccessTag)> + '_ {
        let mut prev = 0;
        self.accesses.iter().map(move |&(t, tag)| {
            let p = t - prev;
            prev = t;
            (p, tag)
        })
    }

    /// Periods ending in unsafe accesses.
    pub fn unsafe_periods(&self) -> impl Iterator<Item = u64> + '_ {
        self.periods()
            .filter(|(_, tag)| *tag == AccessTag::Unsafe)
            .map(|(p, _)| p)
    }

    pub fn vulnerable_time(&self) -> u64 {
        self.unsafe_periods().sum()
    }

    /// Vulnerable fraction of the ROI.
    pub fn vulnerability(&self) -> f64 {
        self.vulnerable_time() as f64 / self.roi_cycles as f64
    }

    /// Parse the text form: a `T <cycles>` line, then one `<time> safe|unsafe`
    /// line per access. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, FaultModelError> {
        let mut roi = None;
        let mut accesses = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| FaultModelError::Parse {
                line: i + 1,
                reason: reason.into(),
            };
            let mut it = line.split_whitespace();
            let (a, b) = (
                it.next().unwrap_or(""),
                it.next().ok_or_else(|| err("expected two fields"))?,
            );
            if it.next().is_some() {
                return Err(err("expected two fields"));
            }
            if a.eq_ignore_ascii_case("t") {
                roi = Some(b.parse::<u64>().map_err(|_| err("bad ROI length"))?);
                continue;
            }
            let t = a.parse::<u64>().map_err(|_| err("bad access time"))?;
            accesses.push((
                t,
                b.parse::<AccessTag>().map_err(|_| err("tag must be safe or unsafe"))?,
            ));
        }
        let roi = roi.ok_or(FaultModelError::Parse {
            line: 0,
            reason: "missing `T <cycles>` line".into(),
        })?;
        Self::new(roi, accesses)
    }
}

impl FromStr for AccessTag {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "safe" | "s" => Ok(AccessTag::Safe),
            "unsafe" | "u" => Ok(AccessTag::Unsafe),
            _ => Err(()),
        }
    }
}

/// Σ_U (1 − e^{−λ p_u}), not clamped.
pub fn p_consume_exact(tl: &AccessTimeline, params: &FaultModelParams) -> f64 {
    tl.unsafe_periods().map(|p| -(-params.lambda * p as f64).exp_m1()).sum()
}

/// 1 − Π_U e^{−λ p_u}: probability that at least one fault is consumed.
pub fn p_consume_product(tl: &AccessTimeline, params: &FaultModelParams) -> f64 {
    -(-params.lambda * tl.vulnerable_time() as f64).exp_m1()
}

/// λ Σ_U p_u.
pub fn p_consume_linear(tl: &AccessTimeline, params: &FaultModelParams) -> f64 {
    params.lambda * tl.vulnerable_time() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub trials: u64,
    pub consumed: u64,
    pub estimate: f64,
    /// 99% Wilson interval.
    pub ci: Interval,
}

/// Sample Poisson fault arrivals over [0, T] and count trials where some
/// fault lands in a period ending in an unsafe access.
///
/// Trials are split into fixed chunks with one generator stream each, so the
/// result depends only on `seed`, not on the thread count.
pub fn monte_carlo_consume(
    tl: &AccessTimeline,
    params: &FaultModelParams,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate, FaultModelError> {
    if trials == 0 {
        return Err(FaultModelError::NoTrials);
    }
    // vulnerable windows (start, end], sorted
    let mut windows = Vec::new();
    let mut prev = 0u64;
    for &(t, tag) in tl.accesses() {
        if tag == AccessTag::Unsafe && t > prev {
            windows.push((prev as f64, t as f64));
        }
        prev = t;
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()) as u64;
    let workers = threads.min(chunks).max(1);
    let run_chunk = |c: u64| -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c);
        let n = MC_CHUNK.min(trials - c * MC_CHUNK);
        (0..n).filter(|_| trial(&mut rng, params, &windows)).count() as u64
    };
    let consumed: u64 = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run_chunk = &run_chunk;
                s.spawn(move || (w..chunks).step_by(workers as usize).map(run_chunk).sum::<u64>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).sum()
    });
    Ok(MonteCarloEstimate {
        trials,
        consumed,
        estimate: consumed as f64 / trials as f64,
        ci: wilson_ci(consumed, trials, 0.99),
    })
}

fn trial(rng: &mut ChaCha8Rng, params: &FaultModelParams, windows: &[(f64, f64)]) -> bool {
    if params.lambda == 0.0 || windows.is_empty() {
        return false;
    }
    let end = params.roi_cycles as f64;
    let mut t = 0.0;
    let mut w = 0;
    loop {
        let u: f64 = rng.gen();
        t += -(-u).ln_1p() / params.lambda;
        if t > end {
            return false;
        }
        while w < windows.len() && windows[w].1 < t {
            w += 1;
        }
        match windows.get(w) {
            None => return false,
            Some(&(lo, _)) if t > lo => return true,
            Some(_) => {}
        }
    }
}
