//! Append-only campaign log, one CSV row per attempt.
//!
//! ```text
//! # memvuln campaign log v1
//! # structure=g seed=42 baseline_iterations=31 baseline_wall_time=0.1342
//! run,attempt,bit,inject_time_ns,class,iterations,wall_time,detail
//! ```
//!
//! Rows whose class is `discarded` record plans that fired after the solve
//! had finished; the run was redrawn with the next attempt.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Baseline, InjectError, InjectionPlan, Outcome, OutcomeClass};
use crate::layout::StructureId;

pub const LOG_SCHEMA_VERSION: u32 = 1;
const DISCARDED: &str = "discarded";
const COLUMNS: &str = "run,attempt,bit,inject_time_ns,class,iterations,wall_time,detail";

/// State recovered from an existing log.
#[derive(Debug, Default)]
pub(crate) struct Resume {
    pub baseline: Option<Baseline>,
    pub done: BTreeMap<u64, Outcome>,
    /// Attempts already consumed per run.
    pub attempts: BTreeMap<u64, u32>,
    pub discarded: u64,
}

pub(crate) struct CampaignLog {
    path: PathBuf,
    file: File,
}

impl CampaignLog {
    /// Open `path` for appending, reading back any earlier progress. A log
    /// written for another structure or seed is refused.
    pub fn open(
        path: &Path,
        structure: StructureId,
        seed: u64,
        baseline: &Baseline,
    ) -> Result<(Self, Resume), InjectError> {
        let err = |reason: String| InjectError::Log {
            path: path.display().to_string(),
            reason,
        };
        let mut resume = Resume::default();
        let existed = path.exists() && std::fs::metadata(path)?.len() > 0;
        if existed {
            resume = read(path, structure, seed).map_err(err)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if existed && !std::fs::read(path)?.ends_with(b"\n") {
            writeln!(file)?;
        }
        if !existed {
            writeln!(file, "# memvuln campaign log v{LOG_SCHEMA_VERSION}")?;
            writeln!(
                file,
                "# structure={structure} seed={seed} baseline_iterations={} baseline_wall_time={}",
                baseline.iterations, baseline.wall_time
            )?;
            writeln!(file, "{COLUMNS}")?;
            file.flush()?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            resume,
        ))
    }

    pub fn record(&mut self, plan: &InjectionPlan, outcome: Option<&Outcome>) -> Result<(), InjectError> {
        let (class, iterations, wall, detail) = match outcome {
            Some(o) => (o.class.name(), o.iterations, o.wall_time, o.detail.as_str()),
            None => (DISCARDED, 0, 0.0, ""),
        };
        let detail: String = detail
            .chars()
            .map(|c| if c == ',' || c.is_control() { ';' } else { c })
            .take(160)
            .collect();
        writeln!(
            self.file,
            "{},{},{},{},{class},{iterations},{wall:.6},{detail}",
            plan.run, plan.attempt, plan.bit_index, plan.inject_time_ns
        )
        .and_then(|_| self.file.flush())
        .map_err(|e| InjectError::Log {
            path: self.path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

fn read(path: &Path, structure: StructureId, seed: u64) -> Result<Resume, String> {
    let mut resume = Resume::default();
    let reader = BufReader::new(File::open(path).map_err(|e| e.to_string())?);
    let mut saw_meta = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let at = |m: &str| format!("line {}: {m}", i + 1);
        if let Some(meta) = line.strip_prefix("# ") {
            if meta.starts_with("memvuln campaign log") {
                if meta != format!("memvuln campaign log v{LOG_SCHEMA_VERSION}") {
                    return Err(at("unsupported log version"));
                }
                continue;
            }
            let kv: BTreeMap<&str, &str> = meta.split_whitespace().filter_map(|t| t.split_once('=')).collect();
            let field = |k: &str| kv.get(k).copied().ok_or_else(|| at(&format!("missing {k}")));
            if field("structure")? != structure.name() {
                return Err(at(&format!("log belongs to structure {}", field("structure")?)));
            }
            if field("seed")?.parse::<u64>().map_err(|_| at("bad seed"))? != seed {
                return Err(at("log was written with another seed"));
            }
            resume.baseline = Some(Baseline {
                iterations: field("baseline_iterations")?.parse().map_err(|_| at("bad baseline"))?,
                wall_time: field("baseline_wall_time")?.parse().map_err(|_| at("bad baseline"))?,
            });
            saw_meta = true;
            continue;
        }
        if line.is_empty() || line == COLUMNS {
            continue;
        }
        let f: Vec<&str> = line.splitn(8, ',').collect();
        if f.len() < 7 {
            // a torn final row from an interrupted campaign is redone
            continue;
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| at("bad number"));
        let run = num(f[0])?;
        let attempt = num(f[1])? as u32;
        let seen = resume.attempts.entry(run).or_insert(0);
        *seen = (*seen).max(attempt + 1);
        if f[4] == DISCARDED {
            resume.discarded += 1;
            continue;
        }
        let class: OutcomeClass = f[4].parse().map_err(|e: String| at(&e))?;
        resume.done.insert(
            run,
            Outcome {
                class,
                iterations: num(f[5])? as usize,
                wall_time: f[6].parse().map_err(|_| at("bad wall time"))?,
                detail: f.get(7).unwrap_or(&"").to_string(),
            },
        );
    }
    if !saw_meta {
        return Err("missing campaign header".into());
    }
    Ok(resume)
}
