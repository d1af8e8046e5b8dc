//! End-to-end validation: simulate the traced solve, compute the metrics,
//! run one injection campaign per structure and compare the two.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cachesim::{CacheConfig, SimStats, Simulator};
use crate::cg::{PoissonSystem, SolveOptions, SolveRecord, DEFAULT_T_MAX};
use crate::inject::{self, Baseline, CampaignConfig, CampaignResult, Tally};
use crate::layout::StructureId;
use crate::stats::{pearson, spearman, Interval};
use crate::trace::record_solve;
use crate::vulnmetrics::{aggregate, Accumulator, StructureLedgers, StructureReport};

pub const VALIDATION_SCHEMA_VERSION: u32 = 1;

/// gnuplot script for the data file written by [`write_plot_data`].
pub const GNUPLOT_SCRIPT: &str = include_str!("../scripts/validation.gp");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Matrix,
    Trace,
    Simulate,
    Metrics,
    Baseline,
    Campaign(StructureId),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Matrix => f.write_str("matrix"),
            Stage::Trace => f.write_str("trace"),
            Stage::Simulate => f.write_str("simulate"),
            Stage::Metrics => f.write_str("metrics"),
            Stage::Baseline => f.write_str("baseline"),
            Stage::Campaign(s) => write!(f, "campaign {s}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

fn at<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: Box::new(e),
    }
}

/// Settings for the simulation half of the pipeline.
#[derive(Debug, Clone)]
pub struct MetricsSetup {
    pub side: usize,
    pub tol_factor: f64,
    /// `None` scales the reference hierarchy to the grid side.
    pub cache: Option<CacheConfig>,
    pub word_bytes: u64,
    pub fit_per_cycle: f64,
}

impl MetricsSetup {
    pub fn new(side: usize, tol_factor: f64) -> Self {
        Self {
            side,
            tol_factor,
            cache: None,
            word_bytes: 8,
            fit_per_cycle: crate::vulnmetrics::DEFAULT_FIT_PER_CYCLE,
        }
    }
}

/// Output of the trace, simulate and metrics stages.
#[derive(Debug, Clone)]
pub struct MetricsStage {
    pub solve: SolveRecord,
    pub roi_cycles: u64,
    pub cache: CacheConfig,
    pub sim_stats: SimStats,
    pub ledgers: Vec<StructureLedgers>,
    /// Tracked structures, in layout order.
    pub reports: Vec<StructureReport>,
}

/// Trace the solve, stream it through the cache hierarchy and fold the
/// memory requests into per-word ledgers, without materializing the trace.
pub fn metrics_stage(setup: &MetricsSetup) -> Result<MetricsStage, PipelineError> {
    let system = PoissonSystem::generate(setup.side, setup.tol_factor).map_err(at(Stage::Matrix))?;
    let cache = match &setup.cache {
        Some(c) => c.clone(),
        None => CacheConfig::for_grid_side(setup.side).map_err(at(Stage::Simulate))?,
    };
    let problem = system.problem().map_err(at(Stage::Trace))?;
    let acc = Accumulator::new(problem.structure_map(), setup.word_bytes).map_err(at(Stage::Metrics))?;
    let sim = Simulator::new(&cache, acc).map_err(at(Stage::Simulate))?;
    let opts = SolveOptions::new(system.tol, DEFAULT_T_MAX);
    let (solve, _roi, sim) = record_solve(&problem, &opts, sim).map_err(at(Stage::Trace))?;
    let solve = solve.with_verification(system.verify(&problem.solution()));
    let out = sim.finish().map_err(at(Stage::Simulate))?;
    let ledgers: Vec<StructureLedgers> = out
        .sink
        .finish(out.total_cycles)
        .map_err(at(Stage::Metrics))?
        .into_iter()
        .filter(|l| StructureId::TRACKED.contains(&l.id))
        .collect();
    let reports = aggregate(&ledgers, setup.fit_per_cycle).map_err(at(Stage::Metrics))?;
    Ok(MetricsStage {
        solve,
        roi_cycles: out.total_cycles,
        cache,
        sim_stats: out.stats,
        ledgers,
        reports,
    })
}

/// Settings for the injection half of the pipeline.
#[derive(Debug, Clone)]
pub struct CampaignSetup {
    pub worker_exe: PathBuf,
    pub runs_per_structure: u64,
    pub seed: u64,
    pub parallel: usize,
    pub baseline_runs: usize,
    /// Directory for the matrix file and the per-structure campaign logs.
    pub scratch: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub structure: StructureId,
    pub p_unace: Option<f64>,
    pub ci99: Option<Interval>,
    pub tally: Option<Tally>,
    pub mvf: f64,
    pub fea: f64,
    pub safe_ratio: f64,
    pub dvf: f64,
    pub dvf_relative: f64,
    pub ld_st_normalized: f64,
}

impl ValidationRow {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Mvf => self.mvf,
            Metric::Fea => self.fea,
            Metric::SafeRatio => self.safe_ratio,
            Metric::Dvf => self.dvf,
            Metric::LdStNormalized => self.ld_st_normalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mvf,
    Fea,
    SafeRatio,
    Dvf,
    LdStNormalized,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Mvf,
        Metric::Fea,
        Metric::SafeRatio,
        Metric::Dvf,
        Metric::LdStNormalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mvf => "mvf",
            Metric::Fea => "fea",
            Metric::SafeRatio => "safe_ratio",
            Metric::Dvf => "dvf",
            Metric::LdStNormalized => "ld_st_normalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub metric: Metric,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
}

/// A metric that claims less vulnerability than injection demonstrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub structure: StructureId,
    pub metric: Metric,
    pub value: f64,
    pub ci_lo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub side: usize,
    pub tol_factor: f64,
    pub runs_per_structure: u64,
    pub seed: u64,
    pub iterations: usize,
    pub roi_cycles: u64,
    pub baseline: Option<Baseline>,
    /// Increasing p_unace when campaigns ran, layout order otherwise.
    pub rows: Vec<ValidationRow>,
    pub correlations: Vec<Correlation>,
    pub violations: Vec<BoundViolation>,
}

impl ValidationReport {
    /// Join metrics with campaign results (if any).
    pub fn build(
        metrics: &MetricsStage,
        campaigns: &[CampaignResult],
        side: usize,
        tol_factor: f64,
        seed: u64,
    ) -> Self {
        let mut rows: Vec<ValidationRow> = metrics
            .reports
            .iter()
            .map(|r| {
                let c = campaigns.iter().find(|c| c.structure == r.structure);
                ValidationRow {
                    structure: r.structure,
                    p_unace: c.map(|c| c.p_unace),
                    ci99: c.map(|c| c.ci99),
                    tally: c.map(|c| c.tally),
                    mvf: r.mvf,
                    fea: r.fea,
                    safe_ratio: r.safe_ratio,
                    dvf: r.dvf,
                    dvf_relative: r.dvf_relative,
                    ld_st_normalized: r.ld_st_normalized,
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            let key = |r: &ValidationRow| r.p_unace.unwrap_or(-1.0);
            key(a).total_cmp(&key(b)).then(a.structure.cmp(&b.structure))
        });

        let measured: Vec<&ValidationRow> = rows.iter().filter(|r| r.p_unace.is_some()).collect();
        let p: Vec<f64> = measured.iter().map(|r| r.p_unace.unwrap_or(0.0)).collect();
        let correlations = if measured.len() < 2 {
            Vec::new()
        } else {
            Metric::ALL
                .iter()
                .map(|&m| {
                    let v: Vec<f64> = measured.iter().map(|r| r.metric(m)).collect();
                    Correlation {
                        metric: m,
                        spearman: spearman(&v, &p),
                        pearson: pearson(&v, &p),
                    }
                })
                .collect()
        };
        let mut violations = Vec::new();
        for r in &measured {
            let lo = r.ci99.map_or(0.0, |c| c.lo);
            for m in [Metric::Mvf, Metric::Fea] {
                if r.metric(m) < lo {
                    violations.push(BoundViolation {
                        structure: r.structure,
                        metric: m,
                        value: r.metric(m),
                        ci_lo: lo,
                    });
                }
            }
        }
        Self {
            side,
            tol_factor,
            runs_per_structure: campaigns.iter().map(|c| c.n_runs).max().unwrap_or(0),
            seed,
            iterations: metrics.solve.iterations,
            roi_cycles: metrics.roi_cycles,
            baseline: campaigns.first().map(|c| c.baseline),
            rows,
            correlations,
            violations,
        }
    }

    pub fn row(&self, s: StructureId) -> Option<&ValidationRow> {
        self.rows.iter().find(|r| r.structure == s)
    }

    pub fn correlation(&self, m: Metric) -> Option<&Correlation> {
        self.correlations.iter().find(|c| c.metric == m)
    }

    /// No metric fell below the injection lower bound.
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Full pipeline. With `campaign == None` (or zero runs) only metrics are
/// reported. Campaign logs live in `scratch` and make reruns resume.
pub fn run_pipeline(
    setup: &MetricsSetup,
    campaign: Option<&CampaignSetup>,
    structures: &[StructureId],
    mut progress: impl FnMut(&str),
) -> Result<(ValidationReport, MetricsStage), PipelineError> {
    progress("simulating traced solve");
    let metrics = metrics_stage(setup)?;
    let mut results = Vec::new();
    let seed = campaign.map_or(0, |c| c.seed);
    if let Some(c) = campaign.filter(|c| c.runs_per_structure > 0) {
        let matrix = inject::prepare_matrix(setup.side, &c.scratch).map_err(at(Stage::Matrix))?;
        let mut cfg = CampaignConfig::new(c.worker_exe.clone(), matrix, setup.tol_factor, c.seed);
        cfg.parallel = c.parallel.max(1);
        cfg.baseline_runs = c.baseline_runs;
        progress("measuring fault-free baseline");
        let baseline = inject::measure_baseline(&cfg).map_err(at(Stage::Baseline))?;
        if baseline.iterations != metrics.solve.iterations {
            return Err(PipelineError {
                stage: Stage::Baseline,
                source: format!(
                    "native solve took {} iterations, traced solve {}",
                    baseline.iterations, metrics.solve.iterations
                )
                .into(),
            });
        }
        for &s in structures {
            progress(&format!("campaign {s}: {} runs", c.runs_per_structure));
            cfg.log = Some(c.scratch.join(format!(
                "campaign-side{}-seed{}-{}.csv",
                setup.side,
                c.seed,
                s.name().replace('\'', "p")
            )));
            let r = inject::run_campaign(&cfg, &baseline, s, c.runs_per_structure).map_err(at(Stage::Campaign(s)))?;
            results.push(r);
        }
    }
    let report = ValidationReport::build(&metrics, &results, setup.side, setup.tol_factor, seed);
    Ok((report, metrics))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

pub fn write_csv<W: Write>(report: &ValidationReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# memvuln validation report, schema v{VALIDATION_SCHEMA_VERSION}")?;
    writeln!(
        w,
        "# side={} tol_factor={:e} runs_per_structure={} seed={} iterations={} roi_cycles={}",
        report.side, report.tol_factor, report.runs_per_structure, report.seed, report.iterations, report.roi_cycles
    )?;
    writeln!(w, "structure,p_unace,ci99_lo,ci99_hi,ace,crash,wrong_result,extra_work,hang,mvf,fea,safe_ratio,dvf,dvf_relative,ld_st_normalized")?;
    for r in &report.rows {
        let t = r
            .tally
            .map(|t| format!("{},{},{},{},{}", t.ace, t.crash, t.wrong_result, t.extra_work, t.hang));
        writeln!(
            w,
            "{},{},{},{},{},{:.9},{:.9},{:.9},{:.6e},{:.6},{:.6}",
            r.structure,
            opt(r.p_unace),
            opt(r.ci99.map(|c| c.lo)),
            opt(r.ci99.map(|c| c.hi)),
            t.unwrap_or_else(|| ",,,,".into()),
            r.mvf,
            r.fea,
            r.safe_ratio,
            r.dvf,
            r.dvf_relative,
            r.ld_st_normalized
        )?;
    }
    writeln!(w, "# correlation with p_unace: metric,spearman,pearson")?;
    for c in &report.correlations {
        writeln!(w, "# {},{},{}", c.metric.name(), opt(c.spearman), opt(c.pearson))?;
    }
    for v in &report.violations {
        writeln!(
            w,
            "# violation: {} {} = {:.6} < {:.6}",
            v.structure,
            v.metric.name(),
            v.value,
            v.ci_lo
        )?;
    }
    Ok(())
}

/// Whitespace-separated columns for [`GNUPLOT_SCRIPT`]: bars for injection
/// results, lines for the metrics.
pub fn write_plot_data<W: Write>(report: &ValidationReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# memvuln validation plot data, schema v{VALIDATION_SCHEMA_VERSION}")?;
    writeln!(
        w,
        "# index structure p_unace ci_lo ci_hi mvf fea safe_ratio dvf_relative ld_st_normalized"
    )?;
    let dash = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for (i, r) in report.rows.iter().enumerate() {
        writeln!(
            w,
            "{i} \"{}\" {} {} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.structure,
            dash(r.p_unace),
            dash(r.ci99.map(|c| c.lo)),
            dash(r.ci99.map(|c| c.hi)),
            r.mvf,
            r.fea,
            r.safe_ratio,
            r.dvf_relative,
            r.ld_st_normalized
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MetricsStage {
        metrics_stage(&MetricsSetup::new(6, 1e-8)).unwrap()
    }

    #[test]
    fn metrics_only_report() {
        let m = small();
        assert!(m.solve.verified);
        assert_eq!(m.reports.len(), 9);
        let r = ValidationReport::build(&m, &[], 6, 1e-8, 0);
        assert!(r.passed() && r.correlations.is_empty());
        assert!(r.rows.iter().all(|r| r.p_unace.is_none()));
        let mut csv = Vec::new();
        write_csv(&r, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("# memvuln validation report, schema v1"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 10);
    }

    #[test]
    fn metric_columns_are_deterministic() {
        let (a, b) = (small(), small());
        let csv = |m: &MetricsStage| {
            let mut out = Vec::new();
            crate::vulnmetrics::write_csv(&m.reports, &mut out).unwrap();
            out
        };
        assert_eq!(csv(&a), csv(&b));
    }

    #[test]
    fn violations_and_ordering() {
        let m = small();
        let base = Baseline {
            iterations: 1,
            wall_time: 1.0,
        };
        let mk = |s, unace| {
            CampaignResult::from_tally(
                s,
                Tally {
                    ace: 100 - unace,
                    crash: unace,
                    ..Tally::default()
                },
                0,
                base,
            )
        };
        let campaigns: Vec<_> = StructureId::TRACKED
            .iter()
            .enumerate()
            .map(|(i, &s)| mk(s, if s == StructureId::B { 99 } else { i as u64 }))
            .collect();
        let r = ValidationReport::build(&m, &campaigns, 6, 1e-8, 1);
        let p: Vec<f64> = r.rows.iter().map(|r| r.p_unace.unwrap()).collect();
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.rows.last().unwrap().structure, StructureId::B);
        assert!(r
            .violations
            .iter()
            .any(|v| v.structure == StructureId::B && v.metric == Metric::Mvf));
        assert!(!r.passed());
        assert_eq!(r.correlations.len(), Metric::ALL.len());
        let mut plot = Vec::new();
        write_plot_data(&r, &mut plot).unwrap();
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 2 + 9);
    }
}
