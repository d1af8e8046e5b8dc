//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any failed.
//!
//! The desk-scale injection campaigns dominate the runtime. Set
//! `MEMVULN_SCRATCH` to keep their logs; a rerun then resumes them.
//! Numeric arguments select criteria: `cargo test --test acceptance -- 6 8`.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use memvuln::cachesim::{CacheConfig, MemoryEvent, MemorySink, RequestKind, Simulator};
use memvuln::cg::{PoissonSystem, SolveOptions, DEFAULT_T_MAX};
use memvuln::faultmodel::{monte_carlo_consume, p_consume_exact, AccessTag, AccessTimeline, FaultModelParams};
use memvuln::inject::{self, paused_flip, CampaignConfig, SCRATCH_ENV};
use memvuln::layout::StructureId;
use memvuln::pipeline::{run_pipeline, CampaignSetup, Metric, MetricsSetup, ValidationReport};
use memvuln::stats::wilson_ci;
use memvuln::trace::{record_solve, AccessEvent, AccessKind};
use memvuln::vulnmetrics::{aggregate, Accumulator, DEFAULT_FIT_PER_CYCLE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 32;
const TOL_FACTOR: f64 = 1e-8;
const RUNS: u64 = 1000;
const SEED: u64 = 2019;

const TIGHT_MARGIN: f64 = 0.10;
const SAME_MARGIN: f64 = 0.02;
const B_MVF_MAX: f64 = 0.10;
const B_SIDES: [usize; 4] = [8, 16, 24, 32];
const STREAMS: usize = 10_000;
const TIMELINES: usize = 10_000;
const MC_TIMELINES: usize = 20;
const MC_TRIALS: u64 = 1_000_000;
const TRACES: usize = 1_000;
const MAX_TRACE_EVENTS: usize = 10_000;
const DEAD_RUNS: u64 = 500;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let scratch = scratch();
    let mut results: BTreeMap<u32, Verdict> = BTreeMap::new();
    let mut record = |n: u32, v: Verdict| {
        println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.insert(n, v);
    };

    if want(6) {
        record(6, metric_identities());
    }
    if want(7) {
        record(7, fault_model());
    }
    if want(8) {
        record(8, cache_oracle());
    }
    if want(5) {
        record(5, b_pattern());
    }
    if want(9) {
        record(9, harness_controls(&scratch.path));
    }
    if (1..=4).any(want) {
        match desk_pipeline(&scratch.path) {
            Ok(report) => {
                print_report(&report);
                record(1, upper_bound(&report));
                record(2, tightness(&report));
                record(3, correlation_ranking(&report));
                record(4, comparison_failures(&report));
            }
            Err(e) => {
                for n in 1..=4 {
                    record(n, verdict(false, format!("pipeline failed: {e}")));
                }
            }
        }
    }

    println!("\nsummary");
    for (n, v) in &results {
        println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if results.values().any(|v| !v.pass) {
        std::process::exit(1);
    }
}

struct Scratch {
    path: PathBuf,
    _tmp: Option<tempfile::TempDir>,
}

fn scratch() -> Scratch {
    match std::env::var_os(SCRATCH_ENV) {
        Some(p) => {
            let path = PathBuf::from(p);
            std::fs::create_dir_all(&path).expect("scratch directory");
            Scratch { path, _tmp: None }
        }
        None => {
            let tmp = tempfile::tempdir().expect("scratch directory");
            Scratch {
                path: tmp.path().to_path_buf(),
                _tmp: Some(tmp),
            }
        }
    }
}

fn parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn desk_pipeline(scratch: &std::path::Path) -> Result<ValidationReport, Box<dyn std::error::Error>> {
    let setup = MetricsSetup::new(SIDE, TOL_FACTOR);
    let campaign = CampaignSetup {
        worker_exe: PathBuf::from(env!("CARGO_BIN_EXE_memvuln")),
        runs_per_structure: RUNS,
        seed: SEED,
        parallel: parallelism(),
        baseline_runs: 5,
        scratch: scratch.to_path_buf(),
    };
    let started = Instant::now();
    let (report, _) = run_pipeline(&setup, Some(&campaign), &StructureId::TRACKED, |msg| {
        eprintln!("[{:>6.0}s] {msg}", started.elapsed().as_secs_f64())
    })?;
    Ok(report)
}

fn print_report(r: &ValidationReport) {
    println!(
        "\ndesk pipeline: side {} tol {:e} runs {} iterations {} T {}",
        r.side, r.tol_factor, r.runs_per_structure, r.iterations, r.roi_cycles
    );
    println!("structure  p_unace  ci99_lo  ci99_hi     mvf     fea  dvf_rel  ldst_n");
    for row in &r.rows {
        let (lo, hi) = row.ci99.map_or((f64::NAN, f64::NAN), |c| (c.lo, c.hi));
        println!(
            "{:<9} {:>8.4} {:>8.4} {:>8.4} {:>7.4} {:>7.4} {:>8.4} {:>7.4}",
            row.structure.name(),
            row.p_unace.unwrap_or(f64::NAN),
            lo,
            hi,
            row.mvf,
            row.fea,
            row.dvf_relative,
            row.ld_st_normalized
        );
    }
    for c in &r.correlations {
        println!(
            "spearman {:<15} {:>7.4}  pearson {:>7.4}",
            c.metric.name(),
            c.spearman.unwrap_or(f64::NAN),
            c.pearson.unwrap_or(f64::NAN)
        );
    }
    println!();
}

fn upper_bound(r: &ValidationReport) -> Verdict {
    let mut bad = Vec::new();
    for row in &r.rows {
        let Some(ci) = row.ci99 else {
            bad.push(format!("{} has no campaign", row.structure));
            continue;
        };
        if row.tally.map_or(0, |t| t.total()) < RUNS {
            bad.push(format!("{} ran fewer than {RUNS} injections", row.structure));
        }
        for (name, v) in [("MVF", row.mvf), ("FEA", row.fea)] {
            if v < ci.lo {
                bad.push(format!("{} {name} {v:.4} < {:.4}", row.structure, ci.lo));
            }
        }
    }
    let pass = bad.is_empty() && r.rows.len() == 9 && r.violations.is_empty();
    let detail = if pass {
        format!(
            "{} structures, MVF and FEA >= 99% CI lower bound of p_unace everywhere",
            r.rows.len()
        )
    } else {
        format!("violations: {}", bad.join(", "))
    };
    verdict(pass, detail)
}

fn tightness(r: &ValidationReport) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [StructureId::D, StructureId::DPrime, StructureId::Q] {
        let Some(row) = r.row(s) else {
            return verdict(false, format!("{s} missing"));
        };
        let gap = row.mvf - row.fea;
        pass &= gap > TIGHT_MARGIN;
        parts.push(format!("{s} MVF-FEA {gap:.3}"));
    }
    for s in [StructureId::G, StructureId::X] {
        let Some(row) = r.row(s) else {
            return verdict(false, format!("{s} missing"));
        };
        let gap = (row.fea - row.mvf).abs();
        pass &= gap < SAME_MARGIN;
        parts.push(format!("{s} |FEA-MVF| {gap:.3}"));
    }
    verdict(pass, parts.join(", "))
}

/// Average ranks (ties share their mean rank), written independently of the
/// library's statistics module.
fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn rank_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn correlation_ranking(r: &ValidationReport) -> Verdict {
    let p: Vec<f64> = r.rows.iter().filter_map(|row| row.p_unace).collect();
    if p.len() != r.rows.len() {
        return verdict(false, "campaign results missing");
    }
    let rho = |m: Metric| {
        let v: Vec<f64> = r.rows.iter().map(|row| row.metric(m)).collect();
        rank_correlation(&v, &p)
    };
    let mut agree = true;
    for m in Metric::ALL {
        let lib = r.correlation(m).and_then(|c| c.spearman);
        agree &= match (lib, rho(m)) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
    }
    let (Some(fea), Some(mvf)) = (rho(Metric::Fea), rho(Metric::Mvf)) else {
        return verdict(false, "FEA or MVF correlation undefined");
    };
    // an undefined correlation (constant metric) carries no ranking information
    let ldst = rho(Metric::LdStNormalized).unwrap_or(f64::NEG_INFINITY);
    let dvf = rho(Metric::Dvf).unwrap_or(f64::NEG_INFINITY);
    let pass = agree && fea >= mvf && fea > ldst && fea > dvf;
    verdict(
        pass,
        format!("spearman FEA {fea:.3}, MVF {mvf:.3}, LD/(LD+ST) {ldst:.3}, DVF {dvf:.3}, report agrees: {agree}"),
    )
}

fn comparison_failures(r: &ValidationReport) -> Verdict {
    let mut by_dvf: Vec<_> = r.rows.iter().map(|row| (row.dvf, row.structure)).collect();
    by_dvf.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top_two: Vec<StructureId> = by_dvf.iter().take(2).map(|x| x.1).collect();
    let dvf_ok = top_two.contains(&StructureId::Ac) && top_two.contains(&StructureId::Av);
    let ar_dvf = r.row(StructureId::Ar).map_or(f64::NAN, |row| row.dvf);
    let ar_not_top = ar_dvf < by_dvf[0].0;

    let Some(b) = r.row(StructureId::B) else {
        return verdict(false, "b missing");
    };
    let b_ldst_ok = b.ld_st_normalized == 1.0;
    // rows are sorted by increasing p_unace; "near-minimal" is the lowest third
    let b_rank = r
        .rows
        .iter()
        .position(|row| row.structure == StructureId::B)
        .unwrap_or(usize::MAX);
    let b_low = b_rank < r.rows.len() / 3;
    verdict(
        dvf_ok && ar_not_top && b_ldst_ok && b_low,
        format!(
            "DVF top two {:?}, Ar below top: {ar_not_top}, b LD/(LD+ST) {}, b p_unace rank {} of {}",
            top_two.iter().map(|s| s.name()).collect::<Vec<_>>(),
            b.ld_st_normalized,
            b_rank + 1,
            r.rows.len()
        ),
    )
}

/// Records every fill and resolution touching one address range.
struct RangeFills {
    lo: u64,
    hi: u64,
    fills: Vec<(u64, u64, u64)>,
    overwritten: BTreeMap<u64, u8>,
}

impl MemorySink for RangeFills {
    fn memory_event(&mut self, ev: &MemoryEvent) {
        match ev {
            MemoryEvent::Request(r) if r.kind == RequestKind::Fill => {
                if r.line_addr < self.hi && r.line_addr + 64 > self.lo {
                    self.fills.push((r.time, r.line_addr, r.fill_id.unwrap_or(u64::MAX)));
                }
            }
            MemoryEvent::Resolution(r) if r.line_addr < self.hi && r.line_addr + 64 > self.lo => {
                self.overwritten.insert(r.fill_id, r.overwritten);
            }
            _ => {}
        }
    }
}

fn b_pattern() -> Verdict {
    let mut series = Vec::new();
    for side in B_SIDES {
        let system = PoissonSystem::generate(side, TOL_FACTOR).expect("system");
        let problem = system.problem().expect("problem");
        let region = *problem.region(StructureId::B);
        let acc = Accumulator::new(problem.structure_map(), 8).expect("accumulator");
        let probe = RangeFills {
            lo: region.base,
            hi: region.end(),
            fills: Vec::new(),
            overwritten: BTreeMap::new(),
        };
        let cache = CacheConfig::for_grid_side(side).expect("cache");
        let sim = Simulator::new(&cache, (acc, probe)).expect("simulator");
        let (solve, _, sim) =
            record_solve(&problem, &SolveOptions::new(system.tol, DEFAULT_T_MAX), sim).expect("solve");
        let out = sim.finish().expect("simulation");
        let t = out.total_cycles;
        let (acc, probe) = out.sink;
        let ledgers = acc.finish(t).expect("ledgers");
        let b = ledgers.iter().find(|l| l.id == StructureId::B).expect("b ledger");

        let mut mismatches = 0;
        let mut sum = 0.0;
        for (i, w) in b.words.iter().enumerate() {
            let addr = region.base + 8 * i as u64;
            let line = addr / 64 * 64;
            let bit = 1u8 << ((addr - line) / 8);
            let first = probe
                .fills
                .iter()
                .filter(|f| f.1 == line && probe.overwritten.get(&f.2).is_some_and(|m| m & bit == 0))
                .map(|f| f.0)
                .min();
            let expected = first.map_or(0.0, |f| f as f64 / t as f64);
            let mvf = w.mvf().expect("nonzero T");
            if mvf != expected {
                mismatches += 1;
            }
            sum += mvf;
        }
        let structure_mvf = sum / b.words.len() as f64;
        series.push((side, solve.iterations, structure_mvf, mismatches));
    }
    let exact = series.iter().all(|s| s.3 == 0);
    let below = series.iter().all(|s| s.2 < B_MVF_MAX);
    let mut by_iters = series.clone();
    by_iters.sort_by_key(|s| s.1);
    let decreasing = by_iters.windows(2).all(|w| w[1].1 == w[0].1 || w[1].2 < w[0].2);
    let grows = by_iters.windows(2).any(|w| w[1].1 > w[0].1);
    let detail = series
        .iter()
        .map(|s| format!("side {} ({} it) {:.4}", s.0, s.1, s.2))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        exact && below && decreasing && grows,
        format!("b MVF: {detail}; per-word first-fill/T exact: {exact}"),
    )
}

fn metric_identities() -> Verdict {
    let started = Instant::now();
    let map = common::synthetic_map();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    for i in 0..STREAMS {
        let word_bytes = if i % 2 == 0 { 8 } else { 16 };
        let (events, roi_end) = common::random_stream(&mut rng, 7, 200);
        let mut acc = Accumulator::new(&map, word_bytes).expect("accumulator");
        for ev in &events {
            acc.memory_event(ev);
        }
        let got = acc.finish(roi_end).expect("well-formed stream");
        let want = common::oracle_ledgers(&events, &map, word_bytes, roi_end);
        let same = got.len() == want.len()
            && got
                .iter()
                .zip(&want)
                .all(|(g, (id, words))| g.id == *id && &g.words == words);
        if !same {
            failures.push(format!("stream {i}: accumulator differs from oracle"));
        }
        let reports = aggregate(&got, DEFAULT_FIT_PER_CYCLE).expect("aggregate");
        for (s, r) in got.iter().zip(&reports) {
            let mut mean = 0.0;
            for w in &s.words {
                let (mvf, fea, sr) = (w.mvf().unwrap(), w.fea().unwrap(), w.safe_ratio().unwrap());
                if mvf + sr != 1.0 || !(0.0 <= fea && fea <= mvf && mvf <= 1.0) {
                    failures.push(format!("stream {i}: identity broken for {}", s.id));
                }
                mean += mvf;
            }
            mean /= s.words.len() as f64;
            if (r.mvf - mean).abs() > 1e-12 || r.mvf + r.safe_ratio != 1.0 {
                failures.push(format!("stream {i}: {} structure MVF is not the word mean", s.id));
            }
        }
        if failures.len() > 5 {
            break;
        }
    }
    let elapsed = started.elapsed();
    let fast = elapsed < Duration::from_secs(60);
    verdict(
        failures.is_empty() && fast,
        if failures.is_empty() {
            format!(
                "{STREAMS} streams match the interval oracle, identities hold, {:.1}s",
                elapsed.as_secs_f64()
            )
        } else {
            failures.join("; ")
        },
    )
}

/// Σ over unsafe periods of 1 - e^{-λp}, from the raw access list.
fn exact_oracle(roi: u64, accesses: &[(u64, AccessTag)], lambda: f64) -> f64 {
    let mut prev = 0;
    let mut p = 0.0;
    for &(t, tag) in accesses {
        if tag == AccessTag::Unsafe {
            p += -(-lambda * (t - prev) as f64).exp_m1();
        }
        prev = t;
    }
    debug_assert!(prev <= roi);
    p
}

fn canonical_timelines() -> Vec<(AccessTimeline, f64)> {
    let t = |roi, acc: &[(u64, AccessTag)]| AccessTimeline::new(roi, acc.to_vec()).unwrap();
    use AccessTag::{Safe as S, Unsafe as U};
    let mut out = vec![
        (t(10, &[(2, S), (5, U), (9, U)]), 1e-3),
        (t(10, &[(10, U)]), 1e-3),
        (t(10, &[(10, U)]), 0.5),
        (t(1000, &[(1000, U)]), 1e-3),
        (t(1000, &[(400, U)]), 2e-3),
        (t(1000, &[(500, S), (1000, U)]), 1e-2),
        (t(100, &[(100, S)]), 1e-4),
        (t(100, &[(1, U), (2, U), (3, U), (100, U)]), 1e-4),
        (t(10_000, &[(5000, U), (10_000, U)]), 1e-6),
        (t(10_000, &[(9999, U)]), 1e-6),
        (
            t(
                64,
                &[(8, U), (16, S), (24, U), (32, S), (40, U), (48, S), (56, U), (64, S)],
            ),
            1.5e-4,
        ),
        (t(1_000_000, &[(1, U), (999_999, U)]), 1e-8),
        (t(1_000_000, &[(30_000, U)]), 1e-5),
        (t(50, &[(25, U)]), 0.05),
        (t(500, &[(100, U), (200, S), (300, U), (400, S), (500, U)]), 2e-5),
    ];
    // a few seeded random ones in the rare regime
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    while out.len() < MC_TIMELINES {
        let roi = rng.gen_range(100..100_000);
        let tl = common::random_timeline(&mut rng, roi, 12);
        out.push((tl, 0.01 / roi as f64));
    }
    out
}

fn fault_model() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for i in 0..TIMELINES {
        let roi = rng.gen_range(1..=1_000_000u64);
        let tl = common::random_timeline(&mut rng, roi, 40);
        let lambda_t: f64 = rng.gen_range(1e-9..=0.01);
        let params = FaultModelParams::new(lambda_t / roi as f64, roi).expect("params");
        let exact = p_consume_exact(&tl, &params);
        let oracle = exact_oracle(roi, tl.accesses(), params.lambda);
        if (exact - oracle).abs() > 1e-12 * oracle.max(1e-300) {
            failures.push(format!("timeline {i}: exact {exact} vs oracle {oracle}"));
        }
        let approx = params.lambda * tl.vulnerable_time() as f64;
        let ok = if exact == 0.0 {
            approx == 0.0
        } else {
            (exact - approx).abs() / exact < params.expected_faults()
        };
        if !ok {
            failures.push(format!("timeline {i}: linear approximation off by more than λT"));
        }
        if failures.len() > 5 {
            break;
        }
    }
    let mut mc_misses = Vec::new();
    for (i, (tl, lambda)) in canonical_timelines().iter().enumerate() {
        let params = FaultModelParams::new(*lambda, tl.roi_cycles()).expect("params");
        let exact = p_consume_exact(tl, &params);
        let est = monte_carlo_consume(tl, &params, MC_TRIALS, 2019).expect("monte carlo");
        if !est.ci.contains(exact) {
            mc_misses.push(format!(
                "timeline {i}: P_exact {exact:.6} outside [{:.6}, {:.6}]",
                est.ci.lo, est.ci.hi
            ));
        }
    }
    let elapsed = started.elapsed();
    let pass = failures.is_empty() && mc_misses.is_empty() && elapsed < Duration::from_secs(300);
    let detail = if pass {
        format!(
            "{TIMELINES} rare-regime timelines within λT, Monte Carlo CI covers P_exact on {MC_TIMELINES} timelines, {:.1}s",
            elapsed.as_secs_f64()
        )
    } else {
        failures.into_iter().chain(mc_misses).collect::<Vec<_>>().join("; ")
    };
    verdict(pass, detail)
}

fn cache_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    let (mut total_fills, mut total_wbs) = (0, 0);
    for i in 0..TRACES {
        let cfg = common::tiny_cache(&mut rng).latency_free();
        let lines = rng.gen_range(2..80);
        let n = rng.gen_range(1..=MAX_TRACE_EVENTS);
        let trace = common::random_trace(&mut rng, lines, n);
        let mut sim = Simulator::new(&cfg, Vec::new()).expect("simulator");
        let mut model = common::FunctionalCache::new(&cfg);
        for ev in &trace {
            sim.access(ev).expect("access");
            model.access(ev);
        }
        model.flush();
        let out = sim.finish().expect("finish");
        let (fills, wbs) = common::request_multisets(&out.sink);
        model.fills.sort_unstable();
        model.writebacks.sort_unstable();
        total_fills += fills.len();
        total_wbs += wbs.len();
        if fills != model.fills || wbs != model.writebacks || out.stats.mshr_merges != 0 {
            failures.push(format!(
                "trace {i}: fills {}/{} write-backs {}/{}",
                fills.len(),
                model.fills.len(),
                wbs.len(),
                model.writebacks.len()
            ));
            if failures.len() > 5 {
                break;
            }
        }
    }

    let load = |time, addr| AccessEvent {
        time,
        kind: AccessKind::Load,
        addr,
        width: 8,
        structure: None,
    };
    let mut sim = Simulator::new(&CacheConfig::table1(), Vec::new()).expect("simulator");
    sim.access(&load(0, 0)).expect("access");
    sim.access(&load(1, 8)).expect("access");
    let out = sim.finish().expect("finish");
    let merge_fills = common::request_multisets(&out.sink).0.len();
    let pass = failures.is_empty() && merge_fills == 1;
    verdict(
        pass,
        if failures.is_empty() {
            format!(
                "{TRACES} random traces ({total_fills} fills, {total_wbs} write-backs) match the functional model, \
                 MSHR merge example makes {merge_fills} fill"
            )
        } else {
            failures.join("; ")
        },
    )
}

fn harness_controls(scratch: &std::path::Path) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;

    // dead region
    let dead = (|| -> Result<(u64, u64), inject::InjectError> {
        let side = 16;
        let matrix = inject::prepare_matrix(side, scratch)?;
        let mut cfg = CampaignConfig::new(PathBuf::from(env!("CARGO_BIN_EXE_memvuln")), matrix, TOL_FACTOR, SEED);
        cfg.log = Some(scratch.join(format!("campaign-side{side}-seed{SEED}-pad.csv")));
        let baseline = inject::measure_baseline(&cfg)?;
        let r = inject::run_campaign(&cfg, &baseline, StructureId::Pad, DEAD_RUNS)?;
        Ok((r.tally.total(), r.tally.unace()))
    })();
    match dead {
        Ok((runs, unace)) => {
            pass &= runs == DEAD_RUNS && unace == 0;
            parts.push(format!("pad campaign {unace}/{runs} un-ACE"));
        }
        Err(e) => {
            pass = false;
            parts.push(format!("pad campaign failed: {e}"));
        }
    }

    // paused single-bit flips
    let system = PoissonSystem::generate(8, TOL_FACTOR).expect("system");
    let problem = system.problem().expect("problem");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    // corrupted indices make some solves panic; keep the output readable
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for _ in 0..50 {
        let id = StructureId::ALL[rng.gen_range(0..StructureId::ALL.len())];
        let bits = problem.region(id).len * 8;
        let bit = rng.gen_range(0..bits);
        let at = rng.gen_range(1..20_000);
        match paused_flip(&system, id, bit, at) {
            Ok((Some(f), _)) => {
                let w = (bit / 64) as usize;
                pass &= f.differing_bits() == 1 && f.before[w] ^ f.after[w] == 1 << (bit % 64);
                checked += 1;
            }
            Ok((None, _)) => {}
            Err(e) => {
                pass = false;
                parts.push(format!("paused flip failed: {e}"));
            }
        }
    }
    std::panic::set_hook(hook);
    pass &= checked > 0;
    parts.push(format!("{checked} paused flips differ in exactly one bit"));

    // Wilson extremes
    let extremes = [1u64, 2, 7, 500, 1000, 6500, 1 << 40]
        .iter()
        .all(|&n| wilson_ci(0, n, 0.99).lo == 0.0 && wilson_ci(n, n, 0.99).hi == 1.0);
    pass &= extremes;
    parts.push(format!("Wilson (0,n) lo = 0 and (n,n) hi = 1: {extremes}"));
    verdict(pass, parts.join(", "))
}
