//! Metrics against injection results: does each metric bound the measured
//! un-ACE probability, and which one ranks the structures best?
//!
//! Re-executes itself as the campaign worker. Campaign logs live in the
//! scratch directory (`MEMVULN_SCRATCH`), so an interrupted run resumes.
//!
//! ```bash
//! cargo run --release --example validation_pipeline -- 16 150
//! ```

use memvuln::inject;
use memvuln::layout::StructureId;
use memvuln::pipeline::{run_pipeline, write_csv, CampaignSetup, MetricsSetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if let Some(code) = inject::serve_worker() {
        std::process::exit(code);
    }
    let mut args = std::env::args().skip(1);
    let side: usize = args.next().map_or(Ok(16), |s| s.parse())?;
    let runs: u64 = args.next().map_or(Ok(100), |s| s.parse())?;

    let setup = MetricsSetup::new(side, 1e-8);
    let campaign = CampaignSetup {
        worker_exe: std::env::current_exe()?,
        runs_per_structure: runs,
        seed: 1,
        parallel: std::thread::available_parallelism().map_or(1, |n| n.get()),
        baseline_runs: 5,
        scratch: inject::scratch_dir(),
    };
    let (report, _) = run_pipeline(&setup, Some(&campaign), &StructureId::TRACKED, |m| eprintln!("{m}"))?;

    write_csv(&report, std::io::stdout().lock())?;
    for c in &report.correlations {
        println!("spearman({}, p_unace) = {:?}", c.metric.name(), c.spearman);
    }
    if report.passed() {
        println!("MVF and FEA bound the injection results for every structure");
    }
    for v in &report.violations {
        println!("{} {} = {:.4} < {:.4}", v.structure, v.metric.name(), v.value, v.ci_lo);
    }
    Ok(())
}
