//! A small single-bit-flip campaign against the running solver.
//!
//! Every run is a separate process. This example re-executes itself as the
//! worker, so it needs nothing but the library.
//!
//! ```bash
//! cargo run --release --example injection_campaign -- q 200
//! ```

use memvuln::inject::{self, CampaignConfig, OutcomeClass};
use memvuln::layout::StructureId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if let Some(code) = inject::serve_worker() {
        std::process::exit(code);
    }
    let mut args = std::env::args().skip(1);
    let structure: StructureId = args.next().as_deref().unwrap_or("x").parse()?;
    let runs: u64 = args.next().map_or(Ok(100), |s| s.parse())?;

    let scratch = inject::scratch_dir();
    let matrix = inject::prepare_matrix(24, &scratch)?;
    let cfg = CampaignConfig::new(std::env::current_exe()?, matrix, 1e-8, 7);
    let baseline = inject::measure_baseline(&cfg)?;
    println!(
        "baseline: {} iterations, {:.2} ms; hang deadline {:.0} ms",
        baseline.iterations,
        baseline.wall_time * 1e3,
        baseline.hang_deadline().as_secs_f64() * 1e3
    );

    let result = inject::run_campaign(&cfg, &baseline, structure, runs)?;
    println!("{structure}: {} runs, {} redrawn", result.n_runs, result.discarded);
    for class in OutcomeClass::ALL {
        println!("  {:<12} {}", class.name(), result.tally.get(class));
    }
    println!(
        "p_unace {:.4}, 99% CI [{:.4}, {:.4}]",
        result.p_unace, result.ci99.lo, result.ci99.hi
    );
    Ok(())
}
