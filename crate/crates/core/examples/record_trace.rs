//! Record every load and store the solver makes to a binary trace file, then
//! replay it and count accesses per structure.
//!
//! ```bash
//! cargo run --release --example record_trace
//! ```

use memvuln::cg::{PoissonSystem, SolveOptions, DEFAULT_T_MAX};
use memvuln::trace::{create_trace, load_trace, record_solve, TraceInfo};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("memvuln-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("side8.trace");

    let system = PoissonSystem::generate(8, 1e-8)?;
    let problem = system.problem()?;
    let writer = create_trace(&path, problem.structure_map())?;
    let (rec, roi, writer) = record_solve(&problem, &SolveOptions::new(system.tol, DEFAULT_T_MAX), writer)?;
    let events = writer.events_written();
    writer.finish(roi)?;
    println!(
        "{} iterations, {events} accesses, {} bytes on disk",
        rec.iterations,
        std::fs::metadata(&path)?.len()
    );

    let reader = load_trace(&path)?;
    let map = reader.structure_map().clone();
    let info = TraceInfo::collect(&map, reader.roi(), reader)?;
    println!(
        "ROI [{}, {}), {} events inside",
        info.roi.roi_start, info.roi.roi_end, info.events_in_roi
    );
    println!("{:<6} {:>10} {:>10}", "struct", "loads", "stores");
    for (name, loads, stores) in &info.per_structure {
        println!("{name:<6} {loads:>10} {stores:>10}");
    }

    // replay is a plain iterator
    let first = load_trace(&path)?.take(3).collect::<Result<Vec<_>, _>>()?;
    for ev in first {
        println!(
            "t={} {:?} {:#x} +{} {:?}",
            ev.time, ev.kind, ev.addr, ev.width, ev.structure
        );
    }
    Ok(())
}
