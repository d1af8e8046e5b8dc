//! Drive the cache hierarchy with a traced solve and look at the resulting
//! main-memory request stream.
//!
//! ```bash
//! cargo run --release --example cache_simulation
//! ```

use memvuln::cachesim::{CacheConfig, MemoryEvent, RequestKind, Simulator, LEVEL_NAMES};
use memvuln::cg::{PoissonSystem, SolveOptions, DEFAULT_T_MAX};
use memvuln::trace::{record_solve, AccessEvent, AccessKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let side = 12;
    let cfg = CacheConfig::for_grid_side(side)?;
    print!("hierarchy scaled to a {side}^3 grid:\n{}", cfg.to_config_string());

    // the simulator is an access sink, so the trace never hits the disk
    let system = PoissonSystem::generate(side, 1e-8)?;
    let problem = system.problem()?;
    let sim = Simulator::new(&cfg, Vec::<MemoryEvent>::new())?;
    let (_, _, sim) = record_solve(&problem, &SolveOptions::new(system.tol, DEFAULT_T_MAX), sim)?;
    let out = sim.finish()?;

    let s = &out.stats;
    println!("\nROI: {} cycles, {} accesses", out.total_cycles, s.accesses);
    for (name, hits) in LEVEL_NAMES.iter().zip(s.hits) {
        println!("  {name} hits {hits}");
    }
    println!(
        "  fills {} write-backs {} (flush {}) MSHR merges {}",
        s.fills, s.writebacks, s.flush_writebacks, s.mshr_merges
    );
    println!(
        "  fetched words overwritten before use: {} of {}",
        s.words_overwritten,
        s.words_overwritten + s.words_consumed
    );

    let first_wb = out.sink.iter().find_map(|ev| match ev {
        MemoryEvent::Request(r) if r.kind == RequestKind::Writeback => Some(r.time),
        _ => None,
    });
    println!("first write-back at cycle {first_wb:?}");

    // two loads to one cold line share a single outstanding miss
    let load = |time, addr| AccessEvent {
        time,
        kind: AccessKind::Load,
        addr,
        width: 8,
        structure: None,
    };
    let mut sim = Simulator::new(&CacheConfig::table1(), Vec::new())?;
    sim.access(&load(0, 0))?;
    sim.access(&load(1, 8))?;
    let out = sim.finish()?;
    println!(
        "\nMSHR example: {} fill, {} merge",
        out.stats.fills, out.stats.mshr_merges
    );
    Ok(())
}
