//! Per-structure MVF, FEA, DVF and LD/ST for the CG solver, computed by
//! streaming the traced solve through the cache model.
//!
//! ```bash
//! cargo run --release --example vulnerability_report -- 24
//! ```

use memvuln::pipeline::{metrics_stage, MetricsSetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let side: usize = std::env::args().nth(1).map_or(Ok(16), |s| s.parse())?;
    let stage = metrics_stage(&MetricsSetup::new(side, 1e-8))?;
    println!(
        "side {side}: {} iterations, ROI {} cycles, {} fills, {} write-backs",
        stage.solve.iterations, stage.roi_cycles, stage.sim_stats.fills, stage.sim_stats.writebacks
    );
    println!(
        "{:<6} {:>7} {:>7} {:>7} {:>9} {:>8}",
        "struct", "MVF", "FEA", "safe", "DVF(rel)", "LD/LD+ST"
    );
    for r in &stage.reports {
        println!(
            "{:<6} {:>7.4} {:>7.4} {:>7.4} {:>9.4} {:>8.4}",
            r.structure.name(),
            r.mvf,
            r.fea,
            r.safe_ratio,
            r.dvf_relative,
            r.ld_st_normalized
        );
    }

    // the same ledgers in ChipKill-sized words
    let mut wide = MetricsSetup::new(side, 1e-8);
    wide.word_bytes = 16;
    let wide = metrics_stage(&wide)?;
    println!("\n16-byte words:");
    for (a, b) in stage.reports.iter().zip(&wide.reports) {
        println!(
            "{:<6} MVF {:.4} -> {:.4}  FEA {:.4} -> {:.4}",
            a.structure.name(),
            a.mvf,
            b.mvf,
            a.fea,
            b.fea
        );
    }

    let mut csv = Vec::new();
    memvuln::vulnmetrics::write_csv(&stage.reports, &mut csv)?;
    print!("\n{}", String::from_utf8(csv)?);
    Ok(())
}
