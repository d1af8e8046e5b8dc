//! Probability that a Poisson fault process strikes a word before one of its
//! consuming accesses: exact, complement-product, linear and Monte Carlo.
//!
//! ```bash
//! cargo run --release --example fault_model
//! ```

use memvuln::faultmodel::{
    monte_carlo_consume, p_consume_exact, p_consume_linear, p_consume_product, AccessTimeline, FaultModelParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // ROI of 10 cycles; a write at 2, reads at 5 and 9
    let timeline = AccessTimeline::parse("T 10\n2 safe\n5 unsafe\n9 unsafe\n")?;
    println!("vulnerability (MVF) {:.2}", timeline.vulnerability());
    println!(
        "{:>8} {:>6} {:>12} {:>12} {:>12} {:>12}  99% CI",
        "lambda", "rare", "exact", "product", "linear", "monte carlo"
    );
    for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 0.5] {
        let params = FaultModelParams::new(lambda, timeline.roi_cycles())?;
        let mc = monte_carlo_consume(&timeline, &params, 1_000_000, 42)?;
        println!(
            "{lambda:>8} {:>6} {:>12.6e} {:>12.6e} {:>12.6e} {:>12.6e}  [{:.6e}, {:.6e}]",
            params.rare_regime(),
            p_consume_exact(&timeline, &params),
            p_consume_product(&timeline, &params),
            p_consume_linear(&timeline, &params),
            mc.estimate,
            mc.ci.lo,
            mc.ci.hi
        );
    }
    Ok(())
}
