//! Generate the 27-point Poisson system, solve it with CG and verify the
//! answer against the pristine inputs.
//!
//! ```bash
//! cargo run --release --example solve_poisson -- 24
//! ```

use memvuln::cg::{PoissonSystem, SolveOptions, DEFAULT_T_MAX};
use memvuln::layout::StructureId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let side: usize = std::env::args().nth(1).map_or(Ok(16), |s| s.parse())?;
    let system = PoissonSystem::generate(side, 1e-8)?;
    println!(
        "{side}^3 grid: {} rows, {} nonzeros, tol {:e}",
        system.a.n_rows,
        system.a.nnz(),
        system.tol
    );

    let problem = system.problem()?;
    for id in StructureId::ALL {
        let r = problem.region(id);
        println!("  {:<4} {:>10} bytes at {:#x}", id.name(), r.len, r.base);
    }

    let rec = problem.solve_native(&SolveOptions::new(system.tol, DEFAULT_T_MAX))?;
    let x = problem.solution();
    println!(
        "converged {} after {} iterations in {:.2} ms, residual {:e}",
        rec.converged,
        rec.iterations,
        rec.roi_wall_time * 1e3,
        rec.final_residual_norm_sq
    );
    println!("verified against pristine A and b: {}", system.verify(&x));
    let worst = x.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    println!("max |x - 1| = {worst:e}");
    Ok(())
}
