//! Spot-checks every gradient family against central finite differences.
//!
//! Run with `cargo run --example gradcheck`; the CLI's `gradcheck`
//! subcommand runs the same suite at full instance count.

use fdmnet::gradcheck::{run_standard, REL_TOL};

fn main() -> fdmnet::Result<()> {
    let reports = run_standard(3, 7)?;
    for r in &reports {
        println!(
            "{:<22} max rel err {:.3e}  {}",
            r.name,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} families, {failed} over the {REL_TOL:.0e} tolerance", reports.len());
    Ok(())
}
