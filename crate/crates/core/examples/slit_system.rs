//! Quasilinear three-field system on the slit square with six goals.
//! Adaptive and uniform refinement side by side, with fitted rates for J1.

use multigoal_dwr::adaptivity::{run_adaptive, run_uniform};
use multigoal_dwr::cli::{fit_slope, preset};

fn main() -> multigoal_dwr::Result<()> {
    let max_dofs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8_000);
    let mut cfg = preset("example2")?.config;
    cfg.max_dofs = max_dofs;
    for (label, records) in [("adaptive", run_adaptive(&cfg)?), ("uniform", run_uniform(&cfg)?)] {
        println!("{label}");
        for r in &records {
            println!("  {:>7} dofs  J1 rel error {:.4e}  eta_h {:.3e}", r.dofs, r.rel_errors[0].unwrap(), r.eta_h);
        }
        let dofs: Vec<f64> = records.iter().map(|r| r.dofs as f64).collect();
        let errs: Vec<f64> = records.iter().map(|r| r.rel_errors[0].unwrap()).collect();
        match fit_slope(&dofs, &errs) {
            Some(s) => println!("  slope {s:.2}"),
            None => println!("  slope n/a"),
        }
    }
    Ok(())
}
