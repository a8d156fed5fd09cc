//! Balanced stopping of the coarse Newton solve against a fixed residual
//! tolerance, on the ill-conditioned cheese problem.

use multigoal_dwr::adaptivity::run_adaptive;
use multigoal_dwr::cli::preset;

fn main() -> multigoal_dwr::Result<()> {
    let levels = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut cfg = preset("example1c_case1")?.config;
    cfg.max_levels = levels;
    let balanced = run_adaptive(&cfg)?;
    cfg.fixed_newton_tol = Some(1e-8);
    let fixed = run_adaptive(&cfg)?;
    println!("{:>5} {:>7} {:>9} {:>12} {:>12} {:>7}", "level", "dofs", "balanced", "eta_m", "threshold", "fixed");
    for (b, f) in balanced.iter().zip(&fixed) {
        println!(
            "{:>5} {:>7} {:>9} {:>12.3e} {:>12.3e} {:>7}",
            b.level, b.dofs, b.newton_steps, b.eta_m, b.eta_m_threshold, f.newton_steps
        );
    }
    let total = |r: &[multigoal_dwr::adaptivity::ConvergenceRecord]| r.iter().map(|x| x.newton_steps).sum::<usize>();
    println!("total Newton steps: balanced {} fixed {}", total(&balanced), total(&fixed));
    Ok(())
}
