//! p = 4 Laplacian on the unit square, integral goal, Q1 with Q2
//! enrichment. Prints error, estimate and the three effectivity indices.

use multigoal_dwr::adaptivity::run_adaptive;
use multigoal_dwr::cli::preset;

fn main() -> multigoal_dwr::Result<()> {
    let levels = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut cfg = preset("example1a_case2")?.config;
    cfg.max_levels = levels;
    println!("{:>5} {:>7} {:>12} {:>12} {:>6} {:>6} {:>6}", "level", "dofs", "error", "eta_h", "I_eff", "I_effp", "I_effa");
    for r in run_adaptive(&cfg)? {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:>5} {:>7} {:>12.3e} {:>12.3e} {:>6} {:>6} {:>6}",
            r.level,
            r.dofs,
            r.j_e_error,
            r.eta_h,
            f(r.i_eff),
            f(r.i_effp),
            f(r.i_effa)
        );
    }
    Ok(())
}
