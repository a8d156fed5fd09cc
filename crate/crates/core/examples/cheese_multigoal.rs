//! Four goals at once on the cheese domain (p = 4, eps = 1e-10). The
//! combined estimator drives refinement; per-goal relative errors are
//! measured against the fine reference values shipped with the preset.

use multigoal_dwr::adaptivity::run_adaptive;
use multigoal_dwr::cli::preset;

fn main() -> multigoal_dwr::Result<()> {
    let levels = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut cfg = preset("example1c_case1")?.config;
    cfg.max_levels = levels;
    let records = run_adaptive(&cfg)?;
    print!("{:>5} {:>7}", "level", "dofs");
    for n in &records[0].names {
        print!(" {:>11}", format!("{n} rel"));
    }
    println!(" {:>11} {:>11} {:>6}", "J_E error", "eta_h", "I_eff");
    for r in &records {
        print!("{:>5} {:>7}", r.level, r.dofs);
        for e in &r.rel_errors {
            print!(" {:>11.3e}", e.unwrap_or(f64::NAN));
        }
        println!(" {:>11.3e} {:>11.3e} {:>6.2}", r.j_e_error, r.eta_h, r.i_eff.unwrap_or(f64::NAN));
    }
    Ok(())
}
