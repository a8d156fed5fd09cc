//! Adaptive and uniform runs on the distorted-mesh point-value problem,
//! written as CSV and summarised with fitted convergence rates.

use multigoal_dwr::adaptivity::{run_adaptive, run_uniform, write_csv_file};
use multigoal_dwr::cli::{cmd_report, preset};

fn main() -> multigoal_dwr::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "example1b_case1".into());
    let mut cfg = preset(&name)?.config;
    cfg.max_dofs = 20_000;
    let dir = std::env::temp_dir().join("mgdwr_report");
    std::fs::create_dir_all(&dir)?;
    let a = dir.join(format!("{name}_adaptive.csv"));
    let u = dir.join(format!("{name}_uniform.csv"));
    write_csv_file(&run_adaptive(&cfg)?, &a)?;
    write_csv_file(&run_uniform(&cfg)?, &u)?;
    print!("{}", cmd_report(&[a, u])?);
    Ok(())
}
