//! Linear problem, linear goal: the signed estimate equals the enriched
//! error `J(u_h2) - J(u_h)` and the primal and adjoint parts agree.

use multigoal_dwr::adaptivity::{run_with, Marking, MeshSpec, ProblemSpec, RunConfig};
use multigoal_dwr::assembly::run_rule;
use multigoal_dwr::goals::catalog;

fn main() -> multigoal_dwr::Result<()> {
    let cfg = RunConfig {
        experiment: "example1a".into(),
        problem: ProblemSpec::PLaplace { p: 2.0, eps: 1.0, rhs: 1.0 },
        mesh: MeshSpec::UnitSquare { n: 2 },
        degree: 1,
        enriched_degree: 2,
        tol_dis: 1e-16,
        max_levels: 4,
        max_dofs: 10_000,
        omegas: vec![],
        reference: Default::default(),
        fixed_newton_tol: None,
        seed: 0,
        complete_siblings: false,
        jacobian_reuse_ratio: 0.85,
    };
    let j = catalog("example1a")?.remove(0).expr;
    let rule = run_rule(cfg.enriched_degree);
    println!("{:>5} {:>6} {:>14} {:>14} {:>14} {:>14}", "level", "dofs", "eta_signed", "J(u2)-J(u)", "primal", "adjoint");
    run_with(&cfg, Marking::Average, &mut |s| {
        let diff = j.eval(s.u_h2, &rule)? - j.eval(s.u_h, &rule)?;
        let b = s.breakdown;
        println!(
            "{:>5} {:>6} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            s.level, s.record.dofs, b.eta_signed, diff, b.eta_primal_signed, b.eta_adjoint_signed
        );
        Ok(())
    })?;
    Ok(())
}
