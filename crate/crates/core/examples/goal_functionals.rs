//! The six slit-domain goals evaluated on the interpolated exact solution,
//! and one directional derivative checked against a central difference.

use std::sync::Arc;

use multigoal_dwr::assembly::run_rule;
use multigoal_dwr::cli::example2_references;
use multigoal_dwr::fespace::{DiscreteFunction, FeSpace};
use multigoal_dwr::goals::catalog;
use multigoal_dwr::mesh::Mesh;
use multigoal_dwr::problems::quasilinear_exact;

fn main() -> multigoal_dwr::Result<()> {
    let rule = run_rule(3);
    let refs = example2_references();
    let mut mesh = Mesh::slit(4);
    for _ in 0..4 {
        mesh = mesh.refine_uniform();
    }
    let space = Arc::new(FeSpace::new(Arc::new(mesh), 2, 3));
    let u = DiscreteFunction::interpolate(&space, |x, side| quasilinear_exact(x, side).to_vec());
    let goals = catalog("example2")?;
    for g in &goals {
        let v = g.expr.eval(&u, &rule)?;
        let exact = refs[&g.name].value;
        println!("{}: {:+.10}  exact {:+.10}  rel error {:.2e}", g.name, v, exact, ((v - exact) / exact).abs());
    }

    let dir = DiscreteFunction::interpolate(&space, |x, _| vec![x[0] * x[1], 1.0, x[1]]);
    let h = 1e-6;
    let shift = |s: f64| {
        let mut w = u.clone();
        w.axpy(s, &dir.coeffs);
        w
    };
    let j3 = &goals[2].expr;
    let fd = (j3.eval(&shift(h), &rule)? - j3.eval(&shift(-h), &rule)?) / (2.0 * h);
    println!("J3'(u)(v) = {:.10}  central difference {:.10}", j3.derivative(&u, &dir, &rule)?, fd);
    Ok(())
}
