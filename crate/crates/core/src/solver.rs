//! Damped Newton with lazy Jacobian reassembly, and the variant that stops
//! once the adjoint-weighted residual is small relative to the previous
//! discretization error estimate.

use log::{debug, info};

use crate::assembly::{assemble_jacobian, assemble_residual};
use crate::error::{Error, Result};
use crate::fespace::{ConstraintSet, DiscreteFunction};
use crate::goals::assemble_functional_gradient;
use crate::linalg::{dot, max_norm, Factorization};
use crate::multigoal::GoalSet;
use crate::problems::Problem;
use crate::quadrature::QuadRule;

pub const MAX_NEWTON_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchConfig {
    pub gamma: f64,
    pub l_max: usize,
    /// Take the undamped step when even a fresh Jacobian only passes the
    /// last rung.
    pub full_step_on_stall: bool,
}

impl LineSearchConfig {
    pub fn newton() -> Self {
        LineSearchConfig { gamma: 0.9, l_max: 200, full_step_on_stall: true }
    }

    pub fn adaptive() -> Self {
        LineSearchConfig { gamma: 0.85, l_max: 200, full_step_on_stall: true }
    }

    /// Required residual reduction factor for damping exponent `l`.
    pub fn acceptance(&self, l: usize) -> f64 {
        match l {
            0 => 0.8,
            1 => 0.888,
            _ => 0.888 + 0.112 * ((l + 1) as f64 / self.l_max as f64).sqrt(),
        }
    }
}

/// Line search plus the Jacobian reuse rule: the matrix is reassembled
/// when `||A(u^k)|| / ||A(u^{k-1})||` exceeds `rebuild_ratio` (so `0.0`
/// reassembles in every iteration).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    pub line_search: LineSearchConfig,
    pub rebuild_ratio: f64,
    pub max_iterations: usize,
}

impl NewtonConfig {
    /// Primal solves: `gamma = 0.9`, reuse while the residual ratio stays
    /// at or below 0.85.
    pub fn primal() -> Self {
        NewtonConfig { line_search: LineSearchConfig::newton(), rebuild_ratio: 0.85, max_iterations: MAX_NEWTON_ITERATIONS }
    }

    /// Adjoint-balanced solves: `gamma = 0.85`, fresh Jacobian per iteration.
    pub fn balanced() -> Self {
        NewtonConfig { line_search: LineSearchConfig::adaptive(), rebuild_ratio: 0.0, max_iterations: MAX_NEWTON_ITERATIONS }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    AlreadyConverged,
    Balanced,
}

#[derive(Clone, Debug, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    /// `||A(u^k)||_inf` for k = 0..=iterations.
    pub residuals: Vec<f64>,
    pub alphas: Vec<f64>,
    pub rebuilt: Vec<bool>,
    pub termination: Option<Termination>,
}

#[derive(Clone, Debug, Default)]
pub struct AdaptiveNewtonStats {
    pub newton: NewtonStats,
    /// `|A(u^k)(z^k)|` per adjoint solve.
    pub eta_m: Vec<f64>,
    pub threshold: f64,
}

pub struct LineSearchOutcome {
    pub alpha: f64,
    pub l: usize,
    pub u: DiscreteFunction,
    pub residual: Vec<f64>,
}

/// Smallest `l` with `||A(u + gamma^l delta)|| < c(l) ||A(u)||`.
pub fn line_search(
    problem: &dyn Problem,
    cs: &ConstraintSet,
    u: &DiscreteFunction,
    delta: &[f64],
    residual_norm: f64,
    cfg: &LineSearchConfig,
    rule: &QuadRule,
) -> Result<LineSearchOutcome> {
    assert!(residual_norm > 0.0, "line search from a converged state");
    let mut alpha = 1.0;
    for l in 0..cfg.l_max {
        let mut trial = u.clone();
        trial.axpy(alpha, delta);
        // a damping step can leave the domain of the nonlinearity
        if let Ok(r) = assemble_residual(problem, cs, &trial, rule) {
            let norm = max_norm(&r);
            if norm.is_finite() && norm < cfg.acceptance(l) * residual_norm {
                return Ok(LineSearchOutcome { alpha, l, u: trial, residual: r });
            }
        }
        alpha *= cfg.gamma;
    }
    Err(Error::LineSearchExhausted { tried: cfg.l_max })
}

/// Tolerance of the primal solve on `level`: `1e-8 ||A||` on the first,
/// `1e-2 ||A||` afterwards.
pub fn nested_tolerance(level: usize, initial_residual_norm: f64) -> f64 {
    assert!(level >= 1);
    if level == 1 {
        1e-8 * initial_residual_norm
    } else {
        1e-2 * initial_residual_norm
    }
}

/// Jacobian factorization with the reuse rule.
struct JacobianCache {
    fact: Option<Factorization>,
}

impl JacobianCache {
    fn refresh(
        &mut self,
        force: bool,
        problem: &dyn Problem,
        cs: &ConstraintSet,
        u: &DiscreteFunction,
        rule: &QuadRule,
    ) -> Result<bool> {
        if self.fact.is_some() && !force {
            return Ok(false);
        }
        let k = assemble_jacobian(problem, cs, u, rule)?;
        self.fact = Some(Factorization::new(&k)?);
        Ok(true)
    }

    fn get(&self) -> &Factorization {
        self.fact.as_ref().expect("factorization assembled")
    }
}

/// Newton step `delta = -K^{-1} R`, hanging entries filled in.
fn newton_direction(fact: &Factorization, cs: &ConstraintSet, residual: &[f64]) -> Result<Vec<f64>> {
    let neg: Vec<f64> = residual.iter().map(|r| -r).collect();
    let mut delta = fact.solve(&neg)?;
    cs.homogeneous().distribute(&mut delta);
    Ok(delta)
}

/// Line search that only succeeds on its last rung, where `c = 1` admits
/// any decrease at a vanishing step.
fn stalled(out: &Result<LineSearchOutcome>, cfg: &LineSearchConfig) -> bool {
    match out {
        Ok(o) => o.l + 1 >= cfg.l_max,
        Err(_) => true,
    }
}

/// One damped step. A reused Jacobian that stalls the line search is
/// reassembled and the step retried. If a fresh Jacobian stalls too, the
/// undamped Newton step is taken when its residual is finite.
#[allow(clippy::too_many_arguments)]
fn damped_step(
    cache: &mut JacobianCache,
    rebuilt: &mut bool,
    problem: &dyn Problem,
    cs: &ConstraintSet,
    u: &DiscreteFunction,
    residual: &[f64],
    norm: f64,
    cfg: &LineSearchConfig,
    rule: &QuadRule,
) -> Result<LineSearchOutcome> {
    let mut delta = newton_direction(cache.get(), cs, residual)?;
    let mut out = line_search(problem, cs, u, &delta, norm, cfg, rule);
    if stalled(&out, cfg) && !*rebuilt {
        debug!("stale Jacobian stalled the line search; reassembling");
        cache.refresh(true, problem, cs, u, rule)?;
        *rebuilt = true;
        delta = newton_direction(cache.get(), cs, residual)?;
        out = line_search(problem, cs, u, &delta, norm, cfg, rule);
    }
    if stalled(&out, cfg) && cfg.full_step_on_stall {
        let mut trial = u.clone();
        trial.axpy(1.0, &delta);
        if let Ok(r) = assemble_residual(problem, cs, &trial, rule) {
            if max_norm(&r).is_finite() {
                debug!("line search stalled; taking the full step");
                return Ok(LineSearchOutcome { alpha: 1.0, l: 0, u: trial, residual: r });
            }
        }
    }
    out
}

/// Damped Newton until `||A(u)||_inf <= tol_abs`. `u0` must satisfy the
/// constraints of `cs`.
pub fn newton_solve(
    problem: &dyn Problem,
    cs: &ConstraintSet,
    u0: DiscreteFunction,
    tol_abs: f64,
    cfg: &NewtonConfig,
    rule: &QuadRule,
) -> Result<(DiscreteFunction, NewtonStats)> {
    let mut u = u0;
    let mut residual = assemble_residual(problem, cs, &u, rule)?;
    let mut norm = max_norm(&residual);
    let mut stats = NewtonStats { residuals: vec![norm], ..Default::default() };
    if norm <= tol_abs {
        stats.termination = Some(Termination::AlreadyConverged);
        return Ok((u, stats));
    }
    let mut cache = JacobianCache { fact: None };
    let mut ratio = f64::INFINITY;
    while norm > tol_abs {
        if stats.iterations >= cfg.max_iterations {
            return Err(Error::MaxIterations { iterations: stats.iterations, residual: norm });
        }
        let mut rebuilt = cache.refresh(ratio > cfg.rebuild_ratio, problem, cs, &u, rule)?;
        let step = damped_step(&mut cache, &mut rebuilt, problem, cs, &u, &residual, norm, &cfg.line_search, rule)?;
        ratio = max_norm(&step.residual) / norm;
        u = step.u;
        residual = step.residual;
        norm = max_norm(&residual);
        stats.iterations += 1;
        stats.residuals.push(norm);
        stats.alphas.push(step.alpha);
        stats.rebuilt.push(rebuilt);
        info!("newton k={} |A|={:.6e} alpha={:.4} rebuilt={}", stats.iterations, norm, step.alpha, rebuilt);
    }
    stats.termination = Some(Termination::Converged);
    Ok((u, stats))
}

/// How the coarse nonlinear solve decides it is done.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NewtonStop {
    /// `|A(u^k)(z^k)| <= 1e-2 eta_prev`.
    Balanced,
    /// `||A(u^k)||_inf <= tol`, adjoint solved at the end only.
    Fixed(f64),
}

/// Newton on the coarse space with an adjoint solve in every iteration.
/// The adjoint weights are rebuilt from `enriched_values` (the goal values
/// at `u_h2`) and the current iterate. Returns the final primal and adjoint.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_newton_multigoal(
    problem: &dyn Problem,
    goals: &GoalSet,
    cs: &ConstraintSet,
    u0: DiscreteFunction,
    eta_prev: f64,
    enriched_values: &[f64],
    stop: NewtonStop,
    cfg: &NewtonConfig,
    rule: &QuadRule,
) -> Result<(DiscreteFunction, DiscreteFunction, AdaptiveNewtonStats)> {
    assert!(eta_prev > 0.0, "previous estimate must be positive");
    let threshold = match stop {
        NewtonStop::Balanced => 1e-2 * eta_prev,
        NewtonStop::Fixed(tol) => tol,
    };
    let homogeneous = cs.homogeneous();
    let mut u = u0;
    let mut residual = assemble_residual(problem, cs, &u, rule)?;
    let mut norm = max_norm(&residual);
    let mut stats = AdaptiveNewtonStats { threshold, ..Default::default() };
    stats.newton.residuals.push(norm);
    let mut cache = JacobianCache { fact: None };
    let mut ratio = f64::INFINITY;
    loop {
        let mut rebuilt = cache.refresh(ratio > cfg.rebuild_ratio, problem, cs, &u, rule)?;
        let done_fixed = matches!(stop, NewtonStop::Fixed(tol) if norm <= tol);
        let z = if matches!(stop, NewtonStop::Balanced) || done_fixed {
            let jfun = goals.adjoint_functional(&u, enriched_values, rule)?;
            let rhs = assemble_functional_gradient(&jfun, cs, &u, rule)?;
            let mut z = cache.get().solve_transpose(&rhs)?;
            homogeneous.distribute(&mut z);
            let eta_m = dot(&residual, &z).abs();
            stats.eta_m.push(eta_m);
            debug!("adjoint eta_m={eta_m:.6e} threshold={threshold:.3e}");
            Some((DiscreteFunction::from_coeffs(cs.space(), z), eta_m))
        } else {
            None
        };
        match (stop, z) {
            (NewtonStop::Balanced, Some((z, eta_m))) if eta_m <= threshold => {
                stats.newton.termination = Some(Termination::Balanced);
                return Ok((u, z, stats));
            }
            (NewtonStop::Fixed(_), Some((z, _))) => {
                stats.newton.termination = Some(Termination::Converged);
                return Ok((u, z, stats));
            }
            _ => {}
        }
        if stats.newton.iterations >= cfg.max_iterations {
            let eta_m = stats.eta_m.last().copied().unwrap_or(f64::NAN);
            return Err(Error::IterationCap { iterations: stats.newton.iterations, eta_m, threshold });
        }
        if norm == 0.0 {
            // exact discrete solution; the adjoint residual cannot shrink further
            let eta_m = stats.eta_m.last().copied().unwrap_or(f64::NAN);
            return Err(Error::IterationCap { iterations: stats.newton.iterations, eta_m, threshold });
        }
        let step = damped_step(&mut cache, &mut rebuilt, problem, cs, &u, &residual, norm, &cfg.line_search, rule)?;
        ratio = max_norm(&step.residual) / norm;
        u = step.u;
        residual = step.residual;
        norm = max_norm(&residual);
        let st = &mut stats.newton;
        st.iterations += 1;
        st.residuals.push(norm);
        st.alphas.push(step.alpha);
        st.rebuilt.push(rebuilt);
        info!(
            "adaptive newton k={} |A|={:.6e} alpha={:.4} rebuilt={} eta_m={:.6e}",
            st.iterations,
            norm,
            step.alpha,
            rebuilt,
            stats.eta_m.last().copied().unwrap_or(f64::NAN)
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::run_rule;
    use crate::fespace::FeSpace;
    use crate::goals::{FunctionalExpr, Region};
    use crate::mesh::Mesh;
    use crate::problems::PLaplace;
    use std::sync::Arc;

    fn setup(p: f64, n: usize, r: usize) -> (PLaplace, ConstraintSet, DiscreteFunction) {
        let problem = PLaplace::with_constant_rhs(p, 1.0, 1.0);
        let space = Arc::new(FeSpace::new(Arc::new(Mesh::unit_square(n)), r, 1));
        let cs = ConstraintSet::new(&space, &problem.dirichlet()).unwrap();
        let mut u = DiscreteFunction::from_coeffs(&space, vec![1.0; space.n_dofs()]);
        cs.distribute(&mut u.coeffs);
        (problem, cs, u)
    }

    #[test]
    fn acceptance_schedule() {
        let c = LineSearchConfig::newton();
        assert_eq!(c.acceptance(0), 0.8);
        assert_eq!(c.acceptance(1), 0.888);
        assert!((c.acceptance(2) - (0.888 + 0.112 * (3.0f64 / 200.0).sqrt())).abs() < 1e-15);
        assert!((0..199).all(|l| c.acceptance(l) < 1.0));
    }

    #[test]
    fn tolerances() {
        assert_eq!(nested_tolerance(1, 2.0), 2e-8);
        assert!((nested_tolerance(3, 0.5) - 5e-3).abs() < 1e-18);
        assert_eq!(nested_tolerance(2, 0.0), 0.0);
    }

    #[test]
    fn linear_problem_one_step() {
        let rule = run_rule(2);
        let (problem, cs, u0) = setup(2.0, 4, 1);
        let (u, stats) = newton_solve(&problem, &cs, u0, 1e-12, &NewtonConfig::primal(), &rule).unwrap();
        assert_eq!(stats.iterations, 1);
        assert_eq!(stats.alphas, vec![1.0]);
        let r = max_norm(&assemble_residual(&problem, &cs, &u, &rule).unwrap());
        assert!(r <= 1e-12);
    }

    #[test]
    fn plaplace_converges_monotonically() {
        let rule = run_rule(2);
        let (problem, cs, u0) = setup(4.0, 2, 1);
        let r0 = max_norm(&assemble_residual(&problem, &cs, &u0, &rule).unwrap());
        let tol = nested_tolerance(1, r0);
        let cfg = NewtonConfig::primal();
        let (u, stats) = newton_solve(&problem, &cs, u0.clone(), tol, &cfg, &rule).unwrap();
        assert!(stats.residuals.windows(2).all(|w| w[1] < w[0]));
        assert!(stats.rebuilt[0]);
        // reassembly follows the residual ratio of the previous step
        for k in 1..stats.iterations {
            let ratio = stats.residuals[k] / stats.residuals[k - 1];
            if ratio > cfg.rebuild_ratio {
                assert!(stats.rebuilt[k]);
            }
        }
        let r = max_norm(&assemble_residual(&problem, &cs, &u, &rule).unwrap());
        assert!(r <= tol);
        let (_, again) = newton_solve(&problem, &cs, u0.clone(), tol, &cfg, &rule).unwrap();
        assert_eq!(again.residuals, stats.residuals);
        // with a fresh Jacobian in every step
        let fresh = NewtonConfig { rebuild_ratio: 0.0, ..cfg };
        let (_, stats) = newton_solve(&problem, &cs, u0, tol, &fresh, &rule).unwrap();
        assert!(stats.iterations <= 15, "{} iterations", stats.iterations);
        assert!(stats.rebuilt.iter().all(|&b| b));
    }

    #[test]
    fn quadratic_tail() {
        let rule = run_rule(3);
        let (problem, cs, u0) = setup(4.0, 4, 2);
        let fresh = NewtonConfig { rebuild_ratio: 0.0, ..NewtonConfig::primal() };
        let (_, stats) = newton_solve(&problem, &cs, u0, 1e-12, &fresh, &rule).unwrap();
        let r = &stats.residuals;
        let n = r.len();
        for k in n.saturating_sub(4)..n - 1 {
            if r[k] < 1e-2 && r[k + 1] > 1e-13 {
                assert!(r[k + 1] / (r[k] * r[k]) < 1e3, "{r:?}");
            }
        }
    }

    #[test]
    fn adaptive_newton_on_linear_problem() {
        let rule = run_rule(2);
        let (problem, cs, u0) = setup(2.0, 4, 1);
        let goals = GoalSet::single(FunctionalExpr::mean_of(0, 1, Region::Domain));
        let (u, z, stats) = adaptive_newton_multigoal(
            &problem,
            &goals,
            &cs,
            u0,
            1e-8,
            &[0.0],
            NewtonStop::Balanced,
            &NewtonConfig::balanced(),
            &rule,
        )
        .unwrap();
        assert_eq!(stats.newton.iterations, 1);
        assert!(*stats.eta_m.last().unwrap() <= 1e-10);
        // self-adjoint with identical data: z = u up to the boundary values
        let (uf, _) = newton_solve(&problem, &cs, u.clone(), 1e-14, &NewtonConfig::primal(), &rule).unwrap();
        for (a, b) in z.coeffs.iter().zip(&uf.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn line_search_rejects_divergent_direction() {
        let rule = run_rule(2);
        let (problem, cs, u0) = setup(2.0, 2, 1);
        let r = assemble_residual(&problem, &cs, &u0, &rule).unwrap();
        let norm = max_norm(&r);
        // ascent direction: every damping increases the residual
        let bad: Vec<f64> = r.iter().map(|v| 1e3 * v).collect();
        let cfg = LineSearchConfig { gamma: 0.5, l_max: 5, full_step_on_stall: false };
        assert!(matches!(
            line_search(&problem, &cs, &u0, &bad, norm, &cfg, &rule),
            Err(Error::LineSearchExhausted { tried: 5 })
        ));
    }
}
