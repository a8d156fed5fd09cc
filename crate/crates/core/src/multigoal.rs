//! Combination of several goal functionals into one weighted relative-error
//! functional, so a single adjoint solve serves all of them.

use crate::error::{Error, Result};
use crate::fespace::{ConstraintSet, DiscreteFunction, Field};
use crate::goals::{assemble_functional_gradient, FunctionalExpr};
use crate::quadrature::QuadRule;

/// Signum with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Member functionals with weights frozen from `J_i(u_h)` and `J_i(u_h2)`:
/// `w_i = omega_i * sign(J_i(u_h2) - J_i(u_h)) / |J_i(u_h)|`.
#[derive(Clone, Debug)]
pub struct CombinedFunctional {
    functionals: Vec<FunctionalExpr>,
    omegas: Vec<f64>,
    coarse: Vec<f64>,
    enriched: Vec<f64>,
    weights: Vec<f64>,
}

impl CombinedFunctional {
    /// Builds from member values already evaluated at `u_h` (`coarse`) and
    /// `u_h2` (`enriched`).
    pub fn from_values(
        functionals: &[FunctionalExpr],
        coarse: Vec<f64>,
        enriched: Vec<f64>,
        omegas: &[f64],
    ) -> Result<CombinedFunctional> {
        assert_eq!(functionals.len(), coarse.len());
        assert_eq!(functionals.len(), enriched.len());
        assert_eq!(functionals.len(), omegas.len());
        if let Some(index) = coarse.iter().position(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::ZeroReferenceFunctional { index });
        }
        let weights = (0..coarse.len())
            .map(|i| omegas[i] * sign(enriched[i] - coarse[i]) / coarse[i].abs())
            .collect();
        Ok(CombinedFunctional {
            functionals: functionals.to_vec(),
            omegas: omegas.to_vec(),
            coarse,
            enriched,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn coarse_values(&self) -> &[f64] {
        &self.coarse
    }

    pub fn enriched_values(&self) -> &[f64] {
        &self.enriched
    }

    /// `sum_i omega_i |J_i(u_h2) - J_i(u_h)| / |J_i(u_h)|`.
    pub fn combined_error_value(&self) -> f64 {
        (0..self.coarse.len())
            .map(|i| self.omegas[i] * (self.enriched[i] - self.coarse[i]).abs() / self.coarse[i].abs())
            .sum()
    }

    /// `J_c = sum_i w_i J_i`, the functional whose adjoint is solved.
    pub fn functional(&self) -> FunctionalExpr {
        FunctionalExpr::Sum(
            self.functionals
                .iter()
                .zip(&self.weights)
                .map(|(f, &w)| f.clone().scaled(w))
                .collect(),
        )
    }

    /// Condensed vector of `J_c'(u_eval)(phi_i)`.
    pub fn combined_derivative_rhs(&self, cs: &ConstraintSet, u_eval: &DiscreteFunction, rule: &QuadRule) -> Result<Vec<f64>> {
        assemble_functional_gradient(&self.functional(), cs, u_eval, rule)
    }
}

/// Evaluates the members at `u_h` and `u_h2` and freezes the weights.
pub fn build_combined(
    functionals: &[FunctionalExpr],
    u_h: &dyn Field,
    u_h2: &dyn Field,
    omegas: &[f64],
    rule: &QuadRule,
) -> Result<CombinedFunctional> {
    let coarse = functionals.iter().map(|f| f.eval(u_h, rule)).collect::<Result<Vec<_>>>()?;
    let enriched = functionals.iter().map(|f| f.eval(u_h2, rule)).collect::<Result<Vec<_>>>()?;
    CombinedFunctional::from_values(functionals, coarse, enriched, omegas)
}

/// The goals of a run. A single goal is used as is; several are merged into
/// a [`CombinedFunctional`].
#[derive(Clone, Debug)]
pub struct GoalSet {
    pub functionals: Vec<FunctionalExpr>,
    pub omegas: Vec<f64>,
}

impl GoalSet {
    pub fn new(functionals: Vec<FunctionalExpr>, omegas: Vec<f64>) -> GoalSet {
        assert_eq!(functionals.len(), omegas.len(), "one omega per functional");
        assert!(!functionals.is_empty(), "at least one goal functional");
        GoalSet { functionals, omegas }
    }

    pub fn single(functional: FunctionalExpr) -> GoalSet {
        GoalSet::new(vec![functional], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    pub fn values(&self, u: &dyn Field, rule: &QuadRule) -> Result<Vec<f64>> {
        self.functionals.iter().map(|f| f.eval(u, rule)).collect()
    }

    /// The functional driving the adjoint: `J` itself for one goal, else
    /// `J_c` with weights from `enriched` (values at `u_h2`) and `u`.
    pub fn adjoint_functional(&self, u: &dyn Field, enriched: &[f64], rule: &QuadRule) -> Result<FunctionalExpr> {
        if self.functionals.len() == 1 {
            return Ok(self.functionals[0].clone());
        }
        let coarse = self.values(u, rule)?;
        Ok(CombinedFunctional::from_values(&self.functionals, coarse, enriched.to_vec(), &self.omegas)?.functional())
    }
}
