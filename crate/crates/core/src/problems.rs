//! PDE kernels: the regularized p-Laplacian and a three-component
//! quasilinear system on the slit domain.
//!
//! A problem is described by its residual density: at each point the form
//! `A(u)(v)` integrates `sum_c val_c * v_c + flux_c . grad v_c`, and the
//! tangent is the derivative of `(val_c, flux_c)` with respect to
//! `(u_c', grad u_c')`.

use std::sync::Arc;

use crate::fespace::{DirichletSpec, ScalarFn};
use crate::mesh::{BoundaryTag, Point, Side};

pub trait Problem: Send + Sync {
    fn n_components(&self) -> usize;

    /// Fills `val[c]` and `flux[c]` at point `x` for state `(u, grad)`.
    fn residual(&self, x: Point, u: &[f64], grad: &[[f64; 2]], val: &mut [f64], flux: &mut [[f64; 2]]);

    /// Row-major `3n x 3n` tangent. Row `3c + k` is `val_c` (k=0) or
    /// `flux_c` x/y (k=1,2); column `3c' + j` is `u_c'` (j=0) or its x/y
    /// derivative (j=1,2).
    fn tangent(&self, x: Point, u: &[f64], grad: &[[f64; 2]], t: &mut [f64]);

    fn dirichlet(&self) -> Vec<DirichletSpec>;
}

// ------------------------------------------------------------------ p-Laplace

/// `a(grad u) = (eps^2 + |grad u|^2)^((p-2)/2) grad u`.
pub fn plaplace_flux(grad: [f64; 2], p: f64, eps: f64) -> [f64; 2] {
    let s = eps * eps + grad[0] * grad[0] + grad[1] * grad[1];
    let k = s.powf(0.5 * (p - 2.0));
    [k * grad[0], k * grad[1]]
}

/// Tangent matrix of [`plaplace_flux`]:
/// `(eps^2+s)^((p-2)/2) I + (p-2)(eps^2+s)^((p-4)/2) grad u grad u^T`.
pub fn plaplace_tangent(grad: [f64; 2], p: f64, eps: f64) -> [[f64; 2]; 2] {
    let s = eps * eps + grad[0] * grad[0] + grad[1] * grad[1];
    let k = s.powf(0.5 * (p - 2.0));
    let m = (p - 2.0) * s.powf(0.5 * (p - 4.0));
    [
        [k + m * grad[0] * grad[0], m * grad[0] * grad[1]],
        [m * grad[1] * grad[0], k + m * grad[1] * grad[1]],
    ]
}

/// Directional derivative of the flux at `grad` in direction `dir`.
pub fn plaplace_flux_jacobian(grad: [f64; 2], dir: [f64; 2], p: f64, eps: f64) -> [f64; 2] {
    let t = plaplace_tangent(grad, p, eps);
    [t[0][0] * dir[0] + t[0][1] * dir[1], t[1][0] * dir[0] + t[1][1] * dir[1]]
}

#[derive(Clone)]
pub struct PLaplace {
    pub p: f64,
    pub eps: f64,
    pub rhs: ScalarFn,
    pub dirichlet: ScalarFn,
}

impl PLaplace {
    pub fn new(p: f64, eps: f64, rhs: ScalarFn, dirichlet: ScalarFn) -> PLaplace {
        assert!(p > 1.0, "p must exceed 1");
        assert!(eps > 0.0, "regularization must be positive");
        PLaplace { p, eps, rhs, dirichlet }
    }

    /// Constant right-hand side, homogeneous Dirichlet data.
    pub fn with_constant_rhs(p: f64, eps: f64, f: f64) -> PLaplace {
        PLaplace::new(p, eps, Arc::new(move |_, _| f), Arc::new(|_, _| 0.0))
    }

    /// Right-hand side and boundary data generated from a known solution.
    pub fn manufactured(p: f64, eps: f64, exact: Manufactured) -> PLaplace {
        let value = exact.value;
        PLaplace::new(p, eps, manufactured_rhs(exact, p, eps), Arc::new(move |x, _| value(x)))
    }
}

impl Problem for PLaplace {
    fn n_components(&self) -> usize {
        1
    }

    fn residual(&self, x: Point, _u: &[f64], grad: &[[f64; 2]], val: &mut [f64], flux: &mut [[f64; 2]]) {
        val[0] = -(self.rhs)(x, None);
        flux[0] = plaplace_flux(grad[0], self.p, self.eps);
    }

    fn tangent(&self, _x: Point, _u: &[f64], grad: &[[f64; 2]], t: &mut [f64]) {
        t.fill(0.0);
        let m = plaplace_tangent(grad[0], self.p, self.eps);
        for i in 0..2 {
            for j in 0..2 {
                t[(1 + i) * 3 + 1 + j] = m[i][j];
            }
        }
    }

    fn dirichlet(&self) -> Vec<DirichletSpec> {
        vec![DirichletSpec { tag: BoundaryTag::Dirichlet, component: 0, data: self.dirichlet.clone() }]
    }
}

/// A closed-form scalar field with its first and second derivatives.
#[derive(Clone, Copy)]
pub struct Manufactured {
    pub value: fn(Point) -> f64,
    pub gradient: fn(Point) -> [f64; 2],
    pub hessian: fn(Point) -> [[f64; 2]; 2],
}

/// `u(x, y) = sin(6x + 6y)`.
pub fn sine_solution() -> Manufactured {
    Manufactured {
        value: |p| (6.0 * p[0] + 6.0 * p[1]).sin(),
        gradient: |p| {
            let c = 6.0 * (6.0 * p[0] + 6.0 * p[1]).cos();
            [c, c]
        },
        hessian: |p| {
            let s = -36.0 * (6.0 * p[0] + 6.0 * p[1]).sin();
            [[s, s], [s, s]]
        },
    }
}

/// `f = -div a(grad u)` for the p-Laplace flux:
/// `-[(eps^2+s)^((p-2)/2) lap u + (p-2)(eps^2+s)^((p-4)/2) grad u^T H grad u]`.
pub fn manufactured_rhs(exact: Manufactured, p: f64, eps: f64) -> ScalarFn {
    Arc::new(move |x, _| {
        let g = (exact.gradient)(x);
        let h = (exact.hessian)(x);
        let s = eps * eps + g[0] * g[0] + g[1] * g[1];
        let lap = h[0][0] + h[1][1];
        let ghg = g[0] * (h[0][0] * g[0] + h[0][1] * g[1]) + g[1] * (h[1][0] * g[0] + h[1][1] * g[1]);
        -(s.powf(0.5 * (p - 2.0)) * lap + (p - 2.0) * s.powf(0.5 * (p - 4.0)) * ghg)
    })
}

// ---------------------------------------------------------- quasilinear system

pub fn g1(t: f64) -> f64 {
    t.exp() - (t - 1.0).sin()
}

pub fn g1_prime(t: f64) -> f64 {
    t.exp() - (t - 1.0).cos()
}

pub fn g2(t: f64) -> f64 {
    (t * t - t).exp()
}

pub fn g2_prime(t: f64) -> f64 {
    (2.0 * t - 1.0) * (t * t - t).exp()
}

/// `sign(y) sqrt(sqrt(x^2+y^2) - x)` with `sign(0) = 0`; on the slit the
/// side hint supplies the sign.
pub fn slit_profile(x: Point, side: Option<Side>) -> f64 {
    let sign = if x[1] > 0.0 {
        1.0
    } else if x[1] < 0.0 {
        -1.0
    } else {
        match side {
            Some(s) if x[0] < 0.0 => s.sign(),
            _ => 0.0,
        }
    };
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    sign * (r - x[0]).max(0.0).sqrt()
}

/// Exact solution of the system: `u1 = 1 - u2 = u3 = slit_profile`.
pub fn quasilinear_exact(x: Point, side: Option<Side>) -> [f64; 3] {
    let q = slit_profile(x, side);
    [q, 1.0 - q, q]
}

/// `-lap u1 + u2 + u3 = 1`, `-lap u2 + g1(1-u2) = g1(u3)`,
/// `-div(g2(u1+u2) grad u3) + g1(u3) = g1(u1)`; homogeneous natural
/// conditions on the slit lips, the exact solution on the outer boundary.
#[derive(Clone, Copy, Debug, Default)]
pub struct Quasilinear;

impl Problem for Quasilinear {
    fn n_components(&self) -> usize {
        3
    }

    fn residual(&self, _x: Point, u: &[f64], grad: &[[f64; 2]], val: &mut [f64], flux: &mut [[f64; 2]]) {
        val[0] = u[1] + u[2] - 1.0;
        val[1] = g1(1.0 - u[1]) - g1(u[2]);
        val[2] = g1(u[2]) - g1(u[0]);
        flux[0] = grad[0];
        flux[1] = grad[1];
        let k = g2(u[0] + u[1]);
        flux[2] = [k * grad[2][0], k * grad[2][1]];
    }

    fn tangent(&self, _x: Point, u: &[f64], grad: &[[f64; 2]], t: &mut [f64]) {
        t.fill(0.0);
        let n = 9;
        let mut set = |row: usize, col: usize, v: f64| t[row * n + col] = v;
        // val rows
        set(0, 3, 1.0);
        set(0, 6, 1.0);
        set(3, 3, -g1_prime(1.0 - u[1]));
        set(3, 6, -g1_prime(u[2]));
        set(6, 6, g1_prime(u[2]));
        set(6, 0, -g1_prime(u[0]));
        // flux rows
        set(1, 1, 1.0);
        set(2, 2, 1.0);
        set(4, 4, 1.0);
        set(5, 5, 1.0);
        let s = u[0] + u[1];
        let (k, dk) = (g2(s), g2_prime(s));
        for d in 0..2 {
            set(7 + d, 7 + d, k);
            set(7 + d, 0, dk * grad[2][d]);
            set(7 + d, 3, dk * grad[2][d]);
        }
    }

    fn dirichlet(&self) -> Vec<DirichletSpec> {
        (0..3)
            .map(|c| {
                let data: ScalarFn = Arc::new(move |x, side| quasilinear_exact(x, side)[c]);
                DirichletSpec { tag: BoundaryTag::Dirichlet, component: c, data }
            })
            .collect()
    }
}
