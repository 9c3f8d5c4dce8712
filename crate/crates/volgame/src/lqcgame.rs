//! Games linear-quadratic in the controls and nonlinear in the state:
//! Hamiltonian construction, explicit control laws, and damped Picard
//! solution of the coupled state-costate system for the lower and upper
//! game values.
//!
//! The costate equation is the exact adjoint of the discretized state
//! equation: tail integrals use the adjoint weights
//! `theta[k][i] = c_ik w_i / w_k`, so a converged fixed point is a
//! stationary point of the discrete cost subject to the discrete dynamics.
//! On linear-quadratic instances this coincides with the saddle found by
//! the quadratic-form route.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg;

/// `(t, s, y) -> p-vector`, the uncontrolled state integrand.
pub type StateFn = Arc<dyn Fn(f64, f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `(t, s, y) -> matrix`, a control-channel kernel or a state Jacobian.
pub type StateMatFn = Arc<dyn Fn(f64, f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(t, s, y, w) -> matrix`, the y-Jacobian of a kernel-control product.
pub type StateDirJacFn =
    Arc<dyn Fn(f64, f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(t, y) -> scalar`.
pub type CostFn = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;
/// `(t, y) -> covector`.
pub type CostRowFn = Arc<dyn Fn(f64, &DVector<f64>) -> RowDVector<f64> + Send + Sync>;
/// `(t, y) -> matrix`.
pub type CostMatFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(t, y) -> p-vector` gradient.
pub type CostGradFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `(t, y, w) -> p-vector` gradient of a control-weighted term.
pub type CostGradDirFn =
    Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `(t, y, u, v) -> p-vector` gradient of the bilinear control term.
pub type CostGradBilinFn = Arc<
    dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
>;

/// Problem statement with user-supplied model functions and their
/// y-gradients. All callables must be pure and reentrant.
#[derive(Clone)]
pub struct LQCProblem {
    pub grid: TimeGrid,
    pub y0: Vec<DVector<f64>>,
    pub state_dim: usize,
    pub min_dim: usize,
    pub max_dim: usize,
    pub f0: StateFn,
    pub f1: StateMatFn,
    pub f2: StateMatFn,
    pub g0: CostFn,
    pub g1: CostRowFn,
    pub g2: CostRowFn,
    pub g11: CostMatFn,
    pub g12: CostMatFn,
    pub g22: CostMatFn,
    pub grad_f0: StateMatFn,
    pub grad_f1_u: StateDirJacFn,
    pub grad_f2_v: StateDirJacFn,
    pub grad_g0: CostGradFn,
    pub grad_g1_u: CostGradDirFn,
    pub grad_g2_v: CostGradDirFn,
    pub grad_g11_quad: CostGradDirFn,
    pub grad_g12_bilin: CostGradBilinFn,
    pub grad_g22_quad: CostGradDirFn,
    /// True when the gradients were synthesized by finite differences; such
    /// problems are for testing only and solvers flag it in their reports.
    pub fd_gradients: bool,
}

impl std::fmt::Debug for LQCProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LQCProblem")
            .field("nodes", &self.grid.len())
            .field("state_dim", &self.state_dim)
            .field("min_dim", &self.min_dim)
            .field("max_dim", &self.max_dim)
            .field("fd_gradients", &self.fd_gradients)
            .finish()
    }
}

/// Replaces the analytic gradients of `problem` with central finite
/// differences of its value functions. Testing aid; flagged in reports.
pub fn with_fd_gradients(mut problem: LQCProblem) -> LQCProblem {
    let h = 1e-6;
    let p = problem.state_dim;
    let f0 = problem.f0.clone();
    problem.grad_f0 = Arc::new(move |t, s, y| {
        let mut jac = DMatrix::zeros(y.len(), y.len());
        for c in 0..y.len() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[c] += h;
            ym[c] -= h;
            let d = (f0(t, s, &yp) - f0(t, s, &ym)) / (2.0 * h);
            jac.set_column(c, &d);
        }
        jac
    });
    let f1 = problem.f1.clone();
    problem.grad_f1_u = Arc::new(move |t, s, y, u| {
        let mut jac = DMatrix::zeros(y.len(), y.len());
        for c in 0..y.len() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[c] += h;
            ym[c] -= h;
            let d = (f1(t, s, &yp) * u - f1(t, s, &ym) * u) / (2.0 * h);
            jac.set_column(c, &d);
        }
        jac
    });
    let f2 = problem.f2.clone();
    problem.grad_f2_v = Arc::new(move |t, s, y, v| {
        let mut jac = DMatrix::zeros(y.len(), y.len());
        for c in 0..y.len() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[c] += h;
            ym[c] -= h;
            let d = (f2(t, s, &yp) * v - f2(t, s, &ym) * v) / (2.0 * h);
            jac.set_column(c, &d);
        }
        jac
    });
    let g0 = problem.g0.clone();
    problem.grad_g0 = Arc::new(move |t, y| fd_grad(p, y, |z| g0(t, z)));
    let g1 = problem.g1.clone();
    problem.grad_g1_u =
        Arc::new(move |t, y, u| fd_grad(p, y, |z| (g1(t, z) * u)[0]));
    let g2 = problem.g2.clone();
    problem.grad_g2_v =
        Arc::new(move |t, y, v| fd_grad(p, y, |z| (g2(t, z) * v)[0]));
    let g11 = problem.g11.clone();
    problem.grad_g11_quad =
        Arc::new(move |t, y, u| fd_grad(p, y, |z| 0.5 * u.dot(&(g11(t, z) * u))));
    let g12 = problem.g12.clone();
    problem.grad_g12_bilin =
        Arc::new(move |t, y, u, v| fd_grad(p, y, |z| u.dot(&(g12(t, z) * v))));
    let g22 = problem.g22.clone();
    problem.grad_g22_quad =
        Arc::new(move |t, y, v| fd_grad(p, y, |z| 0.5 * v.dot(&(g22(t, z) * v))));
    problem.fd_gradients = true;
    problem
}

fn fd_grad(p: usize, y: &DVector<f64>, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let h = 1e-6;
    let mut g = DVector::zeros(p);
    for c in 0..p {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[c] += h;
        ym[c] -= h;
        g[c] = (f(&yp) - f(&ym)) / (2.0 * h);
    }
    g
}

/// State and costate trajectories with convergence metadata.
#[derive(Debug, Clone)]
pub struct CostatePair {
    pub y: Vec<DVector<f64>>,
    pub psi: Vec<RowDVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Picard parameters.
#[derive(Debug, Clone)]
pub struct PicardOptions {
    pub damping: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            damping: 0.5,
            max_iter: 200,
            tolerance: 1e-8,
        }
    }
}

/// Which player optimizes first in the sequential construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameSide {
    Lower,
    Upper,
}

fn tail_integral_f1t_psi(
    problem: &LQCProblem,
    k: usize,
    y: &DVector<f64>,
    psi: &[RowDVector<f64>],
    channel: &StateMatFn,
    dim: usize,
) -> DVector<f64> {
    let grid = &problem.grid;
    let theta = grid.adjoint_tail_weights(k);
    let tk = grid.nodes()[k];
    let mut acc = DVector::zeros(dim);
    for i in k..grid.len() {
        let w = theta[i - k];
        if w != 0.0 {
            acc += w * (channel(grid.nodes()[i], tk, y).transpose() * psi[i].transpose());
        }
    }
    acc
}

/// Hamiltonian value at a grid node.
pub fn hamiltonian(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    psi: &[RowDVector<f64>],
) -> Result<f64> {
    let k = problem.grid.node_index(t)?;
    let grid = &problem.grid;
    let mut h = (problem.g0)(t, y)
        + ((problem.g1)(t, y) * u)[0]
        + ((problem.g2)(t, y) * v)[0]
        + 0.5 * u.dot(&((problem.g11)(t, y) * u))
        + u.dot(&((problem.g12)(t, y) * v))
        + 0.5 * v.dot(&((problem.g22)(t, y) * v));
    let theta = grid.adjoint_tail_weights(k);
    for i in k..grid.len() {
        let w = theta[i - k];
        if w != 0.0 {
            let ti = grid.nodes()[i];
            let flow = (problem.f0)(ti, t, y)
                + (problem.f1)(ti, t, y) * u
                + (problem.f2)(ti, t, y) * v;
            h += w * (&psi[i] * flow)[0];
        }
    }
    Ok(h)
}

/// Minimizing control given the opponent's value, from stationarity of the
/// Hamiltonian in `u`.
pub fn control_u_given_v(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    v: &DVector<f64>,
    psi: &[RowDVector<f64>],
) -> Result<DVector<f64>> {
    let k = problem.grid.node_index(t)?;
    let i1 = tail_integral_f1t_psi(problem, k, y, psi, &problem.f1, problem.min_dim);
    let g11 = (problem.g11)(t, y);
    let rhs = (problem.g12)(t, y) * v + (problem.g1)(t, y).transpose() + i1;
    let u = g11
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularG11 { t })?;
    Ok(-u)
}

struct ControlLawParts {
    g11: DMatrix<f64>,
    g12: DMatrix<f64>,
    g22: DMatrix<f64>,
    g1t: DVector<f64>,
    g2t: DVector<f64>,
    i1: DVector<f64>,
    i2: DVector<f64>,
}

fn law_parts(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    psi: &[RowDVector<f64>],
) -> Result<ControlLawParts> {
    let k = problem.grid.node_index(t)?;
    Ok(ControlLawParts {
        g11: (problem.g11)(t, y),
        g12: (problem.g12)(t, y),
        g22: (problem.g22)(t, y),
        g1t: (problem.g1)(t, y).transpose(),
        g2t: (problem.g2)(t, y).transpose(),
        i1: tail_integral_f1t_psi(problem, k, y, psi, &problem.f1, problem.min_dim),
        i2: tail_integral_f1t_psi(problem, k, y, psi, &problem.f2, problem.max_dim),
    })
}

/// Maximizer's control in the lower game: the critical point of the
/// restricted Hamiltonian after the minimizer's response is substituted.
pub fn control_v_lower(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    psi: &[RowDVector<f64>],
) -> Result<DVector<f64>> {
    let parts = law_parts(problem, t, y, psi)?;
    let g21 = parts.g12.transpose();
    let g11_lu = parts.g11.clone().lu();
    let inv_g1 = g11_lu
        .solve(&parts.g1t)
        .ok_or(Error::SingularG11 { t })?;
    let inv_i1 = g11_lu.solve(&parts.i1).ok_or(Error::SingularG11 { t })?;
    let g3 = &parts.g22 - &g21 * g11_lu.solve(&parts.g12).ok_or(Error::SingularG11 { t })?;
    let rhs = &g21 * inv_g1 - &parts.g2t + &g21 * inv_i1 - &parts.i2;
    g3.lu().solve(&rhs).ok_or(Error::SingularG3 { t })
}

/// Minimizer's control in the lower game, composed from the substituted
/// maximizer law.
pub fn control_u_lower(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    psi: &[RowDVector<f64>],
) -> Result<DVector<f64>> {
    let parts = law_parts(problem, t, y, psi)?;
    let g21 = parts.g12.transpose();
    let g11_lu = parts.g11.clone().lu();
    let inv_g1 = g11_lu
        .solve(&parts.g1t)
        .ok_or(Error::SingularG11 { t })?;
    let inv_i1 = g11_lu.solve(&parts.i1).ok_or(Error::SingularG11 { t })?;
    let inv_g12 = g11_lu.solve(&parts.g12).ok_or(Error::SingularG11 { t })?;
    let g3 = &parts.g22 - &g21 * &inv_g12;
    let g3_lu = g3.lu();
    let g4 = g3_lu
        .solve(&(&g21 * &inv_g1 - &parts.g2t))
        .ok_or(Error::SingularG3 { t })?;
    let i4 = g3_lu
        .solve(&(&g21 * &inv_i1 - &parts.i2))
        .ok_or(Error::SingularG3 { t })?;
    let g5 = -g11_lu
        .solve(&(&parts.g12 * &g4 + &parts.g1t))
        .ok_or(Error::SingularG11 { t })?;
    let i5 = -g11_lu
        .solve(&(&parts.g12 * &i4 + &parts.i1))
        .ok_or(Error::SingularG11 { t })?;
    Ok(g5 + i5)
}

/// Maximizing control given the minimizer's value (upper-game first stage).
pub fn control_v_given_u(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    u: &DVector<f64>,
    psi: &[RowDVector<f64>],
) -> Result<DVector<f64>> {
    let parts = law_parts(problem, t, y, psi)?;
    let g21 = parts.g12.transpose();
    let rhs = &g21 * u + &parts.g2t + &parts.i2;
    let v = parts
        .g22
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularG3 { t })?;
    Ok(-v)
}

/// Minimizer's control in the upper game.
pub fn control_u_upper(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    psi: &[RowDVector<f64>],
) -> Result<DVector<f64>> {
    let parts = law_parts(problem, t, y, psi)?;
    let g21 = parts.g12.transpose();
    let g22_lu = parts.g22.clone().lu();
    let inv_g2 = g22_lu
        .solve(&parts.g2t)
        .ok_or(Error::SingularG3 { t })?;
    let inv_i2 = g22_lu.solve(&parts.i2).ok_or(Error::SingularG3 { t })?;
    let inv_g21 = g22_lu.solve(&g21).ok_or(Error::SingularG3 { t })?;
    let g3u = &parts.g11 - &parts.g12 * &inv_g21;
    let g3u_lu = g3u.lu();
    let part_const = g3u_lu
        .solve(&(&parts.g12 * &inv_g2 - &parts.g1t))
        .ok_or(Error::SingularG11 { t })?;
    let part_tail = g3u_lu
        .solve(&(&parts.g12 * &inv_i2 - &parts.i1))
        .ok_or(Error::SingularG11 { t })?;
    Ok(part_const + part_tail)
}

fn controls_at_all_nodes(
    problem: &LQCProblem,
    y: &[DVector<f64>],
    psi: &[RowDVector<f64>],
    side: GameSide,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let nn = problem.grid.len();
    let mut u = Vec::with_capacity(nn);
    let mut v = Vec::with_capacity(nn);
    for k in 0..nn {
        let t = problem.grid.nodes()[k];
        match side {
            GameSide::Lower => {
                let vk = control_v_lower(problem, t, &y[k], psi)?;
                let uk = control_u_given_v(problem, t, &y[k], &vk, psi)?;
                u.push(uk);
                v.push(vk);
            }
            GameSide::Upper => {
                let uk = control_u_upper(problem, t, &y[k], psi)?;
                let vk = control_v_given_u(problem, t, &y[k], &uk, psi)?;
                u.push(uk);
                v.push(vk);
            }
        }
    }
    Ok((u, v))
}

/// Forward sweep of the nonlinear state equation with frozen controls.
/// Each node solves its implicit step by a short inner fixed point.
pub fn state_solve(
    problem: &LQCProblem,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let grid = &problem.grid;
    let nn = grid.len();
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(nn);
    for i in 0..nn {
        let ti = grid.nodes()[i];
        let mut rhs = problem.y0[i].clone();
        for (j, yj) in y.iter().enumerate() {
            let w = grid.forward_weight_of(i, j);
            if w != 0.0 {
                let tj = grid.nodes()[j];
                rhs += w
                    * ((problem.f0)(ti, tj, yj)
                        + (problem.f1)(ti, tj, yj) * &u[j]
                        + (problem.f2)(ti, tj, yj) * &v[j]);
            }
        }
        let w_ii = grid.forward_weight_of(i, i);
        if w_ii == 0.0 {
            y.push(rhs);
            continue;
        }
        let mut z = if i > 0 { y[i - 1].clone() } else { rhs.clone() };
        let mut ok = false;
        for _ in 0..60 {
            let next = &rhs
                + w_ii
                    * ((problem.f0)(ti, ti, &z)
                        + (problem.f1)(ti, ti, &z) * &u[i]
                        + (problem.f2)(ti, ti, &z) * &v[i]);
            let delta = (&next - &z).abs().max();
            z = next;
            if delta < 1e-13 * (1.0 + z.abs().max()) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::NonlinearStepFailed { node: i });
        }
        y.push(z);
    }
    Ok(y)
}

fn running_cost_gradient(
    problem: &LQCProblem,
    t: f64,
    y: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    (problem.grad_g0)(t, y)
        + (problem.grad_g1_u)(t, y, u)
        + (problem.grad_g2_v)(t, y, v)
        + (problem.grad_g11_quad)(t, y, u)
        + (problem.grad_g12_bilin)(t, y, u, v)
        + (problem.grad_g22_quad)(t, y, v)
}

fn state_jacobian(
    problem: &LQCProblem,
    ti: f64,
    tk: f64,
    y: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> DMatrix<f64> {
    (problem.grad_f0)(ti, tk, y)
        + (problem.grad_f1_u)(ti, tk, y, u)
        + (problem.grad_f2_v)(ti, tk, y, v)
}

/// Backward sweep of the adjoint equation `psi = grad_y H` at frozen state
/// and controls.
pub fn costate_solve(
    problem: &LQCProblem,
    y: &[DVector<f64>],
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<Vec<RowDVector<f64>>> {
    let grid = &problem.grid;
    let nn = grid.len();
    let p = problem.state_dim;
    let eye = DMatrix::identity(p, p);
    let mut psi: Vec<RowDVector<f64>> = vec![RowDVector::zeros(p); nn];
    for k in (0..nn).rev() {
        let tk = grid.nodes()[k];
        let theta = grid.adjoint_tail_weights(k);
        let mut rhs: RowDVector<f64> =
            running_cost_gradient(problem, tk, &y[k], &u[k], &v[k]).transpose();
        for i in k + 1..nn {
            let w = theta[i - k];
            if w != 0.0 {
                let ji = state_jacobian(problem, grid.nodes()[i], tk, &y[k], &u[k], &v[k]);
                rhs += w * (&psi[i] * ji);
            }
        }
        let w_kk = theta[0];
        psi[k] = if w_kk == 0.0 {
            rhs
        } else {
            let jk = state_jacobian(problem, tk, tk, &y[k], &u[k], &v[k]);
            let step = &eye - w_kk * jk;
            linalg::solve_row(&step, &rhs, "costate step").map_err(|_| Error::SingularStep {
                node: k,
                context: "costate step block singular".into(),
            })?
        };
    }
    Ok(psi)
}

/// Largest nodewise defect of the discrete state equation.
pub fn state_defect(
    problem: &LQCProblem,
    y: &[DVector<f64>],
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> f64 {
    let grid = &problem.grid;
    let nn = grid.len();
    let mut worst: f64 = 0.0;
    for i in 0..nn {
        let ti = grid.nodes()[i];
        let mut rhs = problem.y0[i].clone();
        for j in 0..=i {
            let w = grid.forward_weight_of(i, j);
            if w != 0.0 {
                let tj = grid.nodes()[j];
                rhs += w
                    * ((problem.f0)(ti, tj, &y[j])
                        + (problem.f1)(ti, tj, &y[j]) * &u[j]
                        + (problem.f2)(ti, tj, &y[j]) * &v[j]);
            }
        }
        worst = worst.max((&y[i] - rhs).abs().max());
    }
    worst
}

/// Largest nodewise defect of the discrete adjoint equation.
pub fn costate_defect(
    problem: &LQCProblem,
    y: &[DVector<f64>],
    psi: &[RowDVector<f64>],
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> f64 {
    let grid = &problem.grid;
    let nn = grid.len();
    let mut worst: f64 = 0.0;
    for k in 0..nn {
        let tk = grid.nodes()[k];
        let theta = grid.adjoint_tail_weights(k);
        let mut rhs: RowDVector<f64> =
            running_cost_gradient(problem, tk, &y[k], &u[k], &v[k]).transpose();
        for i in k..nn {
            let w = theta[i - k];
            if w != 0.0 {
                let ji = state_jacobian(problem, grid.nodes()[i], tk, &y[k], &u[k], &v[k]);
                rhs += w * (&psi[i] * ji);
            }
        }
        worst = worst.max((&psi[k] - rhs).abs().max());
    }
    worst
}

/// Definiteness margin of the control weights along a trajectory: the
/// smallest of `lambda_min(G11)` and `-lambda_max(G22)` over the nodes.
/// Errors when a weight is asymmetric or the margin is not positive.
pub fn control_weight_margin(problem: &LQCProblem, y: &[DVector<f64>]) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for (k, &t) in problem.grid.nodes().iter().enumerate() {
        let g11 = (problem.g11)(t, &y[k]);
        let g22 = (problem.g22)(t, &y[k]);
        let defect = (&g11 - g11.transpose())
            .abs()
            .max()
            .max((&g22 - g22.transpose()).abs().max());
        if defect > 1e-9 * (1.0 + g11.abs().max() + g22.abs().max()) {
            return Err(Error::NotSymmetric {
                context: format!("control weights asymmetric at t = {t}"),
            });
        }
        margin = margin
            .min(linalg::min_eigenvalue(&g11))
            .min(-linalg::max_eigenvalue(&g22));
    }
    if margin <= 0.0 {
        return Err(Error::SingularWeight {
            context: format!("control weights lose definiteness (margin {margin:.3e})"),
        });
    }
    Ok(margin)
}

fn solve_game(
    problem: &LQCProblem,
    opts: &PicardOptions,
    side: GameSide,
) -> Result<(CostatePair, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::dim("damping must lie in (0, 1]"));
    }
    control_weight_margin(problem, &problem.y0)?;
    let nn = problem.grid.len();
    let p = problem.state_dim;
    let mut y: Vec<DVector<f64>> = problem.y0.clone();
    let mut psi: Vec<RowDVector<f64>> = vec![RowDVector::zeros(p); nn];
    let mut last_residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let (u, v) = controls_at_all_nodes(problem, &y, &psi, side)?;
        let y_new = state_solve(problem, &u, &v)?;
        let psi_new = costate_solve(problem, &y_new, &u, &v)?;
        let d = opts.damping;
        for i in 0..nn {
            y[i] = (1.0 - d) * &y[i] + d * &y_new[i];
            psi[i] = (1.0 - d) * &psi[i] + d * &psi_new[i];
        }
        let (u_cur, v_cur) = controls_at_all_nodes(problem, &y, &psi, side)?;
        let residual = state_defect(problem, &y, &u_cur, &v_cur)
            .max(costate_defect(problem, &y, &psi, &u_cur, &v_cur));
        last_residual = residual;
        if residual < opts.tolerance {
            control_weight_margin(problem, &y)?;
            return Ok((
                CostatePair {
                    y,
                    psi,
                    converged: true,
                    iterations: iter,
                    residual,
                },
                u_cur,
                v_cur,
            ));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last_residual,
    })
}

/// Lower game: minimizer responds pointwise, maximizer optimizes the
/// restricted Hamiltonian.
pub fn solve_lower_game(
    problem: &LQCProblem,
    opts: &PicardOptions,
) -> Result<(CostatePair, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    solve_game(problem, opts, GameSide::Lower)
}

/// Upper game: the mirror construction, maximizing first.
pub fn solve_upper_game(
    problem: &LQCProblem,
    opts: &PicardOptions,
) -> Result<(CostatePair, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    solve_game(problem, opts, GameSide::Upper)
}

/// Cost functional at given controls: state solve plus quadrature.
pub fn evaluate_cost(
    problem: &LQCProblem,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<f64> {
    let y = state_solve(problem, u, v)?;
    let grid = &problem.grid;
    let mut j = 0.0;
    for (k, &t) in grid.nodes().iter().enumerate() {
        let integrand = (problem.g0)(t, &y[k])
            + ((problem.g1)(t, &y[k]) * &u[k])[0]
            + ((problem.g2)(t, &y[k]) * &v[k])[0]
            + 0.5 * u[k].dot(&((problem.g11)(t, &y[k]) * &u[k]))
            + u[k].dot(&((problem.g12)(t, &y[k]) * &v[k]))
            + 0.5 * v[k].dot(&((problem.g22)(t, &y[k]) * &v[k]));
        j += grid.weights()[k] * integrand;
    }
    Ok(j)
}

/// Expresses a linear-quadratic game (without terminal or double-integral
/// cost terms) as an LQC problem sharing the same discretization.
pub fn from_lq(problem: &crate::lqgame::LQGameProblem) -> Result<LQCProblem> {
    problem.validate()?;
    let mut doubles_max: f64 = 0.0;
    for i in 0..problem.grid.len() {
        for j in 0..problem.grid.len() {
            doubles_max = doubles_max
                .max(problem.p2.at(i, j).abs().max())
                .max(problem.q2.at(i, j).abs().max())
                .max(problem.r2.at(i, j).abs().max());
        }
    }
    if problem.p0.abs().max() > 0.0 || doubles_max > 0.0 {
        return Err(Error::dim(
            "only problems without terminal or double-integral cost terms embed as LQC",
        ));
    }
    let grid = problem.grid.clone();
    let p = problem.state_dim();
    let m = problem.min_control_dim();
    let n = problem.max_control_dim();
    let indexer = NodeIndexer::new(&grid);
    let a = problem.a.clone();
    let b = problem.b.clone();
    let c = problem.c.clone();
    let p1 = problem.p1.clone();
    let q1 = problem.q1.clone();
    let r1 = problem.r1.clone();
    let ix_a = indexer.clone();
    let ix_b = indexer.clone();
    let ix_c = indexer.clone();
    let ix_p1 = indexer.clone();
    let ix_p1g = indexer.clone();
    let ix_q1 = indexer.clone();
    let ix_r1 = indexer.clone();
    let ix_ga = indexer.clone();
    let a_grad = problem.a.clone();
    let p1_grad = problem.p1.clone();
    Ok(LQCProblem {
        grid,
        y0: problem.y0.clone(),
        state_dim: p,
        min_dim: m,
        max_dim: n,
        f0: Arc::new(move |t, s, y| a.at(ix_a.index(t), ix_a.index(s)) * y),
        f1: Arc::new(move |t, s, _| b.at(ix_b.index(t), ix_b.index(s)).clone()),
        f2: Arc::new(move |t, s, _| c.at(ix_c.index(t), ix_c.index(s)).clone()),
        g0: Arc::new(move |t, y| 0.5 * y.dot(&(p1.at(ix_p1.index(t)) * y))),
        g1: Arc::new(move |_, _| RowDVector::zeros(m)),
        g2: Arc::new(move |_, _| RowDVector::zeros(n)),
        g11: Arc::new(move |t, _| q1.at(ix_q1.index(t)).clone()),
        g12: Arc::new(move |_, _| DMatrix::zeros(m, n)),
        g22: Arc::new(move |t, _| r1.at(ix_r1.index(t)).clone()),
        grad_f0: Arc::new(move |t, s, _| a_grad.at(ix_ga.index(t), ix_ga.index(s)).clone()),
        grad_f1_u: Arc::new(move |_, _, y, _| DMatrix::zeros(y.len(), y.len())),
        grad_f2_v: Arc::new(move |_, _, y, _| DMatrix::zeros(y.len(), y.len())),
        grad_g0: Arc::new(move |t, y| p1_grad.at(ix_p1g.index(t)) * y),
        grad_g1_u: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        grad_g2_v: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        grad_g11_quad: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        grad_g12_bilin: Arc::new(move |_, y, _, _| DVector::zeros(y.len())),
        grad_g22_quad: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        fd_gradients: false,
    })
}

/// O(1) node lookup for uniform grids captured inside model closures.
#[derive(Debug, Clone)]
pub struct NodeIndexer {
    t0: f64,
    spacing: f64,
    len: usize,
}

impl NodeIndexer {
    pub fn new(grid: &TimeGrid) -> Self {
        NodeIndexer {
            t0: grid.t0(),
            spacing: grid.spacing(),
            len: grid.len(),
        }
    }

    pub fn index(&self, t: f64) -> usize {
        let raw = (t - self.t0) / self.spacing;
        let i = raw.round() as isize;
        debug_assert!((raw - i as f64).abs() < 1e-6, "t = {t} is off-grid");
        i.clamp(0, self.len as isize - 1) as usize
    }
}
