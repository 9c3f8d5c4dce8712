//! Pursuit-evasion Volterra games with free terminal time: first-order
//! conditions for the general game, and the complete solver for the
//! linear-quadratic capture game.
//!
//! The capture time is the only nonlinear ingredient. The solver nests a
//! bracketed scalar root find on the horizon around a damped fixed point on
//! the terminal quantities `(Y, U, V, W, Psi)`; with the horizon and the
//! terminal multiplier frozen, one inner pass is a linear solve.
//!
//! Horizon-dependent derivatives of the transformed control kernels are
//! taken by one-sided finite differences over an auxiliary grid extended
//! one spacing beyond the horizon.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Kernel2, KernelSpec, QuadratureRule, TimeGrid};
use crate::linalg;
use crate::volterra::{self, ResolventTransform};

/// `t -> p-vector` trajectory data.
pub type TimeVecFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Linear-quadratic pursuit game with quadratic capture criterion.
#[derive(Clone)]
pub struct PursuitProblem {
    pub t0: f64,
    /// Node count used for every candidate horizon.
    pub nodes: usize,
    pub y0: TimeVecFn,
    pub y0_dot: TimeVecFn,
    pub a: KernelSpec,
    pub b: KernelSpec,
    pub c: KernelSpec,
    /// Capture matrix M, symmetric nonnegative definite.
    pub capture: DMatrix<f64>,
    /// Terminal cost matrix M0, symmetric.
    pub m0: DMatrix<f64>,
    /// Running state cost matrix M1, symmetric.
    pub m1: DMatrix<f64>,
    /// Minimizer control weight, positive definite.
    pub q: DMatrix<f64>,
    /// Maximizer control weight, negative definite.
    pub r: DMatrix<f64>,
    pub t1_bracket: (f64, f64),
}

impl std::fmt::Debug for PursuitProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PursuitProblem")
            .field("t0", &self.t0)
            .field("nodes", &self.nodes)
            .field("t1_bracket", &self.t1_bracket)
            .finish()
    }
}

impl PursuitProblem {
    pub fn state_dim(&self) -> usize {
        self.capture.nrows()
    }

    pub fn min_control_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn max_control_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.state_dim();
        for (m, what) in [
            (&self.capture, "M"),
            (&self.m0, "M0"),
            (&self.m1, "M1"),
        ] {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::dim(format!("{what} must be p x p")));
            }
            if (m - &m.transpose()).abs().max() > 1e-9 * (1.0 + m.abs().max()) {
                return Err(Error::NotSymmetric {
                    context: format!("{what} is not symmetric"),
                });
            }
        }
        linalg::symmetric_sqrt(&self.capture, 1e-12)?;
        if linalg::min_eigenvalue(&self.q) <= 0.0 {
            return Err(Error::SingularWeight {
                context: "Q must be positive definite".into(),
            });
        }
        if linalg::max_eigenvalue(&self.r) >= 0.0 {
            return Err(Error::SingularWeight {
                context: "R must be negative definite".into(),
            });
        }
        if !self.a.is_closed_form() || !self.b.is_closed_form() || !self.c.is_closed_form() {
            return Err(Error::GridMismatch {
                context: "pursuit kernels must be closed-form families".into(),
            });
        }
        let (ar, ac) = self.a.shape()?;
        let (br, _bc) = self.b.shape()?;
        let (cr, _cc) = self.c.shape()?;
        if ar != p || ac != p || br != p || cr != p {
            return Err(Error::dim("kernel shapes must match the state dimension"));
        }
        let (lo, hi) = self.t1_bracket;
        if !(lo > self.t0) || !(hi >= lo) {
            return Err(Error::InvalidInterval { t0: self.t0, t1: lo });
        }
        if self.nodes < 2 {
            return Err(Error::TooFewNodes { n: self.nodes });
        }
        Ok(())
    }
}

/// Terminal quantities of the free-time problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalState {
    pub t1: f64,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub psi_cap: RowDVector<f64>,
    pub omega: f64,
}

/// Named residuals of the necessary-conditions system, each re-evaluated
/// from problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PursuitResiduals {
    pub capture: f64,
    pub terminal_u: f64,
    pub terminal_v: f64,
    pub terminal_y: f64,
    pub terminal_w: f64,
    pub costate: f64,
    pub coupled: f64,
    pub stationarity_u: f64,
    pub stationarity_v: f64,
    pub multiplier: f64,
    pub state: f64,
}

impl PursuitResiduals {
    pub fn as_pairs(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("capture", self.capture),
            ("terminal_u", self.terminal_u),
            ("terminal_v", self.terminal_v),
            ("terminal_y", self.terminal_y),
            ("terminal_w", self.terminal_w),
            ("costate", self.costate),
            ("coupled", self.coupled),
            ("stationarity_u", self.stationarity_u),
            ("stationarity_v", self.stationarity_v),
            ("multiplier", self.multiplier),
            ("state", self.state),
        ]
    }

    pub fn max(&self) -> f64 {
        self.as_pairs()
            .iter()
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }
}

/// Converged solution of the pursuit game.
#[derive(Debug, Clone)]
pub struct PursuitSolution {
    pub terminal: TerminalState,
    pub psi: Vec<RowDVector<f64>>,
    pub u_star: Vec<DVector<f64>>,
    pub v_star: Vec<DVector<f64>>,
    pub y_star: Vec<DVector<f64>>,
    pub residuals: PursuitResiduals,
    pub grid: TimeGrid,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

/// Solver parameters.
#[derive(Debug, Clone)]
pub struct PursuitOptions {
    pub inner_damping: f64,
    pub inner_tolerance: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
    /// Accept a horizon when the signed capture functional falls below this.
    pub capture_tolerance: f64,
}

impl Default for PursuitOptions {
    fn default() -> Self {
        PursuitOptions {
            inner_damping: 0.5,
            inner_tolerance: 1e-11,
            inner_max_iter: 100,
            outer_max_iter: 60,
            capture_tolerance: 1e-10,
        }
    }
}

/// Problem data materialized on the grid of one candidate horizon, plus the
/// auxiliary grid used for horizon derivatives.
pub struct HorizonData {
    pub grid: TimeGrid,
    pub a: Kernel2,
    pub b: Kernel2,
    pub c: Kernel2,
    pub transform: ResolventTransform,
    pub y0_nodes: Vec<DVector<f64>>,
    aux_transform: ResolventTransform,
    aux_y0: Vec<DVector<f64>>,
}

/// Materializes kernels and transforms for the horizon `t1`.
pub fn discretize(problem: &PursuitProblem, t1: f64) -> Result<HorizonData> {
    problem.validate()?;
    let grid = TimeGrid::new(problem.t0, t1, problem.nodes, QuadratureRule::Trapezoid)?;
    let a = problem.a.materialize2(&grid)?;
    let b = problem.b.materialize2(&grid)?;
    let c = problem.c.materialize2(&grid)?;
    let y0_nodes: Vec<DVector<f64>> = grid.nodes().iter().map(|&t| (problem.y0)(t)).collect();
    let transform = volterra::transform(&y0_nodes, &a, &b, &c, &grid)?;
    let h = grid.spacing();
    let aux_grid = TimeGrid::new(
        problem.t0,
        t1 + h,
        problem.nodes + 1,
        QuadratureRule::Trapezoid,
    )?;
    let aux_a = problem.a.materialize2(&aux_grid)?;
    let aux_b = problem.b.materialize2(&aux_grid)?;
    let aux_c = problem.c.materialize2(&aux_grid)?;
    let aux_y0: Vec<DVector<f64>> = aux_grid.nodes().iter().map(|&t| (problem.y0)(t)).collect();
    let aux_transform = volterra::transform(&aux_y0, &aux_a, &aux_b, &aux_c, &aux_grid)?;
    Ok(HorizonData {
        grid,
        a,
        b,
        c,
        transform,
        y0_nodes,
        aux_transform,
        aux_y0,
    })
}

impl HorizonData {
    fn last(&self) -> usize {
        self.grid.len() - 1
    }

    /// Horizon derivative of the control-free trajectory at `t1`:
    /// the analytic derivative of the forcing plus a one-sided difference
    /// of the integral part.
    pub fn y1_dot_at_t1(&self, problem: &PursuitProblem) -> DVector<f64> {
        let n = self.last();
        let h = self.grid.spacing();
        let integral_main = &self.transform.y1[n] - &self.y0_nodes[n];
        let integral_aux = &self.aux_transform.y1[n + 1] - &self.aux_y0[n + 1];
        (problem.y0_dot)(self.grid.t1()) + (integral_aux - integral_main) / h
    }

    /// One-sided horizon derivative of a transformed control kernel row.
    fn kernel_t1_derivative(&self, which_u: bool, j: usize) -> DMatrix<f64> {
        let n = self.last();
        let h = self.grid.spacing();
        let (main, aux) = if which_u {
            (&self.transform.b1, &self.aux_transform.b1)
        } else {
            (&self.transform.c1, &self.aux_transform.c1)
        };
        (aux.at(n + 1, j) - main.at(n, j)) / h
    }
}

/// The capture criterion value `0.5 y^T M y`.
pub fn capture_residual(problem: &PursuitProblem, y_t1: &DVector<f64>) -> f64 {
    0.5 * y_t1.dot(&(&problem.capture * y_t1))
}

/// Terminal costate multiplier from the variational capture condition, a
/// scalar multiple of the covector `Y^T (M + M0)`.
pub fn terminal_multiplier(
    problem: &PursuitProblem,
    terminal: &TerminalState,
) -> Result<RowDVector<f64>> {
    let y = &terminal.y;
    let w = &terminal.w;
    let mw = &problem.capture * w;
    let denom = y.dot(&mw);
    let bracket = y.dot(&(&problem.m0 * w))
        + 0.5
            * (y.dot(&(&problem.m1 * y))
                + terminal.u.dot(&(&problem.q * &terminal.u))
                + terminal.v.dot(&(&problem.r * &terminal.v)));
    let scale = 1.0 + y.norm() * mw.norm();
    if denom.abs() < 1e-13 * scale {
        if bracket.abs() < 1e-13 * scale {
            // Homogeneous degenerate case: zero multiplier is the limit.
            return Ok(RowDVector::zeros(problem.state_dim()));
        }
        return Err(Error::TransversalityViolated { value: denom });
    }
    let covector = (y.transpose() * (&problem.capture + &problem.m0)).clone_owned();
    Ok(-(bracket / denom) * covector)
}

/// Backward Volterra solve of the costate equation at a frozen trajectory.
pub fn costate_solve(
    problem: &PursuitProblem,
    data: &HorizonData,
    psi_cap: &RowDVector<f64>,
    y: &[DVector<f64>],
) -> Result<Vec<RowDVector<f64>>> {
    let n = data.last();
    let phi: Vec<RowDVector<f64>> = (0..=n)
        .map(|k| {
            (y[k].transpose() * &problem.m1 + psi_cap * data.a.at(n, k)).clone_owned()
        })
        .collect();
    volterra::solve_backward_left(&phi, &data.a, &data.grid)
}

/// Saddle controls recovered from the costate pair.
pub fn controls_from_costate(
    problem: &PursuitProblem,
    data: &HorizonData,
    psi: &[RowDVector<f64>],
    psi_cap: &RowDVector<f64>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let n = data.last();
    let q_lu = problem.q.clone().lu();
    let r_lu = problem.r.clone().lu();
    let mut u = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let tail = data.grid.tail_weights(j);
        let mut iu: RowDVector<f64> = psi_cap * data.b.at(n, j);
        let mut iv: RowDVector<f64> = psi_cap * data.c.at(n, j);
        for i in j..=n {
            let w = tail[i - j];
            if w != 0.0 {
                iu += w * (&psi[i] * data.b.at(i, j));
                iv += w * (&psi[i] * data.c.at(i, j));
            }
        }
        let uj = q_lu
            .solve(&iu.transpose())
            .ok_or(Error::SingularWeight {
                context: "Q singular in control recovery".into(),
            })?;
        let vj = r_lu
            .solve(&iv.transpose())
            .ok_or(Error::SingularWeight {
                context: "R singular in control recovery".into(),
            })?;
        u.push(-uj);
        v.push(-vj);
    }
    Ok((u, v))
}

/// Linear maps from the stacked costate to the stacked controls, plus the
/// multiplier-driven offsets.
fn control_maps(
    problem: &PursuitProblem,
    data: &HorizonData,
    psi_cap: &RowDVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    let n = data.last();
    let nn = n + 1;
    let p = problem.state_dim();
    let m = problem.min_control_dim();
    let nv = problem.max_control_dim();
    let q_inv = problem
        .q
        .clone()
        .try_inverse()
        .ok_or(Error::SingularWeight {
            context: "Q not invertible".into(),
        })?;
    let r_inv = problem
        .r
        .clone()
        .try_inverse()
        .ok_or(Error::SingularWeight {
            context: "R not invertible".into(),
        })?;
    let mut u_map = DMatrix::zeros(nn * m, nn * p);
    let mut v_map = DMatrix::zeros(nn * nv, nn * p);
    let mut u_off = DVector::zeros(nn * m);
    let mut v_off = DVector::zeros(nn * nv);
    for j in 0..nn {
        let tail = data.grid.tail_weights(j);
        for i in j..nn {
            let w = tail[i - j];
            if w != 0.0 {
                let bu = -(&q_inv) * data.b.at(i, j).transpose() * w;
                let bv = -(&r_inv) * data.c.at(i, j).transpose() * w;
                u_map.view_mut((j * m, i * p), (m, p)).copy_from(&bu);
                v_map.view_mut((j * nv, i * p), (nv, p)).copy_from(&bv);
            }
        }
        let off_u = -(&q_inv) * (data.b.at(n, j).transpose() * psi_cap.transpose());
        let off_v = -(&r_inv) * (data.c.at(n, j).transpose() * psi_cap.transpose());
        u_off.rows_mut(j * m, m).copy_from(&off_u);
        v_off.rows_mut(j * nv, nv).copy_from(&off_v);
    }
    Ok((u_map, u_off, v_map, v_off))
}

/// Dense solve of the state-eliminated costate equation for a given
/// terminal multiplier. Built by exact elimination of the discrete state
/// through the control-explicit representation, so it agrees with
/// [`costate_solve`] on the induced trajectory at roundoff.
pub fn coupled_costate_solve(
    problem: &PursuitProblem,
    data: &HorizonData,
    psi_cap: &RowDVector<f64>,
) -> Result<Vec<RowDVector<f64>>> {
    let n = data.last();
    let nn = n + 1;
    let p = problem.state_dim();
    let (u_map, u_off, v_map, v_off) = control_maps(problem, data, psi_cap)?;
    let bw = data.transform.control_matrix_u();
    let cw = data.transform.control_matrix_v();
    let y1s = DVector::from_iterator(
        nn * p,
        data.transform.y1.iter().flat_map(|v| v.iter().copied()),
    );
    let y_map = &bw * &u_map + &cw * &v_map;
    let y_const = &y1s + &bw * &u_off + &cw * &v_off;
    // psi_k^T - sum_i tau_ki A(t_i, t_k)^T psi_i^T - M1^T y_k(psi) = M1^T y_const_k + A(t1,t_k)^T Psi^T
    let mut mat = DMatrix::identity(nn * p, nn * p);
    let mut rhs = DVector::zeros(nn * p);
    let m1t = problem.m1.transpose();
    for k in 0..nn {
        let tail = data.grid.tail_weights(k);
        for i in k..nn {
            let w = tail[i - k];
            if w != 0.0 {
                let block = w * data.a.at(i, k).transpose();
                let mut view = mat.view_mut((k * p, i * p), (p, p));
                view -= &block;
            }
        }
        let coupling = &m1t * y_map.view((k * p, 0), (p, nn * p));
        let mut view = mat.view_mut((k * p, 0), (p, nn * p));
        view -= &coupling;
        let rk = &m1t * y_const.rows(k * p, p)
            + data.a.at(n, k).transpose() * psi_cap.transpose();
        rhs.rows_mut(k * p, p).copy_from(&rk);
    }
    let x = linalg::solve(&mat, &rhs, "coupled costate system")?;
    Ok((0..nn).map(|k| x.rows(k * p, p).transpose()).collect())
}

/// The four terminal defect norms of the fixed-point system.
pub fn terminal_residuals(
    problem: &PursuitProblem,
    data: &HorizonData,
    terminal: &TerminalState,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<(f64, f64, f64, f64)> {
    let (u_t1, v_t1, y_t1, w_t1) = terminal_targets(problem, data, terminal, u, v)?;
    Ok((
        (&terminal.u - u_t1).abs().max(),
        (&terminal.v - v_t1).abs().max(),
        (&terminal.y - y_t1).abs().max(),
        (&terminal.w - w_t1).abs().max(),
    ))
}

/// Right-hand sides of the four terminal equations.
fn terminal_targets(
    problem: &PursuitProblem,
    data: &HorizonData,
    terminal: &TerminalState,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = data.last();
    let psi_cap = &terminal.psi_cap;
    let u_t1 = -problem
        .q
        .clone()
        .lu()
        .solve(&(data.b.at(n, n).transpose() * psi_cap.transpose()))
        .ok_or(Error::SingularWeight {
            context: "Q not invertible".into(),
        })?;
    let v_t1 = -problem
        .r
        .clone()
        .lu()
        .solve(&(data.c.at(n, n).transpose() * psi_cap.transpose()))
        .ok_or(Error::SingularWeight {
            context: "R not invertible".into(),
        })?;
    let y_rep = data.transform.represent(u, v)?;
    let y_t1 = y_rep[n].clone();
    let mut w_t1 = data.y1_dot_at_t1(problem)
        + data.transform.b1.at(n, n) * &terminal.u
        + data.transform.c1.at(n, n) * &terminal.v;
    for j in 0..=n {
        let w = data.grid.weights()[j];
        w_t1 += w
            * (data.kernel_t1_derivative(true, j) * &u[j]
                + data.kernel_t1_derivative(false, j) * &v[j]);
    }
    Ok((u_t1, v_t1, y_t1, w_t1))
}

/// Full residual suite, re-evaluated from raw problem data.
pub fn evaluate_residuals(
    problem: &PursuitProblem,
    data: &HorizonData,
    terminal: &TerminalState,
    psi: &[RowDVector<f64>],
    u: &[DVector<f64>],
    v: &[DVector<f64>],
    y: &[DVector<f64>],
) -> Result<PursuitResiduals> {
    let n = data.last();
    let sqrt_m = linalg::symmetric_sqrt(&problem.capture, 1e-12)?;
    let capture = (&sqrt_m * &terminal.y).norm() / terminal.y.norm().max(1.0);
    let (terminal_u, terminal_v, terminal_y, terminal_w) =
        terminal_residuals(problem, data, terminal, u, v)?;
    // Costate defect against the backward equation.
    let mut costate: f64 = 0.0;
    for k in 0..=n {
        let tail = data.grid.tail_weights(k);
        let mut rhs = (y[k].transpose() * &problem.m1 + &terminal.psi_cap * data.a.at(n, k))
            .clone_owned();
        for i in k..=n {
            let w = tail[i - k];
            if w != 0.0 {
                rhs += w * (&psi[i] * data.a.at(i, k));
            }
        }
        costate = costate.max((&psi[k] - rhs).abs().max());
    }
    let coupled_psi = coupled_costate_solve(problem, data, &terminal.psi_cap)?;
    let coupled = (0..=n)
        .map(|k| (&psi[k] - &coupled_psi[k]).abs().max())
        .fold(0.0_f64, f64::max);
    let (u_chk, v_chk) = controls_from_costate(problem, data, psi, &terminal.psi_cap)?;
    let stationarity_u = (0..=n)
        .map(|k| (&u[k] - &u_chk[k]).abs().max())
        .fold(0.0_f64, f64::max);
    let stationarity_v = (0..=n)
        .map(|k| (&v[k] - &v_chk[k]).abs().max())
        .fold(0.0_f64, f64::max);
    let multiplier = match terminal_multiplier(problem, terminal) {
        Ok(target) => (&terminal.psi_cap - target).abs().max(),
        Err(_) => f64::INFINITY,
    };
    let direct = volterra::solve_volterra_linear(
        &data.y0_nodes,
        &data.a,
        &data.b,
        &data.c,
        u,
        v,
        &data.grid,
    )?;
    let state = (0..=n)
        .map(|k| (&y[k] - &direct[k]).abs().max())
        .fold(0.0_f64, f64::max);
    Ok(PursuitResiduals {
        capture,
        terminal_u,
        terminal_v,
        terminal_y,
        terminal_w,
        costate,
        coupled,
        stationarity_u,
        stationarity_v,
        multiplier,
        state,
    })
}

struct InnerState {
    terminal: TerminalState,
    psi: Vec<RowDVector<f64>>,
    u: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    iterations: usize,
}

/// Damped fixed point on `(Y, U, V, W, Psi)` at a frozen horizon.
fn inner_solve(
    problem: &PursuitProblem,
    data: &HorizonData,
    opts: &PursuitOptions,
) -> Result<InnerState> {
    let n = data.last();
    let p = problem.state_dim();
    let m = problem.min_control_dim();
    let nv = problem.max_control_dim();
    let mut terminal = TerminalState {
        t1: data.grid.t1(),
        y: data.transform.y1[n].clone(),
        u: DVector::zeros(m),
        v: DVector::zeros(nv),
        w: data.y1_dot_at_t1(problem),
        psi_cap: RowDVector::zeros(p),
        omega: 0.0,
    };
    let mut psi;
    let mut u;
    let mut v;
    let mut y;
    let d = opts.inner_damping;
    let mut last_change = f64::INFINITY;
    for iter in 1..=opts.inner_max_iter {
        let psi_cap_new = terminal_multiplier(problem, &terminal)?;
        let psi_cap = ((1.0 - d) * &terminal.psi_cap + d * psi_cap_new).clone_owned();
        let psi_new = coupled_costate_solve(problem, data, &psi_cap)?;
        let (u_new, v_new) = controls_from_costate(problem, data, &psi_new, &psi_cap)?;
        let y_new = data.transform.represent(&u_new, &v_new)?;
        let probe = TerminalState {
            psi_cap: psi_cap.clone(),
            ..terminal.clone()
        };
        let (u_t1, v_t1, y_t1, w_t1) = terminal_targets(problem, data, &probe, &u_new, &v_new)?;
        let next = TerminalState {
            t1: terminal.t1,
            y: (1.0 - d) * &terminal.y + d * y_t1,
            u: (1.0 - d) * &terminal.u + d * u_t1,
            v: (1.0 - d) * &terminal.v + d * v_t1,
            w: (1.0 - d) * &terminal.w + d * w_t1,
            psi_cap,
            omega: 0.0,
        };
        let change = (&next.y - &terminal.y)
            .abs()
            .max()
            .max((&next.u - &terminal.u).abs().max())
            .max((&next.v - &terminal.v).abs().max())
            .max((&next.w - &terminal.w).abs().max())
            .max((&next.psi_cap - &terminal.psi_cap).abs().max());
        terminal = next;
        psi = psi_new;
        u = u_new;
        v = v_new;
        y = y_new;
        let scale = 1.0 + terminal.y.norm() + terminal.psi_cap.norm();
        last_change = change / scale;
        if last_change < opts.inner_tolerance {
            terminal.omega = eliminate_omega(problem, &terminal);
            return Ok(InnerState {
                terminal,
                psi,
                u,
                v,
                y,
                iterations: iter,
            });
        }
    }
    Err(Error::InnerNoConvergence {
        t1: data.grid.t1(),
        residual: last_change,
    })
}

/// The scalar multiplier of the variational capture condition, zero in the
/// degenerate homogeneous case.
fn eliminate_omega(problem: &PursuitProblem, terminal: &TerminalState) -> f64 {
    let y = &terminal.y;
    let denom = y.dot(&(&problem.capture * &terminal.w));
    let numer = y.dot(&(&problem.m0 * &terminal.w))
        + 0.5
            * (y.dot(&(&problem.m1 * y))
                + terminal.u.dot(&(&problem.q * &terminal.u))
                + terminal.v.dot(&(&problem.r * &terminal.v)));
    if denom.abs() < 1e-300 {
        0.0
    } else {
        -numer / denom
    }
}

/// Signed capture functional used by the outer root find: the component of
/// `M^{1/2} y(t1)` along the leading eigenvector of M.
fn signed_capture(problem: &PursuitProblem, y_t1: &DVector<f64>) -> f64 {
    let eig = (0.5 * (&problem.capture + problem.capture.transpose())).symmetric_eigen();
    let mut best = 0;
    for i in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let dir = eig.eigenvectors.column(best);
    eig.eigenvalues[best].max(0.0).sqrt() * dir.dot(y_t1)
}

/// Nested solver: bracketed root find on the capture time around the inner
/// fixed point.
pub fn solve_pursuit(problem: &PursuitProblem, opts: &PursuitOptions) -> Result<PursuitSolution> {
    problem.validate()?;
    let (t_lo, t_hi) = problem.t1_bracket;
    let mut outer = 0;
    let mut evaluate = |t1: f64| -> Result<(f64, HorizonData, InnerState)> {
        outer += 1;
        let data = discretize(problem, t1)?;
        let inner = inner_solve(problem, &data, opts)?;
        let r = signed_capture(problem, &inner.terminal.y);
        Ok((r, data, inner))
    };
    let finish = |data: HorizonData,
                  inner: InnerState,
                  outer_iterations: usize|
     -> Result<PursuitSolution> {
        let residuals = evaluate_residuals(
            problem,
            &data,
            &inner.terminal,
            &inner.psi,
            &inner.u,
            &inner.v,
            &inner.y,
        )?;
        Ok(PursuitSolution {
            terminal: inner.terminal,
            psi: inner.psi,
            u_star: inner.u,
            v_star: inner.v,
            y_star: inner.y,
            residuals,
            grid: data.grid,
            outer_iterations,
            inner_iterations: inner.iterations,
        })
    };

    let (r_lo, data_lo, inner_lo) = evaluate(t_lo)?;
    let cap_scale = |inner: &InnerState| inner.terminal.y.norm().max(1.0);
    if r_lo.abs() <= opts.capture_tolerance * cap_scale(&inner_lo) {
        return finish(data_lo, inner_lo, outer);
    }
    let (r_hi, data_hi, inner_hi) = evaluate(t_hi)?;
    if r_hi.abs() <= opts.capture_tolerance * cap_scale(&inner_hi) && r_lo * r_hi > 0.0 {
        return finish(data_hi, inner_hi, outer);
    }
    if r_lo * r_hi > 0.0 {
        return Err(Error::CaptureNotBracketed {
            t_lo,
            t_hi,
            r_lo,
            r_hi,
        });
    }
    let mut a = (t_lo, r_lo);
    let mut b = (t_hi, r_hi);
    let mut best: Option<(f64, HorizonData, InnerState)> = None;
    for _ in 0..opts.outer_max_iter {
        // Secant candidate, bisection fallback.
        let secant = b.0 - b.1 * (b.0 - a.0) / (b.1 - a.1);
        let width = b.0 - a.0;
        let inside = secant.is_finite()
            && secant > a.0 + 1e-3 * width
            && secant < b.0 - 1e-3 * width;
        let t_c = if inside { secant } else { 0.5 * (a.0 + b.0) };
        let (r_c, data_c, inner_c) = evaluate(t_c)?;
        let done = r_c.abs() <= opts.capture_tolerance * cap_scale(&inner_c)
            || width < 1e-13 * b.0.abs().max(1.0);
        if r_c * a.1 <= 0.0 {
            b = (t_c, r_c);
        } else {
            a = (t_c, r_c);
        }
        let better = match &best {
            None => true,
            Some((r_b, _, _)) => r_c.abs() < r_b.abs(),
        };
        if better {
            best = Some((r_c, data_c, inner_c));
        }
        if done {
            let (_, data, inner) = best.expect("at least one evaluation");
            return finish(data, inner, outer);
        }
    }
    let (_, data, inner) = best.expect("at least one evaluation");
    let sol = finish(data, inner, outer)?;
    Err(Error::NoConvergence {
        iterations: opts.outer_max_iter,
        residual: sol.residuals.capture,
    })
}

/// General free-time game data: model functions and the gradients needed to
/// eliminate the terminal multipliers.
#[derive(Clone)]
pub struct GeneralGameModel {
    /// `f(t_outer, t, y, u, v)`.
    pub flow: Arc<
        dyn Fn(f64, f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>
            + Send
            + Sync,
    >,
    /// Terminal cost `F(t1, Y, U, V)`.
    pub terminal_cost:
        Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>,
    pub terminal_cost_grad_y: Arc<
        dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> RowDVector<f64>
            + Send
            + Sync,
    >,
    pub terminal_cost_dt1:
        Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>,
    /// Running cost `G(t, y, u, v)`.
    pub running_cost:
        Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>,
    /// Capture function `Phi(t1, Y, U, V)`.
    pub capture:
        Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>,
    pub capture_grad_y: Arc<
        dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> RowDVector<f64>
            + Send
            + Sync,
    >,
    pub capture_dt1:
        Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>,
}

/// The quadratic specialization of the general model.
pub fn quadratic_model(problem: &PursuitProblem) -> GeneralGameModel {
    let a = problem.a.clone();
    let b = problem.b.clone();
    let c = problem.c.clone();
    let m0 = problem.m0.clone();
    let m0g = problem.m0.clone();
    let m1 = problem.m1.clone();
    let q = problem.q.clone();
    let r = problem.r.clone();
    let mcap = problem.capture.clone();
    let mcap_g = problem.capture.clone();
    GeneralGameModel {
        flow: Arc::new(move |t_out, t, y, u, v| {
            a.eval2(t_out, t).expect("closed form") * y
                + b.eval2(t_out, t).expect("closed form") * u
                + c.eval2(t_out, t).expect("closed form") * v
        }),
        terminal_cost: Arc::new(move |_, yv, _, _| 0.5 * yv.dot(&(&m0 * yv))),
        terminal_cost_grad_y: Arc::new(move |_, yv, _, _| (yv.transpose() * &m0g).clone_owned()),
        terminal_cost_dt1: Arc::new(|_, _, _, _| 0.0),
        running_cost: Arc::new(move |_, yv, uv, vv| {
            0.5 * (yv.dot(&(&m1 * yv)) + uv.dot(&(&q * uv)) + vv.dot(&(&r * vv)))
        }),
        capture: Arc::new(move |_, yv, _, _| 0.5 * yv.dot(&(&mcap * yv))),
        capture_grad_y: Arc::new(move |_, yv, _, _| (yv.transpose() * &mcap_g).clone_owned()),
        capture_dt1: Arc::new(|_, _, _, _| 0.0),
    }
}

/// Hamiltonian of the general free-time game at a grid node.
#[allow(clippy::too_many_arguments)]
pub fn general_hamiltonian(
    model: &GeneralGameModel,
    grid: &TimeGrid,
    t: f64,
    t1: f64,
    y: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    terminal_y: &DVector<f64>,
    terminal_u: &DVector<f64>,
    terminal_v: &DVector<f64>,
    psi: &[RowDVector<f64>],
    psi_cap: &RowDVector<f64>,
    omega: f64,
) -> Result<f64> {
    let k = grid.node_index(t)?;
    let mut h = (model.terminal_cost)(t1, terminal_y, terminal_u, terminal_v)
        + (model.running_cost)(t, y, u, v)
        + omega * (model.capture)(t1, terminal_y, terminal_u, terminal_v)
        + (psi_cap * (model.flow)(t1, t, y, u, v))[0];
    let tail = grid.tail_weights(k);
    for i in k..grid.len() {
        let w = tail[i - k];
        if w != 0.0 {
            h += w * (&psi[i] * (model.flow)(grid.nodes()[i], t, y, u, v))[0];
        }
    }
    Ok(h)
}

/// Eliminates the multipliers `(omega, Psi)` from the variational capture
/// condition and the terminal-state stationarity.
pub fn eliminate_multipliers(
    model: &GeneralGameModel,
    t1: f64,
    terminal_y: &DVector<f64>,
    terminal_u: &DVector<f64>,
    terminal_v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(f64, RowDVector<f64>)> {
    let grad_phi = (model.capture_grad_y)(t1, terminal_y, terminal_u, terminal_v);
    let dphi = (&grad_phi * w)[0] + (model.capture_dt1)(t1, terminal_y, terminal_u, terminal_v);
    let grad_f = (model.terminal_cost_grad_y)(t1, terminal_y, terminal_u, terminal_v);
    let numer = (&grad_f * w)[0]
        + (model.terminal_cost_dt1)(t1, terminal_y, terminal_u, terminal_v)
        + (model.running_cost)(t1, terminal_y, terminal_u, terminal_v);
    let scale = 1.0 + grad_phi.norm() * w.norm();
    if dphi.abs() < 1e-13 * scale {
        return Err(Error::TransversalityViolated { value: dphi });
    }
    let omega = -numer / dphi;
    let psi_cap = omega * grad_phi + grad_f;
    Ok((omega, psi_cap))
}
