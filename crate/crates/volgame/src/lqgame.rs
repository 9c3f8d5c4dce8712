//! The linear-quadratic Volterra game: performance functional, reduction to
//! a block quadratic form in the controls, coercivity and accretivity
//! bounds, and the saddle-point solve.
//!
//! The reduction eliminates the state through the control-explicit
//! representation, so the assembled form reproduces the directly evaluated
//! functional (up to the control-independent offset) at roundoff. The
//! kernels of the assembled form are the product-quadrature discretizations
//! of the continuum expressions; lower limits `max(t, s)` arise from the
//! causality of the representation.
//!
//! Weight conventions: the Q-family prices the minimizing control and the
//! R-family the maximizing control; single-argument kernels (`Q1`, `R1`,
//! `P1`) act pointwise under one integral, two-argument kernels (`Q2`,
//! `R2`, `P2`) under the double integral.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Kernel1, Kernel2, TimeGrid};
use crate::linalg;
use crate::quadform::{
    BlockQuadraticForm, CertificationReport, ControlPair, DefinitenessReport, SolveOptions,
};
use crate::volterra;

/// Full statement of a linear-quadratic Volterra game.
#[derive(Debug, Clone)]
pub struct LQGameProblem {
    pub grid: TimeGrid,
    pub y0: Vec<DVector<f64>>,
    pub a: Kernel2,
    pub b: Kernel2,
    pub c: Kernel2,
    pub p0: DMatrix<f64>,
    pub p1: Kernel1,
    pub p2: Kernel2,
    pub q1: Kernel1,
    pub q2: Kernel2,
    pub r1: Kernel1,
    pub r2: Kernel2,
}

impl LQGameProblem {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn min_control_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn max_control_dim(&self) -> usize {
        self.c.cols()
    }

    /// Validates dimensions and the required symmetry of the weights.
    pub fn validate(&self) -> Result<()> {
        let p = self.state_dim();
        let m = self.min_control_dim();
        let n = self.max_control_dim();
        let nn = self.grid.len();
        if self.a.rows() != p || self.a.cols() != p {
            return Err(Error::dim("A must be square"));
        }
        if self.b.rows() != p || self.c.rows() != p {
            return Err(Error::dim("B and C must have p rows"));
        }
        for (len, what) in [
            (self.y0.len(), "y0"),
            (self.p1.len(), "P1"),
            (self.q1.len(), "Q1"),
            (self.r1.len(), "R1"),
        ] {
            if len != nn {
                return Err(Error::GridMismatch {
                    context: format!("{what} has {len} entries for {nn} nodes"),
                });
            }
        }
        for (k2, what) in [
            (&self.a, "A"),
            (&self.b, "B"),
            (&self.c, "C"),
            (&self.p2, "P2"),
            (&self.q2, "Q2"),
            (&self.r2, "R2"),
        ] {
            if k2.n_nodes() != nn {
                return Err(Error::GridMismatch {
                    context: format!("{what} tabulated on a different grid"),
                });
            }
        }
        if self.p0.nrows() != p
            || self.p0.ncols() != p
            || self.p1.rows() != p
            || self.p2.rows() != p
            || self.q1.rows() != m
            || self.q2.rows() != m
            || self.r1.rows() != n
            || self.r2.rows() != n
        {
            return Err(Error::dim("weight kernel dimensions are inconsistent"));
        }
        if self.y0.iter().any(|v| v.len() != p) {
            return Err(Error::dim("y0 entries must have length p"));
        }
        let defect = (&self.p0 - self.p0.transpose()).abs().max()
            .max(self.p1.symmetry_defect())
            .max(self.q1.symmetry_defect())
            .max(self.r1.symmetry_defect())
            .max(self.p2.symmetry_defect())
            .max(self.q2.symmetry_defect())
            .max(self.r2.symmetry_defect());
        if defect > 1e-9 {
            return Err(Error::NotSymmetric {
                context: format!("weight kernels violate symmetry by {defect:.3e}"),
            });
        }
        Ok(())
    }
}

/// Saddle outputs of a linear-quadratic game.
#[derive(Debug, Clone)]
pub struct LQSolution {
    pub u_star: Vec<DVector<f64>>,
    pub v_star: Vec<DVector<f64>>,
    pub y_star: Vec<DVector<f64>>,
    pub value: f64,
    pub certification: CertificationReport,
}

impl LQSolution {
    /// The definiteness reports of the two kernel pairs.
    pub fn reports(&self) -> (&DefinitenessReport, &DefinitenessReport) {
        (&self.certification.minimizer, &self.certification.maximizer)
    }
}

/// Performance functional evaluated by direct state solve and quadrature.
pub fn evaluate_j(
    problem: &LQGameProblem,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<f64> {
    problem.validate()?;
    let grid = &problem.grid;
    let y = volterra::solve_volterra_linear(
        &problem.y0,
        &problem.a,
        &problem.b,
        &problem.c,
        u,
        v,
        grid,
    )?;
    let nn = grid.len();
    let gw = grid.weights();
    let y_end = &y[nn - 1];
    let mut j = 0.5 * y_end.dot(&(&problem.p0 * y_end));
    for i in 0..nn {
        j += 0.5
            * gw[i]
            * (y[i].dot(&(problem.p1.at(i) * &y[i]))
                + u[i].dot(&(problem.q1.at(i) * &u[i]))
                + v[i].dot(&(problem.r1.at(i) * &v[i])));
    }
    for i in 0..nn {
        let mut row = 0.0;
        for jj in 0..nn {
            row += gw[jj]
                * (y[i].dot(&(problem.p2.at(i, jj) * &y[jj]))
                    + u[i].dot(&(problem.q2.at(i, jj) * &u[jj]))
                    + v[i].dot(&(problem.r2.at(i, jj) * &v[jj])));
        }
        j += 0.5 * gw[i] * row;
    }
    Ok(j)
}

/// The control-independent offset of the functional.
pub fn control_free_offset(problem: &LQGameProblem) -> Result<f64> {
    let nn = problem.grid.len();
    let zero_u = vec![DVector::zeros(problem.min_control_dim()); nn];
    let zero_v = vec![DVector::zeros(problem.max_control_dim()); nn];
    evaluate_j(problem, &zero_u, &zero_v)
}

/// Stacks the state cost into a single weighted symmetric matrix over the
/// node-indexed state space: terminal block plus nodewise and pairwise
/// running weights.
fn state_cost_matrix(problem: &LQGameProblem) -> DMatrix<f64> {
    let nn = problem.grid.len();
    let p = problem.state_dim();
    let gw = problem.grid.weights();
    let mut phat = DMatrix::zeros(nn * p, nn * p);
    let last = nn - 1;
    phat.view_mut((last * p, last * p), (p, p))
        .copy_from(&problem.p0);
    for i in 0..nn {
        let mut view = phat.view_mut((i * p, i * p), (p, p));
        view += gw[i] * problem.p1.at(i);
    }
    for i in 0..nn {
        for j in 0..nn {
            let mut view = phat.view_mut((i * p, j * p), (p, p));
            view += (gw[i] * gw[j]) * problem.p2.at(i, j);
        }
    }
    phat
}

/// Reduces the game to a block quadratic form in the controls.
pub fn assemble_form(problem: &LQGameProblem) -> Result<BlockQuadraticForm> {
    problem.validate()?;
    let grid = &problem.grid;
    let nn = grid.len();
    let m = problem.min_control_dim();
    let n = problem.max_control_dim();
    let gw = grid.weights();

    let tr = volterra::transform(&problem.y0, &problem.a, &problem.b, &problem.c, grid)?;
    let bw = tr.control_matrix_u();
    let cw = tr.control_matrix_v();
    let phat = state_cost_matrix(problem);

    let y1s = DVector::from_iterator(
        nn * problem.state_dim(),
        tr.y1.iter().flat_map(|v| v.iter().copied()),
    );
    let pb = &phat * &bw;
    let pc = &phat * &cw;
    let mut mbb = bw.transpose() * &pb;
    let mbc = bw.transpose() * &pc;
    let mut mcc = cw.transpose() * &pc;
    // The products are symmetric in exact arithmetic; pin it bitwise.
    mbb = 0.5 * (&mbb + mbb.transpose());
    mcc = 0.5 * (&mcc + mcc.transpose());
    let qb = bw.transpose() * (&phat * &y1s);
    let qc = cw.transpose() * (&phat * &y1s);

    let l11 = Kernel2::from_fn(nn, |i, j| {
        mbb.view((i * m, j * m), (m, m)).clone_owned() / (gw[i] * gw[j]) + problem.q2.at(i, j)
    })?;
    let l12 = Kernel2::from_fn(nn, |i, j| {
        mbc.view((i * m, j * n), (m, n)).clone_owned() / (gw[i] * gw[j])
    })?;
    let l22 = Kernel2::from_fn(nn, |i, j| {
        mcc.view((i * n, j * n), (n, n)).clone_owned() / (gw[i] * gw[j]) + problem.r2.at(i, j)
    })?;
    let q1: Vec<DVector<f64>> = (0..nn)
        .map(|i| qb.rows(i * m, m).clone_owned() / gw[i])
        .collect();
    let q2: Vec<DVector<f64>> = (0..nn)
        .map(|i| qc.rows(i * n, n).clone_owned() / gw[i])
        .collect();

    let defect = l11.symmetry_defect().max(l22.symmetry_defect());
    let scale = 1.0 + mbb.abs().max().max(mcc.abs().max());
    if defect > 1e-12 * scale {
        return Err(Error::AsymmetryDetected {
            context: format!("assembled L blocks have defect {defect:.3e}"),
        });
    }

    BlockQuadraticForm::new(
        grid.clone(),
        problem.q1.clone(),
        problem.r1.clone(),
        Kernel1::zeros(nn, m, n),
        l11,
        l22,
        l12,
        q1,
        q2,
    )
}

/// Extreme-eigenvalue bounds of the quadratic form built from a pointwise
/// kernel and a two-argument kernel, reported raw and clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub single: f64,
    pub double: f64,
    pub joint: f64,
    pub raw_single: f64,
    pub raw_double: f64,
    pub raw_joint: f64,
}

fn weighted_double_operator(kernel2: &Kernel2, grid: &TimeGrid) -> DMatrix<f64> {
    let nn = grid.len();
    let d = kernel2.rows();
    let gw = grid.weights();
    let mut op = DMatrix::zeros(nn * d, nn * d);
    for i in 0..nn {
        for j in 0..nn {
            let scale = (gw[i] * gw[j]).sqrt();
            op.view_mut((i * d, j * d), (d, d))
                .copy_from(&(scale * kernel2.at(i, j)));
        }
    }
    op
}

fn check_bounds_inputs(kernel1: &Kernel1, kernel2: &Kernel2, grid: &TimeGrid) -> Result<()> {
    if kernel1.rows() != kernel1.cols()
        || kernel2.rows() != kernel2.cols()
        || kernel1.rows() != kernel2.rows()
    {
        return Err(Error::dim("kernels must be square with matching size"));
    }
    if kernel1.len() != grid.len() || kernel2.n_nodes() != grid.len() {
        return Err(Error::GridMismatch {
            context: "kernels tabulated on a different grid".into(),
        });
    }
    let defect = kernel1.symmetry_defect().max(kernel2.symmetry_defect());
    if defect > 1e-9 {
        return Err(Error::NotSymmetric {
            context: format!("symmetry defect {defect:.3e}"),
        });
    }
    Ok(())
}

/// Coercivity constants: smallest eigenvalues of the single-integral term,
/// the double-integral term, and their sum.
pub fn coercivity_constants(
    kernel1: &Kernel1,
    kernel2: &Kernel2,
    grid: &TimeGrid,
) -> Result<SpectralBounds> {
    check_bounds_inputs(kernel1, kernel2, grid)?;
    let raw_single = kernel1
        .values()
        .iter()
        .map(linalg::min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let double_op = weighted_double_operator(kernel2, grid);
    let raw_double = linalg::min_eigenvalue(&double_op);
    let joint_op = crate::quadform::discretized_operator(kernel1, kernel2, grid);
    let raw_joint = linalg::min_eigenvalue(&joint_op);
    Ok(SpectralBounds {
        single: raw_single.max(0.0),
        double: raw_double.max(0.0),
        joint: raw_joint.max(0.0),
        raw_single,
        raw_double,
        raw_joint,
    })
}

/// Accretivity constants: negated largest eigenvalues of the same three
/// operators.
pub fn accretivity_constants(
    kernel1: &Kernel1,
    kernel2: &Kernel2,
    grid: &TimeGrid,
) -> Result<SpectralBounds> {
    check_bounds_inputs(kernel1, kernel2, grid)?;
    let raw_single = -kernel1
        .values()
        .iter()
        .map(linalg::max_eigenvalue)
        .fold(f64::NEG_INFINITY, f64::max);
    let double_op = weighted_double_operator(kernel2, grid);
    let raw_double = -linalg::max_eigenvalue(&double_op);
    let joint_op = crate::quadform::discretized_operator(kernel1, kernel2, grid);
    let raw_joint = -linalg::max_eigenvalue(&joint_op);
    Ok(SpectralBounds {
        single: raw_single.max(0.0),
        double: raw_double.max(0.0),
        joint: raw_joint.max(0.0),
        raw_single,
        raw_double,
        raw_joint,
    })
}

/// Assembles, certifies, and solves the game; returns saddle controls, the
/// induced trajectory, and the value.
pub fn solve_lq_game(problem: &LQGameProblem, opts: &SolveOptions) -> Result<LQSolution> {
    let form = assemble_form(problem)?;
    let cert = form.certify(opts)?;
    if !cert.certified && !opts.override_certification {
        return Err(Error::NotCertified(Box::new(cert)));
    }
    let mut solve_opts = opts.clone();
    solve_opts.override_certification = true;
    let w = form.saddle_point(&solve_opts)?;
    let y_star = volterra::solve_volterra_linear(
        &problem.y0,
        &problem.a,
        &problem.b,
        &problem.c,
        &w.w1,
        &w.w2,
        &problem.grid,
    )?;
    let value = evaluate_j(problem, &w.w1, &w.w2)?;
    Ok(LQSolution {
        u_star: w.w1,
        v_star: w.w2,
        y_star,
        value,
        certification: cert,
    })
}

/// Evaluates the assembled form at a control pair, for consistency checks
/// against [`evaluate_j`].
pub fn assembled_value(
    form: &BlockQuadraticForm,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<f64> {
    form.evaluate(&ControlPair {
        w1: u.to_vec(),
        w2: v.to_vec(),
    })
}
