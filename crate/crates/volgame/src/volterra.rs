//! Linear Volterra integral equation solves, forward and backward resolvent
//! kernels, and the control-explicit state representation.
//!
//! Partial integrals from `t0` to a node use composite trapezoid weights
//! over the node prefix, which makes the discrete operator block
//! lower-triangular; solves are forward substitutions. Backward-time
//! equations reuse the same machinery under index reversal.
//!
//! The transform kernels `B1`, `C1` and the homogeneous part `y1` are
//! computed by solving their own defining Volterra equations, so the
//! control-explicit representation reproduces the direct solve to roundoff
//! rather than to quadrature accuracy. The tabulated resolvent kernels are
//! computed pointwise from the resolvent identity and carry the quadrature
//! order of the rule.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::grid::{Kernel2, TimeGrid};
use crate::linalg;

fn check_square(a: &Kernel2, grid: &TimeGrid, what: &str) -> Result<usize> {
    if a.rows() != a.cols() {
        return Err(Error::dim(format!("{what} must be square")));
    }
    if a.n_nodes() != grid.len() {
        return Err(Error::GridMismatch {
            context: format!("{what} tabulated on a different grid"),
        });
    }
    Ok(a.rows())
}

fn check_forcing(f: &[DVector<f64>], n_nodes: usize, dim: usize, what: &str) -> Result<()> {
    if f.len() != n_nodes {
        return Err(Error::LengthMismatch {
            expected: n_nodes,
            got: f.len(),
        });
    }
    if f.iter().any(|v| v.len() != dim) {
        return Err(Error::dim(format!("{what} entries must have length {dim}")));
    }
    Ok(())
}

/// Forward solve of `y = f + int_t0^t A y` by block forward substitution.
pub fn forward_solve(
    f: &[DVector<f64>],
    a: &Kernel2,
    grid: &TimeGrid,
) -> Result<Vec<DVector<f64>>> {
    let p = check_square(a, grid, "state kernel")?;
    let nn = grid.len();
    check_forcing(f, nn, p, "forcing")?;
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(nn);
    for i in 0..nn {
        let mut rhs = f[i].clone();
        for (j, yj) in y.iter().enumerate() {
            rhs += grid.forward_weight_of(i, j) * (a.at(i, j) * yj);
        }
        if i == 0 {
            y.push(rhs);
            continue;
        }
        let w_ii = grid.forward_weight_of(i, i);
        let step = DMatrix::identity(p, p) - w_ii * a.at(i, i);
        let yi = step.lu().solve(&rhs).ok_or(Error::SingularStep {
            node: i,
            context: "1 - w*A(t,t) block singular; grid too coarse".into(),
        })?;
        y.push(yi);
    }
    Ok(y)
}

/// Discretized solve of the state equation
/// `y(t) = y0(t) + int [A y + B u + C v]`.
pub fn solve_volterra_linear(
    y0: &[DVector<f64>],
    a: &Kernel2,
    b: &Kernel2,
    c: &Kernel2,
    u: &[DVector<f64>],
    v: &[DVector<f64>],
    grid: &TimeGrid,
) -> Result<Vec<DVector<f64>>> {
    let p = check_square(a, grid, "A")?;
    let nn = grid.len();
    if b.rows() != p || c.rows() != p {
        return Err(Error::dim("B and C must have p rows"));
    }
    if b.n_nodes() != nn || c.n_nodes() != nn {
        return Err(Error::GridMismatch {
            context: "B or C tabulated on a different grid".into(),
        });
    }
    check_forcing(y0, nn, p, "y0")?;
    check_forcing(u, nn, b.cols(), "u")?;
    check_forcing(v, nn, c.cols(), "v")?;
    let mut f: Vec<DVector<f64>> = Vec::with_capacity(nn);
    for i in 0..nn {
        let mut fi = y0[i].clone();
        for j in 0..=i {
            let w = grid.forward_weight_of(i, j);
            if w != 0.0 {
                fi += w * (b.at(i, j) * &u[j] + c.at(i, j) * &v[j]);
            }
        }
        f.push(fi);
    }
    forward_solve(&f, a, grid)
}

/// Pointwise resolvent kernel `S` of a direct kernel `A`, built row by row
/// from the resolvent identity
/// `S(t,s) = A(t,s) + int_s^t S(t,sigma) A(sigma,s) dsigma`,
/// so the identity holds at roundoff on the grid.
pub fn resolvent(a: &Kernel2, grid: &TimeGrid) -> Result<Kernel2> {
    let p = check_square(a, grid, "A")?;
    let nn = grid.len();
    let mut s = Kernel2::zeros(nn, p, p);
    let eye = DMatrix::identity(p, p);
    for i in 0..nn {
        s.set(i, i, a.at(i, i).clone());
        for j in (0..i).rev() {
            let w = grid.span_weights(j, i);
            let mut rhs = a.at(i, j).clone();
            for k in j + 1..=i {
                rhs += w[k - j] * (s.at(i, k) * a.at(k, j));
            }
            // S(i,j) (I - w_j A(j,j)) = rhs
            let step = &eye - w[0] * a.at(j, j);
            let sij = linalg::solve_right(&step, &rhs, "resolvent step").map_err(|_| {
                Error::SingularStep {
                    node: j,
                    context: "resolvent step block singular".into(),
                }
            })?;
            s.set(i, j, sij);
        }
    }
    Ok(s)
}

/// Largest residual of the resolvent identity over all node pairs, using
/// the same span quadrature as the construction.
pub fn resolvent_identity_residual(s: &Kernel2, a: &Kernel2, grid: &TimeGrid) -> f64 {
    let nn = grid.len();
    let mut worst: f64 = 0.0;
    for i in 0..nn {
        for j in 0..=i {
            let w = grid.span_weights(j, i);
            let mut res = s.at(i, j) - a.at(i, j);
            for k in j..=i {
                res -= w[k - j] * (s.at(i, k) * a.at(k, j));
            }
            worst = worst.max(res.abs().max());
        }
    }
    worst
}

/// Control-explicit representation of the state equation: `y1` is the
/// control-free trajectory and `B1`, `C1` map controls into the state,
/// `y(t) = y1(t) + int [B1 u + C1 v]`.
#[derive(Debug, Clone)]
pub struct ResolventTransform {
    pub y1: Vec<DVector<f64>>,
    pub b1: Kernel2,
    pub c1: Kernel2,
    pub s: Kernel2,
    grid: TimeGrid,
}

impl ResolventTransform {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Applies the representation to a control pair. Agrees with the direct
    /// solve to roundoff by construction.
    pub fn represent(&self, u: &[DVector<f64>], v: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let nn = self.grid.len();
        check_forcing(u, nn, self.b1.cols(), "u")?;
        check_forcing(v, nn, self.c1.cols(), "v")?;
        let mut y = Vec::with_capacity(nn);
        for i in 0..nn {
            let mut yi = self.y1[i].clone();
            for j in 0..=i {
                let w = self.grid.forward_weight_of(i, j);
                if w != 0.0 {
                    yi += w * (self.b1.at(i, j) * &u[j] + self.c1.at(i, j) * &v[j]);
                }
            }
            y.push(yi);
        }
        Ok(y)
    }

    /// The weighted control-to-state matrix `[c_ij B1(i,j)]` stacked over
    /// nodes, used for exact elimination in downstream solvers.
    pub fn control_matrix_u(&self) -> DMatrix<f64> {
        weighted_matrix(&self.b1, &self.grid)
    }

    pub fn control_matrix_v(&self) -> DMatrix<f64> {
        weighted_matrix(&self.c1, &self.grid)
    }
}

fn weighted_matrix(k: &Kernel2, grid: &TimeGrid) -> DMatrix<f64> {
    let nn = grid.len();
    let (r, c) = (k.rows(), k.cols());
    let mut m = DMatrix::zeros(nn * r, nn * c);
    for i in 0..nn {
        for j in 0..=i {
            let w = grid.forward_weight_of(i, j);
            if w != 0.0 {
                m.view_mut((i * r, j * c), (r, c)).copy_from(&(w * k.at(i, j)));
            }
        }
    }
    m
}

/// Solves the three defining Volterra equations of the representation.
pub fn transform(
    y0: &[DVector<f64>],
    a: &Kernel2,
    b: &Kernel2,
    c: &Kernel2,
    grid: &TimeGrid,
) -> Result<ResolventTransform> {
    let p = check_square(a, grid, "A")?;
    let nn = grid.len();
    if b.rows() != p || c.rows() != p || b.n_nodes() != nn || c.n_nodes() != nn {
        return Err(Error::dim("B and C must be p-row kernels on the grid"));
    }
    check_forcing(y0, nn, p, "y0")?;
    let y1 = forward_solve(y0, a, grid)?;
    let b1 = transformed_kernel(a, b, grid)?;
    let c1 = transformed_kernel(a, c, grid)?;
    let s = resolvent(a, grid)?;
    Ok(ResolventTransform {
        y1,
        b1,
        c1,
        s,
        grid: grid.clone(),
    })
}

/// Column-by-column forward solve of `B1(., s) = B(., s) + int A B1(., s)`,
/// stored against the forward quadrature weights so the representation is
/// exact on the grid.
fn transformed_kernel(a: &Kernel2, b: &Kernel2, grid: &TimeGrid) -> Result<Kernel2> {
    let nn = grid.len();
    let p = a.rows();
    let m = b.cols();
    let eye = DMatrix::identity(p, p);
    let mut out = Kernel2::zeros(nn, p, m);
    // Weighted column entries X_i = c_ij B1(i, j).
    let mut x: Vec<DMatrix<f64>> = vec![DMatrix::zeros(p, m); nn];
    for j in 0..nn {
        for item in x.iter_mut() {
            item.fill(0.0);
        }
        for i in j..nn {
            let c_ij = grid.forward_weight_of(i, j);
            let mut rhs = c_ij * b.at(i, j);
            for k in j..i {
                let c_ik = grid.forward_weight_of(i, k);
                if c_ik != 0.0 {
                    rhs += c_ik * (a.at(i, k) * &x[k]);
                }
            }
            let w_ii = grid.forward_weight_of(i, i);
            let xi = if w_ii == 0.0 {
                rhs
            } else {
                let step = &eye - w_ii * a.at(i, i);
                linalg::solve_matrix(&step, &rhs, "transform step").map_err(|_| {
                    Error::SingularStep {
                        node: i,
                        context: "transform step block singular".into(),
                    }
                })?
            };
            if c_ij != 0.0 {
                out.set(i, j, &xi / c_ij);
            } else {
                // Empty-integral row: the kernel value is unweighted there.
                out.set(i, j, b.at(i, j).clone());
            }
            x[i] = xi;
        }
    }
    Ok(out)
}

/// Direct backward substitution for the left Volterra equation
/// `psi(t) = phi(t) + int_t^t1 psi(s) A(s, t) ds` with row-vector unknowns.
pub fn solve_backward_left(
    phi: &[RowDVector<f64>],
    a: &Kernel2,
    grid: &TimeGrid,
) -> Result<Vec<RowDVector<f64>>> {
    let p = check_square(a, grid, "A")?;
    let nn = grid.len();
    if phi.len() != nn {
        return Err(Error::LengthMismatch {
            expected: nn,
            got: phi.len(),
        });
    }
    if phi.iter().any(|v| v.len() != p) {
        return Err(Error::dim("forcing rows must have length p"));
    }
    let eye = DMatrix::identity(p, p);
    let mut psi: Vec<RowDVector<f64>> = vec![RowDVector::zeros(p); nn];
    for k in (0..nn).rev() {
        let tail = grid.tail_weights(k);
        let mut rhs = phi[k].clone();
        for i in k + 1..nn {
            rhs += tail[i - k] * (&psi[i] * a.at(i, k));
        }
        let psi_k = if tail[0] == 0.0 {
            rhs
        } else {
            // psi_k (I - tau_kk A(k,k)) = rhs
            let step = &eye - tail[0] * a.at(k, k);
            linalg::solve_row(&step, &rhs, "backward step").map_err(|_| Error::SingularStep {
                node: k,
                context: "backward step block singular".into(),
            })?
        };
        psi[k] = psi_k;
    }
    Ok(psi)
}

/// Dense-assembly solve of the same backward equation, as an independent
/// algorithmic route for cross-checking the substitution solver.
pub fn solve_backward_left_dense(
    phi: &[RowDVector<f64>],
    a: &Kernel2,
    grid: &TimeGrid,
) -> Result<Vec<RowDVector<f64>>> {
    let p = check_square(a, grid, "A")?;
    let nn = grid.len();
    if phi.len() != nn {
        return Err(Error::LengthMismatch {
            expected: nn,
            got: phi.len(),
        });
    }
    let mut mat = DMatrix::identity(nn * p, nn * p);
    let mut rhs = DVector::zeros(nn * p);
    for k in 0..nn {
        let tail = grid.tail_weights(k);
        for i in k..nn {
            let block = tail[i - k] * a.at(i, k).transpose();
            let mut view = mat.view_mut((k * p, i * p), (p, p));
            view -= &block;
        }
        rhs.rows_mut(k * p, p).copy_from(&phi[k].transpose());
    }
    let x = linalg::solve(&mat, &rhs, "backward dense system")?;
    Ok((0..nn)
        .map(|k| x.rows(k * p, p).transpose())
        .collect())
}

/// Pointwise backward resolvent kernel `Sigma(s, t)`: the backward equation
/// with forcing `phi` has solution
/// `psi(t) = phi(t) + int_t^t1 phi(s) Sigma(s, t) ds`.
///
/// Computed by index reversal through the forward resolvent; entries with
/// `s < t` are zero.
pub fn backward_resolvent(a: &Kernel2, grid: &TimeGrid) -> Result<Kernel2> {
    let p = check_square(a, grid, "A")?;
    let nn = grid.len();
    let reversed = Kernel2::from_fn(nn, |r, rho| {
        a.at(nn - 1 - rho, nn - 1 - r).transpose()
    })?;
    let s_rev = resolvent(&reversed, grid)?;
    let mut sigma = Kernel2::zeros(nn, p, p);
    for i in 0..nn {
        for k in 0..=i {
            // Sigma(t_i, t_k) = S_rev(n-1-k, n-1-i)^T
            sigma.set(i, k, s_rev.at(nn - 1 - k, nn - 1 - i).transpose());
        }
    }
    Ok(sigma)
}

/// Applies the backward resolvent representation with tail quadrature.
/// Carries the quadrature order of the rule, unlike the two solve routes.
pub fn apply_backward_resolvent(
    sigma: &Kernel2,
    phi: &[RowDVector<f64>],
    grid: &TimeGrid,
) -> Result<Vec<RowDVector<f64>>> {
    let p = check_square(sigma, grid, "Sigma")?;
    let nn = grid.len();
    if phi.len() != nn || phi.iter().any(|v| v.len() != p) {
        return Err(Error::dim("forcing rows must match Sigma"));
    }
    let mut psi = Vec::with_capacity(nn);
    for k in 0..nn {
        let tail = grid.tail_weights(k);
        let mut acc = phi[k].clone();
        for i in k..nn {
            let w = tail[i - k];
            if w != 0.0 {
                acc += w * (&phi[i] * sigma.at(i, k));
            }
        }
        psi.push(acc);
    }
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::QuadratureRule;
    use nalgebra::dmatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n, QuadratureRule::Trapezoid).unwrap()
    }

    fn scalar_nodes(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Vec<DVector<f64>> {
        grid.nodes()
            .iter()
            .map(|&t| DVector::from_element(1, f(t)))
            .collect()
    }

    fn random_smooth_kernel(n: usize, seed: u64, scale: f64) -> Kernel2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-scale..scale)).collect();
        let g = unit_grid(n);
        Kernel2::from_fn(n, |i, j| {
            let (t, s) = (g.nodes()[i], g.nodes()[j]);
            dmatrix![c[0] + c[1] * t + c[2] * s + c[3] * t * s + c[4] * t * t + c[5] * s * s]
        })
        .unwrap()
    }

    #[test]
    fn zero_kernels_return_forcing() {
        let g = unit_grid(9);
        let z = Kernel2::zeros(9, 1, 1);
        let y0 = scalar_nodes(&g, |t| 1.0 + t);
        let u = scalar_nodes(&g, |_| 0.0);
        let y = solve_volterra_linear(&y0, &z, &z, &z, &u, &u, &g).unwrap();
        assert_eq!(y, y0);
    }

    #[test]
    fn exponential_growth_second_order() {
        // A == 1 makes y = e^t; trapezoid error should shrink 4x per doubling.
        let err = |n: usize| {
            let g = unit_grid(n);
            let a = Kernel2::constant(n, dmatrix![1.0]);
            let z = Kernel2::zeros(n, 1, 1);
            let y0 = scalar_nodes(&g, |_| 1.0);
            let zero = scalar_nodes(&g, |_| 0.0);
            let y = solve_volterra_linear(&y0, &a, &z, &z, &zero, &zero, &g).unwrap();
            g.nodes()
                .iter()
                .zip(&y)
                .map(|(&t, v)| (v[0] - t.exp()).abs())
                .fold(0.0_f64, f64::max)
        };
        let (e1, e2) = (err(33), err(65));
        assert!(e1 < 2e-3);
        assert!(e2 < e1 / 3.5, "e1={e1:.3e} e2={e2:.3e}");
    }

    #[test]
    fn pure_control_integral() {
        let g = unit_grid(11);
        let z = Kernel2::zeros(11, 1, 1);
        let b = Kernel2::constant(11, dmatrix![1.0]);
        let y0 = scalar_nodes(&g, |_| 0.0);
        let u = scalar_nodes(&g, |_| 1.0);
        let v = scalar_nodes(&g, |_| 0.0);
        let y = solve_volterra_linear(&y0, &z, &b, &z, &u, &v, &g).unwrap();
        for (i, &t) in g.nodes().iter().enumerate() {
            assert!((y[i][0] - t).abs() < 1e-14);
        }
    }

    #[test]
    fn resolvent_of_zero_kernel() {
        let g = unit_grid(7);
        let z = Kernel2::zeros(7, 1, 1);
        let s = resolvent(&z, &g).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(s.at(i, j)[(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn resolvent_matches_exponential() {
        for a_val in [-1.0, 0.5, 2.0] {
            let n = 129;
            let g = unit_grid(n);
            let a = Kernel2::constant(n, dmatrix![a_val]);
            let s = resolvent(&a, &g).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..=i {
                    let exact = a_val * (a_val * (g.nodes()[i] - g.nodes()[j])).exp();
                    worst = worst.max((s.at(i, j)[(0, 0)] - exact).abs());
                }
            }
            assert!(worst < 1e-3, "a={a_val}: worst={worst:.3e}");
        }
    }

    #[test]
    fn resolvent_identity_is_exact_on_grid() {
        let n = 33;
        let g = unit_grid(n);
        let a = random_smooth_kernel(n, 11, 1.5);
        let s = resolvent(&a, &g).unwrap();
        assert!(resolvent_identity_residual(&s, &a, &g) < 1e-12);
    }

    #[test]
    fn transform_with_zero_state_kernel() {
        let g = unit_grid(9);
        let z = Kernel2::zeros(9, 1, 1);
        let b = random_smooth_kernel(9, 3, 1.0);
        let c = random_smooth_kernel(9, 4, 1.0);
        let y0 = scalar_nodes(&g, |t| t * t);
        let tr = transform(&y0, &z, &b, &c, &g).unwrap();
        for i in 0..9 {
            assert!((tr.y1[i][0] - y0[i][0]).abs() < 1e-15);
            for j in 0..=i {
                assert!((tr.b1.at(i, j) - b.at(i, j)).abs().max() < 1e-13);
                assert!((tr.c1.at(i, j) - c.at(i, j)).abs().max() < 1e-13);
                assert_eq!(tr.s.at(i, j)[(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn transform_zero_control_kernel_stays_zero() {
        let g = unit_grid(9);
        let a = random_smooth_kernel(9, 5, 1.0);
        let z = Kernel2::zeros(9, 1, 1);
        let y0 = scalar_nodes(&g, |t| 1.0 - t);
        let tr = transform(&y0, &a, &z, &z, &g).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(tr.b1.at(i, j)[(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn transform_outputs_are_causal() {
        let n = 17;
        let g = unit_grid(n);
        let a = random_smooth_kernel(n, 51, 1.0);
        let b = random_smooth_kernel(n, 52, 1.0);
        let c = random_smooth_kernel(n, 53, 1.0);
        let y0 = scalar_nodes(&g, |t| 1.0 - t);
        let tr = transform(&y0, &a, &b, &c, &g).unwrap();
        assert!(tr.s.is_lower_triangular(0.0));
        assert!(tr.b1.is_lower_triangular(0.0));
        assert!(tr.c1.is_lower_triangular(0.0));
        assert!(resolvent_identity_residual(&tr.s, &a, &g) < 1e-12);
    }

    #[test]
    fn representation_matches_direct_solve() {
        let n = 17;
        let g = unit_grid(n);
        let a = random_smooth_kernel(n, 6, 1.2);
        let b = random_smooth_kernel(n, 7, 0.8);
        let c = random_smooth_kernel(n, 8, 0.6);
        let y0 = scalar_nodes(&g, |t| (1.0 + t).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let u: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_element(1, rng.gen_range(-1.0..1.0)))
            .collect();
        let v: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_element(1, rng.gen_range(-1.0..1.0)))
            .collect();
        let direct = solve_volterra_linear(&y0, &a, &b, &c, &u, &v, &g).unwrap();
        let tr = transform(&y0, &a, &b, &c, &g).unwrap();
        let rep = tr.represent(&u, &v).unwrap();
        for i in 0..n {
            assert!(
                (direct[i][0] - rep[i][0]).abs() < 1e-12,
                "node {i}: {} vs {}",
                direct[i][0],
                rep[i][0]
            );
        }
    }

    #[test]
    fn causality_of_forward_solve() {
        let n = 17;
        let g = unit_grid(n);
        let a = random_smooth_kernel(n, 21, 1.0);
        let b = random_smooth_kernel(n, 22, 1.0);
        let z = Kernel2::zeros(n, 1, 1);
        let y0 = scalar_nodes(&g, |t| t);
        let v = scalar_nodes(&g, |_| 0.0);
        let u1 = scalar_nodes(&g, |t| t.cos());
        let mut u2 = u1.clone();
        for item in u2.iter_mut().skip(9) {
            item[0] += 5.0;
        }
        let ya = solve_volterra_linear(&y0, &a, &b, &z, &u1, &v, &g).unwrap();
        let yb = solve_volterra_linear(&y0, &a, &b, &z, &u2, &v, &g).unwrap();
        for i in 0..9 {
            assert_eq!(ya[i][0].to_bits(), yb[i][0].to_bits());
        }
    }

    #[test]
    fn backward_resolvent_zero() {
        let g = unit_grid(7);
        let z = Kernel2::zeros(7, 1, 1);
        let sig = backward_resolvent(&z, &g).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(sig.at(i, j)[(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn backward_resolvent_matches_exponential() {
        let n = 129;
        let g = unit_grid(n);
        let a_val = 0.8;
        let a = Kernel2::constant(n, dmatrix![a_val]);
        let sig = backward_resolvent(&a, &g).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for k in 0..=i {
                let exact = a_val * (a_val * (g.nodes()[i] - g.nodes()[k])).exp();
                worst = worst.max((sig.at(i, k)[(0, 0)] - exact).abs());
            }
        }
        assert!(worst < 1e-3, "worst={worst:.3e}");
    }

    #[test]
    fn backward_two_routes_agree() {
        let n = 33;
        let g = unit_grid(n);
        let a = random_smooth_kernel(n, 31, 1.0);
        let phi: Vec<RowDVector<f64>> = g
            .nodes()
            .iter()
            .map(|&t| RowDVector::from_element(1, (2.0 * t).cos()))
            .collect();
        let subst = solve_backward_left(&phi, &a, &g).unwrap();
        let dense = solve_backward_left_dense(&phi, &a, &g).unwrap();
        for k in 0..n {
            assert!((subst[k][0] - dense[k][0]).abs() < 1e-11);
        }
    }

    #[test]
    fn backward_representation_converges_second_order() {
        let err = |n: usize| {
            let g = unit_grid(n);
            let a = random_smooth_kernel(n, 41, 1.0);
            let phi: Vec<RowDVector<f64>> = g
                .nodes()
                .iter()
                .map(|&t| RowDVector::from_element(1, 1.0 + t * t))
                .collect();
            let direct = solve_backward_left(&phi, &a, &g).unwrap();
            let sig = backward_resolvent(&a, &g).unwrap();
            let rep = apply_backward_resolvent(&sig, &phi, &g).unwrap();
            (0..n)
                .map(|k| (direct[k][0] - rep[k][0]).abs())
                .fold(0.0_f64, f64::max)
        };
        let (e1, e2) = (err(33), err(65));
        assert!(e2 < e1 / 3.0, "e1={e1:.3e} e2={e2:.3e}");
    }
}
