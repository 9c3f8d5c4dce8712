//! Quadratic functionals over discretized L^2, best responses, saddle
//! points, and joint-definiteness certification of kernel pairs.
//!
//! A form is the data (K, L, q) of
//!
//! ```text
//! E(w1, w2) = 1/2 int w^T K w + 1/2 int int w^T L w + int q^T w
//! ```
//!
//! with w = (w1, w2) partitioned between the minimizing and maximizing
//! player. The discretized stationarity system is a dense linear system
//! (Fredholm second kind under the grid quadrature); definiteness of the
//! kernel pairs (K11, L11) and (K22, L22) is certified spectrally on the
//! weighted symmetric operator `D + W^{1/2} L W^{1/2}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Kernel1, Kernel2, TimeGrid};
use crate::linalg;

/// Options shared by the certified solvers.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Residual tolerance for post-solve checks.
    pub residual_tol: f64,
    /// Margin an extreme eigenvalue must clear for a definiteness verdict.
    pub definiteness_tol: f64,
    /// Nodewise condition-number bound on the pointwise blocks.
    pub max_condition: f64,
    /// Skip certification and solve anyway.
    pub override_certification: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            residual_tol: 1e-8,
            definiteness_tol: 1e-9,
            max_condition: 1e12,
            override_certification: false,
        }
    }
}

/// Which sign of joint definiteness a check certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefinitenessSign {
    Positive,
    Negative,
}

/// How a definiteness verdict was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefinitenessMethod {
    Spectral,
    BlockM,
    MercerSample,
}

/// Outcome of a joint-definiteness check on one kernel pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitenessReport {
    pub jointly_pd_11: bool,
    pub jointly_nd_22: bool,
    pub min_eig_11: f64,
    pub max_eig_22: f64,
    pub method: DefinitenessMethod,
}

impl DefinitenessReport {
    pub fn satisfies(&self, sign: DefinitenessSign) -> bool {
        match sign {
            DefinitenessSign::Positive => self.jointly_pd_11,
            DefinitenessSign::Negative => self.jointly_nd_22,
        }
    }
}

/// Full certification outcome for a block form: definiteness of both kernel
/// pairs plus the nodewise invertibility bound on the pointwise blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub minimizer: DefinitenessReport,
    pub maximizer: DefinitenessReport,
    pub worst_condition: f64,
    pub max_condition: f64,
    pub certified: bool,
}

impl std::fmt::Display for CertificationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "min-side eig {:.3e} (pd: {}), max-side eig {:.3e} (nd: {}), worst cond {:.3e}",
            self.minimizer.min_eig_11,
            self.minimizer.jointly_pd_11,
            self.maximizer.max_eig_22,
            self.maximizer.jointly_nd_22,
            self.worst_condition
        )
    }
}

/// A control trajectory pair on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub w1: Vec<DVector<f64>>,
    pub w2: Vec<DVector<f64>>,
}

impl ControlPair {
    pub fn zeros(n_nodes: usize, m: usize, n: usize) -> Self {
        ControlPair {
            w1: vec![DVector::zeros(m); n_nodes],
            w2: vec![DVector::zeros(n); n_nodes],
        }
    }
}

/// The (K, L, q) data of a block quadratic form. The lower-left blocks K21
/// and L21 are never stored; they are the symmetry transposes of K12, L12.
#[derive(Debug, Clone)]
pub struct BlockQuadraticForm {
    grid: TimeGrid,
    k11: Kernel1,
    k22: Kernel1,
    k12: Kernel1,
    l11: Kernel2,
    l22: Kernel2,
    l12: Kernel2,
    q1: Vec<DVector<f64>>,
    q2: Vec<DVector<f64>>,
}

impl BlockQuadraticForm {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: TimeGrid,
        k11: Kernel1,
        k22: Kernel1,
        k12: Kernel1,
        l11: Kernel2,
        l22: Kernel2,
        l12: Kernel2,
        q1: Vec<DVector<f64>>,
        q2: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let nn = grid.len();
        let m = k11.rows();
        let n = k22.rows();
        if k11.cols() != m || k22.cols() != n {
            return Err(Error::dim("diagonal K blocks must be square"));
        }
        if k12.rows() != m || k12.cols() != n {
            return Err(Error::dim("K12 must be m x n"));
        }
        if l11.rows() != m || l11.cols() != m || l22.rows() != n || l22.cols() != n {
            return Err(Error::dim("diagonal L blocks must be square"));
        }
        if l12.rows() != m || l12.cols() != n {
            return Err(Error::dim("L12 must be m x n"));
        }
        for (len, what) in [
            (k11.len(), "K11"),
            (k22.len(), "K22"),
            (k12.len(), "K12"),
            (q1.len(), "q1"),
            (q2.len(), "q2"),
        ] {
            if len != nn {
                return Err(Error::GridMismatch {
                    context: format!("{what} has {len} node entries for {nn} nodes"),
                });
            }
        }
        if l11.n_nodes() != nn || l22.n_nodes() != nn || l12.n_nodes() != nn {
            return Err(Error::GridMismatch {
                context: "L blocks tabulated on a different grid".into(),
            });
        }
        if q1.iter().any(|v| v.len() != m) || q2.iter().any(|v| v.len() != n) {
            return Err(Error::dim("q vectors must match control dimensions"));
        }
        let sym_defect = k11
            .symmetry_defect()
            .max(k22.symmetry_defect())
            .max(l11.symmetry_defect())
            .max(l22.symmetry_defect());
        if sym_defect > 1e-9 * (1.0 + block_scale(&k11, &l11).max(block_scale(&k22, &l22))) {
            return Err(Error::NotSymmetric {
                context: format!("diagonal blocks violate symmetry by {sym_defect:.3e}"),
            });
        }
        Ok(BlockQuadraticForm {
            grid,
            k11,
            k22,
            k12,
            l11,
            l22,
            l12,
            q1,
            q2,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn m(&self) -> usize {
        self.k11.rows()
    }

    pub fn n(&self) -> usize {
        self.k22.rows()
    }

    pub fn k11(&self) -> &Kernel1 {
        &self.k11
    }

    pub fn k22(&self) -> &Kernel1 {
        &self.k22
    }

    pub fn k12(&self) -> &Kernel1 {
        &self.k12
    }

    pub fn l11(&self) -> &Kernel2 {
        &self.l11
    }

    pub fn l22(&self) -> &Kernel2 {
        &self.l22
    }

    pub fn l12(&self) -> &Kernel2 {
        &self.l12
    }

    pub fn q1(&self) -> &[DVector<f64>] {
        &self.q1
    }

    pub fn q2(&self) -> &[DVector<f64>] {
        &self.q2
    }

    fn check_pair(&self, w: &ControlPair) -> Result<()> {
        let nn = self.grid.len();
        if w.w1.len() != nn || w.w2.len() != nn {
            return Err(Error::LengthMismatch {
                expected: nn,
                got: w.w1.len().min(w.w2.len()),
            });
        }
        if w.w1.iter().any(|v| v.len() != self.m()) || w.w2.iter().any(|v| v.len() != self.n()) {
            return Err(Error::dim("control dimensions do not match the form"));
        }
        Ok(())
    }

    /// Quadrature value of the form at a control pair.
    pub fn evaluate(&self, w: &ControlPair) -> Result<f64> {
        self.check_pair(w)?;
        let gw = self.grid.weights();
        let nn = self.grid.len();
        let mut acc = 0.0;
        for i in 0..nn {
            let w1 = &w.w1[i];
            let w2 = &w.w2[i];
            let point = 0.5 * (w1.dot(&(self.k11.at(i) * w1)))
                + w1.dot(&(self.k12.at(i) * w2))
                + 0.5 * (w2.dot(&(self.k22.at(i) * w2)))
                + self.q1[i].dot(w1)
                + self.q2[i].dot(w2);
            acc += gw[i] * point;
        }
        for i in 0..nn {
            let mut row = 0.0;
            for j in 0..nn {
                let pair = 0.5 * w.w1[i].dot(&(self.l11.at(i, j) * &w.w1[j]))
                    + w.w1[i].dot(&(self.l12.at(i, j) * &w.w2[j]))
                    + 0.5 * w.w2[i].dot(&(self.l22.at(i, j) * &w.w2[j]));
                row += gw[j] * pair;
            }
            acc += gw[i] * row;
        }
        Ok(acc)
    }

    /// Nodewise left-hand sides of the two stationarity equations.
    pub fn stationarity_residual(
        &self,
        w: &ControlPair,
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        self.check_pair(w)?;
        let gw = self.grid.weights();
        let nn = self.grid.len();
        let mut r1 = Vec::with_capacity(nn);
        let mut r2 = Vec::with_capacity(nn);
        for i in 0..nn {
            let mut a = self.k11.at(i) * &w.w1[i] + self.k12.at(i) * &w.w2[i] + &self.q1[i];
            let mut b = self.k12.at(i).transpose() * &w.w1[i]
                + self.k22.at(i) * &w.w2[i]
                + &self.q2[i];
            for j in 0..nn {
                a += gw[j] * (self.l11.at(i, j) * &w.w1[j] + self.l12.at(i, j) * &w.w2[j]);
                // L21(i, j) = L12(j, i)^T
                b += gw[j]
                    * (self.l12.at(j, i).transpose() * &w.w1[j] + self.l22.at(i, j) * &w.w2[j]);
            }
            r1.push(a);
            r2.push(b);
        }
        Ok((r1, r2))
    }

    /// Certifies the definiteness assumptions and the nodewise invertibility
    /// of the pointwise blocks.
    pub fn certify(&self, opts: &SolveOptions) -> Result<CertificationReport> {
        let minimizer = check_joint_definiteness(
            &self.k11,
            &self.l11,
            &self.grid,
            DefinitenessSign::Positive,
            opts.definiteness_tol,
        )?;
        let maximizer = check_joint_definiteness(
            &self.k22,
            &self.l22,
            &self.grid,
            DefinitenessSign::Negative,
            opts.definiteness_tol,
        )?;
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.len() {
            let m = self.m();
            let n = self.n();
            let mut k = DMatrix::zeros(m + n, m + n);
            k.view_mut((0, 0), (m, m)).copy_from(self.k11.at(i));
            k.view_mut((0, m), (m, n)).copy_from(self.k12.at(i));
            k.view_mut((m, 0), (n, m))
                .copy_from(&self.k12.at(i).transpose());
            k.view_mut((m, m), (n, n)).copy_from(self.k22.at(i));
            worst = worst
                .max(linalg::condition_number(&k))
                .max(linalg::condition_number(self.k11.at(i)))
                .max(linalg::condition_number(self.k22.at(i)));
        }
        let certified =
            minimizer.jointly_pd_11 && maximizer.jointly_nd_22 && worst <= opts.max_condition;
        Ok(CertificationReport {
            minimizer,
            maximizer,
            worst_condition: worst,
            max_condition: opts.max_condition,
            certified,
        })
    }

    fn require_certified(&self, opts: &SolveOptions) -> Result<()> {
        if opts.override_certification {
            return Ok(());
        }
        let report = self.certify(opts)?;
        if report.certified {
            Ok(())
        } else {
            Err(Error::NotCertified(Box::new(report)))
        }
    }

    /// Unique minimizer of the form over `w1` for fixed `w2`.
    pub fn best_response_min(
        &self,
        w2: &[DVector<f64>],
        opts: &SolveOptions,
    ) -> Result<Vec<DVector<f64>>> {
        let nn = self.grid.len();
        if w2.len() != nn {
            return Err(Error::LengthMismatch {
                expected: nn,
                got: w2.len(),
            });
        }
        if !opts.override_certification {
            let rep = check_joint_definiteness(
                &self.k11,
                &self.l11,
                &self.grid,
                DefinitenessSign::Positive,
                opts.definiteness_tol,
            )?;
            if !rep.jointly_pd_11 {
                let report = self.certify(opts)?;
                return Err(Error::NotCertified(Box::new(report)));
            }
        }
        let m = self.m();
        let gw = self.grid.weights();
        let mut a = DMatrix::zeros(nn * m, nn * m);
        let mut b = DVector::zeros(nn * m);
        for i in 0..nn {
            for j in 0..nn {
                let mut block = gw[j] * self.l11.at(i, j);
                if i == j {
                    block += self.k11.at(i);
                }
                a.view_mut((i * m, j * m), (m, m)).copy_from(&block);
            }
            let mut rhs = -(&self.q1[i] + self.k12.at(i) * &w2[i]);
            for j in 0..nn {
                rhs -= gw[j] * (self.l12.at(i, j) * &w2[j]);
            }
            b.rows_mut(i * m, m).copy_from(&rhs);
        }
        let x = linalg::solve(&a, &b, "best response (minimizer) system")?;
        Ok((0..nn).map(|i| x.rows(i * m, m).into_owned()).collect())
    }

    /// Unique maximizer of the form over `w2` for fixed `w1`.
    pub fn best_response_max(
        &self,
        w1: &[DVector<f64>],
        opts: &SolveOptions,
    ) -> Result<Vec<DVector<f64>>> {
        let nn = self.grid.len();
        if w1.len() != nn {
            return Err(Error::LengthMismatch {
                expected: nn,
                got: w1.len(),
            });
        }
        if !opts.override_certification {
            let rep = check_joint_definiteness(
                &self.k22,
                &self.l22,
                &self.grid,
                DefinitenessSign::Negative,
                opts.definiteness_tol,
            )?;
            if !rep.jointly_nd_22 {
                let report = self.certify(opts)?;
                return Err(Error::NotCertified(Box::new(report)));
            }
        }
        let n = self.n();
        let gw = self.grid.weights();
        let mut a = DMatrix::zeros(nn * n, nn * n);
        let mut b = DVector::zeros(nn * n);
        for i in 0..nn {
            for j in 0..nn {
                let mut block = gw[j] * self.l22.at(i, j);
                if i == j {
                    block += self.k22.at(i);
                }
                a.view_mut((i * n, j * n), (n, n)).copy_from(&block);
            }
            let mut rhs = -(&self.q2[i] + self.k12.at(i).transpose() * &w1[i]);
            for j in 0..nn {
                rhs -= gw[j] * (self.l12.at(j, i).transpose() * &w1[j]);
            }
            b.rows_mut(i * n, n).copy_from(&rhs);
        }
        let x = linalg::solve(&a, &b, "best response (maximizer) system")?;
        Ok((0..nn).map(|i| x.rows(i * n, n).into_owned()).collect())
    }

    /// Solves the coupled stationarity system for the unique saddle point.
    pub fn saddle_point(&self, opts: &SolveOptions) -> Result<ControlPair> {
        self.require_certified(opts)?;
        let nn = self.grid.len();
        let m = self.m();
        let n = self.n();
        let dim = nn * (m + n);
        let gw = self.grid.weights();
        let off = nn * m;
        let mut a = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        for i in 0..nn {
            for j in 0..nn {
                let mut b11 = gw[j] * self.l11.at(i, j);
                let mut b12 = gw[j] * self.l12.at(i, j);
                let mut b21 = gw[j] * self.l12.at(j, i).transpose();
                let mut b22 = gw[j] * self.l22.at(i, j);
                if i == j {
                    b11 += self.k11.at(i);
                    b12 += self.k12.at(i);
                    b21 += self.k12.at(i).transpose();
                    b22 += self.k22.at(i);
                }
                a.view_mut((i * m, j * m), (m, m)).copy_from(&b11);
                a.view_mut((i * m, off + j * n), (m, n)).copy_from(&b12);
                a.view_mut((off + i * n, j * m), (n, m)).copy_from(&b21);
                a.view_mut((off + i * n, off + j * n), (n, n))
                    .copy_from(&b22);
            }
            b.rows_mut(i * m, m).copy_from(&(-&self.q1[i]));
            b.rows_mut(off + i * n, n).copy_from(&(-&self.q2[i]));
        }
        let x = linalg::solve(&a, &b, "saddle stationarity system")?;
        Ok(ControlPair {
            w1: (0..nn).map(|i| x.rows(i * m, m).into_owned()).collect(),
            w2: (0..nn)
                .map(|i| x.rows(off + i * n, n).into_owned())
                .collect(),
        })
    }
}

fn block_scale(k: &Kernel1, l: &Kernel2) -> f64 {
    let mut s: f64 = 0.0;
    for v in k.values() {
        s = s.max(v.abs().max());
    }
    for i in 0..l.n_nodes() {
        for j in 0..l.n_nodes() {
            s = s.max(l.at(i, j).abs().max());
        }
    }
    s
}

/// Raw, possibly asymmetric blocks of a quadratic form.
#[derive(Debug, Clone)]
pub struct RawBlocks {
    pub k11: Kernel1,
    pub k12: Kernel1,
    pub k21: Kernel1,
    pub k22: Kernel1,
    pub l11: Kernel2,
    pub l12: Kernel2,
    pub l21: Kernel2,
    pub l22: Kernel2,
}

/// The canonical symmetric blocks produced by [`symmetrize`].
#[derive(Debug, Clone)]
pub struct SymmetrizedBlocks {
    pub k11: Kernel1,
    pub k12: Kernel1,
    pub k22: Kernel1,
    pub l11: Kernel2,
    pub l12: Kernel2,
    pub l22: Kernel2,
}

/// Replaces arbitrary blocks by their symmetrizations, leaving every value
/// of the associated quadratic form unchanged.
pub fn symmetrize(raw: &RawBlocks) -> Result<SymmetrizedBlocks> {
    let m = raw.k11.rows();
    let n = raw.k22.rows();
    if raw.k12.rows() != m
        || raw.k12.cols() != n
        || raw.k21.rows() != n
        || raw.k21.cols() != m
        || raw.l12.rows() != m
        || raw.l12.cols() != n
        || raw.l21.rows() != n
        || raw.l21.cols() != m
    {
        return Err(Error::dim("off-diagonal blocks must be m x n and n x m"));
    }
    let nn = raw.l11.n_nodes();
    let k11 = Kernel1::new(
        raw.k11
            .values()
            .iter()
            .map(|v| 0.5 * (v + v.transpose()))
            .collect(),
    )?;
    let k22 = Kernel1::new(
        raw.k22
            .values()
            .iter()
            .map(|v| 0.5 * (v + v.transpose()))
            .collect(),
    )?;
    let k12 = Kernel1::new(
        raw.k12
            .values()
            .iter()
            .zip(raw.k21.values())
            .map(|(a, b)| 0.5 * (a + b.transpose()))
            .collect(),
    )?;
    let l11 = Kernel2::from_fn(nn, |i, j| {
        0.5 * (raw.l11.at(i, j) + raw.l11.at(j, i).transpose())
    })?;
    let l22 = Kernel2::from_fn(nn, |i, j| {
        0.5 * (raw.l22.at(i, j) + raw.l22.at(j, i).transpose())
    })?;
    let l12 = Kernel2::from_fn(nn, |i, j| {
        0.5 * (raw.l12.at(i, j) + raw.l21.at(j, i).transpose())
    })?;
    Ok(SymmetrizedBlocks {
        k11,
        k12,
        k22,
        l11,
        l12,
        l22,
    })
}

/// Value of the full (possibly asymmetric) quadratic form, for checking
/// that symmetrization leaves values unchanged.
pub fn evaluate_unsymmetrized(
    raw: &RawBlocks,
    q1: &[DVector<f64>],
    q2: &[DVector<f64>],
    grid: &TimeGrid,
    w: &ControlPair,
) -> f64 {
    let gw = grid.weights();
    let nn = grid.len();
    let mut acc = 0.0;
    for i in 0..nn {
        let w1 = &w.w1[i];
        let w2 = &w.w2[i];
        acc += gw[i]
            * (0.5 * w1.dot(&(raw.k11.at(i) * w1))
                + 0.5 * w1.dot(&(raw.k12.at(i) * w2))
                + 0.5 * w2.dot(&(raw.k21.at(i) * w1))
                + 0.5 * w2.dot(&(raw.k22.at(i) * w2))
                + q1[i].dot(w1)
                + q2[i].dot(w2));
    }
    for i in 0..nn {
        for j in 0..nn {
            acc += gw[i]
                * gw[j]
                * (0.5 * w.w1[i].dot(&(raw.l11.at(i, j) * &w.w1[j]))
                    + 0.5 * w.w1[i].dot(&(raw.l12.at(i, j) * &w.w2[j]))
                    + 0.5 * w.w2[i].dot(&(raw.l21.at(i, j) * &w.w1[j]))
                    + 0.5 * w.w2[i].dot(&(raw.l22.at(i, j) * &w.w2[j])));
        }
    }
    acc
}

fn require_square_symmetric(k: &Kernel1, l: &Kernel2, grid: &TimeGrid) -> Result<()> {
    if k.rows() != k.cols() || l.rows() != l.cols() || k.rows() != l.rows() {
        return Err(Error::dim("kernel pair must be square with equal size"));
    }
    if k.len() != grid.len() || l.n_nodes() != grid.len() {
        return Err(Error::GridMismatch {
            context: "kernel pair tabulated on a different grid".into(),
        });
    }
    let scale = block_scale(k, l);
    let defect = k.symmetry_defect().max(l.symmetry_defect());
    if defect > 1e-9 * (1.0 + scale) {
        return Err(Error::NotSymmetric {
            context: format!("symmetry defect {defect:.3e}"),
        });
    }
    Ok(())
}

/// Assembles the weighted symmetric Nystrom matrix `D + W^{1/2} L W^{1/2}`
/// whose spectrum certifies joint definiteness on the discrete space.
pub fn discretized_operator(k: &Kernel1, l: &Kernel2, grid: &TimeGrid) -> DMatrix<f64> {
    let nn = grid.len();
    let d = k.rows();
    let gw = grid.weights();
    let mut op = DMatrix::zeros(nn * d, nn * d);
    for i in 0..nn {
        for j in 0..nn {
            let scale = (gw[i] * gw[j]).sqrt();
            let mut block = scale * l.at(i, j);
            if i == j {
                block += k.at(i);
            }
            op.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    op
}

/// Spectral test of joint definiteness for a kernel pair.
pub fn check_joint_definiteness(
    k: &Kernel1,
    l: &Kernel2,
    grid: &TimeGrid,
    _sign: DefinitenessSign,
    tol: f64,
) -> Result<DefinitenessReport> {
    require_square_symmetric(k, l, grid)?;
    let op = discretized_operator(k, l, grid);
    let ev = linalg::symmetric_eigenvalues(&op);
    let min = *ev.first().expect("nonempty spectrum");
    let max = *ev.last().expect("nonempty spectrum");
    Ok(DefinitenessReport {
        jointly_pd_11: min > tol,
        jointly_nd_22: max < -tol,
        min_eig_11: min,
        max_eig_22: max,
        method: DefinitenessMethod::Spectral,
    })
}

/// Sufficient pairwise condition: the two-point block matrix
/// `[[K(x)/|G|, L(x,y)], [L(x,y)^T, K(y)/|G|]]` is positive definite
/// uniformly over grid pairs.
pub fn block_m_condition(k: &Kernel1, l: &Kernel2, grid: &TimeGrid, tol: f64) -> Result<bool> {
    require_square_symmetric(k, l, grid)?;
    let nn = grid.len();
    let d = k.rows();
    let vol = grid.t1() - grid.t0();
    let mut min_eig = f64::INFINITY;
    for i in 0..nn {
        for j in 0..nn {
            let mut m = DMatrix::zeros(2 * d, 2 * d);
            m.view_mut((0, 0), (d, d)).copy_from(&(k.at(i) / vol));
            m.view_mut((d, d), (d, d)).copy_from(&(k.at(j) / vol));
            m.view_mut((0, d), (d, d)).copy_from(l.at(i, j));
            m.view_mut((d, 0), (d, d)).copy_from(&l.at(i, j).transpose());
            min_eig = min_eig.min(linalg::min_eigenvalue(&m));
        }
    }
    Ok(min_eig > tol)
}

/// Randomized point-collection sampler for nonnegative definiteness of a
/// two-argument kernel. A falsifier, not a certificate.
pub fn mercer_sample_check(
    l: &Kernel2,
    grid: &TimeGrid,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<bool> {
    if l.rows() != l.cols() {
        return Err(Error::dim("kernel must be square"));
    }
    if l.n_nodes() != grid.len() {
        return Err(Error::GridMismatch {
            context: "kernel tabulated on a different grid".into(),
        });
    }
    let d = l.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let count = rng.gen_range(1..=8usize);
        let idx: Vec<usize> = (0..count).map(|_| rng.gen_range(0..grid.len())).collect();
        let vecs: Vec<DVector<f64>> = (0..count)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let mut sum = 0.0;
        let mut magnitude = 0.0;
        for (pi, ai) in idx.iter().zip(&vecs) {
            for (pj, aj) in idx.iter().zip(&vecs) {
                let term = ai.dot(&(l.at(*pi, *pj) * aj));
                sum += term;
                magnitude += term.abs();
            }
        }
        if sum < -tol * (1.0 + magnitude) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Orthonormal vector-valued functions tabulated on a grid, used for the
/// coefficient-matrix route to kernel definiteness.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    functions: Vec<Vec<DVector<f64>>>,
    grid: TimeGrid,
    dim: usize,
}

impl SpectralBasis {
    /// Builds `count` basis functions from per-component polynomials,
    /// re-orthonormalized under the grid inner product.
    pub fn legendre(grid: &TimeGrid, dim: usize, count: usize) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::dim("basis needs positive dimension and count"));
        }
        let nn = grid.len();
        let mid = 0.5 * (grid.t0() + grid.t1());
        let half = 0.5 * (grid.t1() - grid.t0());
        let mut raw: Vec<Vec<DVector<f64>>> = Vec::with_capacity(count);
        for k in 0..count {
            let comp = k % dim;
            let deg = k / dim;
            let f: Vec<DVector<f64>> = grid
                .nodes()
                .iter()
                .map(|&t| {
                    let mut v = DVector::zeros(dim);
                    v[comp] = ((t - mid) / half).powi(deg as i32);
                    v
                })
                .collect();
            raw.push(f);
        }
        let inner = |a: &Vec<DVector<f64>>, b: &Vec<DVector<f64>>| -> f64 {
            (0..nn).map(|i| grid.weights()[i] * a[i].dot(&b[i])).sum()
        };
        // Modified Gram-Schmidt, run twice for orthogonality at roundoff level.
        for _ in 0..2 {
            for k in 0..count {
                for prev in 0..k {
                    let proj = inner(&raw[k], &raw[prev]);
                    let (head, tail) = raw.split_at_mut(k);
                    for i in 0..nn {
                        let p = &head[prev][i] * proj;
                        tail[0][i] -= p;
                    }
                }
                let norm = inner(&raw[k], &raw[k]).sqrt();
                if norm < 1e-12 {
                    return Err(Error::BasisNotOrthonormal { residual: norm });
                }
                for v in raw[k].iter_mut() {
                    *v /= norm;
                }
            }
        }
        Ok(SpectralBasis {
            functions: raw,
            grid: grid.clone(),
            dim,
        })
    }

    pub fn count(&self) -> usize {
        self.functions.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn function(&self, k: usize) -> &[DVector<f64>] {
        &self.functions[k]
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_residual(&self) -> f64 {
        let nn = self.grid.len();
        let mut worst: f64 = 0.0;
        for k in 0..self.count() {
            for ell in 0..self.count() {
                let g: f64 = (0..nn)
                    .map(|i| self.grid.weights()[i] * self.functions[k][i].dot(&self.functions[ell][i]))
                    .sum();
                let target = if k == ell { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Synthesizes the kernel `sum_kl lambda[k][l] w_k(x) w_l(y)^T`.
    pub fn synthesize(&self, lambda: &DMatrix<f64>) -> Result<Kernel2> {
        if lambda.nrows() != self.count() || lambda.ncols() != self.count() {
            return Err(Error::dim("coefficient matrix must match basis count"));
        }
        let nn = self.grid.len();
        Kernel2::from_fn(nn, |i, j| {
            let mut acc = DMatrix::zeros(self.dim, self.dim);
            for k in 0..self.count() {
                for ell in 0..self.count() {
                    acc += lambda[(k, ell)] * &self.functions[k][i] * self.functions[ell][j].transpose();
                }
            }
            acc
        })
    }
}

/// Truncated coefficient matrix of a kernel in a spectral basis, with the
/// nonnegativity verdict and a double-quadrature identity self-check.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub lambda: DMatrix<f64>,
    pub nonnegative: bool,
    pub identity_residual: f64,
}

/// Computes the truncated coefficient matrix `lambda_kl = int int w_k^T L w_l`
/// and tests its nonnegative definiteness.
pub fn spectral_definiteness(
    l: &Kernel2,
    basis: &SpectralBasis,
    tol: f64,
) -> Result<SpectralReport> {
    if l.rows() != basis.dim() || l.cols() != basis.dim() {
        return Err(Error::dim("kernel dimension must match basis dimension"));
    }
    let residual = basis.orthonormality_residual();
    if residual > 1e-8 {
        return Err(Error::BasisNotOrthonormal { residual });
    }
    let grid = basis.grid();
    let nn = grid.len();
    let gw = grid.weights();
    let count = basis.count();
    let mut lambda = DMatrix::zeros(count, count);
    for k in 0..count {
        for ell in 0..count {
            let mut acc = 0.0;
            for i in 0..nn {
                let mut row = 0.0;
                for j in 0..nn {
                    row += gw[j] * basis.function(k)[i].dot(&(l.at(i, j) * &basis.function(ell)[j]));
                }
                acc += gw[i] * row;
            }
            lambda[(k, ell)] = acc;
        }
    }
    let nonnegative = linalg::min_eigenvalue(&lambda) >= -tol;
    // Identity check with the basis-spanned w having unit coefficients.
    let w: Vec<DVector<f64>> = (0..nn)
        .map(|i| {
            let mut v = DVector::zeros(basis.dim());
            for k in 0..count {
                v += &basis.function(k)[i];
            }
            v
        })
        .collect();
    let mut direct = 0.0;
    for i in 0..nn {
        let mut row = 0.0;
        for j in 0..nn {
            row += gw[j] * w[i].dot(&(l.at(i, j) * &w[j]));
        }
        direct += gw[i] * row;
    }
    let via_lambda: f64 = lambda.iter().sum();
    Ok(SpectralReport {
        lambda,
        nonnegative,
        identity_residual: (direct - via_lambda).abs(),
    })
}
