//! Time-interval discretization, quadrature rules, and tabulated matrix
//! kernels of one and two time arguments.
//!
//! All integral operators in this crate are discretized by the Nystrom
//! method: an integral over the horizon uses the grid's quadrature weights,
//! an integral with a variable limit uses composite trapezoid weights over
//! the node subrange. Summation order is fixed (outer index major) so
//! results are bit-reproducible.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature rule for full-horizon integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    Trapezoid,
    Simpson,
}

/// Uniform discretization of a time interval `[t0, t1]` with quadrature
/// weights attached to the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    rule: QuadratureRule,
}

impl TimeGrid {
    /// Builds a uniform grid with `n` nodes and the weights of `rule`.
    ///
    /// Simpson weights require an odd node count; an even count is an error
    /// rather than a silent adjustment.
    pub fn new(t0: f64, t1: f64, n: usize, rule: QuadratureRule) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::InvalidInterval { t0, t1 });
        }
        if n < 2 {
            return Err(Error::TooFewNodes { n });
        }
        let h = (t1 - t0) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| t0 + h * i as f64).collect();
        // Pin the endpoint so refinement comparisons see the exact horizon.
        nodes[n - 1] = t1;
        let weights = match rule {
            QuadratureRule::Trapezoid => trapezoid_weights(&nodes),
            QuadratureRule::Simpson => {
                if n % 2 == 0 {
                    return Err(Error::SimpsonRequiresOddNodes { n });
                }
                simpson_weights(&nodes)
            }
        };
        Ok(TimeGrid {
            t0,
            t1,
            nodes,
            weights,
            rule,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    /// Uniform node spacing.
    pub fn spacing(&self) -> f64 {
        (self.t1 - self.t0) / (self.len() - 1) as f64
    }

    /// Index of the node equal to `t`, within a spacing-scaled tolerance.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * self.spacing().max(1e-300);
        self.nodes
            .iter()
            .position(|&x| (x - t).abs() <= tol)
            .ok_or(Error::NodeNotOnGrid { t })
    }

    /// `sum_i weights[i] * f[i]`, the discrete integral over the horizon.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(f)
            .map(|(w, v)| w * v)
            .sum())
    }

    /// Tensor-product double integral `sum_ij w_i w_j f[i][j]`.
    pub fn integrate2(&self, f: &dyn Fn(usize, usize) -> f64) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.weights[j] * f(i, j);
            }
            acc += self.weights[i] * row;
        }
        acc
    }

    /// Composite trapezoid weights of nodes `0..=i` for the partial integral
    /// from `t0` to `nodes[i]`. For `i = 0` the single weight is zero.
    pub fn forward_weights(&self, i: usize) -> Vec<f64> {
        trapezoid_weights(&self.nodes[..=i])
    }

    /// Composite trapezoid weights of nodes `k..` for the tail integral from
    /// `nodes[k]` to `t1`. For `k = n-1` the single weight is zero.
    pub fn tail_weights(&self, k: usize) -> Vec<f64> {
        trapezoid_weights(&self.nodes[k..])
    }

    /// Trapezoid weights of nodes `j..=i` for the inner integral from
    /// `nodes[j]` to `nodes[i]`.
    pub fn span_weights(&self, j: usize, i: usize) -> Vec<f64> {
        trapezoid_weights(&self.nodes[j..=i])
    }

    /// Adjoint tail weights `theta[k][i] = c_{ik} w_i / w_k` for `i >= k`,
    /// where `c_{ik}` is the forward weight of node `k` in the partial
    /// integral up to `nodes[i]`. These are the weights under which the
    /// discrete costate equation is the exact transpose of the discrete
    /// state operator.
    pub fn adjoint_tail_weights(&self, k: usize) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n - k);
        for i in k..n {
            let c_ik = self.forward_weight_of(i, k);
            out.push(c_ik * self.weights[i] / self.weights[k]);
        }
        out
    }

    /// Weight of node `k` in the composite trapezoid rule over nodes `0..=i`.
    pub fn forward_weight_of(&self, i: usize, k: usize) -> f64 {
        debug_assert!(k <= i);
        if i == 0 {
            return 0.0;
        }
        let left = if k == 0 { self.nodes[0] } else { self.nodes[k - 1] };
        let right = if k == i { self.nodes[i] } else { self.nodes[k + 1] };
        0.5 * (right - left)
    }
}

fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    if n == 1 {
        return vec![0.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let half = 0.5 * (nodes[i + 1] - nodes[i]);
        w[i] += half;
        w[i + 1] += half;
    }
    w
}

fn simpson_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    debug_assert!(n >= 3 && n % 2 == 1);
    let h = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
    let mut w = vec![0.0; n];
    let mut i = 0;
    while i + 2 < n {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    w
}

/// Matrix-valued kernel of one time argument, tabulated per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1 {
    values: Vec<DMatrix<f64>>,
    rows: usize,
    cols: usize,
}

impl Kernel1 {
    pub fn new(values: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| Error::dim("kernel needs at least one node value"))?;
        let (rows, cols) = (first.nrows(), first.ncols());
        if values.iter().any(|m| m.nrows() != rows || m.ncols() != cols) {
            return Err(Error::dim("per-node matrices must share dimensions"));
        }
        Ok(Kernel1 { values, rows, cols })
    }

    pub fn zeros(n_nodes: usize, rows: usize, cols: usize) -> Self {
        Kernel1 {
            values: vec![DMatrix::zeros(rows, cols); n_nodes],
            rows,
            cols,
        }
    }

    pub fn constant(n_nodes: usize, value: DMatrix<f64>) -> Self {
        let (rows, cols) = (value.nrows(), value.ncols());
        Kernel1 {
            values: vec![value; n_nodes],
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize) -> &DMatrix<f64> {
        &self.values[i]
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    /// Nodewise map, preserving grid length.
    pub fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Result<Self> {
        Kernel1::new(self.values.iter().map(f).collect())
    }

    /// Largest nodewise deviation from symmetry, scaled by nothing.
    pub fn symmetry_defect(&self) -> f64 {
        self.values
            .iter()
            .map(|m| (m - m.transpose()).abs().max())
            .fold(0.0, f64::max)
    }
}

/// Matrix-valued kernel of two time arguments, tabulated per ordered node
/// pair `(i, j)` with `i` major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2 {
    values: Vec<DMatrix<f64>>,
    n_nodes: usize,
    rows: usize,
    cols: usize,
}

impl Kernel2 {
    pub fn new(values: Vec<DMatrix<f64>>, n_nodes: usize) -> Result<Self> {
        if values.len() != n_nodes * n_nodes {
            return Err(Error::GridMismatch {
                context: format!(
                    "expected {} pair values, got {}",
                    n_nodes * n_nodes,
                    values.len()
                ),
            });
        }
        let first = values
            .first()
            .ok_or_else(|| Error::dim("kernel needs at least one pair value"))?;
        let (rows, cols) = (first.nrows(), first.ncols());
        if values.iter().any(|m| m.nrows() != rows || m.ncols() != cols) {
            return Err(Error::dim("per-pair matrices must share dimensions"));
        }
        Ok(Kernel2 {
            values,
            n_nodes,
            rows,
            cols,
        })
    }

    pub fn zeros(n_nodes: usize, rows: usize, cols: usize) -> Self {
        Kernel2 {
            values: vec![DMatrix::zeros(rows, cols); n_nodes * n_nodes],
            n_nodes,
            rows,
            cols,
        }
    }

    pub fn constant(n_nodes: usize, value: DMatrix<f64>) -> Self {
        let (rows, cols) = (value.nrows(), value.ncols());
        Kernel2 {
            values: vec![value; n_nodes * n_nodes],
            n_nodes,
            rows,
            cols,
        }
    }

    /// Builds a kernel by evaluating `f(i, j)` at every ordered node pair.
    pub fn from_fn(n_nodes: usize, mut f: impl FnMut(usize, usize) -> DMatrix<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(n_nodes * n_nodes);
        for i in 0..n_nodes {
            for j in 0..n_nodes {
                values.push(f(i, j));
            }
        }
        Kernel2::new(values, n_nodes)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.values[i * self.n_nodes + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, value: DMatrix<f64>) {
        debug_assert_eq!(value.nrows(), self.rows);
        debug_assert_eq!(value.ncols(), self.cols);
        self.values[i * self.n_nodes + j] = value;
    }

    /// Largest pairwise deviation from the two-argument symmetry
    /// `K(x, y) = K(y, x)^T`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_nodes {
            for j in 0..self.n_nodes {
                let d = (self.at(i, j) - self.at(j, i).transpose()).abs().max();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// True when entries vanish for `j > i`.
    pub fn is_lower_triangular(&self, tol: f64) -> bool {
        for i in 0..self.n_nodes {
            for j in i + 1..self.n_nodes {
                if self.at(i, j).abs().max() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Config-level description of a kernel, materialized onto a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// The same matrix at every node or node pair.
    Constant { matrix: DMatrix<f64> },
    /// Explicit per-node (arity 1) or per-pair (arity 2, `i` major) matrices.
    Table { matrices: Vec<DMatrix<f64>> },
    /// Entrywise `scale * exp(rate * t)` (arity 1) or
    /// `scale * exp(rate * (t - s))` (arity 2).
    Exponential {
        scale: DMatrix<f64>,
        rate: DMatrix<f64>,
    },
    /// Entrywise polynomial `sum_kl coeffs[k][l] t^k s^l`; arity-1 kernels
    /// require a single `l` slot per degree.
    Polynomial { coeffs: Vec<Vec<DMatrix<f64>>> },
}

impl KernelSpec {
    pub fn constant_scalar(v: f64) -> Self {
        KernelSpec::Constant {
            matrix: DMatrix::from_element(1, 1, v),
        }
    }

    /// Whether the family can be evaluated at arbitrary time arguments
    /// (everything except tabulated data).
    pub fn is_closed_form(&self) -> bool {
        !matches!(self, KernelSpec::Table { .. })
    }

    pub fn shape(&self) -> Result<(usize, usize)> {
        match self {
            KernelSpec::Constant { matrix } => Ok((matrix.nrows(), matrix.ncols())),
            KernelSpec::Table { matrices } => matrices
                .first()
                .map(|m| (m.nrows(), m.ncols()))
                .ok_or_else(|| Error::dim("empty kernel table")),
            KernelSpec::Exponential { scale, .. } => Ok((scale.nrows(), scale.ncols())),
            KernelSpec::Polynomial { coeffs } => coeffs
                .first()
                .and_then(|row| row.first())
                .map(|m| (m.nrows(), m.ncols()))
                .ok_or_else(|| Error::dim("empty polynomial coefficient table")),
        }
    }

    /// Evaluates a closed-form family at one time argument.
    pub fn eval1(&self, t: f64) -> Result<DMatrix<f64>> {
        match self {
            KernelSpec::Constant { matrix } => Ok(matrix.clone()),
            KernelSpec::Table { .. } => Err(Error::GridMismatch {
                context: "table kernels cannot be evaluated off-grid".into(),
            }),
            KernelSpec::Exponential { scale, rate } => {
                check_same_shape(scale, rate)?;
                Ok(scale.zip_map(rate, |a, b| a * (b * t).exp()))
            }
            KernelSpec::Polynomial { coeffs } => {
                let (rows, cols) = self.shape()?;
                let mut acc = DMatrix::zeros(rows, cols);
                let mut tk = 1.0;
                for row in coeffs {
                    if row.len() != 1 {
                        return Err(Error::dim(
                            "arity-1 polynomial kernel needs exactly one s-degree slot",
                        ));
                    }
                    acc += &row[0] * tk;
                    tk *= t;
                }
                Ok(acc)
            }
        }
    }

    /// Evaluates a closed-form family at a pair of time arguments.
    pub fn eval2(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        match self {
            KernelSpec::Constant { matrix } => Ok(matrix.clone()),
            KernelSpec::Table { .. } => Err(Error::GridMismatch {
                context: "table kernels cannot be evaluated off-grid".into(),
            }),
            KernelSpec::Exponential { scale, rate } => {
                check_same_shape(scale, rate)?;
                Ok(scale.zip_map(rate, |a, b| a * (b * (t - s)).exp()))
            }
            KernelSpec::Polynomial { coeffs } => {
                let (rows, cols) = self.shape()?;
                let mut acc = DMatrix::zeros(rows, cols);
                let mut tk = 1.0;
                for row in coeffs {
                    let mut sl = 1.0;
                    for c in row {
                        acc += c * (tk * sl);
                        sl *= s;
                    }
                    tk *= t;
                }
                Ok(acc)
            }
        }
    }

    /// Materializes the spec as a one-argument kernel on `grid`.
    pub fn materialize1(&self, grid: &TimeGrid) -> Result<Kernel1> {
        let n = grid.len();
        match self {
            KernelSpec::Table { matrices } => {
                if matrices.len() != n {
                    return Err(Error::GridMismatch {
                        context: format!("table has {} matrices for {} nodes", matrices.len(), n),
                    });
                }
                Kernel1::new(matrices.clone())
            }
            _ => Kernel1::new(
                grid.nodes()
                    .iter()
                    .map(|&t| self.eval1(t))
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }

    /// Materializes the spec as a two-argument kernel on `grid`.
    pub fn materialize2(&self, grid: &TimeGrid) -> Result<Kernel2> {
        let n = grid.len();
        match self {
            KernelSpec::Table { matrices } => {
                if matrices.len() != n * n {
                    return Err(Error::GridMismatch {
                        context: format!(
                            "table has {} matrices for {} node pairs",
                            matrices.len(),
                            n * n
                        ),
                    });
                }
                Kernel2::new(matrices.clone(), n)
            }
            _ => {
                let mut values = Vec::with_capacity(n * n);
                for &t in grid.nodes() {
                    for &s in grid.nodes() {
                        values.push(self.eval2(t, s)?);
                    }
                }
                Kernel2::new(values, n)
            }
        }
    }
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::dim("scale and rate matrices must share shape"));
    }
    Ok(())
}
