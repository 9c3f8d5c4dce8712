//! Config file schema (JSON, `schema_version: 1`) and eager construction of
//! solver problems from it.
//!
//! Kernels, vectors, and matrices live in named maps; each problem section
//! references them by name. All names and dimensions are resolved and
//! checked at load time, before any numerics run.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use volgame::grid::{Kernel1, Kernel2, KernelSpec, QuadratureRule, TimeGrid};
use volgame::lqcgame::{LQCProblem, NodeIndexer};
use volgame::lqgame::LQGameProblem;
use volgame::pursuit::PursuitProblem;
use volgame::quadform::BlockQuadraticForm;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadform,
    Lq,
    Lqc,
    Pursuit,
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProblemKind::Quadform => "quadform",
            ProblemKind::Lq => "lq",
            ProblemKind::Lqc => "lqc",
            ProblemKind::Pursuit => "pursuit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_bracket: Option<(f64, f64)>,
    pub n: usize,
    #[serde(default = "default_rule")]
    pub rule: QuadratureRule,
}

fn default_rule() -> QuadratureRule {
    QuadratureRule::Trapezoid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelEntry {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    Table {
        matrices: Vec<Vec<Vec<f64>>>,
    },
    Exponential {
        scale: Vec<Vec<f64>>,
        rate: Vec<Vec<f64>>,
    },
    Polynomial {
        coeffs: Vec<Vec<Vec<Vec<f64>>>>,
    },
}

fn to_dmatrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    if r == 0 {
        return Err(CliError::validation(what, "matrix must not be empty"));
    }
    let c = rows[0].len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::validation(what, "matrix rows must share a length"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl KernelEntry {
    pub fn to_spec(&self, name: &str) -> Result<KernelSpec, CliError> {
        match self {
            KernelEntry::Constant { matrix } => Ok(KernelSpec::Constant {
                matrix: to_dmatrix(matrix, name)?,
            }),
            KernelEntry::Table { matrices } => Ok(KernelSpec::Table {
                matrices: matrices
                    .iter()
                    .map(|m| to_dmatrix(m, name))
                    .collect::<Result<Vec<_>, _>>()?,
            }),
            KernelEntry::Exponential { scale, rate } => Ok(KernelSpec::Exponential {
                scale: to_dmatrix(scale, name)?,
                rate: to_dmatrix(rate, name)?,
            }),
            KernelEntry::Polynomial { coeffs } => Ok(KernelSpec::Polynomial {
                coeffs: coeffs
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|m| to_dmatrix(m, name))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum VectorEntry {
    Constant { value: Vec<f64> },
    Table { values: Vec<Vec<f64>> },
    /// `sum_k coeffs[k] t^k` per component.
    Polynomial { coeffs: Vec<Vec<f64>> },
}

impl VectorEntry {
    pub fn is_closed_form(&self) -> bool {
        !matches!(self, VectorEntry::Table { .. })
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            VectorEntry::Constant { value } => DVector::from_vec(value.clone()),
            VectorEntry::Table { .. } => unreachable!("table vectors are grid-bound"),
            VectorEntry::Polynomial { coeffs } => {
                let dim = coeffs[0].len();
                let mut acc = DVector::zeros(dim);
                let mut tk = 1.0;
                for c in coeffs {
                    acc += DVector::from_vec(c.clone()) * tk;
                    tk *= t;
                }
                acc
            }
        }
    }

    pub fn eval_dot(&self, t: f64) -> DVector<f64> {
        match self {
            VectorEntry::Constant { value } => DVector::zeros(value.len()),
            VectorEntry::Table { .. } => unreachable!("table vectors are grid-bound"),
            VectorEntry::Polynomial { coeffs } => {
                let dim = coeffs[0].len();
                let mut acc = DVector::zeros(dim);
                let mut tk = 1.0;
                for (k, c) in coeffs.iter().enumerate().skip(1) {
                    acc += DVector::from_vec(c.clone()) * (k as f64 * tk);
                    tk *= t;
                }
                acc
            }
        }
    }

    pub fn materialize(&self, grid: &TimeGrid, name: &str) -> Result<Vec<DVector<f64>>, CliError> {
        match self {
            VectorEntry::Table { values } => {
                if values.len() != grid.len() {
                    return Err(CliError::validation(
                        name,
                        format!("grid mismatch: {} values for {} nodes", values.len(), grid.len()),
                    ));
                }
                Ok(values.iter().map(|v| DVector::from_vec(v.clone())).collect())
            }
            _ => Ok(grid.nodes().iter().map(|&t| self.eval(t)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadformSection {
    pub m: usize,
    pub n: usize,
    pub k11: String,
    pub k22: String,
    pub k12: String,
    pub l11: String,
    pub l22: String,
    pub l12: String,
    pub q1: String,
    pub q2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqSection {
    pub y0: String,
    pub a: String,
    pub b: String,
    pub c: String,
    pub p0: String,
    pub p1: String,
    pub p2: String,
    pub q1: String,
    pub q2: String,
    pub r1: String,
    pub r2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqcSection {
    pub y0: String,
    /// Linear state kernel (p x p); `f0(t,s,y) = linear(t,s) y + square_gain (y .* y)`.
    pub f0_linear: String,
    #[serde(default)]
    pub f0_square_gain: f64,
    pub f1: String,
    pub f2: String,
    /// Quadratic state-cost kernel (p x p);
    /// `g0(t,y) = 0.5 y^T quad(t) y + cubic_gain sum y_i^3 / 3`.
    pub g0_quadratic: String,
    #[serde(default)]
    pub g0_cubic_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2: Option<String>,
    pub g11: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g12: Option<String>,
    pub g22: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PursuitSection {
    pub y0: String,
    pub a: String,
    pub b: String,
    pub c: String,
    pub m: String,
    pub m0: String,
    pub m1: String,
    pub q: String,
    pub r: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub seed: u64,
    pub override_certification: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-8,
            max_iter: 200,
            damping: 0.5,
            seed: 0,
            override_certification: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

/// On-disk config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub problem: ProblemKind,
    pub grid: GridSection,
    #[serde(default)]
    pub kernels: BTreeMap<String, KernelEntry>,
    #[serde(default)]
    pub vectors: BTreeMap<String, VectorEntry>,
    #[serde(default)]
    pub matrices: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadform: Option<QuadformSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lq: Option<LqSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqc: Option<LqcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pursuit: Option<PursuitSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A loaded, validated configuration with its problem built eagerly.
pub struct RunConfig {
    pub file: ConfigFile,
    pub built: BuiltProblem,
}

/// Problem constructed from a config, dispatchable to the solvers.
pub enum BuiltProblem {
    Quadform(Box<BlockQuadraticForm>),
    Lq(Box<LQGameProblem>),
    Lqc(Box<LQCProblem>),
    Pursuit(Box<PursuitProblem>),
}

impl BuiltProblem {
    pub fn kind(&self) -> ProblemKind {
        match self {
            BuiltProblem::Quadform(_) => ProblemKind::Quadform,
            BuiltProblem::Lq(_) => ProblemKind::Lq,
            BuiltProblem::Lqc(_) => ProblemKind::Lqc,
            BuiltProblem::Pursuit(_) => ProblemKind::Pursuit,
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let file: ConfigFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if file.schema_version != 1 {
        return Err(CliError::validation(
            "schema_version",
            format!("unsupported version {}", file.schema_version),
        ));
    }
    let built = build_problem(&file)?;
    Ok(RunConfig { file, built })
}

struct Resolver<'a> {
    file: &'a ConfigFile,
}

impl<'a> Resolver<'a> {
    fn kernel(&self, name: &str) -> Result<KernelSpec, CliError> {
        self.file
            .kernels
            .get(name)
            .ok_or_else(|| CliError::validation("kernels", format!("kernel '{name}' is not defined")))?
            .to_spec(name)
    }

    fn vector(&self, name: &str) -> Result<&'a VectorEntry, CliError> {
        self.file
            .vectors
            .get(name)
            .ok_or_else(|| CliError::validation("vectors", format!("vector '{name}' is not defined")))
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>, CliError> {
        let rows = self
            .file
            .matrices
            .get(name)
            .ok_or_else(|| CliError::validation("matrices", format!("matrix '{name}' is not defined")))?;
        to_dmatrix(rows, name)
    }
}

fn grid_from(file: &ConfigFile) -> Result<TimeGrid, CliError> {
    let t1 = file
        .grid
        .t1
        .ok_or_else(|| CliError::validation("grid.t1", "required for this problem kind"))?;
    TimeGrid::new(file.grid.t0, t1, file.grid.n, file.grid.rule).map_err(CliError::from)
}

fn expect_shape(
    spec: &KernelSpec,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<(), CliError> {
    let (r, c) = spec.shape().map_err(CliError::from)?;
    if r != rows || c != cols {
        return Err(CliError::validation(
            name,
            format!("expected {rows}x{cols}, found {r}x{c}"),
        ));
    }
    Ok(())
}

fn build_problem(file: &ConfigFile) -> Result<BuiltProblem, CliError> {
    let r = Resolver { file };
    match file.problem {
        ProblemKind::Quadform => {
            let section = file
                .quadform
                .as_ref()
                .ok_or_else(|| CliError::validation("quadform", "missing section"))?;
            let grid = grid_from(file)?;
            let (m, n) = (section.m, section.n);
            let k11s = r.kernel(&section.k11)?;
            let k22s = r.kernel(&section.k22)?;
            let k12s = r.kernel(&section.k12)?;
            let l11s = r.kernel(&section.l11)?;
            let l22s = r.kernel(&section.l22)?;
            let l12s = r.kernel(&section.l12)?;
            expect_shape(&k11s, m, m, &section.k11)?;
            expect_shape(&k22s, n, n, &section.k22)?;
            expect_shape(&k12s, m, n, &section.k12)?;
            expect_shape(&l11s, m, m, &section.l11)?;
            expect_shape(&l22s, n, n, &section.l22)?;
            expect_shape(&l12s, m, n, &section.l12)?;
            let q1 = r.vector(&section.q1)?.materialize(&grid, &section.q1)?;
            let q2 = r.vector(&section.q2)?.materialize(&grid, &section.q2)?;
            let form = BlockQuadraticForm::new(
                grid.clone(),
                k11s.materialize1(&grid)?,
                k22s.materialize1(&grid)?,
                k12s.materialize1(&grid)?,
                l11s.materialize2(&grid)?,
                l22s.materialize2(&grid)?,
                l12s.materialize2(&grid)?,
                q1,
                q2,
            )?;
            Ok(BuiltProblem::Quadform(Box::new(form)))
        }
        ProblemKind::Lq => {
            let section = file
                .lq
                .as_ref()
                .ok_or_else(|| CliError::validation("lq", "missing section"))?;
            let grid = grid_from(file)?;
            let a = r.kernel(&section.a)?.materialize2(&grid)?;
            let b = r.kernel(&section.b)?.materialize2(&grid)?;
            let c = r.kernel(&section.c)?.materialize2(&grid)?;
            let y0 = r.vector(&section.y0)?.materialize(&grid, &section.y0)?;
            let problem = LQGameProblem {
                grid: grid.clone(),
                y0,
                a,
                b,
                c,
                p0: r.matrix(&section.p0)?,
                p1: r.kernel(&section.p1)?.materialize1(&grid)?,
                p2: r.kernel(&section.p2)?.materialize2(&grid)?,
                q1: r.kernel(&section.q1)?.materialize1(&grid)?,
                q2: r.kernel(&section.q2)?.materialize2(&grid)?,
                r1: r.kernel(&section.r1)?.materialize1(&grid)?,
                r2: r.kernel(&section.r2)?.materialize2(&grid)?,
            };
            problem.validate()?;
            Ok(BuiltProblem::Lq(Box::new(problem)))
        }
        ProblemKind::Lqc => {
            let section = file
                .lqc
                .as_ref()
                .ok_or_else(|| CliError::validation("lqc", "missing section"))?;
            let grid = grid_from(file)?;
            let problem = build_lqc(&r, section, &grid)?;
            Ok(BuiltProblem::Lqc(Box::new(problem)))
        }
        ProblemKind::Pursuit => {
            let section = file
                .pursuit
                .as_ref()
                .ok_or_else(|| CliError::validation("pursuit", "missing section"))?;
            let bracket = file
                .grid
                .t1_bracket
                .ok_or_else(|| CliError::validation("grid.t1_bracket", "required for pursuit"))?;
            let y0_entry = r.vector(&section.y0)?.clone();
            if !y0_entry.is_closed_form() {
                return Err(CliError::validation(
                    &section.y0,
                    "pursuit needs a closed-form initial trajectory",
                ));
            }
            let y0_dot = y0_entry.clone();
            let problem = PursuitProblem {
                t0: file.grid.t0,
                nodes: file.grid.n,
                y0: Arc::new(move |t| y0_entry.eval(t)),
                y0_dot: Arc::new(move |t| y0_dot.eval_dot(t)),
                a: r.kernel(&section.a)?,
                b: r.kernel(&section.b)?,
                c: r.kernel(&section.c)?,
                capture: r.matrix(&section.m)?,
                m0: r.matrix(&section.m0)?,
                m1: r.matrix(&section.m1)?,
                q: r.matrix(&section.q)?,
                r: r.matrix(&section.r)?,
                t1_bracket: bracket,
            };
            problem.validate()?;
            Ok(BuiltProblem::Pursuit(Box::new(problem)))
        }
    }
}

fn build_lqc(r: &Resolver, s: &LqcSection, grid: &TimeGrid) -> Result<LQCProblem, CliError> {
    let y0 = r.vector(&s.y0)?.materialize(grid, &s.y0)?;
    let p = y0
        .first()
        .map(|v| v.len())
        .ok_or_else(|| CliError::validation(&s.y0, "empty trajectory"))?;
    let lin = r.kernel(&s.f0_linear)?.materialize2(grid)?;
    expect_kernel2(&lin, p, p, &s.f0_linear)?;
    let f1k = r.kernel(&s.f1)?.materialize2(grid)?;
    let f2k = r.kernel(&s.f2)?.materialize2(grid)?;
    if f1k.rows() != p || f2k.rows() != p {
        return Err(CliError::validation("lqc", "F1 and F2 must have p rows"));
    }
    let m = f1k.cols();
    let n = f2k.cols();
    let quad = r.kernel(&s.g0_quadratic)?.materialize1(grid)?;
    expect_kernel1(&quad, p, p, &s.g0_quadratic)?;
    // The analytic gradient of the quadratic state cost assumes symmetry.
    if quad.symmetry_defect() > 1e-9 {
        return Err(CliError::validation(
            &s.g0_quadratic,
            "quadratic state-cost kernel must be symmetric",
        ));
    }
    let g11 = r.kernel(&s.g11)?.materialize1(grid)?;
    expect_kernel1(&g11, m, m, &s.g11)?;
    let g22 = r.kernel(&s.g22)?.materialize1(grid)?;
    expect_kernel1(&g22, n, n, &s.g22)?;
    let g12 = match &s.g12 {
        Some(name) => {
            let k = r.kernel(name)?.materialize1(grid)?;
            expect_kernel1(&k, m, n, name)?;
            k
        }
        None => Kernel1::zeros(grid.len(), m, n),
    };
    let g1_nodes: Vec<RowDVector<f64>> = match &s.g1 {
        Some(name) => r
            .vector(name)?
            .materialize(grid, name)?
            .into_iter()
            .map(|v| v.transpose())
            .collect(),
        None => vec![RowDVector::zeros(m); grid.len()],
    };
    let g2_nodes: Vec<RowDVector<f64>> = match &s.g2 {
        Some(name) => r
            .vector(name)?
            .materialize(grid, name)?
            .into_iter()
            .map(|v| v.transpose())
            .collect(),
        None => vec![RowDVector::zeros(n); grid.len()],
    };
    if g1_nodes.iter().any(|v| v.len() != m) || g2_nodes.iter().any(|v| v.len() != n) {
        return Err(CliError::validation(
            "lqc",
            "g1 and g2 must match the control dimensions",
        ));
    }

    let ix = NodeIndexer::new(grid);
    let gamma_f = s.f0_square_gain;
    let gamma_g = s.g0_cubic_gain;
    let lin_f0 = lin.clone();
    let ix_f0 = ix.clone();
    let lin_grad = lin;
    let ix_grad = ix.clone();
    let f1_fn = f1k;
    let ix_f1 = ix.clone();
    let f2_fn = f2k;
    let ix_f2 = ix.clone();
    let quad_g0 = quad.clone();
    let ix_g0 = ix.clone();
    let quad_grad = quad;
    let ix_g0g = ix.clone();
    let g1_fn = g1_nodes;
    let ix_g1 = ix.clone();
    let g2_fn = g2_nodes;
    let ix_g2 = ix.clone();
    let g11_fn = g11;
    let ix_g11 = ix.clone();
    let g12_fn = g12;
    let ix_g12 = ix.clone();
    let g22_fn = g22;
    let ix_g22 = ix;

    Ok(LQCProblem {
        grid: grid.clone(),
        y0,
        state_dim: p,
        min_dim: m,
        max_dim: n,
        f0: Arc::new(move |t, sv, y| {
            let mut out = lin_f0.at(ix_f0.index(t), ix_f0.index(sv)) * y;
            if gamma_f != 0.0 {
                out += gamma_f * y.component_mul(y);
            }
            out
        }),
        f1: Arc::new(move |t, sv, _| f1_fn.at(ix_f1.index(t), ix_f1.index(sv)).clone()),
        f2: Arc::new(move |t, sv, _| f2_fn.at(ix_f2.index(t), ix_f2.index(sv)).clone()),
        g0: Arc::new(move |t, y| {
            let mut g = 0.5 * y.dot(&(quad_g0.at(ix_g0.index(t)) * y));
            if gamma_g != 0.0 {
                g += gamma_g * y.iter().map(|x| x.powi(3)).sum::<f64>() / 3.0;
            }
            g
        }),
        g1: Arc::new(move |t, _| g1_fn[ix_g1.index(t)].clone()),
        g2: Arc::new(move |t, _| g2_fn[ix_g2.index(t)].clone()),
        g11: Arc::new(move |t, _| g11_fn.at(ix_g11.index(t)).clone()),
        g12: Arc::new(move |t, _| g12_fn.at(ix_g12.index(t)).clone()),
        g22: Arc::new(move |t, _| g22_fn.at(ix_g22.index(t)).clone()),
        grad_f0: {
            let ix = ix_grad.clone();
            Arc::new(move |t, sv, y| {
                let mut j = lin_grad.at(ix.index(t), ix.index(sv)).clone();
                if gamma_f != 0.0 {
                    for d in 0..y.len() {
                        j[(d, d)] += 2.0 * gamma_f * y[d];
                    }
                }
                j
            })
        },
        grad_f1_u: Arc::new(move |_, _, y, _| DMatrix::zeros(y.len(), y.len())),
        grad_f2_v: Arc::new(move |_, _, y, _| DMatrix::zeros(y.len(), y.len())),
        grad_g0: {
            let ix = ix_g0g.clone();
            Arc::new(move |t, y| {
                let mut g = quad_grad.at(ix.index(t)) * y;
                if gamma_g != 0.0 {
                    for d in 0..y.len() {
                        g[d] += gamma_g * y[d] * y[d];
                    }
                }
                g
            })
        },
        grad_g1_u: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        grad_g2_v: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        grad_g11_quad: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        grad_g12_bilin: Arc::new(move |_, y, _, _| DVector::zeros(y.len())),
        grad_g22_quad: Arc::new(move |_, y, _| DVector::zeros(y.len())),
        fd_gradients: false,
    })
}

fn expect_kernel1(k: &Kernel1, rows: usize, cols: usize, name: &str) -> Result<(), CliError> {
    if k.rows() != rows || k.cols() != cols {
        return Err(CliError::validation(
            name,
            format!("expected {rows}x{cols}, found {}x{}", k.rows(), k.cols()),
        ));
    }
    Ok(())
}

fn expect_kernel2(k: &Kernel2, rows: usize, cols: usize, name: &str) -> Result<(), CliError> {
    if k.rows() != rows || k.cols() != cols {
        return Err(CliError::validation(
            name,
            format!("expected {rows}x{cols}, found {}x{}", k.rows(), k.cols()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_lq() -> &'static str {
        r#"{
          "schema_version": 1,
          "problem": "lq",
          "grid": { "t0": 0.0, "t1": 1.0, "n": 5 },
          "kernels": {
            "zero": { "family": "constant", "matrix": [[0.0]] },
            "one": { "family": "constant", "matrix": [[1.0]] },
            "neg": { "family": "constant", "matrix": [[-1.0]] }
          },
          "vectors": { "start": { "family": "constant", "value": [0.0] } },
          "matrices": { "none": [[0.0]] },
          "lq": {
            "y0": "start", "a": "zero", "b": "zero", "c": "zero",
            "p0": "none", "p1": "zero", "p2": "zero",
            "q1": "one", "q2": "zero", "r1": "neg", "r2": "zero"
          }
        }"#
    }

    #[test]
    fn minimal_lq_config_loads() {
        let config = parse_config(minimal_lq()).unwrap();
        assert_eq!(config.built.kind(), ProblemKind::Lq);
        assert_eq!(config.file.solver.tol, 1e-8);
    }

    #[test]
    fn config_round_trips_through_serialization() {
        let config = parse_config(minimal_lq()).unwrap();
        let text = serde_json::to_string(&config.file).unwrap();
        let again = parse_config(&text).unwrap();
        assert_eq!(config.file, again.file);
    }

    #[test]
    fn undefined_kernel_is_named() {
        let text = minimal_lq().replace("\"a\": \"zero\"", "\"a\": \"P9\"");
        match parse_config(&text) {
            Err(CliError::Validation { constraint, .. }) => {
                assert!(constraint.contains("P9"), "message: {constraint}");
            }
            other => panic!("expected validation error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn mis_sized_table_reports_grid_mismatch() {
        let text = minimal_lq().replace(
            "\"one\": { \"family\": \"constant\", \"matrix\": [[1.0]] }",
            "\"one\": { \"family\": \"table\", \"matrices\": [[[1.0]], [[1.0]]] }",
        );
        let err = match parse_config(&text) {
            Err(e) => e,
            Ok(_) => panic!("mis-sized table accepted"),
        };
        assert!(err.to_string().contains("table has 2 matrices"), "{err}");
    }

    #[test]
    fn malformed_json_reports_position() {
        match parse_config("{ not json") {
            Err(CliError::Parse { line, column, .. }) => {
                assert!(line >= 1 && column >= 1);
            }
            other => panic!("expected parse error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let text = minimal_lq().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(
            parse_config(&text),
            Err(CliError::Validation { .. })
        ));
    }
}
