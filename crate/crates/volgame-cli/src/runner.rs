//! Dispatch: solve per problem kind, serialize artifacts, and recompute
//! every reported residual from the serialized outputs rather than from
//! solver internals.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, RowDVector};
use volgame::error::Error;
use volgame::lqcgame::{self, PicardOptions};
use volgame::lqgame;
use volgame::pursuit::{self, PursuitOptions, TerminalState};
use volgame::quadform::{self, ControlPair, SolveOptions};
use volgame::volterra;

use crate::artifacts::{self, RunReport, TerminalRecord, Trajectory};
use crate::config::{BuiltProblem, ProblemKind, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    QuadformSaddle,
    QuadformCheck,
    LqSolve,
    LqcSolveLower,
    LqcSolveUpper,
    PursuitSolve,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::QuadformSaddle => "quadform saddle",
            Action::QuadformCheck => "quadform check",
            Action::LqSolve => "lq solve",
            Action::LqcSolveLower => "lqc solve --side lower",
            Action::LqcSolveUpper => "lqc solve --side upper",
            Action::PursuitSolve => "pursuit solve",
        }
    }

    fn kind(&self) -> ProblemKind {
        match self {
            Action::QuadformSaddle | Action::QuadformCheck => ProblemKind::Quadform,
            Action::LqSolve => ProblemKind::Lq,
            Action::LqcSolveLower | Action::LqcSolveUpper => ProblemKind::Lqc,
            Action::PursuitSolve => ProblemKind::Pursuit,
        }
    }
}

/// Command-line overrides applied on top of the config's solver section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<std::path::PathBuf>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub override_certification: bool,
}

pub struct Effective {
    pub solve: SolveOptions,
    pub picard: PicardOptions,
    pub pursuit: PursuitOptions,
    pub seed: u64,
}

pub fn effective_options(config: &RunConfig, overrides: &Overrides) -> Effective {
    let s = &config.file.solver;
    let tol = overrides.tol.unwrap_or(s.tol);
    Effective {
        solve: SolveOptions {
            residual_tol: tol,
            override_certification: s.override_certification || overrides.override_certification,
            ..SolveOptions::default()
        },
        picard: PicardOptions {
            damping: s.damping,
            max_iter: s.max_iter,
            tolerance: tol,
        },
        pursuit: PursuitOptions {
            inner_damping: s.damping,
            inner_max_iter: s.max_iter.max(1),
            ..PursuitOptions::default()
        },
        seed: overrides.seed.unwrap_or(s.seed),
    }
}

fn new_report(config: &RunConfig, action: Action) -> RunReport {
    RunReport {
        schema_version: 1,
        problem: config.built.kind(),
        command: action.name().to_string(),
        config_echo: serde_json::to_value(&config.file).expect("config serializes"),
        certification: None,
        residuals: BTreeMap::new(),
        iterations: BTreeMap::new(),
        value: None,
        terminal: None,
        fd_gradients: None,
        wall_time_ms: 0,
        exit_status: 0,
    }
}

fn write_outputs(
    dir: &Path,
    traj: Option<&Trajectory>,
    report: &RunReport,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    if let Some(traj) = traj {
        artifacts::write_atomic(&dir.join("trajectory.csv"), &traj.to_csv())?;
    }
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    artifacts::write_atomic(&dir.join("report.json"), &text)
}

/// Runs one solver action: solve, write artifacts, then recompute the
/// residual table from what was written.
pub fn run(config: &RunConfig, action: Action, overrides: &Overrides) -> Result<RunReport, CliError> {
    if config.built.kind() != action.kind() {
        return Err(CliError::validation(
            "problem",
            format!(
                "config describes a '{}' problem but the command is '{}'",
                config.built.kind(),
                action.name()
            ),
        ));
    }
    let started = Instant::now();
    let opts = effective_options(config, overrides);
    let out_dir = overrides
        .out
        .clone()
        .unwrap_or_else(|| std::path::PathBuf::from(&config.file.output.dir));
    let mut report = new_report(config, action);

    let traj = match (&config.built, action) {
        (BuiltProblem::Quadform(form), Action::QuadformCheck) => {
            let cert = form.certify(&opts.solve)?;
            report
                .residuals
                .insert("min_eig_11".into(), cert.minimizer.min_eig_11);
            report
                .residuals
                .insert("max_eig_22".into(), cert.maximizer.max_eig_22);
            report
                .residuals
                .insert("worst_condition".into(), cert.worst_condition);
            let block_m = quadform::block_m_condition(
                form.k11(),
                form.l11(),
                form.grid(),
                opts.solve.definiteness_tol,
            )?;
            let mercer = quadform::mercer_sample_check(
                form.l11(),
                form.grid(),
                200,
                opts.seed,
                opts.solve.definiteness_tol,
            )?;
            report
                .residuals
                .insert("block_m_condition".into(), if block_m { 1.0 } else { 0.0 });
            report
                .residuals
                .insert("mercer_sample".into(), if mercer { 1.0 } else { 0.0 });
            report.exit_status = if cert.certified { 0 } else { 2 };
            report.certification = Some(cert);
            None
        }
        (BuiltProblem::Quadform(form), Action::QuadformSaddle) => {
            let cert = form.certify(&opts.solve)?;
            if !cert.certified && !opts.solve.override_certification {
                report.certification = Some(cert);
                report.exit_status = 2;
                None
            } else {
                report.certification = Some(cert);
                let mut sopts = opts.solve.clone();
                sopts.override_certification = true;
                let w = form.saddle_point(&sopts)?;
                Some(Trajectory {
                    t: form.grid().nodes().to_vec(),
                    y: None,
                    u: Some(w.w1),
                    v: Some(w.w2),
                    psi: None,
                })
            }
        }
        (BuiltProblem::Lq(problem), Action::LqSolve) => {
            match lqgame::solve_lq_game(problem, &opts.solve) {
                Ok(sol) => {
                    report.value = Some(sol.value);
                    report.certification = Some(sol.certification.clone());
                    Some(Trajectory {
                        t: problem.grid.nodes().to_vec(),
                        y: Some(sol.y_star),
                        u: Some(sol.u_star),
                        v: Some(sol.v_star),
                        psi: None,
                    })
                }
                Err(Error::NotCertified(cert)) => {
                    report.certification = Some(*cert);
                    report.exit_status = 2;
                    None
                }
                Err(e) => return Err(e.into()),
            }
        }
        (BuiltProblem::Lqc(problem), Action::LqcSolveLower | Action::LqcSolveUpper) => {
            let solver = if action == Action::LqcSolveLower {
                lqcgame::solve_lower_game
            } else {
                lqcgame::solve_upper_game
            };
            report.fd_gradients = Some(problem.fd_gradients);
            match solver(problem, &opts.picard) {
                Ok((pair, u, v)) => {
                    report
                        .iterations
                        .insert("picard".into(), pair.iterations as u64);
                    report.value = Some(lqcgame::evaluate_cost(problem, &u, &v)?);
                    Some(Trajectory {
                        t: problem.grid.nodes().to_vec(),
                        y: Some(pair.y),
                        u: Some(u),
                        v: Some(v),
                        psi: Some(pair.psi),
                    })
                }
                Err(Error::NoConvergence {
                    iterations,
                    residual,
                }) => {
                    report.iterations.insert("picard".into(), iterations as u64);
                    report.residuals.insert("last_residual".into(), residual);
                    report.exit_status = 3;
                    None
                }
                Err(e) => return Err(e.into()),
            }
        }
        (BuiltProblem::Pursuit(problem), Action::PursuitSolve) => {
            match pursuit::solve_pursuit(problem, &opts.pursuit) {
                Ok(sol) => {
                    report
                        .iterations
                        .insert("outer".into(), sol.outer_iterations as u64);
                    report
                        .iterations
                        .insert("inner_last".into(), sol.inner_iterations as u64);
                    report.terminal = Some(TerminalRecord {
                        t1: sol.terminal.t1,
                        y: sol.terminal.y.iter().copied().collect(),
                        u: sol.terminal.u.iter().copied().collect(),
                        v: sol.terminal.v.iter().copied().collect(),
                        w: sol.terminal.w.iter().copied().collect(),
                        psi_cap: sol.terminal.psi_cap.iter().copied().collect(),
                        omega: sol.terminal.omega,
                    });
                    Some(Trajectory {
                        t: sol.grid.nodes().to_vec(),
                        y: Some(sol.y_star),
                        u: Some(sol.u_star),
                        v: Some(sol.v_star),
                        psi: Some(sol.psi),
                    })
                }
                Err(Error::CaptureNotBracketed {
                    t_lo,
                    t_hi,
                    r_lo,
                    r_hi,
                }) => {
                    report.residuals.insert("bracket_lo_t".into(), t_lo);
                    report.residuals.insert("bracket_hi_t".into(), t_hi);
                    report
                        .residuals
                        .insert("bracket_lo_residual".into(), r_lo);
                    report
                        .residuals
                        .insert("bracket_hi_residual".into(), r_hi);
                    report.exit_status = 4;
                    None
                }
                Err(Error::InnerNoConvergence { t1, residual }) => {
                    report.residuals.insert("inner_t1".into(), t1);
                    report.residuals.insert("last_residual".into(), residual);
                    report.exit_status = 3;
                    None
                }
                Err(e) => return Err(e.into()),
            }
        }
        _ => unreachable!("kind checked above"),
    };

    write_outputs(&out_dir, traj.as_ref(), &report)?;
    if report.exit_status == 0 && traj.is_some() {
        // Residuals come from the artifacts on disk, not solver state.
        let parsed = artifacts::read_trajectory(&out_dir)?;
        report.residuals = recompute_residuals(config, action, &parsed, report.terminal.as_ref())?;
    }
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    write_outputs(&out_dir, traj.as_ref(), &report)?;
    Ok(report)
}

fn require<T: Clone>(opt: &Option<T>, what: &str) -> Result<T, CliError> {
    opt.clone()
        .ok_or_else(|| CliError::validation("trajectory", format!("missing {what} columns")))
}

/// Independent residual recomputation from parsed artifacts.
pub fn recompute_residuals(
    config: &RunConfig,
    action: Action,
    traj: &Trajectory,
    terminal: Option<&TerminalRecord>,
) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    match &config.built {
        BuiltProblem::Quadform(form) => {
            let w = ControlPair {
                w1: require(&traj.u, "u")?,
                w2: require(&traj.v, "v")?,
            };
            let (r1, r2) = form.stationarity_residual(&w)?;
            out.insert("stationarity_min".into(), max_norm(&r1));
            out.insert("stationarity_max".into(), max_norm(&r2));
        }
        BuiltProblem::Lq(problem) => {
            let u = require(&traj.u, "u")?;
            let v = require(&traj.v, "v")?;
            let y = require(&traj.y, "y")?;
            let form = lqgame::assemble_form(problem)?;
            let (r1, r2) = form.stationarity_residual(&ControlPair {
                w1: u.clone(),
                w2: v.clone(),
            })?;
            out.insert("stationarity_min".into(), max_norm(&r1));
            out.insert("stationarity_max".into(), max_norm(&r2));
            let direct = volterra::solve_volterra_linear(
                &problem.y0,
                &problem.a,
                &problem.b,
                &problem.c,
                &u,
                &v,
                &problem.grid,
            )?;
            out.insert("state".into(), pointwise_gap(&y, &direct));
        }
        BuiltProblem::Lqc(problem) => {
            let u = require(&traj.u, "u")?;
            let v = require(&traj.v, "v")?;
            let y = require(&traj.y, "y")?;
            let psi = require(&traj.psi, "psi")?;
            out.insert(
                "state".into(),
                lqcgame::state_defect(problem, &y, &u, &v),
            );
            out.insert(
                "costate".into(),
                lqcgame::costate_defect(problem, &y, &psi, &u, &v),
            );
            let lower = action != Action::LqcSolveUpper;
            let mut cu: f64 = 0.0;
            let mut cv: f64 = 0.0;
            for (k, &t) in problem.grid.nodes().iter().enumerate() {
                let (uk, vk) = if lower {
                    let vk = lqcgame::control_v_lower(problem, t, &y[k], &psi)?;
                    let uk = lqcgame::control_u_given_v(problem, t, &y[k], &vk, &psi)?;
                    (uk, vk)
                } else {
                    let uk = lqcgame::control_u_upper(problem, t, &y[k], &psi)?;
                    let vk = lqcgame::control_v_given_u(problem, t, &y[k], &uk, &psi)?;
                    (uk, vk)
                };
                cu = cu.max((&u[k] - uk).abs().max());
                cv = cv.max((&v[k] - vk).abs().max());
            }
            out.insert("control_u".into(), cu);
            out.insert("control_v".into(), cv);
        }
        BuiltProblem::Pursuit(problem) => {
            let record = terminal.ok_or_else(|| {
                CliError::validation("report", "pursuit verification needs the terminal record")
            })?;
            let u = require(&traj.u, "u")?;
            let v = require(&traj.v, "v")?;
            let y = require(&traj.y, "y")?;
            let psi = require(&traj.psi, "psi")?;
            let data = pursuit::discretize(problem, record.t1)?;
            let t_state = TerminalState {
                t1: record.t1,
                y: DVector::from_vec(record.y.clone()),
                u: DVector::from_vec(record.u.clone()),
                v: DVector::from_vec(record.v.clone()),
                w: DVector::from_vec(record.w.clone()),
                psi_cap: RowDVector::from_vec(record.psi_cap.clone()),
                omega: record.omega,
            };
            let res = pursuit::evaluate_residuals(problem, &data, &t_state, &psi, &u, &v, &y)?;
            for (name, value) in res.as_pairs() {
                out.insert(name.to_string(), value);
            }
        }
    }
    Ok(out)
}

fn max_norm(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|x| x.abs().max()).fold(0.0, f64::max)
}

fn pointwise_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().max())
        .fold(0.0, f64::max)
}

fn action_from_command(command: &str) -> Result<Action, CliError> {
    match command {
        "quadform saddle" => Ok(Action::QuadformSaddle),
        "quadform check" => Ok(Action::QuadformCheck),
        "lq solve" => Ok(Action::LqSolve),
        "lqc solve --side lower" => Ok(Action::LqcSolveLower),
        "lqc solve --side upper" => Ok(Action::LqcSolveUpper),
        "pursuit solve" => Ok(Action::PursuitSolve),
        other => Err(CliError::validation(
            "report.command",
            format!("unknown command '{other}'"),
        )),
    }
}

/// Re-runs the residual suite against previously serialized artifacts and
/// prints one pass/fail line per check.
pub fn verify(
    config: &RunConfig,
    artifacts_dir: &Path,
    tol: Option<f64>,
) -> Result<(RunReport, bool), CliError> {
    let prior = artifacts::read_report(artifacts_dir)?;
    let action = action_from_command(&prior.command)?;
    let traj = artifacts::read_trajectory(artifacts_dir)?;
    let residuals = recompute_residuals(config, action, &traj, prior.terminal.as_ref())?;
    let threshold = tol.unwrap_or(1e-6);
    let mut all_pass = true;
    for (name, value) in &residuals {
        let pass = *value < threshold;
        all_pass &= pass;
        println!(
            "[{}] {name} = {value:.3e} (tol {threshold:.1e})",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    let mut report = prior;
    report.command = format!("verify ({})", action.name());
    report.residuals = residuals;
    report.exit_status = if all_pass { 0 } else { 1 };
    Ok((report, all_pass))
}
