//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Tolerances are pinned in the assertions.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{dmatrix, DMatrix, DVector, RowDVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volgame::grid::{Kernel1, Kernel2, KernelSpec, QuadratureRule, TimeGrid};
use volgame::lqcgame::{self, LQCProblem, PicardOptions};
use volgame::lqgame::{self, LQGameProblem};
use volgame::pursuit::{self, PursuitOptions, PursuitProblem, TerminalState};
use volgame::quadform::{self, BlockQuadraticForm, ControlPair, SolveOptions, SpectralBasis};
use volgame::volterra;

fn unit_grid(n: usize) -> TimeGrid {
    TimeGrid::new(0.0, 1.0, n, QuadratureRule::Trapezoid).unwrap()
}

fn random_sym(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-scale..scale));
    0.5 * (&raw + raw.transpose())
}

fn random_kernel2(
    rng: &mut ChaCha8Rng,
    grid: &TimeGrid,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Kernel2 {
    let c0 = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale));
    let ct = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale));
    let cs = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale));
    Kernel2::from_fn(grid.len(), |i, j| {
        let (t, s) = (grid.nodes()[i], grid.nodes()[j]);
        &c0 + &ct * t + &cs * s
    })
    .unwrap()
}

fn random_factor_kernel(
    rng: &mut ChaCha8Rng,
    grid: &TimeGrid,
    d: usize,
    scale: f64,
    sign: f64,
) -> Kernel2 {
    let factors: Vec<Vec<DVector<f64>>> = (0..2)
        .map(|_| {
            let c0 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let c1 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            grid.nodes().iter().map(|&t| &c0 + &c1 * t).collect()
        })
        .collect();
    Kernel2::from_fn(grid.len(), |i, j| {
        let mut acc = DMatrix::zeros(d, d);
        for f in &factors {
            acc += &f[i] * f[j].transpose();
        }
        sign * scale * acc
    })
    .unwrap()
}

fn random_certified_form(seed: u64, n_nodes: usize) -> BlockQuadraticForm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=3usize);
    let n = rng.gen_range(1..=3usize);
    let grid = unit_grid(n_nodes);
    let nn = grid.len();
    let k11 = Kernel1::constant(nn, DMatrix::identity(m, m) + random_sym(&mut rng, m, 0.2));
    let k22 = Kernel1::constant(nn, -DMatrix::identity(n, n) + random_sym(&mut rng, n, 0.2));
    let k12 = Kernel1::constant(nn, DMatrix::from_fn(m, n, |_, _| rng.gen_range(-0.1..0.1)));
    let l11 = random_factor_kernel(&mut rng, &grid, m, 0.15, 1.0);
    let l22 = random_factor_kernel(&mut rng, &grid, n, 0.15, -1.0);
    let l12 = random_kernel2(&mut rng, &grid, m, n, 0.04);
    let q1: Vec<DVector<f64>> = grid
        .nodes()
        .iter()
        .map(|&t| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0) + 0.5 * t))
        .collect();
    let q2: Vec<DVector<f64>> = grid
        .nodes()
        .iter()
        .map(|&t| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0) - 0.3 * t))
        .collect();
    BlockQuadraticForm::new(grid, k11, k22, k12, l11, l22, l12, q1, q2).unwrap()
}

#[test]
fn criterion_1_saddle_certification() {
    let started = Instant::now();
    let opts = SolveOptions::default();
    for seed in 0..20u64 {
        let form = random_certified_form(1000 + seed, 65);
        let nn = form.grid().len();
        let (m, n) = (form.m(), form.n());
        let w = form.saddle_point(&opts).unwrap();
        // Stationarity residual below 1e-7.
        let (r1, r2) = form.stationarity_residual(&w).unwrap();
        let res = r1
            .iter()
            .chain(&r2)
            .map(|v| v.abs().max())
            .fold(0.0_f64, f64::max);
        assert!(res < 1e-7, "seed {seed}: stationarity {res:.3e}");
        // Two-sided saddle inequality against 50 perturbations per side.
        let e_star = form.evaluate(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let slack = 1e-9 * (1.0 + e_star.abs());
        for _ in 0..50 {
            let mut up = w.clone();
            let mut down = w.clone();
            for i in 0..nn {
                for c in 0..m {
                    up.w1[i][c] += rng.gen_range(-0.5..0.5);
                }
                for c in 0..n {
                    down.w2[i][c] += rng.gen_range(-0.5..0.5);
                }
            }
            assert!(form.evaluate(&up).unwrap() >= e_star - slack);
            assert!(form.evaluate(&down).unwrap() <= e_star + slack);
        }
        // Alternating best-response oracle reaches the same point.
        let mut br_opts = opts.clone();
        br_opts.override_certification = true;
        let mut w1 = vec![DVector::zeros(m); nn];
        let mut w2 = vec![DVector::zeros(n); nn];
        for _ in 0..300 {
            let w1_new = form.best_response_min(&w2, &br_opts).unwrap();
            let w2_new = form.best_response_max(&w1_new, &br_opts).unwrap();
            let delta = w1_new
                .iter()
                .zip(&w1)
                .map(|(a, b)| (a - b).abs().max())
                .fold(0.0_f64, f64::max);
            w1 = w1_new;
            w2 = w2_new;
            if delta < 1e-12 {
                break;
            }
        }
        for i in 0..nn {
            assert!(
                (&w1[i] - &w.w1[i]).abs().max() < 1e-8,
                "seed {seed}: oracle mismatch on w1"
            );
            assert!(
                (&w2[i] - &w.w2[i]).abs().max() < 1e-8,
                "seed {seed}: oracle mismatch on w2"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "runtime {elapsed:?} exceeds 30 s");
    println!("[PASS] criterion 1: saddle certification on 20 random forms ({elapsed:?})");
}

#[test]
fn criterion_2_definiteness_chain() {
    let grid = unit_grid(33);
    let nn = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counterexamples = 0;
    for _ in 0..100 {
        let d = rng.gen_range(1..=2usize);
        let shift = rng.gen_range(-0.5..1.5);
        let k = Kernel1::constant(
            nn,
            DMatrix::identity(d, d) * shift + random_sym(&mut rng, d, 0.3),
        );
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -0.4 };
        let l = random_factor_kernel(&mut rng, &grid, d, 0.3, sign);
        let block_m = quadform::block_m_condition(&k, &l, &grid, 1e-9).unwrap();
        let spectral = quadform::check_joint_definiteness(
            &k,
            &l,
            &grid,
            quadform::DefinitenessSign::Positive,
            1e-9,
        )
        .unwrap();
        if block_m && spectral.min_eig_11 <= 0.0 {
            counterexamples += 1;
        }
        if spectral.jointly_pd_11 {
            for _ in 0..30 {
                let w: Vec<DVector<f64>> = (0..nn)
                    .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
                    .collect();
                let mut phi = 0.0;
                for i in 0..nn {
                    phi += grid.weights()[i] * w[i].dot(&(k.at(i) * &w[i]));
                    for j in 0..nn {
                        phi += grid.weights()[i]
                            * grid.weights()[j]
                            * w[i].dot(&(l.at(i, j) * &w[j]));
                    }
                }
                if phi < -1e-10 {
                    counterexamples += 1;
                }
            }
        }
    }
    assert_eq!(counterexamples, 0, "implication chain violated");
    // Spectral reconstruction of a synthesized expansion kernel.
    let basis = SpectralBasis::legendre(&grid, 1, 4).unwrap();
    let raw = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
    let lambda = &raw * raw.transpose();
    let l = basis.synthesize(&lambda).unwrap();
    let report = quadform::spectral_definiteness(&l, &basis, 1e-9).unwrap();
    let gap = (&report.lambda - &lambda).abs().max();
    assert!(gap < 1e-6, "reconstruction gap {gap:.3e}");
    assert!(report.nonnegative);
    println!("[PASS] criterion 2: definiteness implication chain, reconstruction gap {gap:.2e}");
}

#[test]
fn criterion_3_resolvent_accuracy() {
    // Pointwise accuracy against the exponential resolvent.
    for a_val in [-1.0, 0.5, 2.0] {
        let err = |n: usize| {
            let grid = unit_grid(n);
            let a = Kernel2::constant(n, dmatrix![a_val]);
            let s = volterra::resolvent(&a, &grid).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..=i {
                    let exact = a_val * (a_val * (grid.nodes()[i] - grid.nodes()[j])).exp();
                    worst = worst.max((s.at(i, j)[(0, 0)] - exact).abs());
                }
            }
            worst
        };
        let e129 = err(129);
        let e257 = err(257);
        assert!(e129 < 1e-3, "a={a_val}: error {e129:.3e} at n=129");
        assert!(
            e257 < e129 / 3.5,
            "a={a_val}: quadratic order violated ({e129:.3e} -> {e257:.3e})"
        );
    }
    // Direct solve agrees with the control-explicit representation.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for trial in 0..5 {
        let grid = unit_grid(65);
        let nn = grid.len();
        let p = rng.gen_range(1..=2usize);
        let m = rng.gen_range(1..=2usize);
        let n = rng.gen_range(1..=2usize);
        let a = random_kernel2(&mut rng, &grid, p, p, 0.6);
        let b = random_kernel2(&mut rng, &grid, p, m, 0.8);
        let c = random_kernel2(&mut rng, &grid, p, n, 0.8);
        let y0: Vec<DVector<f64>> = grid
            .nodes()
            .iter()
            .map(|&t| DVector::from_fn(p, |r, _| (t + r as f64).sin()))
            .collect();
        let u: Vec<DVector<f64>> = (0..nn)
            .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let v: Vec<DVector<f64>> = (0..nn)
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let direct = volterra::solve_volterra_linear(&y0, &a, &b, &c, &u, &v, &grid).unwrap();
        let tr = volterra::transform(&y0, &a, &b, &c, &grid).unwrap();
        let rep = tr.represent(&u, &v).unwrap();
        let gap = direct
            .iter()
            .zip(&rep)
            .map(|(x, y)| (x - y).abs().max())
            .fold(0.0_f64, f64::max);
        assert!(gap < 1e-7, "trial {trial}: representation gap {gap:.3e}");
    }
    println!("[PASS] criterion 3: resolvent accuracy and representation equivalence");
}

fn random_lq_problem(seed: u64, n_nodes: usize) -> LQGameProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = unit_grid(n_nodes);
    let nn = grid.len();
    let p = rng.gen_range(1..=2usize);
    let m = rng.gen_range(1..=2usize);
    let n = rng.gen_range(1..=2usize);
    let p0 = {
        let f = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-0.6..0.6));
        &f * f.transpose()
    };
    LQGameProblem {
        grid: grid.clone(),
        y0: grid
            .nodes()
            .iter()
            .map(|&t| DVector::from_fn(p, |r, _| 1.0 + 0.3 * t * (r as f64 + 1.0)))
            .collect(),
        a: random_kernel2(&mut rng, &grid, p, p, 0.5),
        b: random_kernel2(&mut rng, &grid, p, m, 0.7),
        c: random_kernel2(&mut rng, &grid, p, n, 0.7),
        p0,
        p1: Kernel1::constant(nn, random_sym(&mut rng, p, 0.5)),
        p2: random_factor_kernel(&mut rng, &grid, p, 0.3, 1.0),
        q1: Kernel1::constant(nn, DMatrix::identity(m, m) + random_sym(&mut rng, m, 0.2)),
        q2: random_factor_kernel(&mut rng, &grid, m, 0.2, 1.0),
        r1: Kernel1::constant(nn, -DMatrix::identity(n, n) * 1.5 + random_sym(&mut rng, n, 0.2)),
        r2: random_factor_kernel(&mut rng, &grid, n, 0.2, -1.0),
    }
}

#[test]
fn criterion_4_lq_assembly_oracle() {
    let started = Instant::now();
    for seed in 0..10u64 {
        let problem = random_lq_problem(4000 + seed, 65);
        let nn = problem.grid.len();
        let m = problem.min_control_dim();
        let n = problem.max_control_dim();
        let form = lqgame::assemble_form(&problem).unwrap();
        let offset = lqgame::control_free_offset(&problem).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        for _ in 0..20 {
            let u: Vec<DVector<f64>> = (0..nn)
                .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let v: Vec<DVector<f64>> = (0..nn)
                .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let direct = lqgame::evaluate_j(&problem, &u, &v).unwrap() - offset;
            let reduced = form
                .evaluate(&ControlPair {
                    w1: u.clone(),
                    w2: v.clone(),
                })
                .unwrap();
            assert!(
                (direct - reduced).abs() <= 1e-7 * direct.abs().max(1.0),
                "seed {seed}: direct {direct} vs assembled {reduced}"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "runtime {elapsed:?} exceeds 60 s");
    println!("[PASS] criterion 4: assembly oracle on 10 random problems ({elapsed:?})");
}

fn overlap_lq_instance(seed: u64) -> LQGameProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = unit_grid(33);
    let nn = grid.len();
    LQGameProblem {
        grid: grid.clone(),
        y0: grid
            .nodes()
            .iter()
            .map(|&t| DVector::from_element(1, 1.0 + 0.2 * t))
            .collect(),
        a: random_kernel2(&mut rng, &grid, 1, 1, 0.4),
        b: random_kernel2(&mut rng, &grid, 1, 1, 0.5),
        c: random_kernel2(&mut rng, &grid, 1, 1, 0.5),
        p0: dmatrix![0.0],
        p1: Kernel1::constant(nn, dmatrix![rng.gen_range(0.3..0.9)]),
        p2: Kernel2::zeros(nn, 1, 1),
        q1: Kernel1::constant(nn, dmatrix![rng.gen_range(0.9..1.4)]),
        q2: Kernel2::zeros(nn, 1, 1),
        r1: Kernel1::constant(nn, dmatrix![-rng.gen_range(1.2..1.9)]),
        r2: Kernel2::zeros(nn, 1, 1),
    }
}

fn nonlinear_lqc(seed: u64, gamma: f64) -> LQCProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = unit_grid(33);
    let nn = grid.len();
    let a0 = rng.gen_range(0.2..0.5);
    let bg = rng.gen_range(0.7..1.0);
    let cg = rng.gen_range(0.6..0.9);
    let p1 = rng.gen_range(0.5..1.0);
    let q = rng.gen_range(0.9..1.2);
    let r = -rng.gen_range(1.3..1.8);
    LQCProblem {
        grid: grid.clone(),
        y0: vec![DVector::from_element(1, 1.0); nn],
        state_dim: 1,
        min_dim: 1,
        max_dim: 1,
        f0: Arc::new(move |_, _, y| DVector::from_element(1, a0 * y[0] + gamma * y[0] * y[0])),
        f1: Arc::new(move |_, _, _| dmatrix![bg]),
        f2: Arc::new(move |_, _, _| dmatrix![cg]),
        g0: Arc::new(move |_, y| 0.5 * p1 * y[0] * y[0] + gamma * y[0].powi(3) / 3.0),
        g1: Arc::new(|_, _| RowDVector::zeros(1)),
        g2: Arc::new(|_, _| RowDVector::zeros(1)),
        g11: Arc::new(move |_, _| dmatrix![q]),
        g12: Arc::new(|_, _| dmatrix![0.05]),
        g22: Arc::new(move |_, _| dmatrix![r]),
        grad_f0: Arc::new(move |_, _, y| dmatrix![a0 + 2.0 * gamma * y[0]]),
        grad_f1_u: Arc::new(|_, _, _, _| dmatrix![0.0]),
        grad_f2_v: Arc::new(|_, _, _, _| dmatrix![0.0]),
        grad_g0: Arc::new(move |_, y| DVector::from_element(1, p1 * y[0] + gamma * y[0] * y[0])),
        grad_g1_u: Arc::new(|_, _, _| DVector::zeros(1)),
        grad_g2_v: Arc::new(|_, _, _| DVector::zeros(1)),
        grad_g11_quad: Arc::new(|_, _, _| DVector::zeros(1)),
        grad_g12_bilin: Arc::new(|_, _, _, _| DVector::zeros(1)),
        grad_g22_quad: Arc::new(|_, _, _| DVector::zeros(1)),
        fd_gradients: false,
    }
}

#[test]
fn criterion_5_lqc_lq_overlap() {
    let picard = PicardOptions {
        damping: 0.5,
        max_iter: 500,
        tolerance: 1e-10,
    };
    for seed in 0..5u64 {
        let lq = overlap_lq_instance(500 + seed);
        let sol = lqgame::solve_lq_game(&lq, &SolveOptions::default()).unwrap();
        let lqc = lqcgame::from_lq(&lq).unwrap();
        let (_, u_low, v_low) = lqcgame::solve_lower_game(&lqc, &picard).unwrap();
        let (_, u_up, v_up) = lqcgame::solve_upper_game(&lqc, &picard).unwrap();
        for k in 0..lq.grid.len() {
            for (got, want) in [
                (&u_low[k], &sol.u_star[k]),
                (&u_up[k], &sol.u_star[k]),
                (&v_low[k], &sol.v_star[k]),
                (&v_up[k], &sol.v_star[k]),
            ] {
                assert!(
                    (got - want).abs().max() < 1e-6,
                    "seed {seed}, node {k}: {got:?} vs {want:?}"
                );
            }
        }
    }
    // Value ordering on genuinely nonlinear instances.
    for seed in 0..5u64 {
        let problem = nonlinear_lqc(700 + seed, 0.12);
        let (_, u_low, v_low) = lqcgame::solve_lower_game(&problem, &picard).unwrap();
        let (_, u_up, v_up) = lqcgame::solve_upper_game(&problem, &picard).unwrap();
        let lower = lqcgame::evaluate_cost(&problem, &u_low, &v_low).unwrap();
        let upper = lqcgame::evaluate_cost(&problem, &u_up, &v_up).unwrap();
        assert!(
            lower <= upper + 1e-7,
            "seed {seed}: lower {lower} above upper {upper}"
        );
    }
    println!("[PASS] criterion 5: lower/upper games match the linear-quadratic saddle");
}

fn pursuit_instance(idx: usize) -> PursuitProblem {
    let base = PursuitProblem {
        t0: 0.0,
        nodes: 129,
        y0: Arc::new(|t| DVector::from_element(1, 1.0 - 0.5 * t)),
        y0_dot: Arc::new(|_| DVector::from_element(1, -0.5)),
        a: KernelSpec::constant_scalar(0.0),
        b: KernelSpec::constant_scalar(1.0),
        c: KernelSpec::constant_scalar(1.0),
        capture: dmatrix![1.0],
        m0: dmatrix![0.0],
        m1: dmatrix![0.5],
        q: dmatrix![1.0],
        r: dmatrix![-2.0],
        t1_bracket: (0.4, 1.9),
    };
    match idx {
        0 => base,
        1 => PursuitProblem {
            y0: Arc::new(|t| DVector::from_element(1, 1.0 - 0.4 * t)),
            y0_dot: Arc::new(|_| DVector::from_element(1, -0.4)),
            a: KernelSpec::constant_scalar(-0.3),
            c: KernelSpec::constant_scalar(0.7),
            m1: dmatrix![0.3],
            r: dmatrix![-1.5],
            t1_bracket: (0.4, 2.2),
            ..base
        },
        _ => PursuitProblem {
            y0: Arc::new(|t| DVector::from_element(1, 1.2 - 0.6 * t)),
            y0_dot: Arc::new(|_| DVector::from_element(1, -0.6)),
            a: KernelSpec::Exponential {
                scale: dmatrix![-0.2],
                rate: dmatrix![0.3],
            },
            b: KernelSpec::Polynomial {
                coeffs: vec![
                    vec![dmatrix![1.0], dmatrix![-0.1]],
                    vec![dmatrix![0.2], dmatrix![0.0]],
                ],
            },
            c: KernelSpec::constant_scalar(0.8),
            m1: dmatrix![0.25],
            r: dmatrix![-1.8],
            t1_bracket: (0.4, 2.1),
            ..base
        },
    }
}

#[test]
fn criterion_6_pursuit_necessary_conditions() {
    let started = Instant::now();
    let opts = PursuitOptions::default();
    // Degenerate no-control case captures exactly where the drift vanishes.
    let degenerate = PursuitProblem {
        t0: 0.0,
        nodes: 129,
        y0: Arc::new(|t| DVector::from_element(1, 1.0 - t)),
        y0_dot: Arc::new(|_| DVector::from_element(1, -1.0)),
        a: KernelSpec::constant_scalar(0.0),
        b: KernelSpec::constant_scalar(0.0),
        c: KernelSpec::constant_scalar(0.0),
        capture: dmatrix![1.0],
        m0: dmatrix![0.0],
        m1: dmatrix![0.0],
        q: dmatrix![1.0],
        r: dmatrix![-1.0],
        t1_bracket: (0.5, 1.5),
    };
    let sol = pursuit::solve_pursuit(&degenerate, &opts).unwrap();
    assert!(
        (sol.terminal.t1 - 1.0).abs() < 1e-8,
        "degenerate capture time {}",
        sol.terminal.t1
    );
    // Controlled instances: full residual suite below 1e-6.
    for idx in 0..3 {
        let problem = pursuit_instance(idx);
        let sol = pursuit::solve_pursuit(&problem, &opts).unwrap();
        for (name, value) in sol.residuals.as_pairs() {
            assert!(
                value < 1e-6,
                "instance {idx}: residual {name} = {value:.3e}"
            );
        }
        // Variational capture condition at termination, with the eliminated
        // scalar multiplier: Psi W + omega Phi_t1 + F_t1 + G(t1) = 0.
        let term = &sol.terminal;
        let g_t1 = 0.5
            * (term.y.dot(&(&problem.m1 * &term.y))
                + term.u.dot(&(&problem.q * &term.u))
                + term.v.dot(&(&problem.r * &term.v)));
        let capture_variation = (&term.psi_cap * &term.w)[0] + g_t1;
        assert!(
            capture_variation.abs() < 1e-6,
            "instance {idx}: capture variation {capture_variation:.3e}"
        );
        // Specialized multiplier formula agrees with the general
        // elimination at nonsingular terminal states of this instance.
        let model = pursuit::quadratic_model(&problem);
        let mut rng = ChaCha8Rng::seed_from_u64(600 + idx as u64);
        for _ in 0..10 {
            let terminal = TerminalState {
                t1: sol.terminal.t1,
                y: DVector::from_element(1, rng.gen_range(0.2..1.0)),
                u: DVector::from_element(1, rng.gen_range(-1.0..1.0)),
                v: DVector::from_element(1, rng.gen_range(-1.0..1.0)),
                w: DVector::from_element(1, -rng.gen_range(0.3..1.2)),
                psi_cap: RowDVector::zeros(1),
                omega: 0.0,
            };
            let special = pursuit::terminal_multiplier(&problem, &terminal).unwrap();
            let (_, general) = pursuit::eliminate_multipliers(
                &model,
                terminal.t1,
                &terminal.y,
                &terminal.u,
                &terminal.v,
                &terminal.w,
            )
            .unwrap();
            assert!(
                (&special - general).abs().max() < 1e-9,
                "instance {idx}: multiplier formulas disagree"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "runtime {elapsed:?} exceeds 120 s");
    println!("[PASS] criterion 6: pursuit necessary-conditions suite ({elapsed:?})");
}

#[test]
fn criterion_7_gradient_adjoint_checks() {
    // Stationarity residual against central differences of the form value.
    let form = random_certified_form(7000, 33);
    let nn = form.grid().len();
    let (m, n) = (form.m(), form.n());
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let w = ControlPair {
        w1: (0..nn)
            .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
            .collect(),
        w2: (0..nn)
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect(),
    };
    let (r1, r2) = form.stationarity_residual(&w).unwrap();
    let gw = form.grid().weights().to_vec();
    let h = 1e-6;
    for _ in 0..20 {
        let d = ControlPair {
            w1: (0..nn)
                .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
                .collect(),
            w2: (0..nn)
                .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
                .collect(),
        };
        let mut analytic = 0.0;
        for i in 0..nn {
            analytic += gw[i] * (r1[i].dot(&d.w1[i]) + r2[i].dot(&d.w2[i]));
        }
        let shifted = |eps: f64| {
            let mut ws = w.clone();
            for i in 0..nn {
                ws.w1[i] += eps * &d.w1[i];
                ws.w2[i] += eps * &d.w2[i];
            }
            form.evaluate(&ws).unwrap()
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        assert!(
            (analytic - fd).abs() <= 1e-4 * fd.abs().max(1.0),
            "gradient check: {analytic} vs {fd}"
        );
    }
    // Costate as the sensitivity of the cost to state-equation forcing.
    let problem = nonlinear_lqc(7100, 0.1);
    let nn = problem.grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(7171);
    let u: Vec<DVector<f64>> = (0..nn)
        .map(|_| DVector::from_element(1, rng.gen_range(-0.5..0.5)))
        .collect();
    let v: Vec<DVector<f64>> = (0..nn)
        .map(|_| DVector::from_element(1, rng.gen_range(-0.5..0.5)))
        .collect();
    let y = lqcgame::state_solve(&problem, &u, &v).unwrap();
    let psi = lqcgame::costate_solve(&problem, &y, &u, &v).unwrap();
    let h = 1e-5;
    for _ in 0..20 {
        let j = rng.gen_range(1..nn);
        let cost_at = |eps: f64| {
            let mut p2 = problem.clone();
            p2.y0[j][0] += eps;
            lqcgame::evaluate_cost(&p2, &u, &v).unwrap()
        };
        let fd = (cost_at(h) - cost_at(-h)) / (2.0 * h);
        let analytic = problem.grid.weights()[j] * psi[j][0];
        assert!(
            (fd - analytic).abs() <= 1e-4 * fd.abs().max(1.0),
            "adjoint check at node {j}: fd {fd} vs {analytic}"
        );
    }
    println!("[PASS] criterion 7: gradient and adjoint checks");
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("pursuit.json");
    std::fs::write(
        &config_path,
        r#"{
  "schema_version": 1,
  "problem": "pursuit",
  "grid": { "t0": 0.0, "t1_bracket": [0.4, 1.9], "n": 65 },
  "kernels": {
    "no_drift": { "family": "constant", "matrix": [[0.0]] },
    "gain": { "family": "constant", "matrix": [[1.0]] }
  },
  "vectors": { "start": { "family": "polynomial", "coeffs": [[1.0], [-0.5]] } },
  "matrices": {
    "capture": [[1.0]], "zero": [[0.0]], "state_cost": [[0.5]],
    "u weight": [[1.0]], "v_weight": [[-2.0]]
  },
  "pursuit": {
    "y0": "start", "a": "no_drift", "b": "gain", "c": "gain",
    "m": "capture", "m0": "zero", "m1": "state_cost",
    "q": "u weight", "r": "v_weight"
  },
  "solver": { "seed": 42 }
}"#,
    )
    .unwrap();
    let run = |out: &std::path::Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_volgame"))
            .args([
                "pursuit",
                "solve",
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "42",
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("trajectory.csv")).unwrap()
    };
    let first = run(&dir.path().join("run1"));
    let second = run(&dir.path().join("run2"));
    assert_eq!(first, second, "trajectory bytes differ between runs");
    println!("[PASS] criterion 8: repeated runs are bit-identical");
}
