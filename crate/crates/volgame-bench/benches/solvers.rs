use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::{dmatrix, DMatrix, DVector};
use volgame::grid::{Kernel1, Kernel2, KernelSpec, QuadratureRule, TimeGrid};
use volgame::pursuit::{self, PursuitProblem};
use volgame::quadform::{BlockQuadraticForm, SolveOptions};
use volgame::volterra;

fn unit_grid(n: usize) -> TimeGrid {
    TimeGrid::new(0.0, 1.0, n, QuadratureRule::Trapezoid).unwrap()
}

fn smooth_kernel(grid: &TimeGrid) -> Kernel2 {
    Kernel2::from_fn(grid.len(), |i, j| {
        let (t, s) = (grid.nodes()[i], grid.nodes()[j]);
        dmatrix![0.4 + 0.3 * t - 0.2 * s + 0.1 * t * s]
    })
    .unwrap()
}

fn bench_resolvent(c: &mut Criterion) {
    let grid = unit_grid(129);
    let kernel = smooth_kernel(&grid);
    c.bench_function("resolvent kernel, scalar, n=129", |b| {
        b.iter(|| volterra::resolvent(black_box(&kernel), &grid).unwrap())
    });
}

fn bench_transform(c: &mut Criterion) {
    let grid = unit_grid(129);
    let a = smooth_kernel(&grid);
    let bk = Kernel2::constant(grid.len(), dmatrix![1.0]);
    let ck = Kernel2::constant(grid.len(), dmatrix![0.8]);
    let y0: Vec<DVector<f64>> = grid
        .nodes()
        .iter()
        .map(|&t| DVector::from_element(1, 1.0 + t))
        .collect();
    c.bench_function("control-explicit transform, scalar, n=129", |b| {
        b.iter(|| volterra::transform(black_box(&y0), &a, &bk, &ck, &grid).unwrap())
    });
}

fn bench_saddle(c: &mut Criterion) {
    let grid = unit_grid(65);
    let nn = grid.len();
    let form = BlockQuadraticForm::new(
        grid.clone(),
        Kernel1::constant(nn, DMatrix::identity(2, 2)),
        Kernel1::constant(nn, -DMatrix::identity(2, 2)),
        Kernel1::constant(nn, dmatrix![0.1, 0.0; 0.0, 0.1]),
        Kernel2::constant(nn, dmatrix![0.1, 0.0; 0.0, 0.1]),
        Kernel2::constant(nn, dmatrix![-0.1, 0.0; 0.0, -0.1]),
        Kernel2::zeros(nn, 2, 2),
        vec![DVector::from_element(2, 1.0); nn],
        vec![DVector::from_element(2, -0.5); nn],
    )
    .unwrap();
    let mut opts = SolveOptions::default();
    opts.override_certification = true;
    c.bench_function("saddle solve, m=n=2, n_nodes=65", |b| {
        b.iter(|| form.saddle_point(black_box(&opts)).unwrap())
    });
}

fn bench_pursuit_inner(c: &mut Criterion) {
    let problem = PursuitProblem {
        t0: 0.0,
        nodes: 65,
        y0: std::sync::Arc::new(|t| DVector::from_element(1, 1.0 - 0.5 * t)),
        y0_dot: std::sync::Arc::new(|_| DVector::from_element(1, -0.5)),
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
    let data = pursuit::discretize(&problem, 1.2).unwrap();
    let psi_cap = nalgebra::RowDVector::from_element(1, 0.4);
    c.bench_function("pursuit coupled costate solve, n=65", |b| {
        b.iter(|| pursuit::coupled_costate_solve(&problem, black_box(&data), &psi_cap).unwrap())
    });
}

criterion_group!(
    benches,
    bench_resolvent,
    bench_transform,
    bench_saddle,
    bench_pursuit_inner
);
criterion_main!(benches);
