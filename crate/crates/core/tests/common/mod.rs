//! Independent oracles shared by the integration tests and the acceptance
//! runner. Dense operators here are built from explicit lattice indices,
//! not from the library's neighbor tables.

#![allow(dead_code)]

use mfg_core::grid::{advect, divergence, eo_split, laplacian_apply, upwind_gradient};
use mfg_core::kernels::{hjb_backward_newton, hjb_residual, newton_jacobian};
use mfg_core::linsys::{assemble_fp_matrix, assemble_hjb_matrix};
use mfg_core::solvers::solve;
use mfg_core::{
    build_scenario, Algorithm, HamiltonianModel, LinearSolveSettings, NewtonSettings, ScalarField,
    ScalarTimeField, ScenarioOverrides, SolverConfig, SpaceGrid, StaggeredPolicy, TimeGrid,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_field(rng: &mut StdRng, len: usize, lo: f64, hi: f64) -> ScalarField {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Unsplit policy with every component in `[-scale, scale]`.
pub fn random_policy(rng: &mut StdRng, grid: &SpaceGrid, scale: f64) -> StaggeredPolicy {
    let data = (0..grid.len() * 2 * grid.dim())
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    StaggeredPolicy::from_raw(grid.dim(), data).unwrap()
}

/// Node number of lattice point `(i, j)`, both wrapped onto `[0, n)`.
pub fn node(dim: usize, n: usize, i: isize, j: isize) -> usize {
    let n_i = n as isize;
    let i = i.rem_euclid(n_i) as usize;
    let j = j.rem_euclid(n_i) as usize;
    if dim == 1 {
        i
    } else {
        i + n * j
    }
}

fn lattice(dim: usize, n: usize) -> Vec<(isize, isize)> {
    let js = if dim == 1 { 1 } else { n };
    (0..js)
        .flat_map(|j| (0..n).map(move |i| (i as isize, j as isize)))
        .collect()
}

fn shift(dim: usize, n: usize, (i, j): (isize, isize), axis: usize, s: isize) -> usize {
    if axis == 0 {
        node(dim, n, i + s, j)
    } else {
        node(dim, n, i, j + s)
    }
}

pub fn zeros(len: usize) -> Dense {
    vec![vec![0.0; len]; len]
}

pub fn dense_laplacian(dim: usize, n: usize) -> Dense {
    let h = 1.0 / n as f64;
    let len = n.pow(dim as u32);
    let mut a = zeros(len);
    for p in lattice(dim, n) {
        let k = node(dim, n, p.0, p.1);
        for axis in 0..dim {
            a[k][shift(dim, n, p, axis, -1)] += 1.0 / (h * h);
            a[k][shift(dim, n, p, axis, 1)] += 1.0 / (h * h);
            a[k][k] -= 2.0 / (h * h);
        }
    }
    a
}

/// Row `k`: `q_L(k) (u_k - u_{k-1})/h + q_R(k) (u_{k+1} - u_k)/h` per axis.
pub fn dense_advect(dim: usize, n: usize, q: &StaggeredPolicy) -> Dense {
    let h = 1.0 / n as f64;
    let len = n.pow(dim as u32);
    let mut a = zeros(len);
    for p in lattice(dim, n) {
        let k = node(dim, n, p.0, p.1);
        for axis in 0..dim {
            let (ql, qr) = (q.left(k, axis), q.right(k, axis));
            a[k][k] += (ql - qr) / h;
            a[k][shift(dim, n, p, axis, -1)] -= ql / h;
            a[k][shift(dim, n, p, axis, 1)] += qr / h;
        }
    }
    a
}

/// Conservative flux difference, linear in the density.
pub fn dense_divergence(dim: usize, n: usize, q: &StaggeredPolicy) -> Dense {
    let h = 1.0 / n as f64;
    let len = n.pow(dim as u32);
    let mut a = zeros(len);
    for p in lattice(dim, n) {
        let k = node(dim, n, p.0, p.1);
        for axis in 0..dim {
            let next = shift(dim, n, p, axis, 1);
            let prev = shift(dim, n, p, axis, -1);
            a[k][next] += q.left(next, axis) / h;
            a[k][k] -= q.left(k, axis) / h;
            a[k][k] += q.right(k, axis) / h;
            a[k][prev] -= q.right(prev, axis) / h;
        }
    }
    a
}

pub fn identity(len: usize) -> Dense {
    let mut a = zeros(len);
    for (k, row) in a.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    a
}

/// `a + s b`.
pub fn axpy(a: &Dense, s: f64, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + s * y).collect())
        .collect()
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Dense, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Dense = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        x.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                #[allow(clippy::needless_range_loop)]
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (x[r] - s) / m[r][r];
    }
    x
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Error of `a` against `b`, normalized by the size of `b`.
pub fn scaled_diff(a: &[f64], b: &[f64]) -> f64 {
    max_diff(a, b) / max_abs(b).max(1.0)
}

/// Grids used for the small-lattice oracles: 1D up to 16 nodes, 2D up to 8.
pub fn oracle_grids() -> Vec<SpaceGrid> {
    let mut grids: Vec<SpaceGrid> = (3..=16).map(|n| SpaceGrid::new(1, n).unwrap()).collect();
    grids.extend((3..=8).map(|n| SpaceGrid::new(2, n).unwrap()));
    grids
}

/// Largest normalized mismatch of the Laplacian, gradient, advection and
/// divergence stencils against their dense counterparts.
pub fn stencil_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for grid in oracle_grids() {
        let (dim, n) = (grid.dim(), grid.nodes_per_dim());
        let u = random_field(&mut r, grid.len(), -1.0, 1.0);
        let m = random_field(&mut r, grid.len(), 0.0, 2.0);
        let q = eo_split(&random_policy(&mut r, &grid, 3.0));

        let lap = laplacian_apply(&u, &grid).unwrap();
        worst = worst.max(scaled_diff(&lap, &matvec(&dense_laplacian(dim, n), &u)));

        let adv = advect(&q, &u, &grid).unwrap();
        worst = worst.max(scaled_diff(&adv, &matvec(&dense_advect(dim, n, &q), &u)));

        let div = divergence(&m, &q, &grid).unwrap();
        worst = worst.max(scaled_diff(
            &div,
            &matvec(&dense_divergence(dim, n, &q), &m),
        ));

        let h = grid.spacing();
        let g = upwind_gradient(&u, &grid).unwrap();
        for p in lattice(dim, n) {
            let k = node(dim, n, p.0, p.1);
            for axis in 0..dim {
                let dl = (u[k] - u[shift(dim, n, p, axis, -1)]) / h;
                let dr = (u[shift(dim, n, p, axis, 1)] - u[k]) / h;
                let e = (g.left(k, axis) - dl)
                    .abs()
                    .max((g.right(k, axis) - dr).abs());
                worst = worst.max(e / dl.abs().max(dr.abs()).max(1.0));
            }
        }
    }
    worst
}

/// Largest `|column sum - 1|` of the FP matrix and `|row sum - 1|` of the
/// HJB matrix over random policies, plus the full-size example grids.
pub fn matrix_sum_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut grids = oracle_grids();
    grids.push(SpaceGrid::new(1, 200).unwrap());
    grids.push(SpaceGrid::new(2, 50).unwrap());
    let mut worst: f64 = 0.0;
    for grid in grids {
        for &(dt, eps, scale) in &[(0.005, 0.05, 2.0), (0.01, 0.3, 20.0), (1e-3, 1e-3, 0.5)] {
            let q = eo_split(&random_policy(&mut r, &grid, scale));
            let fp = assemble_fp_matrix(&grid, dt, eps, &q).unwrap();
            let hjb = assemble_hjb_matrix(&grid, dt, eps, &q).unwrap();
            for s in fp.col_sums().into_iter().chain(hjb.row_sums()) {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    worst
}

/// Models covering both examples' exponents and a coupling with `c > 0`.
pub fn sample_models() -> Vec<HamiltonianModel> {
    vec![
        HamiltonianModel::new(2.0, 1.0, 4.0, 1.5, 1.0).unwrap(),
        HamiltonianModel::new(2.0, 0.0, 1.0, 0.5, 0.0).unwrap(),
        HamiltonianModel::new(3.0, 0.0, 1.0, 0.25, 0.0).unwrap(),
        HamiltonianModel::new(1.5, 0.5, 2.0, 0.8, 0.3).unwrap(),
    ]
}

/// Relative error of `H_p` against central differences of `H`.
pub fn hp_fd_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for model in sample_models() {
        for dim in [1usize, 2, 4] {
            for _ in 0..50 {
                let m = r.gen_range(0.05..3.0);
                let p: Vec<f64> = (0..dim).map(|_| r.gen_range(-4.0..4.0)).collect();
                if p.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.1 {
                    continue;
                }
                let grad = model.hamiltonian_grad_p(m, &p).unwrap();
                for c in 0..dim {
                    let step = 1e-5 * p[c].abs().max(1.0);
                    let mut hi = p.clone();
                    let mut lo = p.clone();
                    hi[c] += step;
                    lo[c] -= step;
                    let fd = (model.hamiltonian(m, &hi).unwrap()
                        - model.hamiltonian(m, &lo).unwrap())
                        / (2.0 * step);
                    let scale = max_abs(&grad).max(1e-3);
                    worst = worst.max((fd - grad[c]).abs() / scale);
                }
            }
        }
    }
    worst
}

/// `|q*.p - L(m, q*) - H(m, p)|` at `q* = H_p(m, p)`.
pub fn fenchel_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for model in sample_models() {
        for dim in [1usize, 2] {
            for _ in 0..200 {
                let m = r.gen_range(0.0..3.0);
                let p: Vec<f64> = (0..dim).map(|_| r.gen_range(-5.0..5.0)).collect();
                let q = model.optimal_policy(m, &p, f64::INFINITY).unwrap();
                let q2: f64 = q.iter().map(|v| v * v).sum();
                let qp: f64 = q.iter().zip(&p).map(|(a, b)| a * b).sum();
                let lhs = qp - model.lagrangian(m, q2).unwrap();
                let rhs = model.hamiltonian(m, &p).unwrap();
                worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
            }
        }
    }
    worst
}

/// `max_q q.p - L(m, q)` over a lattice refined around its best point.
pub fn lattice_sup(model: &HamiltonianModel, m: f64, p: &[f64]) -> f64 {
    let dim = p.len();
    let objective = |q: &[f64]| {
        let q2: f64 = q.iter().map(|v| v * v).sum();
        let qp: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
        qp - model.lagrangian(m, q2).unwrap()
    };
    let mut center = vec![0.0; dim];
    let mut half = 50.0;
    let points = if dim == 1 { 2001 } else { 81 };
    let mut best = f64::NEG_INFINITY;
    for _ in 0..12 {
        let step = 2.0 * half / (points - 1) as f64;
        let mut best_q = center.clone();
        let mut idx = vec![0usize; dim];
        loop {
            let q: Vec<f64> = (0..dim)
                .map(|c| center[c] - half + step * idx[c] as f64)
                .collect();
            let v = objective(&q);
            if v > best {
                best = v;
                best_q = q;
            }
            let mut c = 0;
            while c < dim {
                idx[c] += 1;
                if idx[c] < points {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
            if c == dim {
                break;
            }
        }
        center = best_q;
        half = 4.0 * step;
    }
    best
}

/// Relative error of `H` against a brute-force Legendre transform of `L`.
pub fn legendre_lattice_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for model in sample_models() {
        for dim in [1usize, 2] {
            for _ in 0..6 {
                let m = r.gen_range(0.1..2.0);
                let p: Vec<f64> = (0..dim).map(|_| r.gen_range(-3.0..3.0)).collect();
                let h = model.hamiltonian(m, &p).unwrap();
                let sup = lattice_sup(&model, m, &p);
                worst = worst.max((sup - h).abs() / h.abs().max(1.0));
            }
        }
    }
    worst
}

/// A field whose one-sided differences stay away from zero, so that small
/// perturbations do not cross the kinks of the split Hamiltonian.
pub fn kink_free_field(r: &mut StdRng, grid: &SpaceGrid, margin: f64) -> ScalarField {
    loop {
        let u = random_field(r, grid.len(), -1.0, 1.0);
        let g = upwind_gradient(&u, grid).unwrap();
        if g.raw().iter().all(|v| v.abs() > margin) {
            return u;
        }
    }
}

/// Relative mismatch of the Newton Jacobian against central differences
/// of the HJB residual.
pub fn newton_jacobian_fd_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let (dt, eps) = (0.01, 0.1);
    for model in sample_models() {
        for grid in [
            SpaceGrid::new(1, 12).unwrap(),
            SpaceGrid::new(2, 5).unwrap(),
        ] {
            let u = kink_free_field(&mut r, &grid, 0.05);
            let u_next = random_field(&mut r, grid.len(), -1.0, 1.0);
            let m = random_field(&mut r, grid.len(), 0.2, 2.0);
            let jac = newton_jacobian(&model, &m, &u, &grid, dt, eps)
                .unwrap()
                .to_dense();
            let scale = jac.iter().map(|row| max_abs(row)).fold(0.0, f64::max);
            for j in 0..grid.len() {
                let step = 1e-6;
                let mut hi = u.clone();
                let mut lo = u.clone();
                hi[j] += step;
                lo[j] -= step;
                let fh = hjb_residual(&model, &u_next, &hi, &m, &grid, dt, eps).unwrap();
                let fl = hjb_residual(&model, &u_next, &lo, &m, &grid, dt, eps).unwrap();
                for i in 0..grid.len() {
                    let fd = (fh[i] - fl[i]) / (2.0 * step);
                    worst = worst.max((fd - jac[i][j]).abs() / scale);
                }
            }
        }
    }
    worst
}

/// Newton residual histories of one backward sweep on a coarse example 1.
pub fn newton_residual_histories() -> Vec<Vec<f64>> {
    let s = build_scenario(
        "example1",
        &ScenarioOverrides {
            nodes: Some(64),
            steps: Some(32),
            ..Default::default()
        },
    )
    .unwrap();
    let grid = s.space_grid().unwrap();
    let time = s.time_grid().unwrap();
    let m0 = s.initial_slice(&grid);
    let m = ScalarTimeField::new(vec![m0; time.steps() + 1]);
    // A tight tolerance keeps the iteration going past the quadratic phase.
    let settings = NewtonSettings {
        tol: 1e-14,
        max_iters: 50,
    };
    let (_, trace) = hjb_backward_newton(
        &s.model,
        &s.terminal_slice(&grid),
        &m,
        &grid,
        &time,
        s.epsilon,
        &settings,
        &LinearSolveSettings::default(),
    )
    .unwrap();
    trace.residuals
}

/// Worst `r_{k+1} / r_k^2` over consecutive residuals with `r_k < 1e-2`
/// and `r_{k+1}` above the round-off floor, and the number of such pairs.
pub fn newton_quadratic_constant(histories: &[Vec<f64>], floor: f64) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for hist in histories {
        for w in hist.windows(2) {
            if w[0] < 1e-2 && w[1] > floor {
                worst = worst.max(w[1] / (w[0] * w[0]));
                pairs += 1;
            }
        }
    }
    (worst, pairs)
}

/// PI1 and PI2 on a density-independent Hamiltonian: largest difference
/// between their iterates over every pass.
pub fn separable_gap() -> f64 {
    let mut s = build_scenario(
        "example1",
        &ScenarioOverrides {
            nodes: Some(50),
            steps: Some(50),
            ..Default::default()
        },
    )
    .unwrap();
    s.model.weight_a = 0.0;
    s.model.coupling_zeta = 0.0;
    let mut cfg = SolverConfig::new(s, Algorithm::Pi1);
    cfg.keep_field_history = true;
    cfg.max_outer_iters = 30;
    let (sol1, rep1) = solve(&cfg, None).unwrap();
    cfg.algorithm = Algorithm::Pi2;
    let (sol2, rep2) = solve(&cfg, None).unwrap();
    assert_eq!(sol1.iterations, sol2.iterations);
    assert_eq!(rep1.field_history.len(), rep2.field_history.len());
    let mut worst: f64 = 0.0;
    for ((u1, m1), (u2, m2)) in rep1.field_history.iter().zip(&rep2.field_history) {
        for (a, b) in u1.slices().iter().zip(u2.slices()) {
            worst = worst.max(max_diff(a, b));
        }
        for (a, b) in m1.slices().iter().zip(m2.slices()) {
            worst = worst.max(max_diff(a, b));
        }
    }
    worst.max(sol1.q.max_abs_diff(&sol2.q))
}

/// `(worst |mass_n - mass_0|, smallest density)` of a density field.
pub fn mass_and_floor(m: &ScalarTimeField, grid: &SpaceGrid) -> (f64, f64) {
    let mass0 = mfg_core::grid::total_mass(m.slice(0), grid);
    let drift = m
        .slices()
        .iter()
        .map(|s| (mfg_core::grid::total_mass(s, grid) - mass0).abs())
        .fold(0.0, f64::max);
    (drift, m.min())
}

pub fn time_grid(steps: usize, horizon: f64) -> TimeGrid {
    TimeGrid::new(steps, horizon).unwrap()
}
