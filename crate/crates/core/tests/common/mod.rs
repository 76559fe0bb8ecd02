//! Independent reference implementations used by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};

use funnelmpc::lti::ContinuousLTI;

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        // Box-Muller
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

/// Random continuous-time plant with `||A|| ~ 1`.
pub fn random_continuous<R: Rng>(rng: &mut R, n: usize, m: usize) -> ContinuousLTI {
    let a = gaussian_matrix(rng, n, n) / (n as f64).sqrt();
    let b = gaussian_matrix(rng, n, m);
    let c = gaussian_matrix(rng, m, n);
    let x0 = gaussian_matrix(rng, n, 1).column(0).into_owned();
    ContinuousLTI::new(a, b, c, x0).unwrap()
}

/// Classical RK4 on `x' = A x + B u` with `u` held constant.
pub fn rk4_hold(sys: &ContinuousLTI, x: &DVector<f64>, u: &DVector<f64>, tau: f64, substeps: usize) -> DVector<f64> {
    let h = tau / substeps as f64;
    let bu = &sys.b * u;
    let f = |x: &DVector<f64>| &sys.a * x + &bu;
    let mut x = x.clone();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > top * 1e-9).count()
}

/// Random minimal discrete-time system `(A, B, C)` with spectral radius below one.
pub fn random_discrete<R: Rng>(rng: &mut R, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    loop {
        let mut a = gaussian_matrix(rng, n, n);
        let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        a *= rng.random_range(0.3..0.95) / radius.max(1e-9);
        let b = gaussian_matrix(rng, n, m);
        let c = gaussian_matrix(rng, m, n);
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut obsv = DMatrix::zeros(n * m, n);
        let mut ak = DMatrix::identity(n, n);
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&(&ak * &b));
            obsv.view_mut((k * m, 0), (m, n)).copy_from(&(&c * &ak));
            ak = &ak * &a;
        }
        if rank(&ctrb) == n && rank(&obsv) == n {
            return (a, b, c);
        }
    }
}

pub fn simulate_discrete(
    sys: &(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>),
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let (a, b, c) = sys;
    let mut x = x0.clone();
    inputs
        .iter()
        .map(|u| {
            let y = c * &x;
            x = a * &x + b * u;
            y
        })
        .collect()
}

pub fn random_inputs<R: Rng>(rng: &mut R, len: usize, m: usize) -> Vec<DVector<f64>> {
    (0..len).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))).collect()
}

/// Solution of the scalar-input data-driven OCP by enumerating all active
/// sets of the box constraints and solving each equality-constrained problem
/// in the original Hankel coordinates by the null-space method.
#[allow(clippy::too_many_arguments)]
pub fn dense_kkt_oracle(
    hu: &DMatrix<f64>,
    hy: &DMatrix<f64>,
    u_past: &[f64],
    y_past: &[f64],
    refs: &[f64],
    q: f64,
    r: f64,
    nu_reg: f64,
    u_max: f64,
) -> Vec<f64> {
    let n = u_past.len();
    let l = refs.len();
    let cols = hu.ncols();
    let up = hu.rows(0, n).into_owned();
    let uf = hu.rows(n, l).into_owned();
    let yp = hy.rows(0, n).into_owned();
    let yf = hy.rows(n, l).into_owned();
    let hess = (yf.transpose() * &yf * q + uf.transpose() * &uf * r + DMatrix::identity(cols, cols) * nu_reg) * 2.0;
    let rv = DVector::from_column_slice(refs);
    let grad = -(yf.transpose() * &rv) * (2.0 * q);
    let objective = |nu: &DVector<f64>| {
        (&yf * nu - &rv).norm_squared() * q + (&uf * nu).norm_squared() * r + nu.norm_squared() * nu_reg
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(l as u32) {
        // digit 0: free, 1: upper bound, 2: lower bound
        let mut active = Vec::new();
        let mut c = code;
        for k in 0..l {
            match c % 3 {
                1 => active.push((k, u_max)),
                2 => active.push((k, -u_max)),
                _ => {}
            }
            c /= 3;
        }
        let rows = 2 * n + active.len();
        let mut a = DMatrix::zeros(rows, cols);
        let mut b = DVector::zeros(rows);
        a.rows_mut(0, n).copy_from(&up);
        a.rows_mut(n, n).copy_from(&yp);
        b.rows_mut(0, n).copy_from(&DVector::from_column_slice(u_past));
        b.rows_mut(n, n).copy_from(&DVector::from_column_slice(y_past));
        for (i, &(k, v)) in active.iter().enumerate() {
            a.set_row(2 * n + i, &uf.row(k));
            b[2 * n + i] = v;
        }
        // null-space method: nu = A^+ b + Pk w with Pk the projector onto ker A
        let a_pinv = match a.clone().pseudo_inverse(1e-10 * a.amax()) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let particular = &a_pinv * &b;
        let pk = DMatrix::identity(cols, cols) - &a_pinv * &a;
        let reduced = &pk * &hess * &pk + (DMatrix::identity(cols, cols) - &pk);
        let rhs = -(&pk * (&hess * &particular + &grad));
        let Some(w) = reduced.cholesky().map(|c| c.solve(&rhs)) else { continue };
        let nu = particular + &pk * w;
        if (&a * &nu - &b).amax() > 1e-8 {
            continue;
        }
        let u = &uf * &nu;
        if u.iter().any(|v| v.abs() > u_max * (1.0 + 1e-9) + 1e-12) {
            continue;
        }
        let j = objective(&nu);
        if best.as_ref().is_none_or(|(bj, _)| j < *bj) {
            best = Some((j, u.iter().copied().collect()));
        }
    }
    best.expect("the unconstrained-feasible problem has a solution").1
}
