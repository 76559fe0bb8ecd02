//! Continuous-time LTI plants: structural analysis and exact sampled simulation.
//!
//! A plant is `x' = A x + B u`, `y = C x` with as many outputs as inputs. The
//! analysis routines compute the strict relative degree, the Byrnes-Isidori
//! normal form `(L_i, S, K, P, Gamma)` together with its coordinate change,
//! and the definiteness bounds of the high-gain matrix. Simulation under
//! piecewise-constant inputs is exact through the zero-order-hold
//! discretization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entries below this are treated as exact zeros.
pub const ZERO_TOL: f64 = 1e-12;
/// Margin for invertibility and Hurwitz tests.
pub const MARGIN_TOL: f64 = 1e-10;

/// Spectral (largest singular value) norm; zero for empty matrices.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLTI {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl ContinuousLTI {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        let m = b.ncols();
        if m == 0 || b.nrows() != n {
            return Err(Error::DimensionMismatch(format!("B is {}x{}, expected {n}xm", b.nrows(), b.ncols())));
        }
        if c.nrows() != m || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "C is {}x{}, expected {m}x{n} (square input/output)",
                c.nrows(),
                c.ncols()
            )));
        }
        if x0.len() != n {
            return Err(Error::DimensionMismatch(format!("x0 has length {}, expected {n}", x0.len())));
        }
        Ok(Self { a, b, c, x0 })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn io_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.state_dim() {
            return Err(Error::DimensionMismatch("initial state length".into()));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    /// Stacked `[C; CA; ...; CA^(r-1)]`, the map from state to output chain.
    pub fn observability_chain(&self, r: usize) -> DMatrix<f64> {
        let (n, m) = (self.state_dim(), self.io_dim());
        let mut out = DMatrix::zeros(r * m, n);
        let mut row = self.c.clone();
        for i in 0..r {
            out.view_mut((i * m, 0), (m, n)).copy_from(&row);
            row = &row * &self.a;
        }
        out
    }

    /// `(y, y', ..., y^(r-1))` read from the state; valid when `CA^k B = 0` for `k < r-1`.
    pub fn output_chain(&self, x: &DVector<f64>, r: usize) -> Vec<DVector<f64>> {
        let mut chain = Vec::with_capacity(r);
        let mut row = self.c.clone();
        for _ in 0..r {
            chain.push(&row * x);
            row = &row * &self.a;
        }
        chain
    }
}

/// Coordinates `U x = (y, y', ..., y^(r-1), eta)` with
/// `y^(r) = sum L_i y^(i) + S eta + Gamma u` and `eta' = K eta + P y`.
#[derive(Debug, Clone)]
pub struct ByrnesIsidoriForm {
    pub r: usize,
    pub l: Vec<DMatrix<f64>>,
    pub s: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub u_inv: DMatrix<f64>,
    pub eta0: DVector<f64>,
}

impl ByrnesIsidoriForm {
    pub fn internal_dim(&self) -> usize {
        self.k.nrows()
    }

    /// Drift matrix of the normal form assembled from its blocks.
    pub fn assembled_drift(&self) -> DMatrix<f64> {
        let m = self.gamma.nrows();
        let q = self.internal_dim();
        let rm = self.r * m;
        let n = rm + q;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..self.r.saturating_sub(1) {
            a.view_mut((i * m, (i + 1) * m), (m, m)).fill_with_identity();
        }
        let last = (self.r - 1) * m;
        for (i, li) in self.l.iter().enumerate() {
            a.view_mut((last, i * m), (m, m)).copy_from(li);
        }
        if q > 0 {
            a.view_mut((last, rm), (m, q)).copy_from(&self.s);
            a.view_mut((rm, 0), (q, m)).copy_from(&self.p);
            a.view_mut((rm, rm), (q, q)).copy_from(&self.k);
        }
        a
    }

    /// Input map of the normal form, `(0, ..., 0, Gamma, 0)`.
    pub fn assembled_input(&self) -> DMatrix<f64> {
        let m = self.gamma.nrows();
        let n = self.r * m + self.internal_dim();
        let mut b = DMatrix::zeros(n, m);
        b.view_mut(((self.r - 1) * m, 0), (m, m)).copy_from(&self.gamma);
        b
    }

    /// `||U A U^-1 - A_BIF||` in the operator norm.
    pub fn reassembly_residual(&self, sys: &ContinuousLTI) -> f64 {
        let transformed = &self.u * &sys.a * &self.u_inv;
        op_norm(&(transformed - self.assembled_drift()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighGainBounds {
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl HighGainBounds {
    pub fn new(gamma_min: f64, gamma_max: f64) -> Result<Self> {
        if !(gamma_min > 0.0 && gamma_min <= gamma_max) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < gamma_min <= gamma_max, got ({gamma_min}, {gamma_max})"
            )));
        }
        Ok(Self { gamma_min, gamma_max })
    }
}

/// Smallest `r` with `CA^k B = 0` for `k < r-1` and `CA^(r-1) B` invertible.
pub fn relative_degree(sys: &ContinuousLTI) -> Result<usize> {
    let n = sys.state_dim();
    let mut markov = &sys.c * &sys.b;
    for r in 1..=n {
        if markov.amax() >= ZERO_TOL {
            let smin = markov.clone().singular_values().min();
            return if smin > MARGIN_TOL { Ok(r) } else { Err(Error::NoRelativeDegree { n }) };
        }
        markov = &sys.c * sys.a.pow((r) as u32) * &sys.b;
    }
    Err(Error::NoRelativeDegree { n })
}

/// Eigenvalue bounds of the symmetric part `(Gamma + Gamma^T) / 2`.
pub fn high_gain_bounds(gamma: &DMatrix<f64>) -> Result<HighGainBounds> {
    if gamma.nrows() != gamma.ncols() || gamma.nrows() == 0 {
        return Err(Error::DimensionMismatch("high-gain matrix must be square".into()));
    }
    let sym = (gamma + gamma.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eig: lo });
    }
    Ok(HighGainBounds { gamma_min: lo, gamma_max: hi })
}

/// Orthonormal basis of the null space of `m` (columns), via a square-padded SVD.
pub(crate) fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let size = rows.max(cols);
    let mut padded = DMatrix::zeros(size, cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let thresh = tol * smax.max(1.0);
    let idx: Vec<usize> = (0..cols).filter(|&i| svd.singular_values[i] <= thresh).collect();
    let mut basis = DMatrix::zeros(cols, idx.len());
    for (j, &i) in idx.iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    basis
}

/// Byrnes-Isidori form with `U = [C; CA; ...; CA^(r-1); N]` where the rows of
/// `N` annihilate `[B, AB, ..., A^(r-1)B]` and `N V = I` for an orthonormal
/// basis `V` of the kernel of the output chain.
pub fn byrnes_isidori(sys: &ContinuousLTI) -> Result<ByrnesIsidoriForm> {
    let r = relative_degree(sys)?;
    let (n, m) = (sys.state_dim(), sys.io_dim());
    let rm = r * m;
    if rm > n {
        return Err(Error::DegenerateCompletion);
    }
    let q = n - rm;
    let obs = sys.observability_chain(r);
    let mut ctrb = DMatrix::zeros(n, rm);
    let mut col = sys.b.clone();
    for i in 0..r {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&col);
        col = &sys.a * col;
    }
    let coupling = &obs * &ctrb;
    let coupling_inv = coupling.clone().try_inverse().ok_or(Error::DegenerateCompletion)?;
    let v = null_space(&obs, 1e-10);
    if v.ncols() != q {
        return Err(Error::DegenerateCompletion);
    }
    let proj = DMatrix::identity(n, n) - &ctrb * &coupling_inv * &obs;
    let nmat = v.transpose() * proj;

    let mut u = DMatrix::zeros(n, n);
    u.view_mut((0, 0), (rm, n)).copy_from(&obs);
    if q > 0 {
        u.view_mut((rm, 0), (q, n)).copy_from(&nmat);
    }
    let mut u_inv = DMatrix::zeros(n, n);
    u_inv.view_mut((0, 0), (n, rm)).copy_from(&(&ctrb * &coupling_inv));
    if q > 0 {
        u_inv.view_mut((0, rm), (n, q)).copy_from(&v);
    }
    let check = op_norm(&(&u * &u_inv - DMatrix::<f64>::identity(n, n)));
    if !check.is_finite() || check > 1e-8 {
        return Err(Error::DegenerateCompletion);
    }

    let abar = &u * &sys.a * &u_inv;
    let last = (r - 1) * m;
    let l = (0..r).map(|i| abar.view((last, i * m), (m, m)).into_owned()).collect();
    let s = abar.view((last, rm), (m, q)).into_owned();
    let k = abar.view((rm, rm), (q, q)).into_owned();
    let p = abar.view((rm, 0), (q, m)).into_owned();
    let gamma = &sys.c * sys.a.pow((r - 1) as u32) * &sys.b;
    let eta0 = if q > 0 { &nmat * &sys.x0 } else { DVector::zeros(0) };

    Ok(ByrnesIsidoriForm { r, l, s, k, p, gamma, u, u_inv, eta0 })
}

/// Largest real part among the eigenvalues of `k`; `-inf` when empty.
pub fn spectral_abscissa(k: &DMatrix<f64>) -> f64 {
    if k.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    k.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// True iff the internal dynamics matrix `K` is Hurwitz.
pub fn minimum_phase(sys: &ContinuousLTI) -> bool {
    match byrnes_isidori(sys) {
        Ok(bif) => spectral_abscissa(&bif.k) < -MARGIN_TOL,
        Err(_) => false,
    }
}

/// Exact sampled model under a zero-order-hold input.
#[derive(Debug, Clone, PartialEq)]
pub struct ZohModel {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub tau: f64,
}

impl ZohModel {
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.ad * x + &self.bd * u
    }
}

/// `Ad = exp(A tau)`, `Bd = int_0^tau exp(A s) ds B` from one exponential of
/// the augmented matrix `[[A, B], [0, 0]] tau`.
pub fn zoh_discretize(sys: &ContinuousLTI, tau: f64) -> Result<ZohModel> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("sampling time must be positive, got {tau}")));
    }
    let (n, m) = (sys.state_dim(), sys.io_dim());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * tau));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * tau));
    let e = aug.exp();
    Ok(ZohModel {
        ad: e.view((0, 0), (n, n)).into_owned(),
        bd: e.view((0, n), (n, m)).into_owned(),
        tau,
    })
}

/// One exact sampling interval with the input held at `u`.
pub fn simulate_step(model: &ZohModel, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    model.step(x, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn double_integrator() -> ContinuousLTI {
        ContinuousLTI::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    fn scalar_integrator() -> ContinuousLTI {
        ContinuousLTI::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_square_io() {
        let err = ContinuousLTI::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn relative_degree_examples() {
        assert_eq!(relative_degree(&scalar_integrator()).unwrap(), 1);
        assert_eq!(relative_degree(&double_integrator()).unwrap(), 2);
        let zero_out = ContinuousLTI::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        assert_eq!(relative_degree(&zero_out), Err(Error::NoRelativeDegree { n: 2 }));
    }

    #[test]
    fn high_gain_bounds_examples() {
        let b = high_gain_bounds(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!((b.gamma_min, b.gamma_max), (1.0, 1.0));
        let b = high_gain_bounds(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 2.0])).unwrap();
        assert_relative_eq!(b.gamma_min, 2.0, epsilon = 1e-12);
        assert_relative_eq!(b.gamma_max, 2.0, epsilon = 1e-12);
        let neg = high_gain_bounds(&DMatrix::from_element(1, 1, -1.0));
        assert!(matches!(neg, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn double_integrator_has_no_internal_dynamics() {
        let sys = double_integrator();
        let bif = byrnes_isidori(&sys).unwrap();
        assert_eq!(bif.r, 2);
        assert_eq!(bif.internal_dim(), 0);
        assert!(bif.l.iter().all(|l| l.amax() < 1e-14));
        assert_relative_eq!(bif.gamma[(0, 0)], 1.0);
        assert!(bif.reassembly_residual(&sys) < 1e-10);
        assert!(minimum_phase(&sys));
    }

    #[test]
    fn unstable_zero_dynamics_detected() {
        // y' = u + eta, eta' = eta + y: K = [1]
        let sys = ContinuousLTI::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let bif = byrnes_isidori(&sys).unwrap();
        assert_relative_eq!(bif.k[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(!minimum_phase(&sys));
    }

    #[test]
    fn zoh_zero_drift() {
        let sys = ContinuousLTI::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, -2.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let z = zoh_discretize(&sys, 0.3).unwrap();
        assert_relative_eq!(z.ad, DMatrix::identity(2, 2), epsilon = 1e-15);
        assert_relative_eq!(z.bd, &sys.b * 0.3, epsilon = 1e-15);
        let x = DVector::from_vec(vec![0.5, 1.5]);
        assert_eq!(simulate_step(&z, &x, &DVector::zeros(1)), x);
    }

    #[test]
    fn zoh_double_integrator_closed_form() {
        let tau = 0.7;
        let z = zoh_discretize(&double_integrator(), tau).unwrap();
        assert_relative_eq!(z.ad, DMatrix::from_row_slice(2, 2, &[1.0, tau, 0.0, 1.0]), epsilon = 1e-14);
        assert_relative_eq!(z.bd, DMatrix::from_row_slice(2, 1, &[tau * tau / 2.0, tau]), epsilon = 1e-14);
        assert!(zoh_discretize(&double_integrator(), 0.0).is_err());
    }

    #[test]
    fn output_chain_reads_derivatives() {
        let sys = double_integrator();
        let chain = sys.output_chain(&DVector::from_vec(vec![1.0, 0.0]), 2);
        assert_eq!(chain[0][0], 1.0);
        assert_eq!(chain[1][0], 0.0);
    }
}
