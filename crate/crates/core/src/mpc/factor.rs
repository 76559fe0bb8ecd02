//! Factorizations behind the data-driven OCP.
//!
//! The decision vector `nu` only enters through `H nu` (with `H = [Hu; Hy]`)
//! and `||nu||^2`, so it is restricted without loss to the row space of `H`.
//! With the thin factorization `H^T = Q R` every such `nu` is `Q theta` and
//! `H nu = R^T theta`, `||nu|| = ||theta||`. All further algebra happens in the
//! small `theta` space whose dimension is bounded by the number of Hankel rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::datadrive::{DataLog, HankelPair};
use crate::error::{Error, Result};

use super::OcpWeights;

/// Thin QR of the transposed stacked Hankel matrix, updated in place when a
/// sample is appended.
#[derive(Debug, Clone)]
pub struct HankelQr {
    depth: usize,
    m: usize,
    cols: usize,
    /// `cols x k`, orthonormal columns.
    q: DMatrix<f64>,
    /// `k x p`, upper trapezoidal.
    r: DMatrix<f64>,
}

impl HankelQr {
    pub fn from_pair(pair: &HankelPair) -> Self {
        let ht = pair.stacked().transpose();
        Self::from_transposed(ht, pair.depth(), pair.dim())
    }

    pub fn from_log(log: &DataLog, depth: usize) -> Result<Self> {
        Ok(Self::from_pair(&HankelPair::from_log(log, depth)?))
    }

    fn from_transposed(ht: DMatrix<f64>, depth: usize, m: usize) -> Self {
        let cols = ht.nrows();
        let qr = ht.qr();
        Self { depth, m, cols, q: qr.q(), r: qr.r() }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        2 * self.m * self.depth
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `R^T`, the Hankel rows expressed in `theta` coordinates.
    pub fn theta_rows(&self) -> DMatrix<f64> {
        self.r.transpose()
    }

    /// Brings the factorization up to date with `log`. Uses Givens row
    /// updates once the factor is square, otherwise refactorizes.
    pub fn extend(&mut self, log: &DataLog) {
        let available = (log.len() + 1).saturating_sub(self.depth);
        if available <= self.cols {
            return;
        }
        let p = self.rows();
        if self.r.nrows() < p {
            *self = Self::from_log(log, self.depth).expect("log long enough");
            return;
        }
        for j in self.cols..available {
            self.append_row(log.stacked_column(j, self.depth));
        }
    }

    fn append_row(&mut self, mut h: DVector<f64>) {
        let p = self.r.ncols();
        let k = self.r.nrows();
        let n_old = self.q.nrows();
        self.q = std::mem::replace(&mut self.q, DMatrix::zeros(0, 0)).insert_row(n_old, 0.0);
        let mut extra = DVector::zeros(n_old + 1);
        extra[n_old] = 1.0;
        for i in 0..k {
            let (a, b) = (self.r[(i, i)], h[i]);
            if b == 0.0 {
                continue;
            }
            let rad = a.hypot(b);
            let (c, s) = (a / rad, b / rad);
            for j in i..p {
                let (ri, hj) = (self.r[(i, j)], h[j]);
                self.r[(i, j)] = c * ri + s * hj;
                h[j] = -s * ri + c * hj;
            }
            let mut qi = self.q.column_mut(i);
            for row in 0..=n_old {
                let (x, e) = (qi[row], extra[row]);
                qi[row] = c * x + s * e;
                extra[row] = -s * x + c * e;
            }
        }
        self.cols += 1;
    }
}

/// `(T, (E^T)^+, V)`: minimal-norm solution operator of `E x = b`, the
/// pseudo-inverse of `E^T` and an orthonormal kernel basis of `E`.
fn split_constraint(e: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (rows, k) = e.shape();
    let svd = e.clone().svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sv = &svd.singular_values;
    let cut = sv.max() * rows.max(k) as f64 * f64::EPSILON * 1e3;
    let kept: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > cut).collect();
    let mut t = DMatrix::zeros(k, rows);
    let mut range = DMatrix::zeros(k, kept.len());
    for (j, &i) in kept.iter().enumerate() {
        t += v_t.row(i).transpose() * u.column(i).transpose() / sv[i];
        range.set_column(j, &v_t.row(i).transpose());
    }
    // the trailing rows of the full Q^T of V_1 complete V_1 to an orthonormal basis
    let mut qt = DMatrix::identity(k, k);
    range.qr().q_tr_mul(&mut qt);
    let v = qt.rows(kept.len(), k - kept.len()).transpose();
    let et_pinv = t.transpose();
    (t, et_pinv, v)
}

fn block_quadratic(rows: &DMatrix<f64>, w: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    // rows^T blockdiag(w, ..., w) rows
    let blocks = rows.nrows() / m;
    let mut scaled = DMatrix::zeros(rows.nrows(), rows.ncols());
    for b in 0..blocks {
        let blk = w * rows.rows(b * m, m);
        scaled.rows_mut(b * m, m).copy_from(&blk);
    }
    rows.transpose() * scaled
}

pub(crate) fn apply_blocks(w: &DMatrix<f64>, v: &DVector<f64>, m: usize) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for b in 0..v.len() / m {
        out.rows_mut(b * m, m).copy_from(&(w * v.rows(b * m, m)));
    }
    out
}

/// Everything that depends only on the data, the horizon and the weights.
///
/// The past-window constraint `E theta = b` is eliminated through the SVD
/// of `E` (never through its Gram matrix: the output rows are nearly
/// collinear at small sampling times), `theta = T b + V z`. What remains is
/// `min 1/2 (u - a)^T Sc^+ (u - a)` over the future inputs `u` subject to
/// the per-step ball constraints, where `Sc = Mz Pz^-1 Mz^T` and `a` is the
/// unconstrained optimum for the current past window and reference.
#[derive(Debug, Clone)]
pub struct OcpFactorization {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub(crate) basis: DMatrix<f64>,
    pub(crate) e: DMatrix<f64>,
    pub(crate) mf: DMatrix<f64>,
    pub(crate) yf: DMatrix<f64>,
    /// Minimal-norm solution operator of `E theta = b`.
    t: DMatrix<f64>,
    /// Left pseudo-inverse of `E^T`, for the past-window multiplier.
    et_pinv: DMatrix<f64>,
    /// Orthonormal basis of the kernel of `E`.
    v: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `Mf V`.
    mz: DMatrix<f64>,
    /// `Pz^-1 Mz^T`.
    pi_mt: DMatrix<f64>,
    pub(crate) sc_vecs: DMatrix<f64>,
    pub(crate) sc_vals: DVector<f64>,
    pub(crate) weights: OcpWeights,
}

/// Per-solve quantities shared between the unconstrained solve and the recovery.
#[derive(Debug, Clone)]
pub(crate) struct Particular {
    theta_b: DVector<f64>,
    /// `Pz^-1 g` with `g` the linear term in kernel coordinates.
    pig: DVector<f64>,
}

impl OcpFactorization {
    pub fn new(qr: &HankelQr, n: usize, weights: &OcpWeights) -> Result<Self> {
        let m = qr.m;
        let depth = qr.depth;
        if depth <= n {
            return Err(Error::InvalidParameter(format!("Hankel depth {depth} leaves no horizon beyond n = {n}")));
        }
        if weights.q.nrows() != m {
            return Err(Error::DimensionMismatch("weight matrices do not match the data dimension".into()));
        }
        let horizon = depth - n;
        let rows = qr.theta_rows();
        let k = rows.ncols();
        let half = m * depth;
        let (np, lm) = (n * m, horizon * m);
        let mut e = DMatrix::zeros(2 * np, k);
        e.rows_mut(0, np).copy_from(&rows.rows(0, np));
        e.rows_mut(np, np).copy_from(&rows.rows(half, np));
        let mf = rows.rows(np, lm).into_owned();
        let yf = rows.rows(half + np, lm).into_owned();

        let (t, et_pinv, v) = split_constraint(&e);
        // V^T P V from the projected blocks, using V^T V = I
        let mz = &mf * &v;
        let mut pz = block_quadratic(&(&yf * &v), &weights.q, m) + block_quadratic(&mz, &weights.r, m);
        for i in 0..pz.nrows() {
            pz[(i, i)] += weights.nu_reg;
        }
        pz *= 2.0;
        let chol = Cholesky::new(pz).ok_or(Error::SingularKkt)?;
        let pi_mt = chol.solve(&mz.transpose());
        let sc = &mz * &pi_mt;
        let eig = SymmetricEigen::new((&sc + sc.transpose()) * 0.5);
        let sc_vals = eig.eigenvalues.map(|l| l.max(0.0));
        Ok(Self {
            n,
            m,
            horizon,
            basis: qr.basis().clone(),
            e,
            mf,
            yf,
            t,
            et_pinv,
            v,
            chol,
            mz,
            pi_mt,
            sc_vecs: eig.eigenvectors,
            sc_vals,
            weights: weights.clone(),
        })
    }

    /// `P x` for the cost Hessian `P = 2 (Yf^T Q Yf + Mf^T R Mf + nu_reg I)`.
    pub(crate) fn apply_p(&self, x: &DVector<f64>) -> DVector<f64> {
        let (w, m) = (&self.weights, self.m);
        (self.yf.tr_mul(&apply_blocks(&w.q, &(&self.yf * x), m))
            + self.mf.tr_mul(&apply_blocks(&w.r, &(&self.mf * x), m))
            + x * w.nu_reg)
            * 2.0
    }

    /// Linear cost term `q = -2 Yf^T blockdiag(Q) r`.
    pub(crate) fn linear_term(&self, refs: &DVector<f64>) -> DVector<f64> {
        -(self.yf.transpose() * apply_blocks(&self.weights.q, refs, self.m)) * 2.0
    }

    /// Unconstrained future inputs `a` for the given past window and reference.
    pub(crate) fn unconstrained(&self, b: &DVector<f64>, q: &DVector<f64>) -> (DVector<f64>, Particular) {
        let theta_b = &self.t * b;
        let g = self.v.tr_mul(&(q + self.apply_p(&theta_b)));
        let pig = self.chol.solve(&g);
        let a = &self.mf * &theta_b - &self.mz * &pig;
        (a, Particular { theta_b, pig })
    }

    fn sc_cutoff(&self) -> f64 {
        self.sc_vals.amax() * 1e-12
    }

    /// Multiplier of `Mf theta = u` at the point `u`: range part from
    /// `Sc^+ (u - a)`, null part from the splitting dual.
    pub(crate) fn future_multiplier(&self, u: &DVector<f64>, a: &DVector<f64>, dual: &DVector<f64>) -> DVector<f64> {
        let cut = self.sc_cutoff();
        let coords = self.sc_vecs.transpose() * (u - a);
        let dual_coords = self.sc_vecs.transpose() * dual;
        let mixed = DVector::from_fn(coords.len(), |i, _| {
            let l = self.sc_vals[i];
            if l > cut {
                coords[i] / l
            } else {
                dual_coords[i]
            }
        });
        &self.sc_vecs * mixed
    }

    /// Primal point and past-window multiplier for the future-input multiplier `lam_m`.
    pub(crate) fn recover(&self, part: &Particular, q: &DVector<f64>, lam_m: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = &self.pi_mt * lam_m - &part.pig;
        let theta = &part.theta_b + &self.v * z;
        let lam_e = &self.et_pinv * (self.apply_p(&theta) + q - self.mf.tr_mul(lam_m));
        (theta, lam_e)
    }
}
