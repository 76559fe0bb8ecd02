//! Hankel matrices of measured input/output data, persistency of excitation,
//! and the fundamental-lemma residual.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};

/// Synchronously recorded samples `(u_k, y_k)`, `y_k` measured at `t_k` and
/// `u_k` held on `[t_k, t_k + tau)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataLog {
    pub u_hat: Vec<DVector<f64>>,
    pub y_hat: Vec<DVector<f64>>,
}

impl DataLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        self.u_hat.push(u);
        self.y_hat.push(y);
    }

    pub fn len(&self) -> usize {
        self.u_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_hat.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.u_hat.first().map_or(0, |u| u.len())
    }

    /// Stacked `[u_j; ...; u_{j+depth-1}; y_j; ...; y_{j+depth-1}]`.
    pub fn stacked_column(&self, j: usize, depth: usize) -> DVector<f64> {
        let m = self.dim();
        let mut col = DVector::zeros(2 * m * depth);
        for i in 0..depth {
            col.rows_mut(i * m, m).copy_from(&self.u_hat[j + i]);
            col.rows_mut((depth + i) * m, m).copy_from(&self.y_hat[j + i]);
        }
        col
    }
}

/// Depth-`depth` block Hankel matrix; block `(i, j)` is `seq[i + j]`.
pub fn hankel(seq: &[DVector<f64>], depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 || seq.len() < depth {
        return Err(Error::TooShort { len: seq.len(), depth });
    }
    let m = seq[0].len();
    let cols = seq.len() - depth + 1;
    Ok(DMatrix::from_fn(m * depth, cols, |row, j| seq[j + row / m][row % m]))
}

/// Input and output Hankel matrices of equal depth, grown one column per
/// appended sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    depth: usize,
    m: usize,
    cols: usize,
    hu: Vec<f64>,
    hy: Vec<f64>,
}

impl HankelPair {
    pub fn from_log(log: &DataLog, depth: usize) -> Result<Self> {
        if depth == 0 || log.len() < depth {
            return Err(Error::TooShort { len: log.len(), depth });
        }
        let mut pair = Self { depth, m: log.dim(), cols: 0, hu: Vec::new(), hy: Vec::new() };
        pair.extend(log);
        Ok(pair)
    }

    /// Appends the columns made available by samples added to `log` since
    /// the last call.
    pub fn extend(&mut self, log: &DataLog) {
        let available = (log.len() + 1).saturating_sub(self.depth);
        for j in self.cols..available {
            for i in 0..self.depth {
                self.hu.extend(log.u_hat[j + i].iter());
                self.hy.extend(log.y_hat[j + i].iter());
            }
        }
        self.cols = self.cols.max(available);
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn hu(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.hu, self.m * self.depth, self.cols)
    }

    pub fn hy(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.hy, self.m * self.depth, self.cols)
    }

    /// `[Hu; Hy]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let rows = self.m * self.depth;
        let mut out = DMatrix::zeros(2 * rows, self.cols);
        out.view_mut((0, 0), (rows, self.cols)).copy_from(&self.hu());
        out.view_mut((rows, 0), (rows, self.cols)).copy_from(&self.hy());
        out
    }

    /// Recovers the input sequence from the first column and last row.
    pub fn input_sequence(&self) -> Vec<DVector<f64>> {
        unstack(&self.hu(), self.m, self.depth, self.cols)
    }

    pub fn output_sequence(&self) -> Vec<DVector<f64>> {
        unstack(&self.hy(), self.m, self.depth, self.cols)
    }
}

fn unstack(h: &DMatrixView<'_, f64>, m: usize, depth: usize, cols: usize) -> Vec<DVector<f64>> {
    let mut seq: Vec<DVector<f64>> = (0..depth).map(|i| h.view((i * m, 0), (m, 1)).column(0).into_owned()).collect();
    for j in 1..cols {
        seq.push(h.view(((depth - 1) * m, j), (m, 1)).column(0).into_owned());
    }
    seq
}

/// Number of singular values above `sigma_max * max(rows, cols) * eps * 1e3`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let thresh = smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON * 1e3;
    sv.iter().filter(|&&s| s > thresh).count()
}

/// True iff `hankel(seq, order)` has full row rank.
pub fn is_persistently_exciting(seq: &[DVector<f64>], order: usize) -> bool {
    if order == 0 || seq.len() < order {
        return false;
    }
    let h = match hankel(seq, order) {
        Ok(h) => h,
        Err(_) => return false,
    };
    if h.ncols() < h.nrows() {
        return false;
    }
    numerical_rank(&h) == h.nrows()
}

/// Largest order for which `seq` is persistently exciting.
pub fn max_pe_order(seq: &[DVector<f64>]) -> usize {
    let mut tracker = PeTracker::default();
    tracker.update(seq)
}

/// Persistency-of-excitation order of a growing sequence, raised
/// incrementally from the last known value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeTracker {
    pub order: usize,
}

impl PeTracker {
    pub fn update(&mut self, seq: &[DVector<f64>]) -> usize {
        self.update_capped(seq, usize::MAX)
    }

    /// Like [`PeTracker::update`] but stops once `cap` is reached.
    pub fn update_capped(&mut self, seq: &[DVector<f64>], cap: usize) -> usize {
        let m = seq.first().map_or(1, |u| u.len()).max(1);
        while self.order < cap {
            let next = self.order + 1;
            // full row rank needs at least m * next columns
            if seq.len() + 1 < next * (m + 1) || !is_persistently_exciting(seq, next) {
                break;
            }
            self.order = next;
        }
        self.order
    }
}

/// Distance of the stacked trajectory `[u; y]` from the column space of `[Hu; Hy]`.
pub fn lemma_residual(traj_u: &[DVector<f64>], traj_y: &[DVector<f64>], hankels: &HankelPair) -> Result<f64> {
    let d = hankels.depth();
    let m = hankels.dim();
    if traj_u.len() != d || traj_y.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "trajectory lengths ({}, {}) differ from Hankel depth {d}",
            traj_u.len(),
            traj_y.len()
        )));
    }
    if traj_u.iter().chain(traj_y).any(|v| v.len() != m) {
        return Err(Error::DimensionMismatch("sample dimension".into()));
    }
    let mut w = DVector::zeros(2 * m * d);
    for i in 0..d {
        w.rows_mut(i * m, m).copy_from(&traj_u[i]);
        w.rows_mut((d + i) * m, m).copy_from(&traj_y[i]);
    }
    let h = hankels.stacked();
    let rank = numerical_rank(&h);
    let svd = h.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut residual = w.clone();
    for &i in order.iter().take(rank) {
        let col = u.column(i);
        let c = col.dot(&w);
        residual.axpy(-c, &col, 1.0);
    }
    Ok(residual.norm())
}
