//! Data-driven receding-horizon OCP built on Hankel matrices.
//!
//! For a Hankel pair of depth `L + n` the problem is
//!
//! ```text
//! minimize    sum_{k=n}^{L+n-1} ||y_k - y_ref,k||_Q^2 + ||u_k||_R^2 + nu_reg ||nu||^2
//! subject to  [u; y] = [Hu; Hy] nu
//!             (u_k, y_k) = past window, k < n
//!             ||u_k|| <= u_max,          k >= n
//! ```
//!
//! The equality constraints and the quadratic cost are eliminated exactly
//! (see [`factor`]), leaving a small problem in the future inputs that is
//! solved by ADMM with ball projections.

mod admm;
pub mod factor;

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::datadrive::{is_persistently_exciting, DataLog, HankelPair, PeTracker};
use crate::error::{Error, Result};

pub use admm::AdmmSettings;
pub use factor::{HankelQr, OcpFactorization};

#[derive(Debug, Clone, PartialEq)]
pub struct OcpWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub nu_reg: f64,
}

impl OcpWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, nu_reg: f64) -> Result<Self> {
        if q.shape() != r.shape() || q.nrows() != q.ncols() {
            return Err(Error::DimensionMismatch("Q and R must be square and of equal size".into()));
        }
        for (name, w) in [("Q", &q), ("R", &r)] {
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) || Cholesky::new(w.clone()).is_none() {
                return Err(Error::InvalidParameter(format!("{name} must be symmetric positive definite")));
            }
        }
        if !(nu_reg >= 0.0) {
            return Err(Error::InvalidParameter("nu_reg must be nonnegative".into()));
        }
        Ok(Self { q, r, nu_reg })
    }

    /// `q I`, `r I` of size `m`.
    pub fn scaled_identity(m: usize, q: f64, r: f64, nu_reg: f64) -> Result<Self> {
        Self::new(DMatrix::identity(m, m) * q, DMatrix::identity(m, m) * r, nu_reg)
    }
}

/// The last `n` input/output samples that the predicted trajectory continues.
#[derive(Debug, Clone, PartialEq)]
pub struct PastWindow {
    pub u_past: Vec<DVector<f64>>,
    pub y_past: Vec<DVector<f64>>,
}

impl PastWindow {
    pub fn new(u_past: Vec<DVector<f64>>, y_past: Vec<DVector<f64>>) -> Result<Self> {
        if u_past.len() != y_past.len() {
            return Err(Error::DimensionMismatch("past window lengths differ".into()));
        }
        Ok(Self { u_past, y_past })
    }

    /// The most recent `n` samples of `log`.
    pub fn from_log(log: &DataLog, n: usize) -> Result<Self> {
        if log.len() < n {
            return Err(Error::TooShort { len: log.len(), depth: n });
        }
        let s = log.len() - n;
        Self::new(log.u_hat[s..].to_vec(), log.y_hat[s..].to_vec())
    }

    pub fn len(&self) -> usize {
        self.u_past.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_past.is_empty()
    }

    /// `[u_past; y_past]` stacked in time order.
    fn stacked(&self) -> DVector<f64> {
        let parts: Vec<f64> = self.u_past.iter().chain(&self.y_past).flat_map(|v| v.iter().copied()).collect();
        DVector::from_vec(parts)
    }
}

/// One instance of the OCP: cached factorization plus the per-step data.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub factor: Arc<OcpFactorization>,
    pub past: PastWindow,
    pub refs: Vec<DVector<f64>>,
    pub u_max: f64,
}

impl OcpProblem {
    pub fn horizon(&self) -> usize {
        self.factor.horizon
    }

    /// Builds the problem on an existing factorization.
    pub fn on_factor(
        factor: Arc<OcpFactorization>,
        past: PastWindow,
        refs: Vec<DVector<f64>>,
        u_max: f64,
    ) -> Result<Self> {
        if past.len() != factor.n {
            return Err(Error::DimensionMismatch(format!("past window has {} samples, need {}", past.len(), factor.n)));
        }
        if refs.len() != factor.horizon {
            return Err(Error::DimensionMismatch(format!(
                "reference window has {} samples, horizon is {}",
                refs.len(),
                factor.horizon
            )));
        }
        let m = factor.m;
        if past.u_past.iter().chain(&past.y_past).chain(&refs).any(|v| v.len() != m) {
            return Err(Error::DimensionMismatch("sample dimension".into()));
        }
        if !(u_max >= 0.0) {
            return Err(Error::InvalidParameter("u_max must be nonnegative".into()));
        }
        Ok(Self { factor, past, refs, u_max })
    }

    fn stacked_refs(&self) -> DVector<f64> {
        DVector::from_vec(self.refs.iter().flat_map(|v| v.iter().copied()).collect())
    }
}

/// Assembles the OCP for a Hankel pair of depth `L + n`.
///
/// Fails with `InsufficientPe` unless the recorded input is persistently
/// exciting of order `L + 2n`.
pub fn assemble_ocp(
    hankels: &HankelPair,
    past: PastWindow,
    ref_window: Vec<DVector<f64>>,
    weights: &OcpWeights,
    u_max: f64,
    n: usize,
) -> Result<OcpProblem> {
    let depth = hankels.depth();
    if depth <= n {
        return Err(Error::InvalidParameter(format!("Hankel depth {depth} must exceed n = {n}")));
    }
    let required = depth + n;
    if !is_persistently_exciting(&hankels.input_sequence(), required) {
        return Err(Error::InsufficientPe { required });
    }
    let qr = HankelQr::from_pair(hankels);
    let factor = Arc::new(OcpFactorization::new(&qr, n, weights)?);
    OcpProblem::on_factor(factor, past, ref_window, u_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Fallback,
}

/// Optimality measures of a returned solution in the reduced coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub u_plan: Vec<DVector<f64>>,
    pub y_plan: Vec<DVector<f64>>,
    pub nu: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub kkt: KktResidual,
    /// Multipliers of the future-input coupling, one block per step.
    pub input_multipliers: DVector<f64>,
    dual: DVector<f64>,
}

impl OcpSolution {
    /// Zero plan used when the solver cannot provide one.
    pub fn fallback(horizon: usize, m: usize) -> Self {
        Self {
            u_plan: vec![DVector::zeros(m); horizon],
            y_plan: vec![],
            nu: DVector::zeros(0),
            objective: f64::NAN,
            iterations: 0,
            status: SolveStatus::Fallback,
            kkt: KktResidual::default(),
            input_multipliers: DVector::zeros(horizon * m),
            dual: DVector::zeros(horizon * m),
        }
    }
}

/// First planned input, to be held over the next sampling interval.
pub fn first_action(sol: &OcpSolution) -> DVector<f64> {
    sol.u_plan[0].clone()
}

fn split_blocks(v: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    (0..v.len() / m).map(|b| v.rows(b * m, m).into_owned()).collect()
}

fn solve_with(problem: &OcpProblem, settings: &AdmmSettings, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> OcpSolution {
    let f = &problem.factor;
    let m = f.m;
    let b = problem.past.stacked();
    let refs = problem.stacked_refs();
    let q = f.linear_term(&refs);
    let (a, part) = f.unconstrained(&b, &q);
    let res = admm::solve(
        &f.sc_vecs,
        &f.sc_vals,
        &a,
        m,
        problem.u_max,
        warm.map(|w| w.0),
        warm.map(|w| w.1),
        settings,
    );
    let lam_m = f.future_multiplier(&res.w, &a, &(-&res.dual));
    let (theta, lam_e) = f.recover(&part, &q, &lam_m);

    let y_future = &f.yf * &theta;
    let dy = &y_future - &refs;
    let objective = dy.dot(&factor::apply_blocks(&f.weights.q, &dy, m))
        + res.w.dot(&factor::apply_blocks(&f.weights.r, &res.w, m))
        + f.weights.nu_reg * theta.norm_squared();

    let stationarity = (f.apply_p(&theta) + &q - f.e.transpose() * &lam_e - f.mf.transpose() * &lam_m).amax();
    let primal = (&f.e * &theta - &b).amax().max((&f.mf * &theta - &res.w).amax());
    let complementarity = ball_complementarity(&res.w, &lam_m, m, problem.u_max);

    OcpSolution {
        u_plan: split_blocks(&res.w, m),
        y_plan: split_blocks(&y_future, m),
        nu: &f.basis * &theta,
        objective,
        iterations: res.iterations,
        status: if res.converged { SolveStatus::Optimal } else { SolveStatus::MaxIters },
        kkt: KktResidual { stationarity, primal, complementarity },
        input_multipliers: lam_m,
        dual: res.dual,
    }
}

/// `-grad` must lie in the normal cone of the ball at each block.
pub(crate) fn ball_complementarity(u: &DVector<f64>, grad: &DVector<f64>, m: usize, u_max: f64) -> f64 {
    let mut worst = 0.0_f64;
    for blk in 0..u.len() / m {
        let ub = u.rows(blk * m, m);
        let gb = grad.rows(blk * m, m);
        let nrm = ub.norm();
        let r = if u_max.is_finite() && nrm >= u_max * (1.0 - 1e-9) && nrm > 0.0 {
            let dir = ub / nrm;
            let s = (-gb.dot(&dir)).max(0.0);
            (gb + dir * s).norm()
        } else {
            gb.norm()
        };
        worst = worst.max(r);
    }
    worst
}

/// Solves one OCP from a cold start with default settings.
pub fn solve_ocp(problem: &OcpProblem) -> OcpSolution {
    solve_with(problem, &AdmmSettings::default(), None)
}

/// `min(L_cap, max L >= 1 with the inputs persistently exciting of order L + 2n)`, or 0.
pub fn adaptive_horizon(log: &DataLog, n: usize, l_cap: usize) -> usize {
    let order = PeTracker::default().update_capped(&log.u_hat, l_cap + 2 * n);
    order.saturating_sub(2 * n).min(l_cap)
}

/// Receding-horizon OCP solver owning the factorization cache and the warm start.
#[derive(Debug, Clone)]
pub struct OcpSolver {
    pub settings: AdmmSettings,
    n: usize,
    weights: OcpWeights,
    qr: Option<HankelQr>,
    factor: Option<Arc<OcpFactorization>>,
    factor_cols: usize,
    warm: Option<(DVector<f64>, DVector<f64>)>,
    pub factorizations: usize,
}

impl OcpSolver {
    pub fn new(n: usize, weights: OcpWeights) -> Self {
        Self {
            settings: AdmmSettings::default(),
            n,
            weights,
            qr: None,
            factor: None,
            factor_cols: 0,
            warm: None,
            factorizations: 0,
        }
    }

    /// Factorization for horizon `l` over the samples in `log`; reused while
    /// neither the data nor the horizon changed.
    pub fn factor_for(&mut self, log: &DataLog, l: usize) -> Result<Arc<OcpFactorization>> {
        let depth = l + self.n;
        match &mut self.qr {
            Some(qr) if qr.depth() == depth => qr.extend(log),
            _ => self.qr = Some(HankelQr::from_log(log, depth)?),
        }
        let qr = self.qr.as_ref().expect("set above");
        let stale = match &self.factor {
            Some(f) => f.horizon != l || self.factor_cols != qr.cols(),
            None => true,
        };
        if stale {
            self.factor = Some(Arc::new(OcpFactorization::new(qr, self.n, &self.weights)?));
            self.factor_cols = qr.cols();
            self.factorizations += 1;
        }
        Ok(self.factor.clone().expect("set above"))
    }

    /// Solves with the previous plan shifted by one step as warm start.
    pub fn solve(&mut self, problem: &OcpProblem) -> OcpSolution {
        let len = problem.horizon() * problem.factor.m;
        let m = problem.factor.m;
        let warm = self.warm.as_ref().map(|(w, d)| (shift_pad(w, m, len), shift_pad(d, m, len)));
        let sol = solve_with(problem, &self.settings, warm.as_ref().map(|(w, d)| (w, d)));
        let w = DVector::from_vec(sol.u_plan.iter().flat_map(|v| v.iter().copied()).collect());
        self.warm = Some((w, sol.dual.clone()));
        sol
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }
}

/// Drops the first block, repeats the last one, and fits the result to `len`.
fn shift_pad(v: &DVector<f64>, m: usize, len: usize) -> DVector<f64> {
    let blocks = v.len() / m;
    DVector::from_fn(len, |i, _| {
        let (blk, c) = (i / m + 1, i % m);
        let src = blk.min(blocks.saturating_sub(1));
        if blocks == 0 {
            0.0
        } else {
            v[src * m + c]
        }
    })
}
