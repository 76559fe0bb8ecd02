//! Funnel specification, auxiliary error chain and the worst-case constants of
//! the sampled-data safety feedback.
//!
//! The tracking error `e = y - y_ref` must satisfy `phi(t) ||e(t)|| < 1`. For a
//! plant of relative degree `r` the output chain `xi = (y, y', ..., y^(r-1))`
//! is mapped to auxiliary errors
//!
//! ```text
//! e_1     = phi (xi_1 - y_ref)
//! e_{k+1} = phi (xi_{k+1} - y_ref^(k)) + alpha(||e_k||^2) e_k
//! ```
//!
//! and the safety branch applies `-beta e_r / ||e_r||^2` whenever
//! `||e_r(t_k)|| >= lambda`. [`build_constants`] derives the minimal gain and
//! the maximal sampling time for which this keeps the error inside the funnel.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{op_norm, spectral_abscissa, ByrnesIsidoriForm};

/// A C^1 bijection `[0, 1) -> [1, inf)` shaping the auxiliary errors.
pub trait Bijection: Send + Sync {
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;
}

/// `alpha(s) = 1 / (1 - s)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Reciprocal;

impl Bijection for Reciprocal {
    fn value(&self, s: f64) -> f64 {
        1.0 / (1.0 - s)
    }

    fn derivative(&self, s: f64) -> f64 {
        let d = 1.0 - s;
        1.0 / (d * d)
    }
}

/// Shape of the funnel radius `1 / phi(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunnelShape {
    /// `1/phi = radius` for all t.
    Constant { radius: f64 },
    /// `1/phi = (start - end) e^(-rate t) + end`, with `start >= end > 0`.
    Exponential { start: f64, end: f64, rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunnelSpec {
    pub shape: FunnelShape,
}

impl FunnelSpec {
    pub fn constant(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("funnel radius must be positive, got {radius}")));
        }
        Ok(Self { shape: FunnelShape::Constant { radius } })
    }

    pub fn exponential(start: f64, end: f64, rate: f64) -> Result<Self> {
        if !(end > 0.0 && start >= end && rate >= 0.0 && start.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "exponential funnel needs start >= end > 0 and rate >= 0, got ({start}, {end}, {rate})"
            )));
        }
        Ok(Self { shape: FunnelShape::Exponential { start, end, rate } })
    }

    /// Funnel radius `1/phi(t)`.
    pub fn radius(&self, t: f64) -> f64 {
        match self.shape {
            FunnelShape::Constant { radius } => radius,
            FunnelShape::Exponential { start, end, rate } => (start - end) * (-rate * t).exp() + end,
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        1.0 / self.radius(t)
    }

    pub fn phi_dot(&self, t: f64) -> f64 {
        match self.shape {
            FunnelShape::Constant { .. } => 0.0,
            FunnelShape::Exponential { start, end, rate } => {
                let rho = self.radius(t);
                rate * (start - end) * (-rate * t).exp() / (rho * rho)
            }
        }
    }

    /// `||phi||_inf`.
    pub fn phi_sup(&self) -> f64 {
        match self.shape {
            FunnelShape::Constant { radius } => 1.0 / radius,
            FunnelShape::Exponential { end, .. } => 1.0 / end,
        }
    }

    /// `inf phi`.
    pub fn phi_inf(&self) -> f64 {
        match self.shape {
            FunnelShape::Constant { radius } => 1.0 / radius,
            FunnelShape::Exponential { start, .. } => 1.0 / start,
        }
    }

    /// `||phi'/phi||_inf`; the ratio is largest at t = 0 for the exponential shape.
    pub fn ratio_sup(&self) -> f64 {
        match self.shape {
            FunnelShape::Constant { .. } => 0.0,
            FunnelShape::Exponential { start, end, rate } => rate * (start - end) / start,
        }
    }
}

/// One scalar component `offset + amplitude sin(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Sinusoid {
    pub fn derivative(&self, t: f64, i: usize) -> f64 {
        let arg = self.omega * t + self.phase + i as f64 * std::f64::consts::FRAC_PI_2;
        let base = self.amplitude * self.omega.powi(i as i32) * arg.sin();
        if i == 0 {
            base + self.offset
        } else {
            base
        }
    }

    fn sup(&self, i: usize) -> f64 {
        let a = (self.amplitude * self.omega.powi(i as i32)).abs();
        if i == 0 {
            a + self.offset.abs()
        } else {
            a
        }
    }
}

/// Reference `y_ref` with analytic derivatives up to order `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    pub r: usize,
    pub components: Vec<Sinusoid>,
}

impl ReferenceSignal {
    pub fn new(r: usize, components: Vec<Sinusoid>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("reference needs at least one component".into()));
        }
        Ok(Self { r, components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// `y_ref^(i)(t)`.
    pub fn derivs(&self, t: f64, i: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.components.iter().map(|c| c.derivative(t, i)))
    }

    /// `chi(y_ref)(t) = (y_ref, ..., y_ref^(r-1))`.
    pub fn chain(&self, t: f64) -> Vec<DVector<f64>> {
        (0..self.r).map(|i| self.derivs(t, i)).collect()
    }

    /// Upper bound on `||y_ref^(i)||_inf`; exact for scalar references.
    pub fn sup_norm(&self, i: usize) -> f64 {
        if self.dim() == 1 {
            return self.components[0].sup(i);
        }
        self.components.iter().map(|c| c.sup(i).powi(2)).sum::<f64>().sqrt()
    }

    pub fn sup_norms(&self) -> Vec<f64> {
        (0..=self.r).map(|i| self.sup_norm(i)).collect()
    }
}

/// Auxiliary errors `(e_1, ..., e_r)` for the output chain `xi`.
pub fn aux_errors<A: Bijection + ?Sized>(
    t: f64,
    xi: &[DVector<f64>],
    funnel: &FunnelSpec,
    reference: &ReferenceSignal,
    alpha: &A,
) -> Result<Vec<DVector<f64>>> {
    let r = xi.len();
    if r == 0 || r != reference.r {
        return Err(Error::DimensionMismatch(format!(
            "output chain has {r} blocks, reference expects {}",
            reference.r
        )));
    }
    let phi = funnel.phi(t);
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(r);
    for (k, xk) in xi.iter().enumerate() {
        let mut ek = (xk - reference.derivs(t, k)) * phi;
        if let Some(prev) = out.last() {
            let s = prev.norm_squared();
            if s >= 1.0 {
                return Err(Error::AlphaDomain { index: k, norm: s.sqrt() });
            }
            ek += prev * alpha.value(s);
        }
        out.push(ek);
    }
    Ok(out)
}

/// Membership of `xi` in the safe set: `||e_k|| < 1` for `k < r`, `||e_r|| <= 1`.
pub fn in_safe_set<A: Bijection + ?Sized>(
    t: f64,
    xi: &[DVector<f64>],
    funnel: &FunnelSpec,
    reference: &ReferenceSignal,
    alpha: &A,
) -> bool {
    match aux_errors(t, xi, funnel, reference, alpha) {
        Ok(e) => {
            let r = e.len();
            e[..r - 1].iter().all(|ek| ek.norm() < 1.0) && e[r - 1].norm() <= 1.0
        }
        Err(_) => false,
    }
}

/// Unique root in `(0, 1)` of `alpha(eps^2) eps = rhs`, by bisection down to
/// floating-point resolution.
pub fn solve_eps_hat<A: Bijection + ?Sized>(rhs: f64, alpha: &A) -> f64 {
    if !(rhs > 0.0) {
        return 0.0;
    }
    let g = |e: f64| alpha.value(e * e) * e;
    let (mut lo, mut hi) = (0.0_f64, 1.0 - 1e-12);
    if g(hi) <= rhs {
        return hi;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (g(hi) - rhs).abs() < (g(lo) - rhs).abs() {
        hi
    } else {
        lo
    }
}

/// Everything the sampled feedback and the sampling-time bound need.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConstants {
    pub eps: Vec<f64>,
    pub eps_hat: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    pub kappa0: f64,
    pub beta: f64,
    pub kappa1: f64,
    pub lambda: f64,
    /// Maximal admissible sampling time.
    pub tau: f64,
    pub l_max: f64,
    pub u_max: f64,
    pub bounds: crate::lti::HighGainBounds,
    pub phi_sup: f64,
    pub phi_inf: f64,
}

impl ControllerConstants {
    /// Minimal admissible gain `2 kappa0 / (gamma_min inf phi)`.
    pub fn beta_min(&self) -> f64 {
        2.0 * self.kappa0 / (self.bounds.gamma_min * self.phi_inf)
    }

    /// Sampling-time bound for the current `beta` and `u_max`.
    pub fn tau_bound(&self) -> f64 {
        let first = self.kappa0 / (self.kappa1 * self.kappa1);
        let second =
            (1.0 - self.lambda) / (self.kappa0 + self.phi_sup * self.bounds.gamma_max * self.u_max);
        first.min(second)
    }

    /// Replace the gain by a larger one and update `kappa1` and `tau`.
    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if beta < self.beta_min() * (1.0 - 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "beta = {beta} is below the admissible minimum {}",
                self.beta_min()
            )));
        }
        self.beta = beta;
        self.kappa1 = self.kappa0 + self.phi_sup * self.bounds.gamma_max * beta;
        self.tau = self.tau_bound();
        Ok(self)
    }

    /// Uniform bound `max{beta/lambda, u_max}` on the applied input.
    pub fn input_bound(&self) -> f64 {
        (self.beta / self.lambda).max(self.u_max)
    }
}

/// Computes the auxiliary constants, the minimal gain and the maximal sampling time.
///
/// `e0` is the auxiliary error chain at `t = 0`; its length is the relative degree.
#[allow(clippy::too_many_arguments)]
pub fn build_constants<A: Bijection + ?Sized>(
    funnel: &FunnelSpec,
    reference: &ReferenceSignal,
    bounds: crate::lti::HighGainBounds,
    l_max: f64,
    lambda: f64,
    u_max: f64,
    e0: &[DVector<f64>],
    alpha: &A,
) -> Result<ControllerConstants> {
    let r = e0.len();
    if r == 0 || r != reference.r {
        return Err(Error::DimensionMismatch("initial error chain length must equal r".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if !(l_max >= 0.0 && u_max >= 0.0) {
        return Err(Error::InvalidParameter("L_max and u_max must be nonnegative".into()));
    }
    let ratio = funnel.ratio_sup();
    let shaped = |e: f64| alpha.value(e * e) * e;

    let (mut eps, mut eps_hat, mut mu, mut gamma_bar) = (vec![], vec![], vec![], vec![]);
    let (mut eps_prev, mut gbar_prev) = (0.0_f64, 0.0_f64);
    for (k, e0k) in e0.iter().enumerate().take(r - 1) {
        let norm0 = e0k.norm();
        if norm0 >= 1.0 {
            return Err(Error::InitialConditionViolated { index: k + 1, norm: norm0 });
        }
        let drift = ratio * (1.0 + shaped(eps_prev));
        let eh = solve_eps_hat(drift + 1.0 + gbar_prev, alpha);
        let ek = norm0.max(eh);
        let mk = drift + 1.0 + shaped(ek) + gbar_prev;
        let s = ek * ek;
        let gk = 2.0 * alpha.derivative(s) * s * mk + alpha.value(s) * mk;
        eps_hat.push(eh);
        eps.push(ek);
        mu.push(mk);
        gamma_bar.push(gk);
        eps_prev = ek;
        gbar_prev = gk;
    }

    let phi_sup = funnel.phi_sup();
    let phi_inf = funnel.phi_inf();
    let kappa0 =
        ratio * (1.0 + shaped(eps_prev)) + phi_sup * (l_max + reference.sup_norm(r)) + gbar_prev;
    let beta = 2.0 * kappa0 / (bounds.gamma_min * phi_inf);
    let kappa1 = kappa0 + phi_sup * bounds.gamma_max * beta;
    let mut c = ControllerConstants {
        eps,
        eps_hat,
        mu,
        gamma_bar,
        kappa0,
        beta,
        kappa1,
        lambda,
        tau: 0.0,
        l_max,
        u_max,
        bounds,
        phi_sup,
        phi_inf,
    };
    c.tau = c.tau_bound();
    Ok(c)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

fn exp_norm(k: &DMatrix<f64>, s: f64) -> f64 {
    op_norm(&(k * s).exp())
}

/// `(sup ||e^{Ks}||, sup_s ||e^{Ks}|| int_0^s ||e^{-K sigma}|| d sigma)` over `[0, horizon]`.
fn internal_sups(k: &DMatrix<f64>, horizon: f64) -> (f64, f64) {
    const GRID: usize = 2000;
    let h = horizon / GRID as f64;
    let neg = -k;
    let (mut sup_exp, mut sup_joint, mut integral) = (1.0_f64, 0.0_f64, 0.0_f64);
    for j in 0..GRID {
        let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
        let f = |s: f64| exp_norm(&neg, s);
        let scale = f(b).max(1.0);
        integral += integrate(&f, a, b, 1e-8 * scale / GRID as f64);
        let e = exp_norm(k, b);
        sup_exp = sup_exp.max(e);
        sup_joint = sup_joint.max(e * integral);
    }
    (sup_exp, sup_joint)
}

/// Explicit bound on the plant dynamics seen by the output chain while it
/// stays in the funnel.
///
/// Uses the normal form, so it is an offline oracle: the controller itself
/// takes `L_max` as a configured estimate. `eps` are the constants
/// `eps_1, ..., eps_(r-1)`.
pub fn l_max_oracle<A: Bijection + ?Sized>(
    bif: &ByrnesIsidoriForm,
    funnel: &FunnelSpec,
    reference: &ReferenceSignal,
    eps: &[f64],
    alpha: &A,
) -> Result<f64> {
    if eps.len() + 1 != bif.r {
        return Err(Error::DimensionMismatch("need r-1 eps constants".into()));
    }
    let radius_sup = 1.0 / funnel.phi_inf();
    let mut total = 0.0;
    for (i, li) in bif.l.iter().enumerate() {
        let e = if i == 0 { 0.0 } else { eps[i - 1] };
        total += op_norm(li) * (radius_sup * (1.0 + e * alpha.value(e * e)) + reference.sup_norm(i));
    }
    if bif.internal_dim() == 0 {
        return Ok(total);
    }
    let abscissa = spectral_abscissa(&bif.k);
    if abscissa >= -crate::lti::MARGIN_TOL {
        return Err(Error::NotHurwitz { max_re: abscissa });
    }
    let drive = op_norm(&bif.p) * (radius_sup + reference.sup_norm(0));
    let eta0 = bif.eta0.norm();
    let mut horizon = 50.0 / abscissa.abs();
    let bound_for = |horizon: f64| {
        let (sup_exp, sup_joint) = internal_sups(&bif.k, horizon);
        op_norm(&bif.s) * (sup_joint * drive + sup_exp * eta0)
    };
    let mut value = bound_for(horizon);
    for _ in 0..8 {
        horizon *= 2.0;
        let next = bound_for(horizon);
        let settled = (next - value).abs() <= 1e-3 * value.abs().max(1e-300);
        value = next;
        if settled {
            break;
        }
    }
    Ok(total + value)
}

/// Safety feedback `-beta e_r / ||e_r||^2`.
pub fn zoh_feedback(e_r: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    let s = e_r.norm_squared();
    if s.sqrt() < 1e-14 {
        return Err(Error::DivisionByZero(s.sqrt()));
    }
    Ok(e_r * (-beta / s))
}
