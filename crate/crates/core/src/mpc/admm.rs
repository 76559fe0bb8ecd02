//! ADMM for `min 1/2 (u - a)^T G (u - a)` subject to `||u_k|| <= u_max` per block,
//! with `G` given through the eigendecomposition of its pseudo-inverse.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings {
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
    pub adapt_interval: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self { eps_primal: 1e-8, eps_dual: 1e-8, max_iter: 20_000, relaxation: 1.6, adapt_interval: 25 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AdmmResult {
    /// Feasible iterate (projected).
    pub w: DVector<f64>,
    /// Unscaled dual `rho y`.
    pub dual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Projection of each `m`-block onto the Euclidean ball of radius `u_max`.
pub(crate) fn project_balls(v: &mut DVector<f64>, m: usize, u_max: f64) {
    if !u_max.is_finite() {
        return;
    }
    for b in 0..v.len() / m {
        let mut blk = v.rows_mut(b * m, m);
        if m == 1 {
            blk[0] = blk[0].clamp(-u_max, u_max);
        } else {
            let nrm = blk.norm();
            if nrm > u_max {
                blk *= u_max / nrm;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn solve(
    vecs: &DMatrix<f64>,
    vals: &DVector<f64>,
    a: &DVector<f64>,
    m: usize,
    u_max: f64,
    warm_w: Option<&DVector<f64>>,
    warm_dual: Option<&DVector<f64>>,
    settings: &AdmmSettings,
) -> AdmmResult {
    let dim = a.len();
    let mut w = warm_w.cloned().unwrap_or_else(|| a.clone());
    project_balls(&mut w, m, u_max);

    // rho balances the curvature spread of G = Sc^+
    let positive: Vec<f64> = vals.iter().copied().filter(|&l| l > vals.amax() * 1e-12).collect();
    let mut rho = if positive.is_empty() {
        1.0
    } else {
        let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = positive.iter().copied().fold(0.0, f64::max);
        1.0 / (lo * hi).sqrt()
    };
    let mut y = warm_dual.map(|d| d / rho).unwrap_or_else(|| DVector::zeros(dim));
    let mut gains = vals.map(|l| rho * l / (1.0 + rho * l));

    let alpha = settings.relaxation;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=settings.max_iter {
        iterations = it;
        let v = &w - &y - a;
        let coords = vecs.tr_mul(&v).component_mul(&gains);
        let u = a + vecs * coords;
        let relaxed = &u * alpha + &w * (1.0 - alpha);
        let w_old = w.clone();
        w = &relaxed + &y;
        project_balls(&mut w, m, u_max);
        y += &relaxed - &w;

        let r_primal = (&u - &w).amax();
        let r_dual = rho * (&w - &w_old).amax();
        if r_primal < settings.eps_primal && r_dual < settings.eps_dual {
            converged = true;
            break;
        }
        if it % settings.adapt_interval == 0 {
            let scale_p = u.amax().max(w.amax()).max(1e-12);
            let scale_d = (rho * y.amax()).max(1e-12);
            let ratio = ((r_primal / scale_p) / (r_dual / scale_d).max(1e-300)).sqrt();
            if ratio.is_finite() && !(0.2..=5.0).contains(&ratio) {
                let new_rho = (rho * ratio).clamp(1e-10, 1e10);
                y *= rho / new_rho;
                rho = new_rho;
                gains = vals.map(|l| rho * l / (1.0 + rho * l));
            }
        }
    }
    AdmmResult { w, dual: y * rho, iterations, converged }
}
