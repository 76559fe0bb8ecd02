//! The sampled closed loop: random excitation while data is collected, the
//! data-driven MPC in the safe region, and the funnel feedback near the
//! funnel boundary.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datadrive::{DataLog, PeTracker};
use crate::error::{Error, Result};
use crate::funnel::{aux_errors, in_safe_set, zoh_feedback, FunnelSpec, Reciprocal, ReferenceSignal};
use crate::lti::{zoh_discretize, ContinuousLTI};
use crate::mpc::{AdmmSettings, OcpProblem, OcpSolver, OcpWeights, PastWindow, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Random,
    Mpc,
    Zoh,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Random => "random",
            Branch::Mpc => "mpc",
            Branch::Zoh => "zoh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Branch::Random),
            "mpc" => Some(Branch::Mpc),
            "zoh" => Some(Branch::Zoh),
            _ => None,
        }
    }
}

/// How the prediction horizon is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonMode {
    /// MPC disabled: zero input in the safe region.
    ZohOnly,
    /// Collect data until the horizon `L` is supported, then freeze the data.
    Fixed(usize),
    /// Keep collecting and use the largest supported horizon, until it reaches `cap`.
    Adaptive { cap: usize },
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub funnel: FunnelSpec,
    pub reference: ReferenceSignal,
    pub beta: f64,
    pub lambda: f64,
    pub u_max: f64,
    /// Sampling time; must not exceed the admissible bound.
    pub tau: f64,
    /// Upper bound on the plant order; length of the past window.
    pub n: usize,
    pub mode: HorizonMode,
    pub weights: OcpWeights,
    pub admm: AdmmSettings,
    pub seed: u64,
    pub t_end: f64,
    /// Points per sampling interval for the intersample funnel check (0 disables it).
    pub verify_substeps: usize,
}

impl ControllerConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.tau).round() as usize
    }
}

/// Controller-side state carried from one sample to the next.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub k: usize,
    pub t_k: f64,
    pub pe_reached: bool,
    /// Samples feeding the Hankel matrices.
    pub data: DataLog,
    /// Every applied input and measured output, for the past window.
    pub history: DataLog,
    pub branches: Vec<Branch>,
    pub rng_seed: u64,
    pub horizon: usize,
    rng: ChaCha8Rng,
    pe: PeTracker,
    solver: OcpSolver,
}

impl LoopState {
    pub fn new(config: &ControllerConfig) -> Self {
        let mut solver = OcpSolver::new(config.n, config.weights.clone());
        solver.settings = config.admm;
        Self {
            k: 0,
            t_k: 0.0,
            pe_reached: false,
            data: DataLog::new(),
            history: DataLog::new(),
            branches: Vec::new(),
            rng_seed: config.seed,
            horizon: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            pe: PeTracker::default(),
            solver,
        }
    }

    pub fn factorizations(&self) -> usize {
        self.solver.factorizations
    }

    /// Updates the excitation order and the usable horizon from `data`.
    fn refresh_horizon(&mut self, config: &ControllerConfig) {
        let two_n = 2 * config.n;
        match config.mode {
            HorizonMode::ZohOnly => {}
            HorizonMode::Fixed(l) => {
                if !self.pe_reached && self.pe.update_capped(&self.data.u_hat, l + two_n) >= l + two_n {
                    self.pe_reached = true;
                    self.horizon = l;
                }
            }
            HorizonMode::Adaptive { cap } => {
                let order = self.pe.update_capped(&self.data.u_hat, cap + two_n);
                if order > two_n {
                    self.pe_reached = true;
                    self.horizon = self.horizon.max((order - two_n).min(cap));
                }
            }
        }
    }
}

/// Uniform input with each component in `[-u_max/sqrt(m), u_max/sqrt(m)]`.
pub fn excitation<R: Rng + ?Sized>(rng: &mut R, u_max: f64, m: usize) -> DVector<f64> {
    let bound = u_max / (m as f64).sqrt();
    if bound == 0.0 {
        return DVector::zeros(m);
    }
    DVector::from_fn(m, |_, _| rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: DVector<f64>,
    /// Output chain `(y, y', ..., y^(r-1))`.
    pub xi: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    pub y_ref: DVector<f64>,
    pub radius: f64,
    pub u: DVector<f64>,
    pub branch: Branch,
    pub l_used: usize,
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    /// Largest KKT residual of the MPC solution.
    pub kkt: Option<f64>,
    pub status: Option<SolveStatus>,
}

impl StepRecord {
    pub fn y(&self) -> &DVector<f64> {
        &self.xi[0]
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub tau: f64,
    pub records: Vec<StepRecord>,
    /// Largest `||y - y_ref|| / radius` on the refined grid.
    pub intersample_ratio: f64,
    /// Step at which the MPC first became available.
    pub pe_step: Option<usize>,
    pub factorizations: usize,
    pub solve_seconds: f64,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn branch_count(&self, branch: Branch) -> usize {
        self.records.iter().filter(|r| r.branch == branch).count()
    }

    /// Maximal runs of consecutive samples with `||u|| > threshold`.
    pub fn spike_events(&self, threshold: f64) -> usize {
        let mut events = 0;
        let mut inside = false;
        for r in &self.records {
            let above = r.u.norm() > threshold;
            if above && !inside {
                events += 1;
            }
            inside = above;
        }
        events
    }

    /// Largest `||y - y_ref|| / radius` over the samples.
    pub fn sample_ratio(&self) -> f64 {
        self.records.iter().map(|r| (r.y() - &r.y_ref).norm() / r.radius).fold(0.0, f64::max)
    }

    /// `max ||u||` over the samples from index `from` on.
    pub fn input_sup_from(&self, from: usize) -> f64 {
        self.records.iter().skip(from).map(|r| r.u.norm()).fold(0.0, f64::max)
    }

    pub fn zoh_steps_from(&self, from: usize) -> usize {
        self.records.iter().skip(from).filter(|r| r.branch == Branch::Zoh).count()
    }
}

/// Computes and records the input for the sample at `x`.
pub fn step(
    state: &mut LoopState,
    plant: &ContinuousLTI,
    x: &DVector<f64>,
    r: usize,
    config: &ControllerConfig,
) -> Result<StepRecord> {
    let t = state.t_k;
    let m = plant.io_dim();
    let xi = plant.output_chain(x, r);
    let alpha = Reciprocal;
    if !in_safe_set(t, &xi, &config.funnel, &config.reference, &alpha) {
        let err = (&xi[0] - config.reference.derivs(t, 0)).norm();
        let chain = match aux_errors(t, &xi, &config.funnel, &config.reference, &alpha) {
            Ok(e) => format!("{:?}", e.iter().map(|ek| ek.norm()).collect::<Vec<_>>()),
            Err(e) => e.to_string(),
        };
        return Err(Error::FunnelViolation {
            t,
            detail: format!("tracking error {err:.6e}, radius {:.6e}, auxiliary error norms {chain}", config.funnel.radius(t)),
        });
    }
    let e = aux_errors(t, &xi, &config.funnel, &config.reference, &alpha)?;
    let e_r = &e[r - 1];

    let mut rec = StepRecord {
        t,
        x: x.clone(),
        y_ref: config.reference.derivs(t, 0),
        radius: config.funnel.radius(t),
        u: DVector::zeros(m),
        branch: Branch::Random,
        l_used: 0,
        objective: None,
        iterations: None,
        kkt: None,
        status: None,
        e: e.clone(),
        xi: xi.clone(),
    };

    state.refresh_horizon(config);
    rec.l_used = state.horizon;
    if e_r.norm() >= config.lambda {
        rec.branch = Branch::Zoh;
        rec.u = zoh_feedback(e_r, config.beta)?;
    } else if state.pe_reached {
        rec.branch = Branch::Mpc;
        match mpc_action(state, config, t) {
            Some(sol) => {
                rec.u = sol.u_plan[0].clone();
                rec.objective = Some(sol.objective);
                rec.iterations = Some(sol.iterations);
                rec.kkt = Some(sol.kkt.max());
                rec.status = Some(sol.status);
            }
            None => rec.status = Some(SolveStatus::Fallback),
        }
    } else {
        rec.u = excitation(&mut state.rng, config.u_max, m);
    }

    let y = xi[0].clone();
    state.history.push(rec.u.clone(), y.clone());
    // the Hankel data stops growing once the horizon can no longer increase
    let collecting = match config.mode {
        HorizonMode::Fixed(_) => !state.pe_reached,
        HorizonMode::Adaptive { cap } => state.horizon < cap,
        HorizonMode::ZohOnly => true,
    };
    if collecting {
        state.data.push(rec.u.clone(), y);
    }
    state.branches.push(rec.branch);
    state.k += 1;
    state.t_k = state.k as f64 * config.tau;
    Ok(rec)
}

fn mpc_action(state: &mut LoopState, config: &ControllerConfig, t: f64) -> Option<crate::mpc::OcpSolution> {
    let l = state.horizon;
    let factor = state.solver.factor_for(&state.data, l).ok()?;
    let past = PastWindow::from_log(&state.history, config.n).ok()?;
    let refs = (0..l).map(|i| config.reference.derivs(t + i as f64 * config.tau, 0)).collect();
    let problem = OcpProblem::on_factor(factor, past, refs, config.u_max).ok()?;
    let sol = state.solver.solve(&problem);
    (sol.status != SolveStatus::Fallback && sol.u_plan[0].iter().all(|v| v.is_finite())).then_some(sol)
}

/// Simulates the closed loop on `[0, t_end]`; one record per sample including `t_end`.
pub fn run(plant: &ContinuousLTI, config: &ControllerConfig) -> Result<TrajectoryLog> {
    if config.n == 0 {
        return Err(Error::InvalidParameter("plant order bound n must be positive".into()));
    }
    if !(config.tau > 0.0) || !(config.t_end >= 0.0) {
        return Err(Error::InvalidParameter("need tau > 0 and t_end >= 0".into()));
    }
    let r = config.reference.r;
    let model = zoh_discretize(plant, config.tau)?;
    let fine = match config.verify_substeps {
        0 => None,
        s => Some(zoh_discretize(plant, config.tau / s as f64)?),
    };
    let steps = config.steps();
    let mut state = LoopState::new(config);
    let mut records = Vec::with_capacity(steps + 1);
    let mut x = plant.x0.clone();
    let mut intersample: f64 = 0.0;
    let mut pe_step = None;
    let started = Instant::now();
    for k in 0..=steps {
        let rec = step(&mut state, plant, &x, r, config)?;
        if pe_step.is_none() && state.pe_reached {
            pe_step = Some(k);
        }
        if k < steps {
            if let Some(fine) = &fine {
                let mut z = x.clone();
                for j in 1..config.verify_substeps {
                    z = fine.step(&z, &rec.u);
                    let tj = rec.t + j as f64 * fine.tau;
                    let err = (plant.output(&z) - config.reference.derivs(tj, 0)).norm();
                    intersample = intersample.max(err / config.funnel.radius(tj));
                }
            }
            x = model.step(&x, &rec.u);
        }
        intersample = intersample.max((rec.y() - &rec.y_ref).norm() / rec.radius);
        records.push(rec);
    }
    Ok(TrajectoryLog {
        tau: config.tau,
        records,
        intersample_ratio: intersample,
        pe_step,
        factorizations: state.factorizations(),
        solve_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Observed bounds on the intermediate auxiliary errors along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundReport {
    /// `max_t ||e_k(t)|| / eps_k`, one entry per `k < r`.
    pub level_ratio: Vec<f64>,
    /// `max ||e_k(t_{j+1}) - e_k(t_j)|| / (tau mu_k)`.
    pub rate_ratio: Vec<f64>,
}

pub fn error_bound_report(log: &TrajectoryLog, eps: &[f64], mu: &[f64]) -> ErrorBoundReport {
    let mut level_ratio = vec![0.0_f64; eps.len()];
    let mut rate_ratio = vec![0.0_f64; eps.len()];
    for (j, rec) in log.records.iter().enumerate() {
        for k in 0..eps.len() {
            level_ratio[k] = level_ratio[k].max(rec.e[k].norm() / eps[k]);
            if let Some(next) = log.records.get(j + 1) {
                let rate = (&next.e[k] - &rec.e[k]).norm() / log.tau;
                rate_ratio[k] = rate_ratio[k].max(rate / mu[k]);
            }
        }
    }
    ErrorBoundReport { level_ratio, rate_ratio }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excitation_respects_bound_and_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let u = excitation(&mut a, 20.0, 2);
            assert!(u.norm() <= 20.0 + 1e-12);
            assert_eq!(u, excitation(&mut b, 20.0, 2));
        }
        assert_eq!(excitation(&mut a, 0.0, 1), DVector::zeros(1));
    }

    #[test]
    fn excitation_is_rich() {
        use crate::datadrive::is_persistently_exciting;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seq: Vec<_> = (0..10_000).map(|_| excitation(&mut rng, 20.0, 1)).collect();
        assert!(is_persistently_exciting(&seq, 10));
    }

    #[test]
    fn spike_events_count_runs() {
        let mk = |u: f64| StepRecord {
            t: 0.0,
            x: DVector::zeros(1),
            xi: vec![DVector::zeros(1)],
            e: vec![DVector::zeros(1)],
            y_ref: DVector::zeros(1),
            radius: 1.0,
            u: DVector::from_element(1, u),
            branch: Branch::Random,
            l_used: 0,
            objective: None,
            iterations: None,
            kkt: None,
            status: None,
        };
        let log = TrajectoryLog {
            tau: 1.0,
            records: [0.0, 30.0, -40.0, 1.0, 25.0, 0.0, 21.0].iter().map(|&u| mk(u)).collect(),
            intersample_ratio: 0.0,
            pe_step: None,
            factorizations: 0,
            solve_seconds: 0.0,
        };
        assert_eq!(log.spike_events(20.0), 3);
        assert_eq!(log.spike_events(100.0), 0);
        assert_eq!(log.input_sup_from(3), 25.0);
    }

    #[test]
    fn branch_names_round_trip() {
        for b in [Branch::Random, Branch::Mpc, Branch::Zoh] {
            assert_eq!(Branch::parse(b.as_str()), Some(b));
        }
        assert_eq!(Branch::parse("x"), None);
    }
}
