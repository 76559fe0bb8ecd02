//! The mass-on-car benchmark and the experiment configuration built on it.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::funnel::{aux_errors, build_constants, ControllerConstants, FunnelSpec, Reciprocal, ReferenceSignal, Sinusoid};
use crate::lti::{byrnes_isidori, high_gain_bounds, relative_degree, ContinuousLTI, HighGainBounds};
use crate::mpc::{AdmmSettings, OcpWeights};
use crate::supervisor::{ControllerConfig, HorizonMode};

/// A mass `m2` on a spring-damper inside a car of mass `m1`, driven up an
/// incline of angle `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassOnCarParams {
    pub m1: f64,
    pub m2: f64,
    pub k: f64,
    pub d: f64,
    pub theta: f64,
}

impl Default for MassOnCarParams {
    fn default() -> Self {
        Self { m1: 1.0, m2: 2.0, k: 1.0, d: 1.0, theta: FRAC_PI_4 }
    }
}

impl MassOnCarParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.m2 > 0.0 && self.k > 0.0 && self.d > 0.0) {
            return Err(Error::InvalidParameter("masses, spring and damper constants must be positive".into()));
        }
        if !(self.theta > 0.0 && self.theta < FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0, pi/2), got {}", self.theta)));
        }
        Ok(())
    }
}

/// State `(z, s, z', s')`: car position, relative mass position and their
/// velocities; output `y = z + cos(theta) s`. Starts at rest in the origin.
pub fn mass_on_car(p: &MassOnCarParams) -> Result<ContinuousLTI> {
    p.validate()?;
    let c = p.theta.cos();
    let mass = DMatrix::from_row_slice(2, 2, &[p.m1 + p.m2, p.m2 * c, p.m2 * c, p.m2]);
    let inv = mass.try_inverse().ok_or_else(|| Error::InvalidParameter("singular mass matrix".into()))?;
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    // M [z''; s''] = [u; -k s - d s']
    for i in 0..2 {
        a[(2 + i, 1)] = -inv[(i, 1)] * p.k;
        a[(2 + i, 3)] = -inv[(i, 1)] * p.d;
    }
    let b = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, inv[(0, 0)], inv[(1, 0)]]);
    let cm = DMatrix::from_row_slice(1, 4, &[1.0, c, 0.0, 0.0]);
    ContinuousLTI::new(a, b, cm, DVector::zeros(4))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: MassOnCarParams,
    /// Radius of the constant funnel.
    pub funnel_radius: f64,
    pub ref_amplitude: f64,
    pub ref_omega: f64,
    pub lambda: f64,
    pub u_max: f64,
    pub mode: HorizonMode,
    pub q: f64,
    pub r: f64,
    pub nu_reg: f64,
    pub l_max: f64,
    /// Overrides for the high-gain bounds; derived from the plant when absent.
    pub gamma: Option<(f64, f64)>,
    pub seed: u64,
    pub t_end: f64,
    /// Sampling time override; by default the largest admissible step that
    /// divides `t_end`. Larger values void the funnel guarantee.
    pub tau: Option<f64>,
    pub verify_substeps: usize,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 1;

/// The published benchmark with the fixed horizon `L = 20`.
pub fn default_benchmark() -> ExperimentConfig {
    ExperimentConfig {
        plant: MassOnCarParams::default(),
        funnel_radius: 0.15,
        ref_amplitude: 0.4,
        ref_omega: FRAC_PI_2,
        lambda: 0.75,
        u_max: 20.0,
        mode: HorizonMode::Fixed(20),
        q: 100.0,
        r: 1e-4,
        nu_reg: 1e-6,
        l_max: 1.4,
        gamma: Some((0.25, 0.25)),
        seed: DEFAULT_SEED,
        t_end: 2.0,
        tau: None,
        verify_substeps: 100,
        out: None,
    }
}

/// Everything needed to run one closed loop.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub plant: ContinuousLTI,
    pub constants: ControllerConstants,
    pub controller: ControllerConfig,
}

impl ExperimentConfig {
    pub fn funnel(&self) -> Result<FunnelSpec> {
        FunnelSpec::constant(self.funnel_radius)
    }

    /// `y_ref = A sin(omega t)`, with derivatives up to the relative degree `r`.
    pub fn reference(&self, r: usize) -> Result<ReferenceSignal> {
        ReferenceSignal::new(r, vec![Sinusoid { amplitude: self.ref_amplitude, omega: self.ref_omega, phase: 0.0, offset: 0.0 }])
    }

    /// The plant started on the reference: `y(0) = y_ref(0)`, `y'(0) = y_ref'(0)`,
    /// with the mass at rest relative to the car.
    pub fn plant(&self) -> Result<ContinuousLTI> {
        let sys = mass_on_car(&self.plant)?;
        let reference = self.reference(2)?;
        let x0 = DVector::from_vec(vec![reference.derivs(0.0, 0)[0], 0.0, reference.derivs(0.0, 1)[0], 0.0]);
        sys.with_initial_state(x0)
    }

    /// `u_max` entering the sampling-time bound; zero when the MPC is disabled.
    pub fn effective_u_max(&self) -> f64 {
        match self.mode {
            HorizonMode::ZohOnly => 0.0,
            _ => self.u_max,
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParameter("t_end must be positive".into()));
        }
        match self.mode {
            HorizonMode::Fixed(0) | HorizonMode::Adaptive { cap: 0 } => {
                return Err(Error::InvalidParameter("horizon must be at least 1".into()))
            }
            _ => {}
        }
        let plant = self.plant()?;
        let r = relative_degree(&plant)?;
        let bif = byrnes_isidori(&plant)?;
        let bounds = match self.gamma {
            Some((lo, hi)) => HighGainBounds::new(lo, hi)?,
            None => high_gain_bounds(&bif.gamma)?,
        };
        let funnel = self.funnel()?;
        let reference = self.reference(r)?;
        let alpha = Reciprocal;
        let e0 = aux_errors(0.0, &plant.output_chain(&plant.x0, r), &funnel, &reference, &alpha)?;
        let u_max = self.effective_u_max();
        let constants = build_constants(&funnel, &reference, bounds, self.l_max, self.lambda, u_max, &e0, &alpha)?;
        let tau = match self.tau {
            Some(tau) if tau > 0.0 => tau,
            Some(tau) => return Err(Error::InvalidParameter(format!("sampling time must be positive, got {tau}"))),
            None => grid_step(self.t_end, constants.tau),
        };
        let controller = ControllerConfig {
            funnel,
            reference,
            beta: constants.beta,
            lambda: self.lambda,
            u_max,
            tau,
            n: plant.state_dim(),
            mode: self.mode,
            weights: OcpWeights::scaled_identity(plant.io_dim(), self.q, self.r, self.nu_reg)?,
            admm: AdmmSettings::default(),
            seed: self.seed,
            t_end: self.t_end,
            verify_substeps: self.verify_substeps,
        };
        Ok(Experiment { plant, constants, controller })
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num(v: &str) -> std::result::Result<f64, String> {
            v.parse::<f64>().map_err(|_| format!("expected a number, got '{v}'"))
        }
        fn int(v: &str) -> std::result::Result<u64, String> {
            v.parse::<u64>().map_err(|_| format!("expected a nonnegative integer, got '{v}'"))
        }
        match key {
            "scenario" if value == "mass-on-car" => {}
            "scenario" => return Err(format!("unknown scenario '{value}'")),
            "mode" => {
                self.mode = match value {
                    "fixed" => HorizonMode::Fixed(match self.mode {
                        HorizonMode::Fixed(l) => l,
                        _ => 20,
                    }),
                    "adaptive" => HorizonMode::Adaptive {
                        cap: match self.mode {
                            HorizonMode::Adaptive { cap } => cap,
                            _ => 50,
                        },
                    },
                    "zoh-only" => HorizonMode::ZohOnly,
                    _ => return Err(format!("unknown mode '{value}' (fixed, adaptive, zoh-only)")),
                }
            }
            "L" => {
                let l = int(value)? as usize;
                if let HorizonMode::Fixed(_) = self.mode {
                    self.mode = HorizonMode::Fixed(l);
                } else {
                    return Err("L applies to mode = fixed only".into());
                }
            }
            "L_cap" => {
                let cap = int(value)? as usize;
                if let HorizonMode::Adaptive { .. } = self.mode {
                    self.mode = HorizonMode::Adaptive { cap };
                } else {
                    return Err("L_cap applies to mode = adaptive only".into());
                }
            }
            "seed" => self.seed = int(value)?,
            "t_end" => self.t_end = num(value)?,
            "tau" => self.tau = Some(num(value)?),
            "lambda" => self.lambda = num(value)?,
            "u_max" => self.u_max = num(value)?,
            "q" => self.q = num(value)?,
            "r" => self.r = num(value)?,
            "nu_reg" => self.nu_reg = num(value)?,
            "l_max" => self.l_max = num(value)?,
            "funnel_radius" => self.funnel_radius = num(value)?,
            "ref_amplitude" => self.ref_amplitude = num(value)?,
            "ref_omega" => self.ref_omega = num(value)?,
            "gamma_min" => self.gamma = Some((num(value)?, self.gamma.map_or(f64::NAN, |g| g.1))),
            "gamma_max" => self.gamma = Some((self.gamma.map_or(f64::NAN, |g| g.0), num(value)?)),
            "m1" => self.plant.m1 = num(value)?,
            "m2" => self.plant.m2 = num(value)?,
            "k" => self.plant.k = num(value)?,
            "d" => self.plant.d = num(value)?,
            "theta" => self.plant.theta = num(value)?,
            "verify_substeps" => self.verify_substeps = int(value)? as usize,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of `self`. Blank lines and
    /// `#` comments are ignored; keys are applied in order.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
            self.set(key.trim(), value.trim()).map_err(|msg| Error::Config { line: i + 1, msg })?;
        }
        if let Some((lo, hi)) = self.gamma {
            if lo.is_nan() || hi.is_nan() {
                return Err(Error::Config { line: 0, msg: "gamma_min and gamma_max must be given together".into() });
            }
        }
        Ok(())
    }
}

/// Largest step not above `tau_max` that divides `t_end` evenly.
pub fn grid_step(t_end: f64, tau_max: f64) -> f64 {
    t_end / (t_end / tau_max).ceil()
}
