use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use funnelmpc::funnel::{l_max_oracle, Reciprocal};
use funnelmpc::lti::{byrnes_isidori, high_gain_bounds, relative_degree, spectral_abscissa};
use funnelmpc::scenarios::{default_benchmark, ExperimentConfig};
use funnelmpc::supervisor::{run, Branch, TrajectoryLog};
use funnelmpc::trace::{default_output_path, write_trace_file};
use funnelmpc::Error;

#[derive(Parser)]
#[command(name = "funnelmpc", about = "Funnel-safeguarded data-driven MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed loop and write its CSV trace.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV (default: inside $FUNNELMPC_OUT_DIR, or the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run seeds `first..=last` in parallel, one CSV per seed.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 1)]
        first: u64,
        #[arg(long, default_value_t = 20)]
        last: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the controller constants and the sampling-time bound.
    Constants {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Structural analysis of the plant.
    Check {
        #[command(flatten)]
        exp: ExpArgs,
    },
}

#[derive(Args, Clone)]
struct ExpArgs {
    /// Flat `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    /// fixed, adaptive or zoh-only
    #[arg(long)]
    mode: Option<String>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long = "L-cap")]
    l_cap: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
}

impl ExpArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
        let mut cfg = default_benchmark();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config { line: 0, msg: format!("{}: {e}", path.display()) })?;
            cfg.apply_text(&text)?;
        }
        let flag = |cfg: &mut ExperimentConfig, key: &str, value: String| {
            cfg.set(key, &value).map_err(|msg| Error::Config { line: 0, msg: format!("--{key}: {msg}") })
        };
        if let Some(s) = &self.scenario {
            flag(&mut cfg, "scenario", s.clone())?;
        }
        if let Some(m) = &self.mode {
            flag(&mut cfg, "mode", m.clone())?;
        }
        if let Some(l) = self.l {
            flag(&mut cfg, "L", l.to_string())?;
        }
        if let Some(c) = self.l_cap {
            flag(&mut cfg, "L_cap", c.to_string())?;
        }
        if let Some(t) = self.t_end {
            flag(&mut cfg, "t_end", t.to_string())?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn mode_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.mode {
        funnelmpc::supervisor::HorizonMode::ZohOnly => "zoh-only",
        funnelmpc::supervisor::HorizonMode::Fixed(_) => "fixed",
        funnelmpc::supervisor::HorizonMode::Adaptive { .. } => "adaptive",
    }
}

fn summary(log: &TrajectoryLog, u_max: f64) -> String {
    format!(
        "samples {}, tau {:.6e}, max |e|/funnel {:.4} (refined {:.4}), zoh activations {}, spikes above {} {}, mpc from step {}, solve time {:.3} s",
        log.len(),
        log.tau,
        log.sample_ratio(),
        log.intersample_ratio,
        log.branch_count(Branch::Zoh),
        u_max,
        log.spike_events(u_max),
        log.pe_step.map_or_else(|| "-".to_string(), |k| k.to_string()),
        log.solve_seconds,
    )
}

fn run_one(cfg: &ExperimentConfig, out: &Path) -> Result<TrajectoryLog, Error> {
    let exp = cfg.build()?;
    let log = run(&exp.plant, &exp.controller)?;
    write_trace_file(&log, out)?;
    Ok(log)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { exp, seed, out } => {
            let cfg = exp.resolve(seed)?;
            let out = out
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| default_output_path(&format!("{}_seed{}.csv", mode_name(&cfg), cfg.seed)));
            let log = run_one(&cfg, &out)?;
            println!("{}: {}", out.display(), summary(&log, cfg.u_max));
        }
        Command::Sweep { exp, first, last, out_dir } => {
            let base = exp.resolve(None)?;
            let dir = out_dir.unwrap_or_else(|| default_output_path(""));
            let results: Vec<_> = (first..=last)
                .into_par_iter()
                .map(|seed| {
                    let cfg = ExperimentConfig { seed, ..base.clone() };
                    let out = dir.join(format!("{}_seed{seed}.csv", mode_name(&cfg)));
                    (seed, run_one(&cfg, &out).map(|log| summary(&log, cfg.u_max)))
                })
                .collect();
            let mut first_err = None;
            for (seed, res) in results {
                match res {
                    Ok(s) => println!("seed {seed}: {s}"),
                    Err(e) => {
                        println!("seed {seed}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Command::Constants { exp } => {
            let cfg = exp.resolve(None)?;
            let e = cfg.build()?;
            let c = &e.constants;
            println!("gamma_min = {}, gamma_max = {}", c.bounds.gamma_min, c.bounds.gamma_max);
            for k in 0..c.eps.len() {
                println!(
                    "k = {}: eps_hat = {}, eps = {}, mu = {}, gamma_bar = {}",
                    k + 1,
                    c.eps_hat[k],
                    c.eps[k],
                    c.mu[k],
                    c.gamma_bar[k]
                );
            }
            println!("kappa0 = {}", c.kappa0);
            println!("beta = {}", c.beta);
            println!("kappa1 = {}", c.kappa1);
            println!("tau_max = {}", c.tau);
            println!("tau (grid) = {}", e.controller.tau);
            println!("input bound = {}", c.input_bound());
        }
        Command::Check { exp } => {
            let cfg = exp.resolve(None)?;
            let e = cfg.build()?;
            let r = relative_degree(&e.plant)?;
            let bif = byrnes_isidori(&e.plant)?;
            let hg = high_gain_bounds(&bif.gamma)?;
            let abscissa = spectral_abscissa(&bif.k);
            println!("state dimension = {}", e.plant.state_dim());
            println!("relative degree = {r}");
            println!("high-gain matrix = {:?}", bif.gamma.as_slice());
            println!("gamma_min = {}, gamma_max = {}", hg.gamma_min, hg.gamma_max);
            println!("internal dynamics abscissa = {abscissa} (minimum phase: {})", abscissa < 0.0);
            match l_max_oracle(&bif, &e.controller.funnel, &e.controller.reference, &e.constants.eps, &Reciprocal) {
                Ok(l) => println!("L_max bound = {l} (configured {})", cfg.l_max),
                Err(err) => println!("L_max bound unavailable: {err}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::FunnelViolation { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
