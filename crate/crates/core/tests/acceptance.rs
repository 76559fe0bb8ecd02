//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::Instant;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use funnelmpc::datadrive::{lemma_residual, DataLog, HankelPair};
use funnelmpc::funnel::{l_max_oracle, Reciprocal};
use funnelmpc::lti::{byrnes_isidori, high_gain_bounds, zoh_discretize};
use funnelmpc::mpc::{assemble_ocp, solve_ocp, OcpWeights, PastWindow};
use funnelmpc::scenarios::{default_benchmark, Experiment, ExperimentConfig, DEFAULT_SEED};
use funnelmpc::supervisor::{error_bound_report, run, Branch, HorizonMode, TrajectoryLog};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, ok: bool, name: &str, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    ((value - target) / target).abs() <= rel
}

fn config(mode: HorizonMode, seed: u64) -> ExperimentConfig {
    ExperimentConfig { mode, seed, ..default_benchmark() }
}

fn simulate(mode: HorizonMode, seed: u64) -> (Experiment, funnelmpc::Result<TrajectoryLog>) {
    let exp = config(mode, seed).build().expect("benchmark configuration is valid");
    let log = run(&exp.plant, &exp.controller);
    (exp, log)
}

fn constants_chain(rep: &mut Report) {
    let start = Instant::now();
    let exp = default_benchmark().build().unwrap();
    let c = &exp.constants;
    let bif = byrnes_isidori(&exp.plant).unwrap();
    let derived = high_gain_bounds(&bif.gamma).unwrap();
    let l_max = l_max_oracle(&bif, &exp.controller.funnel, &exp.controller.reference, &c.eps, &Reciprocal).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let gamma_ok = c.bounds.gamma_min == 0.25
        && c.bounds.gamma_max == 0.25
        && (derived.gamma_min - 0.25).abs() <= 4.0 * f64::EPSILON
        && (derived.gamma_max - 0.25).abs() <= 4.0 * f64::EPSILON;
    let ok = within(c.beta, 26.98, 0.05) && within(c.tau, 4.5e-3, 0.10) && gamma_ok && within(l_max, 1.4, 0.15) && elapsed < 1.0;
    rep.line(
        ok,
        "constants chain",
        format!(
            "beta {:.4} (26.98 +-5%), tau {:.4e} (4.5e-3 +-10%), gamma configured [{}, {}] derived [{:.17}, {:.17}] (0.25, 4 ulp), L_max bound {:.4} (1.4 +-15%), {:.3} s (< 1 s)",
            c.beta, c.tau, c.bounds.gamma_min, c.bounds.gamma_max, derived.gamma_min, derived.gamma_max, l_max, elapsed
        ),
    );
}

struct Sweep {
    fixed: Vec<(Experiment, funnelmpc::Result<TrajectoryLog>)>,
    adaptive: Vec<(Experiment, funnelmpc::Result<TrajectoryLog>)>,
    seconds: f64,
}

fn funnel_guarantee(rep: &mut Report) -> Sweep {
    let start = Instant::now();
    let fixed: Vec<_> = SEEDS.map(|s| simulate(HorizonMode::Fixed(20), s)).collect();
    let adaptive: Vec<_> = SEEDS.map(|s| simulate(HorizonMode::Adaptive { cap: 50 }, s)).collect();
    let seconds = start.elapsed().as_secs_f64();
    let mut errors = 0;
    let (mut worst_ratio, mut worst_e1, mut worst_e2) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (_, log) in fixed.iter().chain(&adaptive) {
        match log {
            Ok(log) => {
                worst_ratio = worst_ratio.max(log.intersample_ratio);
                for r in &log.records {
                    worst_e1 = worst_e1.max(r.e[0].norm());
                    worst_e2 = worst_e2.max(r.e[1].norm());
                }
            }
            Err(_) => errors += 1,
        }
    }
    let ok = errors == 0 && worst_ratio < 1.0 && worst_e1 < 1.0 && worst_e2 <= 1.0 && seconds < 30.0;
    rep.line(
        ok,
        "funnel guarantee",
        format!(
            "{} runs, {errors} aborted, max |y - y_ref| / 0.15 on the 100x grid {worst_ratio:.4} (< 1), max |e1| {worst_e1:.4} (< 1), max |e2| {worst_e2:.4} (<= 1), {seconds:.2} s (< 30 s)",
            fixed.len() + adaptive.len()
        ),
    );
    Sweep { fixed, adaptive, seconds }
}

fn spike_comparison(rep: &mut Report, sweep: &Sweep) {
    let u_max = default_benchmark().u_max;
    let (_, zoh) = simulate(HorizonMode::ZohOnly, DEFAULT_SEED);
    let zoh_spikes = zoh.as_ref().map_or(0, |l| l.spike_events(u_max));
    let spikes: Vec<usize> =
        sweep.fixed.iter().map(|(_, l)| l.as_ref().map_or(usize::MAX, |l| l.spike_events(u_max))).collect();
    let default_spikes = spikes[(DEFAULT_SEED - SEEDS.start()) as usize];
    // the zoh-only loop never draws random numbers, so one run covers every seed
    let every_seed = spikes.iter().all(|&s| s < zoh_spikes);
    let ok = zoh.is_ok() && zoh_spikes >= 3 && default_spikes == 1 && every_seed;
    rep.line(
        ok,
        "controller comparison",
        format!(
            "spikes above {u_max}: zoh-only {zoh_spikes} (>= 3), combined seed {DEFAULT_SEED} {default_spikes} (== 1), combined per seed {spikes:?} (all < zoh-only)"
        ),
    );
}

fn adaptive_horizon(rep: &mut Report, sweep: &Sweep) {
    let idx = (DEFAULT_SEED - SEEDS.start()) as usize;
    let (Ok(fixed), Ok(adaptive)) = (&sweep.fixed[idx].1, &sweep.adaptive[idx].1) else {
        rep.line(false, "adaptive horizon", "default-seed run aborted".into());
        return;
    };
    // the learning phase is the adaptive controller's excitation phase; both
    // clauses are evaluated on the window after it
    let learned = adaptive.pe_step.unwrap_or(adaptive.len());
    let zoh_after = adaptive.zoh_steps_from(learned);
    let (sup_adaptive, sup_fixed) = (adaptive.input_sup_from(learned), fixed.input_sup_from(learned));
    let final_l = adaptive.records.last().map_or(0, |r| r.l_used);
    // stricter diagnostic windows, reported only
    let both = learned.max(fixed.pe_step.unwrap_or(fixed.len()));
    let capped = adaptive.records.iter().position(|r| r.l_used == final_l).unwrap_or(adaptive.len());
    let ok = zoh_after == 0 && sup_adaptive <= sup_fixed;
    rep.line(
        ok,
        "adaptive horizon",
        format!(
            "MPC from step {learned}, L reaches {final_l} at step {capped}, ZoH activations afterwards {zoh_after} (== 0); \
             sup |u| from step {learned}: adaptive {sup_adaptive:.4} <= fixed {sup_fixed:.4} \
             [diagnostic: from step {both} {:.4} vs {:.4}, from step {capped} {:.4} vs {:.4}]",
            adaptive.input_sup_from(both),
            fixed.input_sup_from(both),
            adaptive.input_sup_from(capped),
            fixed.input_sup_from(capped)
        ),
    );
}

fn fundamental_lemma(rep: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_fresh, mut least_perturbed) = (0.0_f64, f64::INFINITY);
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let l = n + 3;
        let sys = common::random_discrete(&mut rng, n, m);
        let len = (l + n) * (m + 1) + 10;
        let u_hat = common::random_inputs(&mut rng, len, m);
        let x0 = common::gaussian_matrix(&mut rng, n, 1).column(0).into_owned();
        let y_hat = common::simulate_discrete(&sys, &x0, &u_hat);
        let log = DataLog { u_hat, y_hat };
        let pair = HankelPair::from_log(&log, l).unwrap();

        let u = common::random_inputs(&mut rng, l, m);
        let x1 = common::gaussian_matrix(&mut rng, n, 1).column(0).into_owned();
        let y = common::simulate_discrete(&sys, &x1, &u);
        worst_fresh = worst_fresh.max(lemma_residual(&u, &y, &pair).unwrap());

        let mut other = sys.clone();
        other.0 += common::gaussian_matrix(&mut rng, n, n) * 0.1;
        let y_other = common::simulate_discrete(&other, &x1, &u);
        least_perturbed = least_perturbed.min(lemma_residual(&u, &y_other, &pair).unwrap());
    }
    let seconds = start.elapsed().as_secs_f64();
    let ok = worst_fresh <= 1e-8 && least_perturbed > 1e-6 && seconds < 10.0;
    rep.line(
        ok,
        "fundamental lemma",
        format!("50 systems, max fresh residual {worst_fresh:.3e} (<= 1e-8), min perturbed residual {least_perturbed:.3e} (> 1e-6), {seconds:.2} s (< 10 s)"),
    );
}

fn qp_oracle(rep: &mut Report, sweep: &Sweep) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=2);
        let l = rng.random_range(1..=3);
        let sys = common::random_discrete(&mut rng, n, 1);
        let len = 2 * (l + 2 * n) + 6;
        let u_hat = common::random_inputs(&mut rng, len, 1);
        let x0 = common::gaussian_matrix(&mut rng, n, 1).column(0).into_owned();
        let y_hat = common::simulate_discrete(&sys, &x0, &u_hat);
        let log = DataLog { u_hat, y_hat };
        let pair = HankelPair::from_log(&log, l + n).unwrap();

        let past_u = common::random_inputs(&mut rng, n, 1);
        let xp = common::gaussian_matrix(&mut rng, n, 1).column(0).into_owned();
        let past_y = common::simulate_discrete(&sys, &xp, &past_u);
        let refs: Vec<DVector<f64>> = (0..l).map(|_| DVector::from_element(1, rng.random_range(-2.0..2.0))).collect();
        let (q, r, nu_reg) = (rng.random_range(0.5..10.0), rng.random_range(0.01..1.0), 1e-4);
        let u_max = rng.random_range(0.05..1.5);

        let weights = OcpWeights::scaled_identity(1, q, r, nu_reg).unwrap();
        let past = PastWindow::new(past_u.clone(), past_y.clone()).unwrap();
        let problem = assemble_ocp(&pair, past, refs.clone(), &weights, u_max, n).unwrap();
        let sol = solve_ocp(&problem);

        let flat = |v: &[DVector<f64>]| v.iter().map(|x| x[0]).collect::<Vec<_>>();
        let oracle = common::dense_kkt_oracle(
            &pair.hu().into_owned(),
            &pair.hy().into_owned(),
            &flat(&past_u),
            &flat(&past_y),
            &flat(&refs),
            q,
            r,
            nu_reg,
            u_max,
        );
        for (a, b) in sol.u_plan.iter().zip(&oracle) {
            worst = worst.max((a[0] - b).abs());
        }
    }
    let mut kkt = 0.0_f64;
    let mut solves = 0;
    for (_, log) in sweep.fixed.iter().chain(&sweep.adaptive) {
        if let Ok(log) = log {
            for k in log.records.iter().filter_map(|r| r.kkt) {
                kkt = kkt.max(k);
                solves += 1;
            }
        }
    }
    let ok = worst <= 1e-6 && kkt < 1e-6 && solves > 0;
    rep.line(
        ok,
        "QP oracle equivalence",
        format!("100 random OCPs, max |u_plan - oracle| {worst:.3e} (<= 1e-6); {solves} benchmark solves, max KKT residual {kkt:.3e} (< 1e-6)"),
    );
}

fn error_bounds(rep: &mut Report, sweep: &Sweep) {
    let (zoh_exp, zoh_log) = simulate(HorizonMode::ZohOnly, DEFAULT_SEED);
    let mut runs: Vec<(&Experiment, &TrajectoryLog)> = Vec::new();
    for (exp, log) in sweep.fixed.iter().chain(&sweep.adaptive) {
        if let Ok(log) = log {
            runs.push((exp, log));
        }
    }
    let zoh_ok = zoh_log.is_ok();
    if let Ok(log) = &zoh_log {
        runs.push((&zoh_exp, log));
    }
    let (mut level, mut rate) = (0.0_f64, 0.0_f64);
    for (exp, log) in &runs {
        let r = error_bound_report(log, &exp.constants.eps, &exp.constants.mu);
        level = r.level_ratio.iter().copied().fold(level, f64::max);
        rate = r.rate_ratio.iter().copied().fold(rate, f64::max);
    }
    let ok = zoh_ok && runs.len() == 41 && level <= 1.0 && rate <= 1.01;
    rep.line(
        ok,
        "intermediate error bounds",
        format!("{} runs, max |e1| / eps1 {level:.4} (<= 1), max finite-difference rate / mu1 {rate:.4} (<= 1.01)", runs.len()),
    );
}

fn exact_discretization(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=3);
        let sys = common::random_continuous(&mut rng, n, m);
        let tau = rng.random_range(1e-3..0.2);
        let u = common::gaussian_matrix(&mut rng, m, 1).column(0).into_owned();
        let model = zoh_discretize(&sys, tau).unwrap();
        let exact = model.step(&sys.x0, &u);
        let reference = common::rk4_hold(&sys, &sys.x0, &u, tau, 1000);
        worst = worst.max((exact - reference).amax());
    }
    rep.line(worst <= 1e-9, "exact discretization", format!("50 systems, max |ZoH - RK4(tau/1000)| {worst:.3e} (<= 1e-9)"));
}

fn main() {
    let mut rep = Report { failures: 0 };
    constants_chain(&mut rep);
    let sweep = funnel_guarantee(&mut rep);
    spike_comparison(&mut rep, &sweep);
    adaptive_horizon(&mut rep, &sweep);
    fundamental_lemma(&mut rep);
    qp_oracle(&mut rep, &sweep);
    error_bounds(&mut rep, &sweep);
    exact_discretization(&mut rep);
    let branches: usize = sweep
        .fixed
        .iter()
        .chain(&sweep.adaptive)
        .filter_map(|(_, l)| l.as_ref().ok())
        .map(|l| l.branch_count(Branch::Zoh))
        .sum();
    println!("sweep: {:.2} s, {branches} ZoH activations over all benchmark runs", sweep.seconds);
    if rep.failures > 0 {
        println!("{} acceptance criteria failed", rep.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
