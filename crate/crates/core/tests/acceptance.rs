//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Tolerances and budgets are pinned below.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signal_lab::agent::{qnet_gradient_check, AgentConfig, AgentMode, LitAgent, RewardMode, StateMode};
use signal_lab::config::{ControllerKind, ExperimentConfig, PeakSection};
use signal_lab::control::{
    estimate_flows, webster_cycle_length, webster_phase_splits, Controller, FixedTime, SignalSample, Sotl,
    WebsterController, WebsterParams,
};
use signal_lab::demand::{entry_lanes, generate_uniform, ArrivalProcess};
use signal_lab::harness::{run_experiment, ExperimentOutput};
use signal_lab::metrics::{check_identity, episode_metrics};
use signal_lab::sim::{run_episode, EpisodeOptions};
use signal_lab::{build_grid_network, build_standard_intersection, Action, IntersectionSim, NetworkConfig};

const IDENTITY_EPISODES: usize = 100;
const GRADCHECK_NETWORKS: usize = 20;
const GRADCHECK_MAX_PARAMS: usize = 1000;
const GRADCHECK_TOLERANCE: f64 = 1e-4;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TRAIN_EPISODES: usize = 50;
const UNIFORM_VPH: f64 = 300.0;
const NEAR_OPTIMAL_RATIO: f64 = 1.15;
const ASYM_HIGH_VPH: f64 = 400.0;
const ASYM_LOW_VPH: f64 = 200.0;
const PEAK_VPH: f64 = 660.0;
const PEAK_WINDOW: [u64; 2] = [1200, 2400];
const PEAK_EVAL_EPISODES: usize = 3;
const OFFLINE_MIN_DEGRADATION: f64 = 1.10;
const CONVERGENCE_RATIO: f64 = 0.7;
const FLOW_VPH: f64 = 360.0;
const FLOW_TOLERANCE: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn fmt(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Requests a change with fixed probability every second.
struct Coin(ChaCha8Rng, f64);

impl Controller for Coin {
    fn decide(&mut self, _sim: &IntersectionSim) -> Action {
        if self.0.random_bool(self.1) {
            Action::Change
        } else {
            Action::Keep
        }
    }
}

fn identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let single = NetworkConfig::single(build_standard_intersection(2).unwrap());
    let four = NetworkConfig::single(build_standard_intersection(4).unwrap());
    let grid = build_grid_network(2, 2, &build_standard_intersection(2).unwrap()).unwrap();
    let (mut finished, mut tried, mut worst) = (0usize, 0usize, 0.0f64);
    while finished < IDENTITY_EPISODES && tried < 4 * IDENTITY_EPISODES {
        tried += 1;
        let network = match rng.random_range(0..4) {
            0 => &four,
            1 => &grid,
            _ => &single,
        };
        let horizon = rng.random_range(300..1800);
        let process = if rng.random_bool(0.5) {
            ArrivalProcess::Poisson
        } else {
            ArrivalProcess::DeterministicUniform
        };
        let rate = rng.random_range(0.0..500.0);
        let seed = rng.random();
        let demand = generate_uniform(rate, &entry_lanes(network), horizon, process, seed, network).unwrap();
        let kind = rng.random_range(0..5);
        let mut boxed: Vec<Box<dyn Controller>> = network
            .intersections
            .iter()
            .enumerate()
            .map(|(i, ic)| -> Box<dyn Controller> {
                match kind {
                    0 => Box::new(FixedTime::new(rng.random_range(5..60))),
                    1 => Box::new(Sotl::default()),
                    2 => Box::new(WebsterController::with_defaults(ic).unwrap()),
                    3 => Box::new(Coin(
                        ChaCha8Rng::seed_from_u64(seed ^ i as u64),
                        rng.random_range(0.02..0.5),
                    )),
                    _ => {
                        let mut a = LitAgent::new(
                            AgentConfig::default(),
                            ic.lane_count(),
                            ic.phase_count(),
                            seed + i as u64,
                        )
                        .unwrap();
                        a.begin_episode(AgentMode::Evaluate);
                        Box::new(a)
                    }
                }
            })
            .collect();
        let mut refs: Vec<&mut dyn Controller> = boxed.iter_mut().map(|c| &mut **c as &mut dyn Controller).collect();
        let result = run_episode(
            network,
            &mut refs,
            &demand,
            EpisodeOptions::new(horizon).with_drain(20_000),
        )
        .unwrap();
        if !result.completed || demand.is_empty() {
            continue;
        }
        finished += 1;
        let (per, total) = episode_metrics(&result);
        for m in per.iter().chain(std::iter::once(&total)) {
            if let Some(r) = check_identity(m) {
                worst = worst.max(r.abs());
            }
        }
    }
    verdict(
        finished >= IDENTITY_EPISODES && worst == 0.0,
        format!("{finished} finished episodes ({tried} run), max |residual| {worst}"),
    )
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for _ in 0..GRADCHECK_NETWORKS {
        worst = worst.max(
            qnet_gradient_check(GRADCHECK_MAX_PARAMS, &mut rng)
                .unwrap()
                .max_relative_error,
        );
    }
    verdict(
        worst < GRADCHECK_TOLERANCE,
        format!("{GRADCHECK_NETWORKS} networks, max relative error {worst:.2e} (limit {GRADCHECK_TOLERANCE:.0e})"),
    )
}

fn webster() -> Verdict {
    let p = WebsterParams {
        loss_time_per_phase_s: 5.0,
        saturation_headway_s: 2.0,
        cycle_bounds_s: (20.0, 180.0),
        green_bounds_s: (5.0, 120.0),
        measurement_window_s: 300,
    };
    let c = webster_cycle_length(900.0, &p, 2);
    let saturated = [1800.0, 2500.0].map(|v| webster_cycle_length(v, &p, 2));
    let mut sums_exact = true;
    for (volumes, cycle) in [
        (vec![900.0, 450.0], 40.0),
        (vec![500.0, 500.0], 33.0),
        (vec![310.0, 95.0, 260.0, 120.0], 71.3),
    ] {
        let k = volumes.len();
        let greens = webster_phase_splits(&volumes, cycle, &p, k).unwrap();
        sums_exact &= greens.iter().sum::<f64>() == cycle - k as f64 * p.loss_time_per_phase_s;
    }
    verdict(
        c == 20.0 && saturated == [180.0, 180.0] && sums_exact,
        format!("C(900, 5, 2, 2) = {c}, saturated -> {saturated:?}, splits sum exactly: {sums_exact}"),
    )
}

fn base_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.experiment.seeds = SEEDS.to_vec();
    c.experiment.episodes = TRAIN_EPISODES;
    c.demand.process = ArrivalProcess::DeterministicUniform;
    c.demand.rate_vph = UNIFORM_VPH;
    c
}

fn run(config: &ExperimentConfig) -> ExperimentOutput {
    run_experiment(config, Path::new(".")).unwrap()
}

fn uniform(sym: &ExperimentOutput, asym: &ExperimentOutput) -> Verdict {
    let lit = median(&sym.seed_means("lit"));
    let web = median(&sym.seed_means("webster"));
    let lit_asym = median(&asym.seed_means("lit"));
    let fixed_asym = median(&asym.seed_means("fixedtime"));
    verdict(
        lit <= NEAR_OPTIMAL_RATIO * web && lit_asym < fixed_asym,
        format!(
            "uniform: lit {lit:.2} vs webster {web:.2} (limit {:.2}); 2:1: lit {lit_asym:.2} vs fixedtime {fixed_asym:.2}",
            NEAR_OPTIMAL_RATIO * web
        ),
    )
}

fn variant(state: StateMode, reward: RewardMode) -> ExperimentOutput {
    let mut c = base_config();
    c.experiment.controllers = vec![ControllerKind::Lit];
    c.agent.state_mode = state;
    c.agent.reward = reward;
    run(&c)
}

fn state_reward(sym: &ExperimentOutput, occupancy: &ExperimentOutput, delay: &ExperimentOutput) -> Verdict {
    let base = sym.seed_means("lit");
    let occ = occupancy.seed_means("lit");
    let del = delay.seed_means("lit");
    let (b, o, d) = (median(&base), median(&occ), median(&del));
    verdict(
        b <= o && b <= d,
        format!(
            "counts+queue {b:.2} {} vs occupancy-only {o:.2} {} and delay reward {d:.2} {}",
            fmt(&base),
            fmt(&occ),
            fmt(&del)
        ),
    )
}

fn traits() -> Verdict {
    let mut c = base_config();
    c.experiment.controllers = vec![ControllerKind::Lit];
    c.experiment.ablation = true;
    c.experiment.eval_episodes = PEAK_EVAL_EPISODES;
    let mut eval = c.demand.clone();
    eval.peak = Some(PeakSection {
        rate_vph: PEAK_VPH,
        windows: vec![PEAK_WINDOW],
    });
    c.evaluation_demand = Some(eval);
    let out = run(&c);
    let m = |l: &str| median(&out.seed_means(l));
    let (full, ol, sg, f) = (m("lit"), m("lit-no-ol"), m("lit-no-sg"), m("lit-no-f"));
    verdict(
        ol >= full && sg >= full && f >= full && ol >= OFFLINE_MIN_DEGRADATION * full,
        format!(
            "full {full:.2}, offline {ol:.2} (needs >= {:.2}), random sampling {sg:.2}, gamma 0 {f:.2}",
            OFFLINE_MIN_DEGRADATION * full
        ),
    )
}

/// Training decisions until convergence per seed; `inf` if never.
fn convergence_steps(out: &ExperimentOutput) -> Vec<f64> {
    out.rows_for("lit")
        .filter(|r| r.episode == 1)
        .map(|r| r.converged_at.map_or(f64::INFINITY, |s| s as f64))
        .collect()
}

fn convergence(counts: &ExperimentOutput, occupancy: &ExperimentOutput) -> Verdict {
    let a = convergence_steps(counts);
    let b = convergence_steps(occupancy);
    let ratio = median(&a) / median(&b);
    verdict(
        ratio <= CONVERGENCE_RATIO,
        format!(
            "counts_phase {} vs counts_plus_occupancy {} steps, median ratio {ratio:.2} (limit {CONVERGENCE_RATIO})",
            fmt(&a),
            fmt(&b)
        ),
    )
}

fn flows() -> Verdict {
    let network = NetworkConfig::single(build_standard_intersection(2).unwrap());
    let ic = &network.intersections[0];
    let demand = generate_uniform(
        FLOW_VPH,
        &entry_lanes(&network),
        3600,
        ArrivalProcess::DeterministicUniform,
        0,
        &network,
    )
    .unwrap();
    let mut sim = IntersectionSim::new(ic.clone()).unwrap();
    for v in &demand {
        sim.schedule_arrival(v.id, ic.lane_index(&v.route[0]).unwrap(), v.entry_time_s)
            .unwrap();
    }
    let mut ft = FixedTime::default();
    let cycle = ic.phase_count() as u64 * (u64::from(ft.phase_duration_s) + u64::from(ic.transition_s()));
    let mut history = Vec::new();
    for _ in 0..=2 * cycle {
        let observation = sim.observe();
        let action = ft.decide(&sim);
        let out = sim.step(action);
        history.push(SignalSample {
            observation,
            green: out.green.clone(),
            backlog: out.queues.iter().map(|&q| q > 0).collect(),
        });
    }
    let est = estimate_flows(&history).unwrap();
    let vph: Vec<f64> = est
        .f_in_per_lane
        .iter()
        .map(|f| f.map_or(f64::NAN, |f| f * 3600.0))
        .collect();
    let worst = vph.iter().map(|v| (v - FLOW_VPH).abs() / FLOW_VPH).fold(0.0, f64::max);
    verdict(
        est.is_valid() && worst <= FLOW_TOLERANCE,
        format!(
            "after {} s: f_in {} veh/h vs {FLOW_VPH}, worst error {:.1}%",
            2 * cycle,
            fmt(&vph),
            worst * 100.0
        ),
    )
}

fn determinism() -> Verdict {
    let mut c = ExperimentConfig::default();
    c.experiment.controllers = ControllerKind::ALL.to_vec();
    c.experiment.seeds = vec![8, 9];
    c.experiment.episodes = 3;
    c.experiment.horizon_s = 900;
    c.experiment.eval_episodes = 2;
    c.demand.process = ArrivalProcess::Poisson;
    let csv = || {
        let out = run(&c);
        let (mut r, mut k) = (Vec::new(), Vec::new());
        out.write_results(&mut r).unwrap();
        out.write_curves(&mut k).unwrap();
        (r, k)
    };
    let (a, b) = (csv(), csv());
    verdict(
        a == b,
        format!(
            "two runs, results {} bytes, curves {} bytes, identical: {}",
            a.0.len(),
            a.1.len(),
            a == b
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, start: Instant, v: Verdict| {
        let mark = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} [{mark}] {name}: {} ({:.0} s)",
            v.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.pass);
    };

    let t = Instant::now();
    report(1, "travel-time/queue identity", t, identity());
    let t = Instant::now();
    report(2, "gradient correctness", t, gradients());
    let t = Instant::now();
    report(3, "webster arithmetic", t, webster());

    let t = Instant::now();
    let mut c = base_config();
    c.experiment.controllers = vec![ControllerKind::Fixedtime, ControllerKind::Webster, ControllerKind::Lit];
    let sym = run(&c);
    for (a, r) in [
        ("W", ASYM_HIGH_VPH),
        ("E", ASYM_HIGH_VPH),
        ("N", ASYM_LOW_VPH),
        ("S", ASYM_LOW_VPH),
    ] {
        c.demand.approach_rates.insert(a.into(), r);
    }
    let asym = run(&c);
    report(4, "uniform-traffic near-optimality", t, uniform(&sym, &asym));

    let t = Instant::now();
    let occupancy = variant(StateMode::OccupancyOnly, RewardMode::Queue);
    let delay = variant(StateMode::CountsPhase, RewardMode::Delay);
    report(5, "state/reward ablation", t, state_reward(&sym, &occupancy, &delay));

    let t = Instant::now();
    report(6, "three-traits ablation", t, traits());

    let t = Instant::now();
    let with_occupancy = variant(StateMode::CountsPlusOccupancy, RewardMode::Queue);
    report(7, "convergence speed", t, convergence(&sym, &with_occupancy));

    let t = Instant::now();
    report(8, "flow estimation", t, flows());
    let t = Instant::now();
    report(9, "determinism", t, determinism());

    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
