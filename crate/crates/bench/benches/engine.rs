use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use signal_lab::agent::{AgentConfig, AgentMode, Learner, LitAgent, QNetwork, Transition};
use signal_lab::control::{FixedTime, WebsterController};
use signal_lab::demand::{entry_lanes, generate_uniform, ArrivalProcess};
use signal_lab::sim::{run_episode, EpisodeOptions};
use signal_lab::{build_grid_network, build_standard_intersection, Action, NetworkConfig, Vehicle};

fn single() -> NetworkConfig {
    NetworkConfig::single(build_standard_intersection(2).unwrap())
}

fn demand(network: &NetworkConfig, rate_vph: f64) -> Vec<Vehicle> {
    let lanes = entry_lanes(network);
    generate_uniform(rate_vph, &lanes, 3600, ArrivalProcess::Poisson, 7, network).unwrap()
}

fn episodes(c: &mut Criterion) {
    let network = single();
    let vehicles = demand(&network, 300.0);
    let options = EpisodeOptions::new(3600).with_drain(3600);
    let mut g = c.benchmark_group("episode_3600s");
    g.sample_size(20);
    g.bench_function("fixedtime", |b| {
        b.iter(|| {
            let mut ft = FixedTime::default();
            run_episode(&network, &mut [&mut ft], &vehicles, options).unwrap()
        })
    });
    g.bench_function("webster", |b| {
        b.iter(|| {
            let mut w = WebsterController::with_defaults(&network.intersections[0]).unwrap();
            run_episode(&network, &mut [&mut w], &vehicles, options).unwrap()
        })
    });
    g.bench_function("lit_greedy", |b| {
        let mut agent = LitAgent::new(AgentConfig::default(), 8, 2, 3).unwrap();
        agent.begin_episode(AgentMode::Evaluate);
        b.iter(|| run_episode(&network, &mut [&mut agent], &vehicles, options).unwrap())
    });

    let base = build_standard_intersection(2).unwrap();
    let grid = build_grid_network(2, 2, &base).unwrap();
    let grid_vehicles = demand(&grid, 200.0);
    g.bench_function("fixedtime_grid_2x2", |b| {
        b.iter(|| {
            let mut fts = [FixedTime::default(); 4];
            let mut refs: Vec<&mut dyn signal_lab::control::Controller> = fts
                .iter_mut()
                .map(|f| f as &mut dyn signal_lab::control::Controller)
                .collect();
            run_episode(&grid, &mut refs, &grid_vehicles, options).unwrap()
        })
    });
    g.finish();
}

fn learner(c: &mut Criterion) {
    let config = AgentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let input_dim = config.state_mode.input_dim(8, 2, config.occupancy_cells);
    let qnet = QNetwork::new(input_dim, &config.hidden, 2, &mut rng).unwrap();
    let batch: Vec<Transition> = (0..config.batch_size)
        .map(|i| Transition {
            state: (0..input_dim).map(|j| ((i * 7 + j) % 5) as f64 * 0.1).collect(),
            phase: i % 2,
            action: if i % 3 == 0 { Action::Change } else { Action::Keep },
            reward: -(i as f64),
            steps: 1 + (i % 5) as u32,
            next_state: (0..input_dim).map(|j| ((i * 3 + j) % 7) as f64 * 0.1).collect(),
            next_phase: (i + 1) % 2,
        })
        .collect();
    c.bench_function("learn_on_batch32", |b| {
        b.iter_batched(
            || Learner::new(qnet.clone(), &config),
            |mut l| l.learn_on(batch.iter()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, episodes, learner);
criterion_main!(benches);
