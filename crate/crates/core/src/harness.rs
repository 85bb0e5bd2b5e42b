//! Experiment orchestration: build network and demand from a config, train
//! learning controllers, evaluate every controller per seed and write the
//! result and curve CSVs.
//!
//! Everything is seeded from the config, so identical configs give
//! byte-identical CSVs.

use std::io::Write;
use std::path::Path;

use crate::agent::{deploy, train, AgentConfig, LitAgent, TrainingCurve, TrainingSchedule};
use crate::config::{ControllerKind, ExperimentConfig};
use crate::control::{Controller, FixedTime, Sotl, WebsterController};
use crate::error::{Error, Result};
use crate::metrics::{detect_convergence, episode_metrics, EpisodeMetrics};
use crate::sim::{run_episode, EpisodeOptions};
use crate::types::{NetworkConfig, Vehicle};

pub const RESULTS_HEADER: &str = "controller,seed,episode,avg_travel_time_s,avg_queue,throughput,converged_at";
pub const CURVES_HEADER: &str = "controller,seed,episode,steps,avg_travel_time_s,mean_loss,epsilon";

/// The learning-controller variants of an ablation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoOnlineLearning,
    NoSamplingGuidance,
    NoForecast,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoOnlineLearning,
        Variant::NoSamplingGuidance,
        Variant::NoForecast,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            Variant::Full => "",
            Variant::NoOnlineLearning => "-no-ol",
            Variant::NoSamplingGuidance => "-no-sg",
            Variant::NoForecast => "-no-f",
        }
    }

    pub fn apply(self, base: &AgentConfig) -> AgentConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoOnlineLearning => c.online_learning = false,
            Variant::NoSamplingGuidance => c.guided_sampling = false,
            Variant::NoForecast => c.forecast = false,
        }
        c
    }
}

/// One evaluation episode of one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub controller: String,
    pub seed: u64,
    /// 1-based evaluation episode.
    pub episode: usize,
    /// Ranking travel time: unfinished vehicles are charged up to the end
    /// of the run. Empty when no vehicle entered.
    pub avg_travel_time_s: Option<f64>,
    pub avg_queue: Option<f64>,
    pub throughput: u64,
    /// Training decisions until the curve stabilised.
    pub converged_at: Option<u64>,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub controller: String,
    pub seed: u64,
    pub curve: TrainingCurve,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub curves: Vec<CurveRecord>,
}

impl ExperimentOutput {
    /// Rows of one controller label.
    pub fn rows_for<'a>(&'a self, controller: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.controller == controller)
    }

    /// Per-seed mean of the evaluation travel times of one controller.
    pub fn seed_means(&self, controller: &str) -> Vec<f64> {
        let mut seeds: Vec<u64> = self.rows_for(controller).map(|r| r.seed).collect();
        seeds.dedup();
        seeds
            .into_iter()
            .map(|s| {
                let v: Vec<f64> = self
                    .rows_for(controller)
                    .filter(|r| r.seed == s)
                    .map(|r| r.avg_travel_time_s.unwrap_or(f64::NAN))
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect()
    }

    pub fn write_results<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{RESULTS_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.controller,
                r.seed,
                r.episode,
                opt(r.avg_travel_time_s),
                opt(r.avg_queue),
                r.throughput,
                r.converged_at.map(|s| s.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }

    /// Long-format training curves, one row per controller, seed and episode.
    pub fn write_curves<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CURVES_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.curves {
            for p in &c.curve.points {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.controller,
                    c.seed,
                    p.episode,
                    p.steps,
                    opt(p.avg_travel_time_s),
                    opt(p.mean_loss),
                    p.epsilon
                )?;
            }
        }
        Ok(())
    }

    /// Writes `results.csv` and, if any controller trained, `curves.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
            let path = dir.join(name);
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
        };
        write("results.csv", &|b| self.write_results(b))?;
        if !self.curves.is_empty() {
            write("curves.csv", &|b| self.write_curves(b))?;
        }
        Ok(())
    }
}

/// Demand seed of training episode `episode` (0-based) for `seed`.
fn training_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

/// Demand seed of evaluation episode `episode`; disjoint from training.
fn evaluation_seed(seed: u64, episode: usize) -> u64 {
    training_seed(seed, episode) ^ 0x5eed_0000_0000_0000
}

fn classic_controllers(
    kind: ControllerKind,
    config: &ExperimentConfig,
    network: &NetworkConfig,
) -> Result<Vec<Box<dyn Controller>>> {
    network
        .intersections
        .iter()
        .map(|ic| -> Result<Box<dyn Controller>> {
            Ok(match kind {
                ControllerKind::Fixedtime => Box::new(FixedTime::new(config.fixedtime.phase_duration_s)),
                ControllerKind::Sotl => Box::new(Sotl {
                    theta_red: config.sotl.theta_red,
                    theta_green: config.sotl.theta_green,
                }),
                ControllerKind::Webster => Box::new(WebsterController::new(ic, config.webster.params(ic))?),
                ControllerKind::Lit => unreachable!("learning controllers are built by the trainer"),
            })
        })
        .collect()
}

fn row(controller: &str, seed: u64, episode: usize, m: EpisodeMetrics, converged_at: Option<u64>) -> ResultRow {
    ResultRow {
        controller: controller.to_string(),
        seed,
        episode,
        avg_travel_time_s: m.ranking_travel_time_s(),
        avg_queue: m.avg_queue,
        throughput: m.throughput,
        converged_at,
        metrics: m,
    }
}

/// Builds one agent per intersection, seeded from `seed`.
pub fn build_agents(config: &AgentConfig, network: &NetworkConfig, seed: u64) -> Result<Vec<LitAgent>> {
    network
        .intersections
        .iter()
        .enumerate()
        .map(|(i, ic)| {
            LitAgent::new(
                config.clone(),
                ic.lane_count(),
                ic.phase_count(),
                seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64),
            )
        })
        .collect()
}

/// Runs every controller of the config (and the ablation variants if
/// enabled) over every seed. `base_dir` resolves relative demand files.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutput> {
    config.validate()?;
    let network = config.network.build()?;
    let run = &config.experiment;
    let horizon = run.horizon_s;
    let eval_opts = EpisodeOptions::new(horizon).with_drain(run.drain_s);
    let mut out = ExperimentOutput::default();

    for &seed in &run.seeds {
        let eval_demands = evaluation_demands(config, &network, seed, base_dir)?;

        for &kind in &run.controllers {
            if kind.is_learning() {
                let variants: &[Variant] = if run.ablation { &Variant::ALL } else { &[Variant::Full] };
                for &variant in variants {
                    let label = format!("{kind}{}", variant.suffix());
                    log::info!("seed {seed}: training {label}");
                    let agent_config = variant.apply(&config.agent);
                    let (curve, rows) = run_learning(config, &network, &agent_config, seed, &eval_demands, base_dir)?;
                    let report =
                        detect_convergence(&curve.travel_times(), run.convergence_window, run.convergence_tolerance);
                    let converged = report.converged_at_step(&curve.cumulative_steps());
                    for (e, m) in rows.into_iter().enumerate() {
                        out.rows.push(row(&label, seed, e + 1, m, converged));
                    }
                    out.curves.push(CurveRecord {
                        controller: label,
                        seed,
                        curve,
                    });
                }
            } else {
                for (e, demand) in eval_demands.iter().enumerate() {
                    let mut boxed = classic_controllers(kind, config, &network)?;
                    let mut controllers: Vec<&mut dyn Controller> =
                        boxed.iter_mut().map(|c| &mut **c as &mut dyn Controller).collect();
                    let result = run_episode(&network, &mut controllers, demand, eval_opts)?;
                    out.rows
                        .push(row(kind.name(), seed, e + 1, episode_metrics(&result).1, None));
                }
            }
        }
    }
    Ok(out)
}

/// Trains one agent per intersection for `seed`; the curve scores each
/// episode's greedy policy on `curve_demand`.
pub fn train_lit(
    config: &ExperimentConfig,
    network: &NetworkConfig,
    agent_config: &AgentConfig,
    seed: u64,
    curve_demand: &[Vehicle],
    base_dir: &Path,
) -> Result<(Vec<LitAgent>, TrainingCurve)> {
    let run = &config.experiment;
    let mut agents = build_agents(agent_config, network, seed)?;
    let mut schedule = TrainingSchedule::new(run.episodes, run.horizon_s);
    schedule.train_drain_s = run.train_drain_s;
    schedule.eval_drain_s = run.drain_s;

    let fixed = if config.demand.is_stochastic() && run.resample_training_demand {
        None
    } else {
        Some(
            config
                .demand
                .build(network, run.horizon_s, training_seed(seed, 0), base_dir)?,
        )
    };
    let mut supply = |e: usize| match &fixed {
        Some(d) => Ok(d.clone()),
        None => config
            .demand
            .build(network, run.horizon_s, training_seed(seed, e), base_dir),
    };
    let curve = train(&mut agents, network, &mut supply, curve_demand, &schedule)?;
    Ok((agents, curve))
}

/// Evaluation demands of one seed.
pub fn evaluation_demands(
    config: &ExperimentConfig,
    network: &NetworkConfig,
    seed: u64,
    base_dir: &Path,
) -> Result<Vec<Vec<Vehicle>>> {
    (0..config.experiment.eval_episodes)
        .map(|e| {
            config
                .evaluation_demand()
                .build(network, config.experiment.horizon_s, evaluation_seed(seed, e), base_dir)
        })
        .collect()
}

/// Trains, then deploys over the evaluation demands (learning on the way
/// when online learning is enabled).
fn run_learning(
    config: &ExperimentConfig,
    network: &NetworkConfig,
    agent_config: &AgentConfig,
    seed: u64,
    eval_demands: &[Vec<Vehicle>],
    base_dir: &Path,
) -> Result<(TrainingCurve, Vec<EpisodeMetrics>)> {
    let run = &config.experiment;
    let (mut agents, curve) = train_lit(config, network, agent_config, seed, &eval_demands[0], base_dir)?;
    let metrics = deploy(
        &mut agents,
        network,
        eval_demands,
        EpisodeOptions::new(run.horizon_s).with_drain(run.drain_s),
    )?;
    Ok((curve, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    #[test]
    fn classic_run_has_one_row_per_controller_seed_episode() {
        let c = quick(
            "[experiment]\ncontrollers = [\"fixedtime\", \"webster\", \"sotl\"]\nseeds = [1, 2]\nhorizon_s = 600\neval_episodes = 2\n",
        );
        let out = run_experiment(&c, Path::new(".")).unwrap();
        assert_eq!(out.rows.len(), 3 * 2 * 2);
        assert!(out.curves.is_empty());
        let mut buf = Vec::new();
        out.write_results(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER);
        assert_eq!(text.lines().count(), 13);
        assert!(text.lines().skip(1).all(|l| l.ends_with(',')));
    }

    #[test]
    fn webster_beats_fixedtime_on_asymmetric_demand() {
        let c = quick(
            "[experiment]\ncontrollers = [\"fixedtime\", \"webster\"]\n[demand]\nrate_vph = 200.0\n[demand.approach_rates]\nW = 400.0\nE = 400.0\n",
        );
        let out = run_experiment(&c, Path::new(".")).unwrap();
        let t = |name: &str| out.rows_for(name).next().unwrap().avg_travel_time_s.unwrap();
        assert!(t("webster") < t("fixedtime"), "{} vs {}", t("webster"), t("fixedtime"));
    }

    #[test]
    fn ablation_emits_one_block_per_variant() {
        let c = quick(
            "[experiment]\ncontrollers = [\"lit\"]\nablation = true\nepisodes = 2\nhorizon_s = 300\ndrain_s = 300\n[agent]\nhidden = [8]\nbatch_size = 8\n",
        );
        let out = run_experiment(&c, Path::new(".")).unwrap();
        let labels: Vec<&str> = out.rows.iter().map(|r| r.controller.as_str()).collect();
        assert_eq!(labels, ["lit", "lit-no-ol", "lit-no-sg", "lit-no-f"]);
        assert_eq!(out.curves.len(), 4);
        assert!(out.curves.iter().all(|c| c.curve.points.len() == 2));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let c = quick(
            "[experiment]\nseeds = [5]\nepisodes = 3\nhorizon_s = 400\n[demand]\nprocess = \"poisson\"\n[agent]\nhidden = [8]\n",
        );
        let csvs = || {
            let out = run_experiment(&c, Path::new(".")).unwrap();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            out.write_results(&mut a).unwrap();
            out.write_curves(&mut b).unwrap();
            (a, b)
        };
        assert_eq!(csvs(), csvs());
    }

    #[test]
    fn seeds_are_disjoint() {
        let train: Vec<u64> = (0..50).map(|e| training_seed(3, e)).collect();
        assert!((0..50).all(|e| !train.contains(&evaluation_seed(3, e))));
    }
}
