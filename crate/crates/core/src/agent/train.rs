use std::io::Write;
use std::path::PathBuf;

use super::{AgentMode, LitAgent};
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::metrics::{episode_metrics, EpisodeMetrics};
use crate::sim::{run_episode, EpisodeOptions, EpisodeResult};
use crate::types::{NetworkConfig, Vehicle};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub episodes: usize,
    pub horizon_s: u64,
    /// Drain allowance after the horizon for training episodes.
    pub train_drain_s: u64,
    /// Drain allowance for the greedy evaluation after each episode.
    pub eval_drain_s: u64,
    /// Where to write the agents' checkpoints if learning diverges.
    pub failure_checkpoint: Option<PathBuf>,
}

impl TrainingSchedule {
    /// Without a drain the agent never sees demand stop, and may learn to
    /// hold a green over an empty approach forever.
    pub const DEFAULT_TRAIN_DRAIN_S: u64 = 300;

    pub fn new(episodes: usize, horizon_s: u64) -> Self {
        TrainingSchedule {
            episodes,
            horizon_s,
            train_drain_s: Self::DEFAULT_TRAIN_DRAIN_S.min(horizon_s),
            eval_drain_s: horizon_s,
            failure_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// 1-based episode number.
    pub episode: usize,
    /// Cumulative training decisions of the first agent.
    pub steps: u64,
    /// Greedy evaluation travel time after this episode.
    pub avg_travel_time_s: Option<f64>,
    pub mean_loss: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    /// Per-episode travel times; NaN where no vehicle finished.
    pub fn travel_times(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.avg_travel_time_s.unwrap_or(f64::NAN))
            .collect()
    }

    pub fn cumulative_steps(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.steps).collect()
    }

    /// `episode,steps,avg_travel_time_s,mean_loss,epsilon`; empty cells for
    /// undefined values.
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "episode,steps,avg_travel_time_s,mean_loss,epsilon")?;
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.episode,
                p.steps,
                opt(p.avg_travel_time_s),
                opt(p.mean_loss),
                p.epsilon
            )?;
        }
        Ok(())
    }
}

fn run_agents(
    agents: &mut [LitAgent],
    mode: AgentMode,
    network: &NetworkConfig,
    demand: &[Vehicle],
    options: EpisodeOptions,
) -> Result<EpisodeResult> {
    for a in agents.iter_mut() {
        a.begin_episode(mode);
    }
    let mut controllers: Vec<&mut dyn Controller> = agents.iter_mut().map(|a| a as &mut dyn Controller).collect();
    let result = run_episode(network, &mut controllers, demand, options)?;
    for a in agents.iter_mut() {
        if let Some(e) = a.take_failure() {
            return Err(e);
        }
    }
    Ok(result)
}

/// Greedy episode without learning. Returns per-intersection and combined metrics.
pub fn evaluate(
    agents: &mut [LitAgent],
    network: &NetworkConfig,
    demand: &[Vehicle],
    options: EpisodeOptions,
) -> Result<(Vec<EpisodeMetrics>, EpisodeMetrics)> {
    let result = run_agents(agents, AgentMode::Evaluate, network, demand, options)?;
    Ok(episode_metrics(&result))
}

/// Greedy deployment over a sequence of demands; agents with online
/// learning keep training on what they see.
pub fn deploy(
    agents: &mut [LitAgent],
    network: &NetworkConfig,
    demands: &[Vec<Vehicle>],
    options: EpisodeOptions,
) -> Result<Vec<EpisodeMetrics>> {
    demands
        .iter()
        .map(|d| run_agents(agents, AgentMode::Deploy, network, d, options).map(|r| episode_metrics(&r).1))
        .collect()
}

/// Trains one agent per intersection. `train_demand(e)` supplies the
/// demand of training episode `e` (0-based); after every episode the
/// greedy policy is scored on `eval_demand` for the curve.
pub fn train(
    agents: &mut [LitAgent],
    network: &NetworkConfig,
    train_demand: &mut dyn FnMut(usize) -> Result<Vec<Vehicle>>,
    eval_demand: &[Vehicle],
    schedule: &TrainingSchedule,
) -> Result<TrainingCurve> {
    if agents.len() != network.intersections.len() {
        return Err(Error::config(
            "one_agent_per_intersection",
            format!(
                "{} agents for {} intersections",
                agents.len(),
                network.intersections.len()
            ),
        ));
    }
    let total = schedule.episodes as u64 * schedule.horizon_s;
    for a in agents.iter_mut() {
        a.set_training_horizon(total);
    }
    let train_opts = EpisodeOptions::new(schedule.horizon_s).with_drain(schedule.train_drain_s);
    let eval_opts = EpisodeOptions::new(schedule.horizon_s).with_drain(schedule.eval_drain_s);
    let mut curve = TrainingCurve::default();
    for episode in 0..schedule.episodes {
        let demand = train_demand(episode)?;
        if let Err(e) = run_agents(agents, AgentMode::Train, network, &demand, train_opts) {
            if let Some(path) = &schedule.failure_checkpoint {
                for (i, a) in agents.iter().enumerate() {
                    let p = path.with_extension(format!("agent{i}.json"));
                    a.checkpoint().save(&p)?;
                }
                log::error!("training diverged; checkpoints written next to {}", path.display());
            }
            return Err(e);
        }
        let losses: Vec<f64> = agents.iter().filter_map(|a| a.episode_mean_loss()).collect();
        let mean_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        let epsilon = agents[0].epsilon();
        let steps = agents[0].training_decisions();
        let (_, metrics) = evaluate(agents, network, eval_demand, eval_opts)?;
        log::debug!(
            "episode {}: T = {:?}, loss = {:?}, eps = {epsilon:.3}",
            episode + 1,
            metrics.ranking_travel_time_s(),
            mean_loss
        );
        curve.points.push(CurvePoint {
            episode: episode + 1,
            steps,
            avg_travel_time_s: metrics.ranking_travel_time_s(),
            mean_loss,
            epsilon,
        });
    }
    Ok(curve)
}
