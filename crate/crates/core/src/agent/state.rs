//! State encodings and reward functions for the learning agent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{IntersectionSim, Observation};

/// Which features make up the network input. Every mode ends with the
/// one-hot phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    /// Vehicles per lane.
    CountsPhase,
    /// Vehicles per lane, then the per-lane position histogram.
    CountsPlusOccupancy,
    /// Position histogram only.
    OccupancyOnly,
    /// Mean waiting time per lane.
    Waiting,
    WaitingPlusCounts,
    /// Queue length per lane.
    Queue,
    QueuePlusCounts,
}

impl StateMode {
    pub const ALL: [StateMode; 7] = [
        StateMode::CountsPhase,
        StateMode::CountsPlusOccupancy,
        StateMode::OccupancyOnly,
        StateMode::Waiting,
        StateMode::WaitingPlusCounts,
        StateMode::Queue,
        StateMode::QueuePlusCounts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StateMode::CountsPhase => "counts_phase",
            StateMode::CountsPlusOccupancy => "counts_plus_occupancy",
            StateMode::OccupancyOnly => "occupancy_only",
            StateMode::Waiting => "waiting",
            StateMode::WaitingPlusCounts => "waiting_plus_counts",
            StateMode::Queue => "queue",
            StateMode::QueuePlusCounts => "queue_plus_counts",
        }
    }

    fn uses_counts(self) -> bool {
        matches!(
            self,
            StateMode::CountsPhase
                | StateMode::CountsPlusOccupancy
                | StateMode::WaitingPlusCounts
                | StateMode::QueuePlusCounts
        )
    }

    fn uses_occupancy(self) -> bool {
        matches!(self, StateMode::CountsPlusOccupancy | StateMode::OccupancyOnly)
    }

    fn uses_waiting(self) -> bool {
        matches!(self, StateMode::Waiting | StateMode::WaitingPlusCounts)
    }

    fn uses_queue(self) -> bool {
        matches!(self, StateMode::Queue | StateMode::QueuePlusCounts)
    }

    /// Encoded length for `lanes` lanes, `phases` phases and `cells` per lane.
    pub fn input_dim(self, lanes: usize, phases: usize, cells: usize) -> usize {
        let mut n = phases;
        if self.uses_counts() {
            n += lanes;
        }
        if self.uses_occupancy() {
            n += lanes * cells;
        }
        if self.uses_waiting() {
            n += lanes;
        }
        if self.uses_queue() {
            n += lanes;
        }
        n
    }
}

impl fmt::Display for StateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StateMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("known_state_mode", format!("unknown state mode `{s}`")))
    }
}

/// Features beyond the observation that some modes need.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateAux {
    pub occupancy: Option<Vec<f64>>,
    pub waiting_s: Option<Vec<f64>>,
    pub queues: Option<Vec<u32>>,
}

impl StateAux {
    /// Collects what `mode` needs from a live intersection.
    pub fn gather(sim: &IntersectionSim, mode: StateMode, cells: usize) -> Self {
        StateAux {
            occupancy: mode.uses_occupancy().then(|| sim.occupancy_vector(cells)),
            waiting_s: mode.uses_waiting().then(|| sim.lane_mean_waiting_s()),
            queues: mode.uses_queue().then(|| sim.queue_lengths()),
        }
    }
}

pub fn encode_state(obs: &Observation, mode: StateMode, phase_count: usize, aux: &StateAux) -> Result<Vec<f64>> {
    if obs.phase_index >= phase_count {
        return Err(Error::Encoding(format!(
            "phase {} out of range for {phase_count} phases",
            obs.phase_index
        )));
    }
    let lanes = obs.vehicle_counts.len();
    let mut out = Vec::new();
    if mode.uses_counts() {
        out.extend(obs.vehicle_counts.iter().map(|&v| v as f64));
    }
    if mode.uses_occupancy() {
        let occ = aux
            .occupancy
            .as_ref()
            .ok_or_else(|| Error::Encoding(format!("{mode} needs occupancy data")))?;
        if lanes == 0 || occ.len() % lanes != 0 {
            return Err(Error::Encoding(format!(
                "occupancy length {} is not a multiple of {lanes} lanes",
                occ.len()
            )));
        }
        out.extend_from_slice(occ);
    }
    if mode.uses_waiting() {
        let w = aux
            .waiting_s
            .as_ref()
            .ok_or_else(|| Error::Encoding(format!("{mode} needs waiting times")))?;
        check_lane_len(w.len(), lanes)?;
        out.extend_from_slice(w);
    }
    if mode.uses_queue() {
        let q = aux
            .queues
            .as_ref()
            .ok_or_else(|| Error::Encoding(format!("{mode} needs queue lengths")))?;
        check_lane_len(q.len(), lanes)?;
        out.extend(q.iter().map(|&v| v as f64));
    }
    out.extend((0..phase_count).map(|k| if k == obs.phase_index { 1.0 } else { 0.0 }));
    Ok(out)
}

fn check_lane_len(len: usize, lanes: usize) -> Result<()> {
    if len != lanes {
        return Err(Error::Encoding(format!("expected {lanes} per-lane values, got {len}")));
    }
    Ok(())
}

/// Coefficients of the linear reward. Each factor is summed over lanes and
/// enters negated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub queue: f64,
    pub delay: f64,
    pub waiting: f64,
    pub vehicles: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Queue,
    Delay,
    Waiting,
    Vehicles,
    Weighted(RewardWeights),
}

impl RewardMode {
    pub fn weights(self) -> RewardWeights {
        let unit = RewardWeights::default();
        match self {
            RewardMode::Queue => RewardWeights { queue: 1.0, ..unit },
            RewardMode::Delay => RewardWeights { delay: 1.0, ..unit },
            RewardMode::Waiting => RewardWeights { waiting: 1.0, ..unit },
            RewardMode::Vehicles => RewardWeights { vehicles: 1.0, ..unit },
            RewardMode::Weighted(w) => w,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Queue => "queue",
            RewardMode::Delay => "delay",
            RewardMode::Waiting => "waiting",
            RewardMode::Vehicles => "vehicles",
            RewardMode::Weighted(_) => "weighted",
        }
    }

    /// Parses a mode name; `weighted` takes its coefficients from `weights`.
    pub fn parse(name: &str, weights: Option<RewardWeights>) -> Result<Self> {
        Ok(match name {
            "queue" => RewardMode::Queue,
            "delay" => RewardMode::Delay,
            "waiting" => RewardMode::Waiting,
            "vehicles" => RewardMode::Vehicles,
            "weighted" => RewardMode::Weighted(weights.ok_or_else(|| {
                Error::config("weighted_reward_has_weights", "reward `weighted` needs reward_weights")
            })?),
            other => {
                return Err(Error::config(
                    "known_reward_mode",
                    format!("unknown reward mode `{other}`"),
                ))
            }
        })
    }
}

/// Per-lane quantities a reward can be built from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardInputs {
    pub queues: Vec<u32>,
    /// Stopped fraction per lane.
    pub delay: Vec<f64>,
    pub waiting_s: Vec<f64>,
    pub vehicles: Vec<u32>,
}

impl RewardInputs {
    pub fn queues_only(queues: &[u32]) -> Self {
        RewardInputs {
            queues: queues.to_vec(),
            ..Default::default()
        }
    }

    /// Reads the post-step state of `sim`; skips factors `mode` ignores.
    pub fn gather(sim: &IntersectionSim, queues: &[u32], mode: RewardMode) -> Self {
        let w = mode.weights();
        RewardInputs {
            queues: queues.to_vec(),
            delay: if w.delay != 0.0 {
                sim.lane_delay_factor()
            } else {
                Vec::new()
            },
            waiting_s: if w.waiting != 0.0 {
                sim.lane_mean_waiting_s()
            } else {
                Vec::new()
            },
            vehicles: if w.vehicles != 0.0 {
                sim.vehicle_counts()
            } else {
                Vec::new()
            },
        }
    }
}

pub fn compute_reward(inputs: &RewardInputs, mode: RewardMode) -> f64 {
    let w = mode.weights();
    let mut r = 0.0;
    if w.queue != 0.0 {
        r -= w.queue * inputs.queues.iter().map(|&q| q as f64).sum::<f64>();
    }
    if w.delay != 0.0 {
        r -= w.delay * inputs.delay.iter().sum::<f64>();
    }
    if w.waiting != 0.0 {
        r -= w.waiting * inputs.waiting_s.iter().sum::<f64>();
    }
    if w.vehicles != 0.0 {
        r -= w.vehicles * inputs.vehicles.iter().map(|&v| v as f64).sum::<f64>();
    }
    r
}

/// Σ_b γ^b R_{b}, accumulated back to front.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}
