//! Deep Q-learning signal agent with a phase-selector network.
//!
//! Decisions are made only when a change would be honoured (not mid
//! transition, min green met). Rewards of the masked seconds in between
//! are discounted into the transition that led to them, so a `change`
//! carries the cost of its yellow and all-red.

mod qnet;
mod replay;
mod state;
mod train;

pub use self::qnet::{
    qnet_gradient_check, regression_gradient, regression_loss, QCache, QGradients, QNetwork, RegressionSample,
};
pub use self::replay::{ReplayMemory, Transition};
pub use self::state::{
    compute_reward, discounted_return, encode_state, RewardInputs, RewardMode, RewardWeights, StateAux, StateMode,
};
pub use self::train::{deploy, evaluate, train, CurvePoint, TrainingCurve, TrainingSchedule};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::Controller;
use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, Parameters, RngState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
use crate::sim::{Action, IntersectionSim, StepOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the training steps over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Learn steps between target-network refreshes.
    pub target_sync_interval: u64,
    pub use_target_network: bool,
    /// Pick the bootstrap action with the online network and score it with
    /// the target network.
    pub double_q: bool,
    /// Minimum seconds between decisions.
    pub decision_interval_s: u32,
    /// Decisions between learn steps.
    pub learn_interval: u32,
    pub hidden: Vec<usize>,
    pub online_learning: bool,
    pub guided_sampling: bool,
    pub forecast: bool,
    /// Change probability of the random collection policy used when
    /// `guided_sampling` is off.
    pub random_change_probability: f64,
    pub state_mode: StateMode,
    pub occupancy_cells: usize,
    pub reward: RewardMode,
    /// Multiplies every network input except the phase one-hot.
    pub feature_scale: f64,
    /// Multiplies rewards before they reach the learner.
    pub reward_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.8,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            learning_rate: 1e-3,
            batch_size: 32,
            replay_capacity: 20_000,
            target_sync_interval: 500,
            use_target_network: true,
            double_q: false,
            decision_interval_s: 1,
            learn_interval: 1,
            hidden: vec![32, 32],
            online_learning: true,
            guided_sampling: true,
            forecast: true,
            random_change_probability: 0.1,
            state_mode: StateMode::CountsPhase,
            occupancy_cells: 4,
            reward: RewardMode::Queue,
            feature_scale: 0.1,
            reward_scale: 1.0,
        }
    }
}

impl AgentConfig {
    /// γ actually used in targets: zero when forecasting is ablated.
    pub fn effective_gamma(&self) -> f64 {
        if self.forecast {
            self.gamma
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check =
            |ok: bool, name: &'static str, detail: String| if ok { Ok(()) } else { Err(Error::config(name, detail)) };
        check(
            (0.0..=1.0).contains(&self.gamma),
            "gamma_in_0_1",
            format!("gamma = {}", self.gamma),
        )?;
        for (name, e) in [
            ("epsilon_start_in_0_1", self.epsilon_start),
            ("epsilon_end_in_0_1", self.epsilon_end),
        ] {
            check((0.0..=1.0).contains(&e), name, format!("{e}"))?;
        }
        check(
            (0.0..=1.0).contains(&self.epsilon_decay_fraction),
            "epsilon_decay_fraction_in_0_1",
            format!("{}", self.epsilon_decay_fraction),
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate>0",
            format!("{}", self.learning_rate),
        )?;
        check(self.batch_size > 0, "batch_size>0", "0".into())?;
        check(
            self.replay_capacity >= self.batch_size,
            "replay_capacity>=batch_size",
            format!("{} < {}", self.replay_capacity, self.batch_size),
        )?;
        check(self.target_sync_interval > 0, "target_sync_interval>0", "0".into())?;
        check(self.decision_interval_s > 0, "decision_interval_s>0", "0".into())?;
        check(self.learn_interval > 0, "learn_interval>0", "0".into())?;
        check(
            !self.hidden.is_empty() && self.hidden.iter().all(|&h| h > 0),
            "hidden_layers_nonempty",
            format!("{:?}", self.hidden),
        )?;
        check(
            (0.0..=1.0).contains(&self.random_change_probability),
            "random_change_probability_in_0_1",
            format!("{}", self.random_change_probability),
        )?;
        check(self.occupancy_cells > 0, "occupancy_cells>0", "0".into())?;
        check(
            self.feature_scale > 0.0 && self.reward_scale > 0.0,
            "scales>0",
            format!("{} {}", self.feature_scale, self.reward_scale),
        )?;
        Ok(())
    }
}

/// ε-greedy choice with signal masking. Masked states always keep; ties
/// between the two Q-values keep as well.
pub fn select_action<R: Rng + ?Sized>(
    q: [f64; 2],
    epsilon: f64,
    rng: &mut R,
    transition_in_progress: bool,
    min_green_met: bool,
) -> Action {
    if transition_in_progress || !min_green_met {
        return Action::Keep;
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return if rng.random::<bool>() {
            Action::Change
        } else {
            Action::Keep
        };
    }
    if q[1] > q[0] {
        Action::Change
    } else {
        Action::Keep
    }
}

/// Result of one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnReport {
    pub loss: f64,
    /// Bellman targets of the sampled batch, in sample order.
    pub targets: Vec<f64>,
}

/// Online network, its bootstrap copy and the optimizer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub qnet: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
    pub learn_steps: u64,
    pub gamma: f64,
    pub batch_size: usize,
    pub target_sync_interval: u64,
    pub use_target_network: bool,
    pub double_q: bool,
}

impl Learner {
    pub fn new(qnet: QNetwork, config: &AgentConfig) -> Self {
        Learner {
            target: qnet.clone(),
            optimizer: Adam::new(qnet.param_count(), config.learning_rate),
            qnet,
            learn_steps: 0,
            gamma: config.effective_gamma(),
            batch_size: config.batch_size,
            target_sync_interval: config.target_sync_interval,
            use_target_network: config.use_target_network,
            double_q: config.double_q,
        }
    }

    /// y = r + γ^k · max_a' Q_target(s', a') with the head of s'. With
    /// `double_q` the online network picks a' instead.
    pub fn target_value(&self, t: &Transition) -> Result<f64> {
        if self.gamma == 0.0 {
            return Ok(t.reward);
        }
        let net = if self.use_target_network {
            &self.target
        } else {
            &self.qnet
        };
        let q = net.q_values(&t.next_state, t.next_phase)?;
        let bootstrap = if self.double_q && self.use_target_network {
            let online = self.qnet.q_values(&t.next_state, t.next_phase)?;
            if online[1] > online[0] {
                q[1]
            } else {
                q[0]
            }
        } else {
            q[0].max(q[1])
        };
        Ok(t.reward + self.gamma.powi(t.steps as i32) * bootstrap)
    }

    /// One minibatch regression step on the taken actions. `None` when the
    /// memory holds fewer transitions than a batch.
    pub fn learn_step<R: Rng + ?Sized>(&mut self, memory: &ReplayMemory, rng: &mut R) -> Result<Option<LearnReport>> {
        if memory.len() < self.batch_size {
            return Ok(None);
        }
        let batch = memory.sample_indices(self.batch_size, rng);
        self.learn_on(batch.iter().map(|&i| memory.get(i).expect("sampled slot")))
            .map(Some)
    }

    /// Regression step on an explicit batch.
    pub fn learn_on<'a>(&mut self, batch: impl Iterator<Item = &'a Transition>) -> Result<LearnReport> {
        let batch: Vec<&Transition> = batch.collect();
        let n = batch.len().max(1) as f64;
        let mut grads = QGradients::zeros_like(&self.qnet);
        let mut loss = 0.0;
        let mut targets = Vec::with_capacity(batch.len());
        for t in &batch {
            let y = self.target_value(t)?;
            let (q, cache) = self.qnet.forward(&t.state, t.phase)?;
            let a = t.action.index();
            let err = q[a] - y;
            loss += err * err / n;
            let mut g = [0.0; 2];
            g[a] = 2.0 * err / n;
            self.qnet.backward_into(&cache, g, &mut grads)?;
            targets.push(y);
        }
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at learn step {}",
                self.learn_steps + 1
            )));
        }
        self.optimizer.update(&mut self.qnet, &grads.flat())?;
        if !self.qnet.params_finite() {
            return Err(Error::Training(format!(
                "non-finite parameters after learn step {}",
                self.learn_steps + 1
            )));
        }
        self.learn_steps += 1;
        if self.learn_steps.is_multiple_of(self.target_sync_interval) {
            self.target.sync_from(&self.qnet);
        }
        Ok(LearnReport { loss, targets })
    }
}

/// How the agent behaves during the next episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentMode {
    /// Explore, store transitions, learn.
    Train,
    /// Greedy; nothing is stored or learned.
    Evaluate,
    /// Greedy; keeps learning from live traffic iff online learning is on.
    Deploy,
}

#[derive(Debug, Clone)]
struct Pending {
    state: Vec<f64>,
    phase: usize,
    action: Action,
    reward: f64,
    discount: f64,
    steps: u32,
}

/// The learning controller for one intersection.
#[derive(Debug, Clone)]
pub struct LitAgent {
    config: AgentConfig,
    phase_count: usize,
    learner: Learner,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    mode: AgentMode,
    epsilon: f64,
    /// Seconds stepped in training mode; drives the ε schedule.
    env_steps: u64,
    decisions: u64,
    training_decisions: u64,
    /// Seconds of training over which ε decays.
    decay_steps: u64,
    since_decision: u32,
    pending: Option<Pending>,
    losses: Vec<f64>,
    failure: Option<String>,
}

impl LitAgent {
    pub fn new(config: AgentConfig, lanes: usize, phase_count: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = config.state_mode.input_dim(lanes, phase_count, config.occupancy_cells);
        let qnet = QNetwork::new(input, &config.hidden, phase_count, &mut rng)?;
        Ok(LitAgent {
            learner: Learner::new(qnet, &config),
            memory: ReplayMemory::new(config.replay_capacity),
            rng,
            mode: AgentMode::Train,
            epsilon: config.epsilon_start,
            env_steps: 0,
            decisions: 0,
            training_decisions: 0,
            decay_steps: 0,
            since_decision: config.decision_interval_s,
            pending: None,
            losses: Vec::new(),
            failure: None,
            phase_count,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn qnet(&self) -> &QNetwork {
        &self.learner.qnet
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    /// Decisions taken in training mode.
    pub fn training_decisions(&self) -> u64 {
        self.training_decisions
    }

    pub fn mode(&self) -> AgentMode {
        self.mode
    }

    /// Sets the number of training seconds over which ε is annealed.
    pub fn set_training_horizon(&mut self, total_steps: u64) {
        self.decay_steps = (total_steps as f64 * self.config.epsilon_decay_fraction).round() as u64;
        self.update_epsilon();
    }

    /// Switches mode and clears per-episode state.
    pub fn begin_episode(&mut self, mode: AgentMode) {
        self.mode = mode;
        self.pending = None;
        self.since_decision = self.config.decision_interval_s;
        self.losses.clear();
    }

    /// Mean loss over the learn steps of the current episode.
    pub fn episode_mean_loss(&self) -> Option<f64> {
        (!self.losses.is_empty()).then(|| self.losses.iter().sum::<f64>() / self.losses.len() as f64)
    }

    /// First learning error since the last call, if any.
    pub fn take_failure(&mut self) -> Option<Error> {
        self.failure.take().map(Error::Training)
    }

    fn update_epsilon(&mut self) {
        let (s, e) = (self.config.epsilon_start, self.config.epsilon_end);
        let frac = if self.decay_steps == 0 {
            1.0
        } else {
            (self.env_steps as f64 / self.decay_steps as f64).min(1.0)
        };
        self.epsilon = if frac >= 1.0 { e } else { s + (e - s) * frac };
    }

    fn learning(&self) -> bool {
        match self.mode {
            AgentMode::Train => true,
            AgentMode::Evaluate => false,
            AgentMode::Deploy => self.config.online_learning,
        }
    }

    /// Network input for the current state of `sim`.
    pub fn encode(&self, sim: &IntersectionSim) -> Result<Vec<f64>> {
        let aux = StateAux::gather(sim, self.config.state_mode, self.config.occupancy_cells);
        let mut x = encode_state(&sim.observe(), self.config.state_mode, self.phase_count, &aux)?;
        let features = x.len() - self.phase_count;
        x[..features].iter_mut().for_each(|v| *v *= self.config.feature_scale);
        Ok(x)
    }

    pub fn q_values(&self, sim: &IntersectionSim) -> Result<[f64; 2]> {
        self.learner.qnet.q_values(&self.encode(sim)?, sim.phase_index())
    }

    fn try_decide(&mut self, sim: &IntersectionSim) -> Result<Action> {
        let state = self.encode(sim)?;
        let phase = sim.phase_index();
        let recording = self.learning();
        if let Some(p) = self.pending.take() {
            if recording {
                self.memory.push(Transition {
                    state: p.state,
                    phase: p.phase,
                    action: p.action,
                    reward: p.reward,
                    steps: p.steps,
                    next_state: state.clone(),
                    next_phase: phase,
                });
            }
        }
        let action = if self.mode == AgentMode::Train && !self.config.guided_sampling {
            if self.rng.random::<f64>() < self.config.random_change_probability {
                Action::Change
            } else {
                Action::Keep
            }
        } else {
            let eps = if self.mode == AgentMode::Train {
                self.epsilon
            } else {
                0.0
            };
            let q = self.learner.qnet.q_values(&state, phase)?;
            select_action(q, eps, &mut self.rng, sim.in_transition(), sim.min_green_met())
        };
        self.pending = Some(Pending {
            state,
            phase,
            action,
            reward: 0.0,
            discount: 1.0,
            steps: 0,
        });
        self.decisions += 1;
        if self.mode == AgentMode::Train {
            self.training_decisions += 1;
        }
        if recording && self.decisions.is_multiple_of(self.config.learn_interval as u64) {
            if let Some(report) = self.learner.learn_step(&self.memory, &mut self.rng)? {
                self.losses.push(report.loss);
            }
        }
        Ok(action)
    }

    /// Saves network, optimizer, RNG and exploration state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut networks = vec![("trunk".to_string(), self.learner.qnet.trunk.clone())];
        for (k, h) in self.learner.qnet.heads.iter().enumerate() {
            networks.push((format!("head{k}"), h.clone()));
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            networks,
            optimizer: self.learner.optimizer.clone(),
            rng: RngState::capture(&self.rng),
            epsilon: self.epsilon,
            env_steps: self.env_steps,
        }
    }

    /// Rebuilds an agent from a checkpoint; the replay memory starts empty
    /// and the target network starts as a copy of the restored network.
    pub fn from_checkpoint(config: AgentConfig, ck: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let missing = |name: &str| Error::Checkpoint(format!("missing network `{name}`"));
        let trunk = ck.network("trunk").ok_or_else(|| missing("trunk"))?.clone();
        let mut heads = Vec::new();
        while let Some(h) = ck.network(&format!("head{}", heads.len())) {
            heads.push(h.clone());
        }
        let qnet = QNetwork::from_parts(trunk, heads)?;
        if ck.optimizer.first_moment().len() != qnet.param_count() {
            return Err(Error::Checkpoint("optimizer state does not match the network".into()));
        }
        let phase_count = qnet.phase_count();
        let mut learner = Learner::new(qnet, &config);
        learner.optimizer = ck.optimizer.clone();
        Ok(LitAgent {
            learner,
            memory: ReplayMemory::new(config.replay_capacity),
            rng: ck.rng.restore()?,
            mode: AgentMode::Evaluate,
            epsilon: ck.epsilon,
            env_steps: ck.env_steps,
            decisions: 0,
            training_decisions: 0,
            decay_steps: 0,
            since_decision: config.decision_interval_s,
            pending: None,
            losses: Vec::new(),
            failure: None,
            phase_count,
            config,
        })
    }
}

impl Controller for LitAgent {
    fn decide(&mut self, sim: &IntersectionSim) -> Action {
        if self.failure.is_some() || !sim.change_allowed() || self.since_decision < self.config.decision_interval_s {
            return Action::Keep;
        }
        self.since_decision = 0;
        match self.try_decide(sim) {
            Ok(a) => a,
            Err(e) => {
                log::error!("agent stopped learning: {e}");
                self.failure = Some(e.to_string());
                Action::Keep
            }
        }
    }

    fn after_step(&mut self, sim: &IntersectionSim, outcome: &StepOutcome) {
        self.since_decision = self.since_decision.saturating_add(1);
        if let Some(p) = self.pending.as_mut() {
            let r = match self.config.reward {
                RewardMode::Queue => outcome.reward,
                mode => compute_reward(&RewardInputs::gather(sim, &outcome.queues, mode), mode),
            };
            p.reward += p.discount * r * self.config.reward_scale;
            p.discount *= self.learner.gamma;
            p.steps += 1;
        }
        if self.mode == AgentMode::Train {
            self.env_steps += 1;
            self.update_epsilon();
        }
    }
}
