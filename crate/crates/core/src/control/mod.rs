//! Signal controllers sharing one interface: look at an intersection, emit
//! keep or change.

mod flow;
mod webster;

pub use self::flow::{estimate_flows, FlowEstimate, FlowEstimator, SignalSample};
pub use self::webster::{webster_cycle_length, webster_delay, webster_phase_splits, WebsterController, WebsterParams};

use crate::sim::{Action, IntersectionSim, StepOutcome};

/// A per-intersection signal controller.
///
/// `decide` is called once per second before the step; `after_step` right
/// after it with the outcome, so learning controllers can record transitions.
pub trait Controller {
    fn decide(&mut self, sim: &IntersectionSim) -> Action;

    fn after_step(&mut self, _sim: &IntersectionSim, _outcome: &StepOutcome) {}
}

/// Holds the initial phase forever.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysKeep;

impl Controller for AlwaysKeep {
    fn decide(&mut self, _sim: &IntersectionSim) -> Action {
        Action::Keep
    }
}

/// Fixed-time rule: change once the current green has lasted `phase_duration_s`.
pub fn fixed_time_decide(elapsed_green_s: u32, phase_duration_s: u32) -> Action {
    if elapsed_green_s >= phase_duration_s {
        Action::Change
    } else {
        Action::Keep
    }
}

/// Pre-timed plan with the same green for every phase.
#[derive(Debug, Clone, Copy)]
pub struct FixedTime {
    pub phase_duration_s: u32,
}

impl FixedTime {
    pub const DEFAULT_PHASE_S: u32 = 30;

    pub fn new(phase_duration_s: u32) -> Self {
        FixedTime { phase_duration_s }
    }
}

impl Default for FixedTime {
    fn default() -> Self {
        FixedTime::new(Self::DEFAULT_PHASE_S)
    }
}

impl Controller for FixedTime {
    fn decide(&mut self, sim: &IntersectionSim) -> Action {
        if sim.in_transition() {
            return Action::Keep;
        }
        fixed_time_decide(sim.green_elapsed_s(), self.phase_duration_s)
    }
}

/// Actuated threshold rule: switch when some red lane's queue exceeds
/// `theta_red` while the green lanes hold fewer than `theta_green` vehicles.
pub fn sotl_decide(
    green_lane_queues: &[u32],
    red_lane_queues: &[u32],
    elapsed_green_s: u32,
    theta_red: u32,
    theta_green: u32,
    min_green_s: u32,
) -> Action {
    let red_max = red_lane_queues.iter().copied().max().unwrap_or(0);
    let green_sum: u32 = green_lane_queues.iter().sum();
    if elapsed_green_s >= min_green_s && red_max > theta_red && green_sum < theta_green {
        Action::Change
    } else {
        Action::Keep
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sotl {
    pub theta_red: u32,
    pub theta_green: u32,
}

impl Default for Sotl {
    fn default() -> Self {
        Sotl {
            theta_red: 4,
            theta_green: 2,
        }
    }
}

impl Controller for Sotl {
    fn decide(&mut self, sim: &IntersectionSim) -> Action {
        if sim.in_transition() {
            return Action::Keep;
        }
        let green = sim.lane_green();
        let queues = sim.queue_lengths();
        let (mut g, mut r) = (Vec::new(), Vec::new());
        for (q, is_green) in queues.into_iter().zip(green) {
            if is_green {
                g.push(q);
            } else {
                r.push(q);
            }
        }
        sotl_decide(
            &g,
            &r,
            sim.green_elapsed_s(),
            self.theta_red,
            self.theta_green,
            sim.config().min_green_s,
        )
    }
}
