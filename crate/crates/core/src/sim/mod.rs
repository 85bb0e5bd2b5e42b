//! Discrete-time point-queue engine.
//!
//! Each approach lane is a free-flow segment of length l followed by a
//! vertical, capacity-unbounded queue at the stop line. A vehicle needs
//! exactly l/μ (rounded up to whole seconds) to reach the stop line and then
//! waits until a green lane with discharge credit releases it. Credit
//! grows by 1/h per green second, capped at max(1, 1/h), and is kept
//! through red.
//!
//! One call to [`IntersectionSim::step`] advances one second:
//!
//! 1. signal logic (change request, yellow/all-red countdown)
//! 2. arrivals scheduled for this second enter the free-flow segment
//! 3. vehicles whose ready time has come join the queue tail
//! 4. green lanes discharge from the queue head
//! 5. reward `-Σ queue` is taken on the post-movement queues
//! 6. the clock advances

mod log;
mod network;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

pub use self::log::{RewardTrace, TraceRow, TravelLog, TravelRecord};
pub use self::network::{run_episode, EpisodeOptions, EpisodeResult};

use crate::error::{Error, Result};
use crate::types::IntersectionConfig;

/// Distance between consecutive queued vehicles, used by the occupancy grid.
pub const VEHICLE_SPACING_M: f64 = 7.5;

/// Signal action: keep the current phase or advance to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Keep,
    Change,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Keep => 0,
            Action::Change => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        match i {
            0 => Some(Action::Keep),
            1 => Some(Action::Change),
            _ => None,
        }
    }
}

/// What a controller sees: vehicles per lane and the active phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub vehicle_counts: Vec<u32>,
    pub phase_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// State after the step.
    pub observation: Observation,
    /// R_t = -Σ_j q_{t,j} on the post-movement queues.
    pub reward: f64,
    pub departures: Vec<u64>,
    /// Time t at which the step was executed.
    pub clock_s: u64,
    /// Action the signal actually carried out (masked requests become Keep).
    pub applied_action: Action,
    /// c_{t,j}: which lanes were green during this step.
    pub green: Vec<bool>,
    /// Post-movement queue lengths q_{t,j}.
    pub queues: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
struct LaneState {
    /// (record index, ready time), FIFO in ready order.
    free_flow: VecDeque<(usize, u64)>,
    /// Record indices, head first.
    queue: VecDeque<usize>,
    credit: f64,
}

/// Dynamic state of one intersection.
#[derive(Debug, Clone)]
pub struct IntersectionSim {
    config: IntersectionConfig,
    green_masks: Vec<Vec<bool>>,
    lanes: Vec<LaneState>,
    /// (time, sequence, vehicle id, lane)
    arrivals: BinaryHeap<Reverse<(u64, u64, u64, usize)>>,
    arrival_seq: u64,
    clock: u64,
    phase: usize,
    pending_phase: Option<usize>,
    countdown: u32,
    green_elapsed: u32,
    free_flow_s: u64,
    discharge_per_s: f64,
    credit_cap: f64,
    log: TravelLog,
    ignored_changes: u64,
}

impl IntersectionSim {
    pub fn new(config: IntersectionConfig) -> Result<Self> {
        config.validate()?;
        let green_masks = (0..config.phase_count()).map(|k| config.green_mask(k)).collect();
        let free_flow_s = config.free_flow_steps();
        let discharge_per_s = 1.0 / config.saturation_headway_s;
        let log = TravelLog::new(config.road_length_m, config.free_flow_speed_mps, free_flow_s);
        Ok(IntersectionSim {
            lanes: vec![LaneState::default(); config.lane_count()],
            green_masks,
            arrivals: BinaryHeap::new(),
            arrival_seq: 0,
            clock: 0,
            phase: 0,
            pending_phase: None,
            countdown: 0,
            green_elapsed: 0,
            free_flow_s,
            discharge_per_s,
            credit_cap: discharge_per_s.max(1.0),
            log,
            ignored_changes: 0,
            config,
        })
    }

    pub fn config(&self) -> &IntersectionConfig {
        &self.config
    }

    /// Time of the next step to be executed.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn phase_index(&self) -> usize {
        self.phase
    }

    pub fn pending_phase(&self) -> Option<usize> {
        self.pending_phase
    }

    pub fn transition_countdown_s(&self) -> u32 {
        self.countdown
    }

    pub fn in_transition(&self) -> bool {
        self.countdown > 0
    }

    /// Seconds the active phase has been green.
    pub fn green_elapsed_s(&self) -> u32 {
        self.green_elapsed
    }

    pub fn min_green_met(&self) -> bool {
        self.green_elapsed >= self.config.min_green_s
    }

    /// Would a change request be honoured on the next step?
    pub fn change_allowed(&self) -> bool {
        !self.in_transition() && self.min_green_met()
    }

    /// Change requests dropped because of a transition or min green.
    pub fn ignored_changes(&self) -> u64 {
        self.ignored_changes
    }

    pub fn travel_log(&self) -> &TravelLog {
        &self.log
    }

    pub fn into_travel_log(self) -> TravelLog {
        self.log
    }

    /// Schedules a vehicle to enter lane `lane` at time `time_s`.
    pub fn schedule_arrival(&mut self, vehicle_id: u64, lane: usize, time_s: u64) -> Result<()> {
        if lane >= self.lanes.len() {
            return Err(Error::Load {
                line: 0,
                message: format!("vehicle {vehicle_id}: lane index {lane} out of range"),
            });
        }
        if time_s < self.clock {
            return Err(Error::Load {
                line: 0,
                message: format!(
                    "vehicle {vehicle_id} scheduled at {time_s}s but the clock is already {}s",
                    self.clock
                ),
            });
        }
        self.arrivals
            .push(Reverse((time_s, self.arrival_seq, vehicle_id, lane)));
        self.arrival_seq += 1;
        Ok(())
    }

    pub fn pending_arrivals(&self) -> usize {
        self.arrivals.len()
    }

    /// Vehicles currently on approach lanes (free-flow plus queued).
    pub fn vehicles_on_lanes(&self) -> usize {
        self.lanes.iter().map(|l| l.free_flow.len() + l.queue.len()).sum()
    }

    /// c_{t,j} for the current signal state.
    pub fn lane_green(&self) -> Vec<bool> {
        if self.in_transition() {
            vec![false; self.lanes.len()]
        } else {
            self.green_masks[self.phase].clone()
        }
    }

    pub fn queue_lengths(&self) -> Vec<u32> {
        self.lanes.iter().map(|l| l.queue.len() as u32).collect()
    }

    pub fn vehicle_counts(&self) -> Vec<u32> {
        self.lanes
            .iter()
            .map(|l| (l.free_flow.len() + l.queue.len()) as u32)
            .collect()
    }

    pub fn observe(&self) -> Observation {
        Observation {
            vehicle_counts: self.vehicle_counts(),
            phase_index: self.phase,
        }
    }

    /// Mean waiting time (seconds since reaching the stop line) of the
    /// vehicles queued on each lane; 0 for an empty queue.
    pub fn lane_mean_waiting_s(&self) -> Vec<f64> {
        self.lanes
            .iter()
            .map(|l| {
                if l.queue.is_empty() {
                    return 0.0;
                }
                let total: u64 = l
                    .queue
                    .iter()
                    .map(|&r| self.clock.saturating_sub(self.log.records[r].ready_time_s))
                    .sum();
                total as f64 / l.queue.len() as f64
            })
            .collect()
    }

    /// Per-lane delay factor: 1 - mean speed / free-flow speed, i.e. the
    /// stopped fraction of the lane's vehicles.
    pub fn lane_delay_factor(&self) -> Vec<f64> {
        self.lanes
            .iter()
            .map(|l| {
                let n = l.free_flow.len() + l.queue.len();
                if n == 0 {
                    0.0
                } else {
                    l.queue.len() as f64 / n as f64
                }
            })
            .collect()
    }

    /// Coarse per-lane position histogram, cells ordered from the lane
    /// entrance to the stop line. Queued vehicles stack back from the stop
    /// line at [`VEHICLE_SPACING_M`]; free-flow vehicles sit at μ·(t − entry).
    pub fn occupancy_vector(&self, cells_per_lane: usize) -> Vec<f64> {
        let cells = cells_per_lane.max(1);
        let length = self.config.road_length_m;
        let width = length / cells as f64;
        let bucket = |pos: f64| ((pos / width).floor().max(0.0) as usize).min(cells - 1);
        let mut out = vec![0.0; self.lanes.len() * cells];
        for (j, lane) in self.lanes.iter().enumerate() {
            let row = &mut out[j * cells..(j + 1) * cells];
            for (k, _) in lane.queue.iter().enumerate() {
                row[bucket(length - k as f64 * VEHICLE_SPACING_M)] += 1.0;
            }
            for &(r, _) in &lane.free_flow {
                let elapsed = self.clock.saturating_sub(self.log.records[r].entry_time_s) as f64;
                let pos = (self.config.free_flow_speed_mps * elapsed).min(length);
                row[bucket(pos)] += 1.0;
            }
        }
        out
    }

    /// Advances the intersection by one second.
    pub fn step(&mut self, action: Action) -> StepOutcome {
        let t = self.clock;
        let k = self.config.phase_count();

        // (a) signal logic
        let mut applied = Action::Keep;
        if self.countdown > 0 {
            if action == Action::Change {
                self.ignored_changes += 1;
                ::log::debug!("t={t}: change ignored during transition");
            }
            self.countdown -= 1;
            if self.countdown == 0 {
                if let Some(next) = self.pending_phase.take() {
                    self.phase = next;
                }
                self.green_elapsed = 0;
            }
        } else if action == Action::Change {
            if self.min_green_met() {
                applied = Action::Change;
                let next = (self.phase + 1) % k;
                let transition = self.config.transition_s();
                if transition == 0 {
                    self.phase = next;
                    self.green_elapsed = 0;
                } else {
                    self.countdown = transition;
                    self.pending_phase = Some(next);
                }
            } else {
                self.ignored_changes += 1;
                ::log::debug!("t={t}: change ignored before min green");
            }
        }
        let green = self.lane_green();

        // (b) arrivals
        while let Some(&Reverse((time, _, vehicle_id, lane))) = self.arrivals.peek() {
            if time > t {
                break;
            }
            self.arrivals.pop();
            let ready = t + self.free_flow_s;
            let record = self.log.records.len();
            self.log.records.push(TravelRecord {
                vehicle_id,
                lane,
                entry_time_s: t,
                ready_time_s: ready,
                depart_time_s: None,
            });
            self.lanes[lane].free_flow.push_back((record, ready));
        }

        // (c) queue join, (d) discharge
        let mut departures = Vec::new();
        for (j, lane) in self.lanes.iter_mut().enumerate() {
            while let Some(&(record, ready)) = lane.free_flow.front() {
                if ready > t {
                    break;
                }
                lane.free_flow.pop_front();
                lane.queue.push_back(record);
            }
            if green[j] {
                lane.credit = (lane.credit + self.discharge_per_s).min(self.credit_cap);
                while lane.credit >= 1.0 - 1e-9 {
                    let Some(record) = lane.queue.pop_front() else {
                        break;
                    };
                    lane.credit -= 1.0;
                    let rec = &mut self.log.records[record];
                    rec.depart_time_s = Some(t);
                    departures.push(rec.vehicle_id);
                }
            }
            // Credit left over at the end of a green carries to the next
            // one, so long-run discharge matches 1/h per green second.
        }

        // (e) reward
        let queues = self.queue_lengths();
        let reward = -(queues.iter().map(|&q| q as f64).sum::<f64>());

        // (f) clock
        if !self.in_transition() {
            self.green_elapsed += 1;
        }
        self.clock += 1;

        StepOutcome {
            observation: self.observe(),
            reward,
            departures,
            clock_s: t,
            applied_action: applied,
            green,
            queues,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::build_standard_intersection;

    fn sim2() -> IntersectionSim {
        IntersectionSim::new(build_standard_intersection(2).unwrap()).unwrap()
    }

    /// Runs until clock == t with `Keep`.
    fn advance_to(sim: &mut IntersectionSim, t: u64) {
        while sim.clock() < t {
            sim.step(Action::Keep);
        }
    }

    #[test]
    fn empty_intersection_observation() {
        let sim = sim2();
        assert_eq!(
            sim.observe(),
            Observation {
                vehicle_counts: vec![0; 4],
                phase_index: 0
            }
        );
    }

    #[test]
    fn reward_is_negated_queue_sum() {
        let mut sim = sim2();
        // Hold every lane red with a long transition.
        sim.countdown = 100;
        sim.pending_phase = Some(1);
        for (lane, n) in [(0usize, 3u64), (2, 2), (3, 1)] {
            for v in 0..n {
                sim.schedule_arrival(lane as u64 * 10 + v, lane, 0).unwrap();
            }
        }
        advance_to(&mut sim, 30);
        let out = sim.step(Action::Keep);
        assert_eq!(out.queues, vec![3, 0, 2, 1]);
        assert_eq!(out.reward, -6.0);
    }

    #[test]
    fn lane_flow_balance_matches_transition_equation() {
        // v' = v + f_in - f_out * c with f_in = 1, f_out = 2, c = 1.
        let mut config = build_standard_intersection(2).unwrap();
        config.saturation_headway_s = 0.5;
        let mut sim = IntersectionSim::new(config).unwrap();
        sim.countdown = 40;
        sim.pending_phase = Some(0);
        for v in 0..5 {
            sim.schedule_arrival(v, 0, 0).unwrap();
        }
        // Transition ends on the step at t=39; lane 0 is green from then on.
        advance_to(&mut sim, 39);
        assert_eq!(sim.observe().vehicle_counts[0], 5);
        assert_eq!(sim.queue_lengths()[0], 5);
        sim.schedule_arrival(99, 0, 39).unwrap();
        let out = sim.step(Action::Keep);
        assert!(out.green[0]);
        assert_eq!(out.departures.len(), 2);
        assert_eq!(out.observation.vehicle_counts[0], 4);
    }

    #[test]
    fn lone_vehicle_under_green_has_zero_delay() {
        let mut sim = sim2();
        sim.schedule_arrival(1, 0, 0).unwrap();
        let mut departed_at = None;
        for _ in 0..40 {
            let out = sim.step(Action::Keep);
            if out.departures.contains(&1) {
                departed_at = Some(out.clock_s);
            }
        }
        assert_eq!(departed_at, Some(30));
        let rec = sim.travel_log().records[0];
        assert_eq!(rec.delay_s(), Some(0));
        assert_eq!(rec.travel_time_s(), Some(30));
    }

    #[test]
    fn observation_reports_outgoing_phase_mid_yellow() {
        let mut sim = sim2();
        advance_to(&mut sim, 10);
        let out = sim.step(Action::Change);
        assert_eq!(out.applied_action, Action::Change);
        assert_eq!(sim.pending_phase(), Some(1));
        sim.step(Action::Keep);
        assert!(sim.in_transition());
        assert_eq!(sim.observe().phase_index, 0);
    }

    #[test]
    fn transition_blocks_discharge_for_yellow_plus_all_red() {
        let mut sim = sim2();
        advance_to(&mut sim, 10);
        let mut green_steps = Vec::new();
        let out = sim.step(Action::Change);
        green_steps.push(out.green.iter().any(|&g| g));
        for _ in 0..6 {
            let out = sim.step(Action::Keep);
            green_steps.push(out.green.iter().any(|&g| g));
        }
        assert_eq!(green_steps, [false, false, false, false, false, true, true]);
        assert_eq!(sim.phase_index(), 1);
        assert_eq!(sim.lane_green(), vec![false, false, true, true]);
    }

    #[test]
    fn change_ignored_before_min_green_and_mid_transition() {
        let mut sim = sim2();
        let out = sim.step(Action::Change);
        assert_eq!(out.applied_action, Action::Keep);
        advance_to(&mut sim, 5);
        assert!(sim.min_green_met());
        assert_eq!(sim.step(Action::Change).applied_action, Action::Change);
        assert_eq!(sim.step(Action::Change).applied_action, Action::Keep);
        assert_eq!(sim.ignored_changes(), 2);
        assert!(sim.transition_countdown_s() <= sim.config().transition_s());
    }

    #[test]
    fn saturation_headway_releases_one_vehicle_every_two_seconds() {
        let mut sim = sim2();
        sim.countdown = 50;
        sim.pending_phase = Some(0);
        for v in 0..6 {
            sim.schedule_arrival(v, 0, 0).unwrap();
        }
        advance_to(&mut sim, 49);
        let mut times = Vec::new();
        for _ in 0..12 {
            let out = sim.step(Action::Keep);
            times.extend(out.departures.iter().map(|_| out.clock_s));
        }
        assert_eq!(times, [50, 52, 54, 56, 58, 60]);
    }

    #[test]
    fn occupancy_grid_buckets() {
        let mut sim = sim2();
        assert_eq!(sim.occupancy_vector(4), vec![0.0; 16]);

        sim.schedule_arrival(1, 2, 0).unwrap();
        advance_to(&mut sim, 10);
        let occ = sim.occupancy_vector(4);
        // 100 m from the entrance lands in [75, 150).
        assert_eq!(occ[2 * 4 + 1], 1.0);
        assert_eq!(occ.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn queued_vehicles_fill_stop_line_cell() {
        let mut sim = sim2();
        sim.countdown = 100;
        sim.pending_phase = Some(0);
        for v in 0..3 {
            sim.schedule_arrival(v, 1, 0).unwrap();
        }
        advance_to(&mut sim, 31);
        assert_eq!(sim.queue_lengths()[1], 3);
        let occ = sim.occupancy_vector(4);
        assert_eq!(&occ[4..8], &[0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn waiting_features() {
        let mut sim = sim2();
        sim.countdown = 100;
        sim.pending_phase = Some(0);
        sim.schedule_arrival(1, 0, 0).unwrap();
        sim.schedule_arrival(2, 0, 4).unwrap();
        advance_to(&mut sim, 36);
        // Ready at 30 and 34; at clock 36 they have waited 6 and 2.
        assert_eq!(sim.lane_mean_waiting_s()[0], 4.0);
        assert_eq!(sim.lane_delay_factor()[0], 1.0);
    }

    #[test]
    fn past_arrival_is_rejected() {
        let mut sim = sim2();
        advance_to(&mut sim, 3);
        assert!(sim.schedule_arrival(1, 0, 2).is_err());
        assert!(sim.schedule_arrival(1, 9, 5).is_err());
    }
}
