//! Inflow / outflow estimation from lane vehicle counts.
//!
//! Under red a lane only gains vehicles, so f_in = v_{t+1} - v_t. Under
//! green with a standing queue it discharges at saturation, so
//! f_out = v_t - v_{t+1} + f_in.

use crate::error::{Error, Result};
use crate::sim::Observation;

/// One observed step: the observation before it, which lanes were green
/// during it, and which lanes still had a queue after it.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSample {
    pub observation: Observation,
    pub green: Vec<bool>,
    pub backlog: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEstimate {
    /// Vehicles/second; `None` until the lane has been seen under red.
    pub f_in_per_lane: Vec<Option<f64>>,
    /// Vehicles/second; `None` until f_in is known and the lane discharged
    /// a standing queue under green.
    pub f_out_per_lane: Vec<Option<f64>>,
    pub samples_used: usize,
}

impl FlowEstimate {
    pub fn is_valid(&self) -> bool {
        self.samples_used >= 1 && self.f_in_per_lane.iter().all(Option::is_some)
    }
}

/// Streaming accumulator behind [`estimate_flows`].
#[derive(Debug, Clone, Default)]
pub struct FlowEstimator {
    red_delta: Vec<i64>,
    red_steps: Vec<usize>,
    green_delta: Vec<i64>,
    green_steps: Vec<usize>,
    samples: usize,
}

impl FlowEstimator {
    pub fn new(lanes: usize) -> Self {
        FlowEstimator {
            red_delta: vec![0; lanes],
            red_steps: vec![0; lanes],
            green_delta: vec![0; lanes],
            green_steps: vec![0; lanes],
            samples: 0,
        }
    }

    pub fn lanes(&self) -> usize {
        self.red_delta.len()
    }

    /// Records one step from counts `before` to counts `after`.
    pub fn record(&mut self, before: &[u32], after: &[u32], green: &[bool], backlog: &[bool]) {
        for j in 0..self.lanes() {
            let delta = after[j] as i64 - before[j] as i64;
            if green[j] {
                if backlog[j] {
                    // v_t - v_{t+1}
                    self.green_delta[j] -= delta;
                    self.green_steps[j] += 1;
                }
            } else {
                self.red_delta[j] += delta;
                self.red_steps[j] += 1;
            }
        }
        self.samples += 1;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn estimate(&self) -> FlowEstimate {
        let f_in: Vec<Option<f64>> = (0..self.lanes())
            .map(|j| (self.red_steps[j] > 0).then(|| self.red_delta[j] as f64 / self.red_steps[j] as f64))
            .collect();
        let f_out = (0..self.lanes())
            .map(|j| {
                let fin = f_in[j]?;
                (self.green_steps[j] > 0).then(|| self.green_delta[j] as f64 / self.green_steps[j] as f64 + fin)
            })
            .collect();
        FlowEstimate {
            f_in_per_lane: f_in,
            f_out_per_lane: f_out,
            samples_used: self.samples,
        }
    }

    pub fn reset(&mut self) {
        *self = FlowEstimator::new(self.lanes());
    }
}

/// Estimates per-lane inflow and saturation outflow from a history of
/// consecutive samples. Needs at least two samples.
pub fn estimate_flows(history: &[SignalSample]) -> Result<FlowEstimate> {
    let first = history.first().ok_or(Error::Shape { expected: 2, actual: 0 })?;
    if history.len() < 2 {
        return Err(Error::Shape {
            expected: 2,
            actual: history.len(),
        });
    }
    let lanes = first.observation.vehicle_counts.len();
    let mut est = FlowEstimator::new(lanes);
    for pair in history.windows(2) {
        let (now, next) = (&pair[0], &pair[1]);
        for len in [
            next.observation.vehicle_counts.len(),
            now.green.len(),
            now.backlog.len(),
        ] {
            if len != lanes {
                return Err(Error::Shape {
                    expected: lanes,
                    actual: len,
                });
            }
        }
        est.record(
            &now.observation.vehicle_counts,
            &next.observation.vehicle_counts,
            &now.green,
            &now.backlog,
        );
    }
    Ok(est.estimate())
}
