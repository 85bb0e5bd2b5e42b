//! Episode metrics, the travel-time/queue identity, and convergence detection.
//!
//! Waiting is counted per whole step, so the identity
//! `T̄ = τ·q̄/N + l/μ` is checked on integer totals and holds exactly.

use serde::Serialize;

use crate::sim::{EpisodeResult, RewardTrace, TravelLog};

/// Summary of one intersection (or a whole network) over one episode.
///
/// Averages are `None` when no vehicle departed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    /// N: departed vehicles.
    pub vehicles: u64,
    /// Vehicles that entered but had not departed when the run stopped.
    pub unfinished: u64,
    pub avg_travel_time_s: Option<f64>,
    pub avg_delay_s: Option<f64>,
    /// Mean summed queue over the τ window.
    pub avg_queue: Option<f64>,
    /// Mean travel time over every entered vehicle, charging unfinished
    /// ones up to the end of the run. Equals `avg_travel_time_s` when
    /// nothing is unfinished.
    pub censored_travel_time_s: Option<f64>,
    pub throughput: u64,
    /// W: queue-steps of departed vehicles, recounted from the trace.
    pub total_waiting_events: u64,
    /// τ: last departure minus first arrival.
    pub tau_s: u64,
    pub total_travel_time_s: u64,
    pub total_delay_s: u64,
    /// l/μ in whole steps.
    pub free_flow_s: u64,
}

impl EpisodeMetrics {
    pub fn is_empty(&self) -> bool {
        self.vehicles == 0
    }

    pub fn is_complete(&self) -> bool {
        self.unfinished == 0
    }

    /// The travel time used to rank controllers: censored when vehicles
    /// were stranded, so a controller cannot look good by never serving a lane.
    pub fn ranking_travel_time_s(&self) -> Option<f64> {
        self.censored_travel_time_s
    }
}

/// Metrics of one intersection from its travel log and trace.
pub fn compute_metrics(log: &TravelLog, trace: &RewardTrace) -> EpisodeMetrics {
    let end = trace.rows.last().map(|r| r.t + 1).unwrap_or(0);
    let departed: Vec<_> = log.departed().collect();
    let n = departed.len() as u64;
    let unfinished = log.records.len() as u64 - n;
    let total_travel: u64 = departed.iter().filter_map(|r| r.travel_time_s()).sum();
    let total_delay: u64 = departed.iter().filter_map(|r| r.delay_s()).sum();
    let censored_total: u64 = total_travel
        + log
            .records
            .iter()
            .filter(|r| r.depart_time_s.is_none())
            .map(|r| end.saturating_sub(r.entry_time_s))
            .sum::<u64>();
    let entered = log.records.len() as u64;

    let (first, last) = match (
        departed.iter().map(|r| r.entry_time_s).min(),
        departed.iter().filter_map(|r| r.depart_time_s).max(),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => (0, 0),
    };
    let tau = last - first;
    // Σ_t q_t over [first, last), minus queue-steps of vehicles that never left.
    let trace_sum: u64 = trace
        .rows
        .iter()
        .filter(|r| r.t >= first && r.t < last)
        .map(|r| r.queue_sum())
        .sum();
    let stranded: u64 = log
        .records
        .iter()
        .filter(|r| r.depart_time_s.is_none())
        .map(|r| last.saturating_sub(r.ready_time_s.max(first)))
        .sum();
    let waiting = if n == 0 { 0 } else { trace_sum - stranded.min(trace_sum) };

    let avg = |total: u64, count: u64| (count > 0).then(|| total as f64 / count as f64);
    EpisodeMetrics {
        vehicles: n,
        unfinished,
        avg_travel_time_s: avg(total_travel, n),
        avg_delay_s: avg(total_delay, n),
        avg_queue: if n == 0 {
            None
        } else if tau == 0 {
            Some(0.0)
        } else {
            Some(waiting as f64 / tau as f64)
        },
        censored_travel_time_s: avg(censored_total, entered),
        throughput: n,
        total_waiting_events: waiting,
        tau_s: tau,
        total_travel_time_s: total_travel,
        total_delay_s: total_delay,
        free_flow_s: log.free_flow_s,
    }
}

/// Per-intersection metrics of an episode and their network-wide combination.
pub fn episode_metrics(result: &EpisodeResult) -> (Vec<EpisodeMetrics>, EpisodeMetrics) {
    let parts: Vec<_> = result
        .logs
        .iter()
        .zip(&result.traces)
        .map(|(log, trace)| compute_metrics(log, trace))
        .collect();
    let all = combine_metrics(&parts);
    (parts, all)
}

/// Network-wide metrics: every vehicle pass through every intersection.
pub fn combine_metrics(parts: &[EpisodeMetrics]) -> EpisodeMetrics {
    let sum = |f: fn(&EpisodeMetrics) -> u64| parts.iter().map(f).sum::<u64>();
    let n = sum(|m| m.vehicles);
    let unfinished = sum(|m| m.unfinished);
    let travel = sum(|m| m.total_travel_time_s);
    let delay = sum(|m| m.total_delay_s);
    let waiting = sum(|m| m.total_waiting_events);
    let tau_q: f64 = parts
        .iter()
        .filter_map(|m| m.avg_queue.map(|q| q * m.tau_s as f64))
        .sum();
    let tau = parts.iter().map(|m| m.tau_s).max().unwrap_or(0);
    let censored: f64 = parts
        .iter()
        .filter_map(|m| m.censored_travel_time_s.map(|c| c * (m.vehicles + m.unfinished) as f64))
        .sum();
    let avg = |total: f64, count: u64| (count > 0).then(|| total / count as f64);
    EpisodeMetrics {
        vehicles: n,
        unfinished,
        avg_travel_time_s: avg(travel as f64, n),
        avg_delay_s: avg(delay as f64, n),
        avg_queue: if n == 0 {
            None
        } else {
            Some(if tau == 0 { 0.0 } else { tau_q / tau as f64 })
        },
        censored_travel_time_s: avg(censored, n + unfinished),
        throughput: n,
        total_waiting_events: waiting,
        tau_s: tau,
        total_travel_time_s: travel,
        total_delay_s: delay,
        free_flow_s: parts.first().map(|m| m.free_flow_s).unwrap_or(0),
    }
}

/// |T̄ − (τ·q̄/N + l/μ)|, evaluated on the integer totals behind the
/// averages so the comparison is exact. `None` for empty metrics.
pub fn check_identity(metrics: &EpisodeMetrics) -> Option<f64> {
    if metrics.vehicles == 0 {
        return None;
    }
    let lhs = metrics.total_travel_time_s as i128;
    let rhs = metrics.total_waiting_events as i128 + (metrics.vehicles * metrics.free_flow_s) as i128;
    Some((lhs - rhs).unsigned_abs() as f64 / metrics.vehicles as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Number of episodes seen when the trailing window first became stable.
    pub converged_at: Option<usize>,
    pub window: usize,
    pub tolerance: f64,
}

impl ConvergenceReport {
    pub const DEFAULT_WINDOW: usize = 10;
    pub const DEFAULT_TOLERANCE: f64 = 0.05;

    /// Cumulative decision steps at convergence, given steps per episode
    /// prefix sums (`cumulative_steps[i]` = steps after episode i+1).
    pub fn converged_at_step(&self, cumulative_steps: &[u64]) -> Option<u64> {
        self.converged_at.and_then(|e| cumulative_steps.get(e - 1).copied())
    }
}

/// First episode count at which the last `window` values satisfy
/// max − min ≤ tolerance · mean.
pub fn detect_convergence(curve: &[f64], window: usize, tolerance: f64) -> ConvergenceReport {
    assert!(window >= 2, "convergence window must be at least 2");
    let converged_at = (window..=curve.len()).find(|&end| {
        let w = &curve[end - window..end];
        if w.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let max = w.iter().copied().fold(f64::MIN, f64::max);
        let min = w.iter().copied().fold(f64::MAX, f64::min);
        let mean = w.iter().sum::<f64>() / window as f64;
        max - min <= tolerance * mean.abs()
    });
    ConvergenceReport {
        converged_at,
        window,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{TraceRow, TravelRecord};

    fn rec(id: u64, entry: u64, depart: Option<u64>) -> TravelRecord {
        TravelRecord {
            vehicle_id: id,
            lane: 0,
            entry_time_s: entry,
            ready_time_s: entry + 30,
            depart_time_s: depart,
        }
    }

    /// Trace consistent with the records: queue = vehicles waiting at t.
    fn trace_for(log: &TravelLog, until: u64) -> RewardTrace {
        RewardTrace {
            rows: (0..until)
                .map(|t| {
                    let q = log.records.iter().filter(|r| r.waiting_at(t)).count() as u32;
                    TraceRow {
                        t,
                        phase: 0,
                        reward: -(q as f64),
                        queues: vec![q],
                    }
                })
                .collect(),
        }
    }

    fn log_of(records: Vec<TravelRecord>) -> TravelLog {
        let mut log = TravelLog::new(300.0, 10.0, 30);
        log.records = records;
        log
    }

    #[test]
    fn single_free_vehicle() {
        let log = log_of(vec![rec(0, 0, Some(30))]);
        let m = compute_metrics(&log, &trace_for(&log, 31));
        assert_eq!(m.avg_travel_time_s, Some(30.0));
        assert_eq!(m.avg_delay_s, Some(0.0));
        assert_eq!(check_identity(&m), Some(0.0));
    }

    #[test]
    fn two_vehicles_delays_four_and_six() {
        let log = log_of(vec![rec(0, 0, Some(34)), rec(1, 2, Some(38))]);
        let m = compute_metrics(&log, &trace_for(&log, 40));
        assert_eq!(m.avg_delay_s, Some(5.0));
        assert_eq!(m.avg_travel_time_s, Some(35.0));
        assert_eq!(m.total_waiting_events, 10);
        assert_eq!(m.tau_s, 38);
        assert_eq!(check_identity(&m), Some(0.0));
        // τ·q̄/N + l/μ by hand: 38 · (10/38) / 2 + 30 = 35
        assert!((m.tau_s as f64 * m.avg_queue.unwrap() / 2.0 + 30.0 - 35.0).abs() < 1e-12);
    }

    #[test]
    fn empty_episode_is_marked() {
        let log = log_of(vec![]);
        let m = compute_metrics(&log, &trace_for(&log, 10));
        assert!(m.is_empty());
        assert_eq!(m.avg_travel_time_s, None);
        assert_eq!(m.avg_queue, None);
        assert_eq!(check_identity(&m), None);
    }

    #[test]
    fn unfinished_vehicles_excluded_and_censored() {
        let log = log_of(vec![rec(0, 0, Some(40)), rec(1, 5, None)]);
        let m = compute_metrics(&log, &trace_for(&log, 60));
        assert_eq!(m.vehicles, 1);
        assert_eq!(m.unfinished, 1);
        assert_eq!(m.avg_travel_time_s, Some(40.0));
        assert_eq!(m.total_waiting_events, 10);
        assert_eq!(check_identity(&m), Some(0.0));
        // censored: (40 + (60 - 5)) / 2
        assert_eq!(m.censored_travel_time_s, Some(47.5));
    }

    #[test]
    fn identity_detects_inconsistent_trace() {
        let log = log_of(vec![rec(0, 0, Some(34))]);
        let mut trace = trace_for(&log, 40);
        trace.rows[31].queues[0] += 1;
        let m = compute_metrics(&log, &trace);
        assert_eq!(check_identity(&m), Some(1.0));
    }

    #[test]
    fn combine_sums_totals() {
        let a = log_of(vec![rec(0, 0, Some(34))]);
        let b = log_of(vec![rec(1, 0, Some(36)), rec(2, 0, Some(30))]);
        let parts = [
            compute_metrics(&a, &trace_for(&a, 40)),
            compute_metrics(&b, &trace_for(&b, 40)),
        ];
        let m = combine_metrics(&parts);
        assert_eq!(m.vehicles, 3);
        assert_eq!(m.total_travel_time_s, 100);
        assert_eq!(check_identity(&m), Some(0.0));
    }

    #[test]
    fn convergence_examples() {
        assert_eq!(detect_convergence(&[5.0; 12], 10, 0.05).converged_at, Some(10));
        let diverging: Vec<f64> = (0..30).map(|i| 2f64.powi(i)).collect();
        assert_eq!(detect_convergence(&diverging, 4, 0.05).converged_at, None);
        let curve = [100.0, 60.0, 41.0, 40.0, 40.5, 39.8, 40.1];
        // Window [41, 40, 40.5, 39.8]: spread 1.2 ≤ 0.05 · 40.325.
        assert_eq!(detect_convergence(&curve, 4, 0.05).converged_at, Some(6));
        assert_eq!(detect_convergence(&curve[..5], 4, 0.05).converged_at, None);
    }

    #[test]
    fn convergence_step_lookup() {
        let r = detect_convergence(&[1.0; 3], 2, 0.05);
        assert_eq!(r.converged_at, Some(2));
        assert_eq!(r.converged_at_step(&[10, 25, 40]), Some(25));
    }

    proptest::proptest! {
        #[test]
        fn identity_holds_for_random_logs(
            spec in proptest::collection::vec((0u64..200, 0u64..50, proptest::bool::weighted(0.9)), 1..40)
        ) {
            let records = spec
                .iter()
                .enumerate()
                .map(|(i, &(entry, wait, done))| rec(i as u64, entry, done.then_some(entry + 30 + wait)))
                .collect();
            let log = log_of(records);
            let m = compute_metrics(&log, &trace_for(&log, 300));
            if m.vehicles > 0 {
                proptest::prop_assert_eq!(check_identity(&m), Some(0.0));
            }
        }
    }
}
