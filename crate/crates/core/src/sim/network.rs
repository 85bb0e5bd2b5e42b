use std::collections::HashMap;

use super::{IntersectionSim, RewardTrace, TraceRow, TravelLog};
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::types::{NetworkConfig, Vehicle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeOptions {
    /// Demand is accepted and signals are controlled for `[0, horizon_s)`.
    pub horizon_s: u64,
    /// Extra seconds allowed after the horizon for the network to empty.
    /// Zero stops exactly at the horizon.
    pub drain_limit_s: u64,
}

impl EpisodeOptions {
    pub fn new(horizon_s: u64) -> Self {
        EpisodeOptions {
            horizon_s,
            drain_limit_s: 0,
        }
    }

    pub fn with_drain(mut self, drain_limit_s: u64) -> Self {
        self.drain_limit_s = drain_limit_s;
        self
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub logs: Vec<TravelLog>,
    pub traces: Vec<RewardTrace>,
    /// Every demand vehicle left the network before the run stopped.
    pub completed: bool,
    pub duration_s: u64,
}

struct Progress {
    demand_index: usize,
    hop: usize,
}

/// Runs one episode over a network with one controller per intersection.
///
/// Demand must be sorted by entry time and every route must be valid for
/// the network; violations are reported before any step is simulated.
pub fn run_episode(
    network: &NetworkConfig,
    controllers: &mut [&mut dyn Controller],
    demand: &[Vehicle],
    options: EpisodeOptions,
) -> Result<EpisodeResult> {
    network.validate()?;
    if options.horizon_s == 0 {
        return Err(Error::config("horizon_s>0", "episode horizon is zero"));
    }
    if controllers.len() != network.intersections.len() {
        return Err(Error::config(
            "one_controller_per_intersection",
            format!(
                "{} controllers for {} intersections",
                controllers.len(),
                network.intersections.len()
            ),
        ));
    }
    let mut progress = HashMap::with_capacity(demand.len());
    for (i, v) in demand.iter().enumerate() {
        if i > 0 && demand[i - 1].entry_time_s > v.entry_time_s {
            return Err(Error::Load {
                line: i + 1,
                message: format!("vehicle {} breaks entry-time ordering", v.id),
            });
        }
        network.validate_route(&v.route).map_err(|message| Error::Load {
            line: i + 1,
            message: format!("vehicle {}: {message}", v.id),
        })?;
        if progress
            .insert(
                v.id,
                Progress {
                    demand_index: i,
                    hop: 0,
                },
            )
            .is_some()
        {
            return Err(Error::Load {
                line: i + 1,
                message: format!("duplicate vehicle id {}", v.id),
            });
        }
    }

    let mut sims = network
        .intersections
        .iter()
        .map(|c| IntersectionSim::new(c.clone()))
        .collect::<Result<Vec<_>>>()?;
    for v in demand {
        let first = &v.route[0];
        let lane = network.intersections[first.intersection]
            .lane_index(first)
            .expect("validated route");
        sims[first.intersection].schedule_arrival(v.id, lane, v.entry_time_s)?;
    }

    let mut traces = vec![RewardTrace::default(); sims.len()];
    let mut exited = 0usize;
    let stop = options.horizon_s + options.drain_limit_s;
    let mut t = 0;
    while t < stop {
        if t >= options.horizon_s && exited == demand.len() {
            break;
        }
        let mut transfers = Vec::new();
        for (i, sim) in sims.iter_mut().enumerate() {
            let action = controllers[i].decide(sim);
            let outcome = sim.step(action);
            controllers[i].after_step(sim, &outcome);
            traces[i].rows.push(TraceRow {
                t: outcome.clock_s,
                phase: sim.phase_index(),
                reward: outcome.reward,
                queues: outcome.queues.clone(),
            });
            for id in &outcome.departures {
                let p = progress.get_mut(id).expect("known vehicle");
                p.hop += 1;
                let route = &demand[p.demand_index].route;
                match route.get(p.hop) {
                    Some(next) => transfers.push((*id, *next, outcome.clock_s + network.link_travel_time_s)),
                    None => exited += 1,
                }
            }
        }
        for (id, lane, time) in transfers {
            let idx = network.intersections[lane.intersection]
                .lane_index(&lane)
                .expect("validated route");
            sims[lane.intersection].schedule_arrival(id, idx, time)?;
        }
        t += 1;
    }

    Ok(EpisodeResult {
        completed: exited == demand.len(),
        logs: sims.into_iter().map(IntersectionSim::into_travel_log).collect(),
        traces,
        duration_s: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{AlwaysKeep, FixedTime};
    use crate::types::{build_grid_network, build_standard_intersection, Approach, LaneId, Movement};

    fn single() -> NetworkConfig {
        NetworkConfig::single(build_standard_intersection(2).unwrap())
    }

    #[test]
    fn zero_demand_gives_zero_rewards() {
        let net = single();
        let mut c = FixedTime::new(30);
        let r = run_episode(&net, &mut [&mut c], &[], EpisodeOptions::new(100)).unwrap();
        assert_eq!(r.traces[0].rows.len(), 100);
        assert!(r.traces[0].rewards().all(|x| x == 0.0));
        assert!(r.logs[0].records.is_empty());
        assert!(r.completed);
    }

    #[test]
    fn second_entry_follows_link_travel_time() {
        let base = build_standard_intersection(2).unwrap();
        let net = build_grid_network(1, 2, &base).unwrap();
        let route = net.straight_route(LaneId::new(0, Approach::W, Movement::T));
        assert_eq!(route.len(), 2);
        let demand = vec![Vehicle {
            id: 7,
            entry_time_s: 0,
            route,
        }];
        let (mut a, mut b) = (AlwaysKeep, AlwaysKeep);
        let r = run_episode(&net, &mut [&mut a, &mut b], &demand, EpisodeOptions::new(200)).unwrap();
        let first = r.logs[0].records[0];
        let second = r.logs[1].records[0];
        assert_eq!(first.depart_time_s, Some(30));
        assert_eq!(second.entry_time_s, 30 + net.link_travel_time_s);
        assert_eq!(second.depart_time_s, Some(90));
        assert!(r.completed);
    }

    #[test]
    fn invalid_route_rejected_before_simulation() {
        let net = single();
        let demand = vec![Vehicle {
            id: 1,
            entry_time_s: 0,
            route: vec![LaneId::new(0, Approach::W, Movement::L)],
        }];
        let mut c = AlwaysKeep;
        let err = run_episode(&net, &mut [&mut c], &demand, EpisodeOptions::new(10)).unwrap_err();
        assert!(matches!(err, Error::Load { line: 1, .. }), "{err}");
    }

    #[test]
    fn drain_extends_until_empty() {
        let net = single();
        let lane = LaneId::new(0, Approach::N, Movement::T);
        let demand = vec![Vehicle {
            id: 1,
            entry_time_s: 5,
            route: vec![lane],
        }];
        let mut c = FixedTime::new(30);
        let r = run_episode(&net, &mut [&mut c], &demand, EpisodeOptions::new(10)).unwrap();
        assert!(!r.completed);
        let r = run_episode(&net, &mut [&mut c], &demand, EpisodeOptions::new(10).with_drain(500)).unwrap();
        assert!(r.completed);
        assert_eq!(r.duration_s, r.logs[0].records[0].depart_time_s.unwrap() + 1);
    }
}
