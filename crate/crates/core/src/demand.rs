//! Synthetic demand and the demand CSV format.
//!
//! Rates are vehicles per hour per lane over piecewise-constant windows.
//! The deterministic process releases the k-th vehicle of a window at
//! `start + floor(k · 3600 / rate)`, so a window of length d holds
//! `ceil(rate · d / 3600)` vehicles.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Approach, LaneId, Movement, NetworkConfig, Vehicle};

pub const DEMAND_HEADER: &str = "vehicle_id,entry_time_s,intersection_index,approach,movement";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    #[serde(alias = "deterministic")]
    DeterministicUniform,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateWindow {
    pub start_s: u64,
    pub end_s: u64,
    pub rate_vph: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneProfile {
    pub lane: LaneId,
    /// Windows tiling `[0, horizon_s)` in order.
    pub windows: Vec<RateWindow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    pub profiles: Vec<LaneProfile>,
    pub horizon_s: u64,
    pub process: ArrivalProcess,
    pub seed: u64,
}

impl DemandSpec {
    /// The same constant rate on every lane in `lanes`.
    pub fn uniform(rate_vph: f64, lanes: &[LaneId], horizon_s: u64, process: ArrivalProcess, seed: u64) -> Self {
        DemandSpec {
            profiles: lanes
                .iter()
                .map(|&lane| LaneProfile {
                    lane,
                    windows: vec![RateWindow {
                        start_s: 0,
                        end_s: horizon_s,
                        rate_vph,
                    }],
                })
                .collect(),
            horizon_s,
            process,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.profiles {
            let mut at = 0;
            for w in &p.windows {
                if !(w.rate_vph >= 0.0 && w.rate_vph.is_finite()) {
                    return Err(Error::config(
                        "rate_vph>=0",
                        format!("lane {}: rate {}", p.lane, w.rate_vph),
                    ));
                }
                if w.start_s != at || w.end_s <= w.start_s {
                    return Err(Error::config(
                        "windows_tile_horizon",
                        format!("lane {}: window [{}, {}) after {at}", p.lane, w.start_s, w.end_s),
                    ));
                }
                at = w.end_s;
            }
            if at != self.horizon_s {
                return Err(Error::config(
                    "windows_tile_horizon",
                    format!("lane {}: windows end at {at}, horizon is {}", p.lane, self.horizon_s),
                ));
            }
        }
        Ok(())
    }
}

/// Lanes through which traffic enters the network from outside: approaches
/// that no link feeds.
pub fn entry_lanes(network: &NetworkConfig) -> Vec<LaneId> {
    network
        .intersections
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            c.lanes
                .iter()
                .filter(move |lane| !network.links.iter().any(|l| l.to == i && l.entry == lane.approach))
                .copied()
        })
        .collect()
}

/// Deterministic arrival seconds in `[start, end)` at `rate_vph`.
pub fn deterministic_arrivals(rate_vph: f64, start_s: u64, end_s: u64) -> Vec<u64> {
    if rate_vph <= 0.0 {
        return Vec::new();
    }
    let headway = 3600.0 / rate_vph;
    let span = (end_s - start_s) as f64;
    (0u64..)
        .map(|k| k as f64 * headway)
        .take_while(|&offset| offset < span)
        .map(|offset| start_s + offset.floor() as u64)
        .collect()
}

fn poisson_arrivals(rate_vph: f64, start_s: u64, end_s: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    if rate_vph <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate_vph / 3600.0).expect("positive rate");
    let mut out = Vec::new();
    let mut t = start_s as f64;
    loop {
        t += exp.sample(rng);
        if t >= end_s as f64 {
            return out;
        }
        out.push(t.floor() as u64);
    }
}

/// Vehicles for `spec`, routed straight through `network`, sorted by entry
/// time (ties by profile order) and numbered from 0.
pub fn generate(spec: &DemandSpec, network: &NetworkConfig) -> Result<Vec<Vehicle>> {
    spec.validate()?;
    for p in &spec.profiles {
        network
            .validate_route(&[p.lane])
            .map_err(|m| Error::config("demand_lane_exists", m))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut arrivals: Vec<(u64, usize)> = Vec::new();
    for (idx, p) in spec.profiles.iter().enumerate() {
        for w in merge_windows(&p.windows) {
            let times = match spec.process {
                ArrivalProcess::DeterministicUniform => deterministic_arrivals(w.rate_vph, w.start_s, w.end_s),
                ArrivalProcess::Poisson => poisson_arrivals(w.rate_vph, w.start_s, w.end_s, &mut rng),
            };
            arrivals.extend(times.into_iter().map(|t| (t, idx)));
        }
    }
    arrivals.sort();
    Ok(arrivals
        .into_iter()
        .enumerate()
        .map(|(id, (t, idx))| Vehicle {
            id: id as u64,
            entry_time_s: t,
            route: network.straight_route(spec.profiles[idx].lane),
        })
        .collect())
}

/// Adjacent windows with equal rates behave as one window.
fn merge_windows(windows: &[RateWindow]) -> Vec<RateWindow> {
    let mut out: Vec<RateWindow> = Vec::with_capacity(windows.len());
    for w in windows {
        match out.last_mut() {
            Some(last) if last.rate_vph == w.rate_vph && last.end_s == w.start_s => last.end_s = w.end_s,
            _ => out.push(*w),
        }
    }
    out
}

pub fn generate_uniform(
    rate_vph: f64,
    lanes: &[LaneId],
    horizon_s: u64,
    process: ArrivalProcess,
    seed: u64,
    network: &NetworkConfig,
) -> Result<Vec<Vehicle>> {
    if rate_vph < 0.0 {
        return Err(Error::config("rate_vph>=0", format!("{rate_vph}")));
    }
    generate(&DemandSpec::uniform(rate_vph, lanes, horizon_s, process, seed), network)
}

/// Piecewise rates: `peak_vph` inside each of `peak_windows`, `base_vph` elsewhere.
#[allow(clippy::too_many_arguments)]
pub fn generate_peaked(
    base_vph: f64,
    peak_vph: f64,
    peak_windows: &[(u64, u64)],
    lanes: &[LaneId],
    horizon_s: u64,
    process: ArrivalProcess,
    seed: u64,
    network: &NetworkConfig,
) -> Result<Vec<Vehicle>> {
    let windows = peaked_windows(base_vph, peak_vph, peak_windows, horizon_s)?;
    let spec = DemandSpec {
        profiles: lanes
            .iter()
            .map(|&lane| LaneProfile {
                lane,
                windows: windows.clone(),
            })
            .collect(),
        horizon_s,
        process,
        seed,
    };
    generate(&spec, network)
}

/// Tiles `[0, horizon)` with base and peak windows.
pub fn peaked_windows(base_vph: f64, peak_vph: f64, peaks: &[(u64, u64)], horizon_s: u64) -> Result<Vec<RateWindow>> {
    let mut sorted = peaks.to_vec();
    sorted.sort();
    let mut out = Vec::new();
    let mut at = 0;
    for &(a, b) in &sorted {
        if b <= a || b > horizon_s {
            return Err(Error::config(
                "peak_window_within_horizon",
                format!("[{a}, {b}) with horizon {horizon_s}"),
            ));
        }
        if a < at {
            return Err(Error::config(
                "peak_windows_disjoint",
                format!("[{a}, {b}) overlaps an earlier window"),
            ));
        }
        if a > at {
            out.push(RateWindow {
                start_s: at,
                end_s: a,
                rate_vph: base_vph,
            });
        }
        out.push(RateWindow {
            start_s: a,
            end_s: b,
            rate_vph: peak_vph,
        });
        at = b;
    }
    if at < horizon_s {
        out.push(RateWindow {
            start_s: at,
            end_s: horizon_s,
            rate_vph: base_vph,
        });
    }
    Ok(out)
}

/// Writes the demand CSV. Route lanes after the first are appended as
/// `intersection:CODE` fields.
pub fn write_demand<W: Write>(demand: &[Vehicle], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DEMAND_HEADER}")?;
    for v in demand {
        let first = &v.route[0];
        write!(
            out,
            "{},{},{},{},{}",
            v.id, v.entry_time_s, first.intersection, first.approach, first.movement
        )?;
        for lane in &v.route[1..] {
            write!(out, ",{lane}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_demand_file(path: &Path, demand: &[Vehicle]) -> Result<()> {
    let mut buf = Vec::new();
    write_demand(demand, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses demand CSV text, validates every route against `network` and
/// returns vehicles sorted by entry time. Errors carry 1-based line numbers.
pub fn parse_demand(text: &str, network: &NetworkConfig) -> Result<Vec<Vehicle>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DEMAND_HEADER || h.trim().starts_with(DEMAND_HEADER) => {}
        Some((_, h)) => {
            return Err(Error::Load {
                line: 1,
                message: format!("expected header `{DEMAND_HEADER}`, found `{h}`"),
            })
        }
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| Error::Load { line, message };
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() < 5 {
            return Err(err(format!("expected at least 5 fields, found {}", fields.len())));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| err(format!("bad vehicle_id `{}`", fields[0])))?;
        let entry: u64 = fields[1]
            .parse()
            .map_err(|_| err(format!("bad entry_time_s `{}`", fields[1])))?;
        let inter: usize = fields[2]
            .parse()
            .map_err(|_| err(format!("bad intersection_index `{}`", fields[2])))?;
        let approach: Approach = fields[3].parse().map_err(|e: String| err(e))?;
        let movement: Movement = fields[4].parse().map_err(|e: String| err(e))?;
        let mut route = vec![LaneId::new(inter, approach, movement)];
        for f in &fields[5..] {
            route.push(f.parse().map_err(|e: String| err(format!("route lane: {e}")))?);
        }
        network
            .validate_route(&route)
            .map_err(|m| err(format!("vehicle {id}: {m}")))?;
        out.push(Vehicle {
            id,
            entry_time_s: entry,
            route,
        });
    }
    out.sort_by_key(|v| v.entry_time_s);
    Ok(out)
}

pub fn load_demand_file(path: &Path, network: &NetworkConfig) -> Result<Vec<Vehicle>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_demand(&text, network)
}
