//! Webster cycle length, proportional green splits, and the periodic
//! re-planning controller built on them.

use super::{fixed_time_decide, Controller, FixedTime, FlowEstimator};
use crate::error::{Error, Result};
use crate::sim::{Action, IntersectionSim, StepOutcome};
use crate::types::IntersectionConfig;

/// Splits other than the one absorbing the residual are snapped to this
/// grid so that the greens add up to the available green exactly.
const SPLIT_GRID: f64 = 1024.0;

/// Slack on the lane capacity constraint g/C ≥ f_in/u_sat.
const CAPACITY_SLACK: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct WebsterParams {
    /// t_L, seconds of lost time per phase.
    pub loss_time_per_phase_s: f64,
    pub saturation_headway_s: f64,
    pub cycle_bounds_s: (f64, f64),
    pub green_bounds_s: (f64, f64),
    pub measurement_window_s: u64,
}

impl WebsterParams {
    pub const DEFAULT_WINDOW_S: u64 = 300;

    /// Defaults derived from an intersection: t_L = yellow + all-red,
    /// g_min = min green, cycle bounds [20, 180] s widened so that every
    /// phase fits its minimum green plus lost time.
    pub fn for_intersection(config: &IntersectionConfig) -> Self {
        let k = config.phase_count() as f64;
        let t_l = config.transition_s() as f64;
        let g_min = config.min_green_s as f64;
        let c_min = 20f64.max(k * (g_min + t_l));
        WebsterParams {
            loss_time_per_phase_s: t_l,
            saturation_headway_s: config.saturation_headway_s,
            cycle_bounds_s: (c_min, 180f64.max(c_min)),
            green_bounds_s: (g_min, 120f64.max(g_min + 1.0)),
            measurement_window_s: Self::DEFAULT_WINDOW_S,
        }
    }

    pub fn validate(&self, phase_count: usize) -> Result<()> {
        let k = phase_count as f64;
        let (c_min, c_max) = self.cycle_bounds_s;
        let (g_min, g_max) = self.green_bounds_s;
        if !(self.saturation_headway_s > 0.0) || !(self.loss_time_per_phase_s >= 0.0) {
            return Err(Error::config("webster_positive_params", format!("{self:?}")));
        }
        if !(g_min < g_max) || g_min < 0.0 {
            return Err(Error::config("g_min<g_max", format!("[{g_min}, {g_max}]")));
        }
        if !c_max.is_finite() || c_max < c_min {
            return Err(Error::config("C_max_finite", format!("[{c_min}, {c_max}]")));
        }
        if c_min < k * (g_min + self.loss_time_per_phase_s) {
            return Err(Error::config(
                "C_min>=K(g_min+t_L)",
                format!("C_min = {c_min} with K = {phase_count}"),
            ));
        }
        Ok(())
    }
}

/// Desired cycle length K·t_L / (1 - V_c·h/3600), clamped to the cycle
/// bounds; C_max when demand reaches saturation.
pub fn webster_cycle_length(critical_volume_sum_vph: f64, params: &WebsterParams, phase_count: usize) -> f64 {
    let (c_min, c_max) = params.cycle_bounds_s;
    let denominator = 1.0 - critical_volume_sum_vph / (3600.0 / params.saturation_headway_s);
    if denominator <= 0.0 {
        return c_max;
    }
    let raw = phase_count as f64 * params.loss_time_per_phase_s / denominator;
    raw.clamp(c_min, c_max)
}

/// Splits the available green `cycle_s - K·t_L` across phases in
/// proportion to their critical volumes, honouring the green bounds.
///
/// The result sums to the available green exactly. Fails with
/// [`Error::Oversaturated`] when the bounds cannot be met or some phase's
/// green share falls below its volume-to-capacity ratio.
pub fn webster_phase_splits(
    critical_volume_per_phase: &[f64],
    cycle_s: f64,
    params: &WebsterParams,
    phase_count: usize,
) -> Result<Vec<f64>> {
    let greens = split_greens(critical_volume_per_phase, cycle_s, params, phase_count)?;
    let u_sat = 3600.0 / params.saturation_headway_s;
    for (k, (&g, &v)) in greens.iter().zip(critical_volume_per_phase).enumerate() {
        if g / cycle_s + CAPACITY_SLACK < v / u_sat {
            return Err(Error::Oversaturated(format!(
                "phase {k}: green share {:.4} below volume/capacity {:.4}",
                g / cycle_s,
                v / u_sat
            )));
        }
    }
    Ok(greens)
}

fn split_greens(volumes: &[f64], cycle_s: f64, params: &WebsterParams, phase_count: usize) -> Result<Vec<f64>> {
    if volumes.len() != phase_count {
        return Err(Error::Shape {
            expected: phase_count,
            actual: volumes.len(),
        });
    }
    if volumes.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::config("volumes>=0", format!("{volumes:?}")));
    }
    let k = phase_count;
    let (g_min, g_max) = params.green_bounds_s;
    let available = cycle_s - k as f64 * params.loss_time_per_phase_s;
    if available < k as f64 * g_min - 1e-9 || available > k as f64 * g_max + 1e-9 {
        return Err(Error::Oversaturated(format!(
            "available green {available:.3}s cannot give {k} phases greens within [{g_min}, {g_max}]"
        )));
    }

    let mut fixed: Vec<Option<f64>> = vec![None; k];
    let mut greens = vec![0.0; k];
    loop {
        let free: Vec<usize> = (0..k).filter(|&i| fixed[i].is_none()).collect();
        let remaining = available - fixed.iter().flatten().sum::<f64>();
        let weight: f64 = free.iter().map(|&i| volumes[i]).sum();
        for &i in &free {
            greens[i] = if weight > 0.0 {
                remaining * volumes[i] / weight
            } else {
                remaining / free.len() as f64
            };
        }
        let low: Vec<usize> = free.iter().copied().filter(|&i| greens[i] < g_min).collect();
        let high: Vec<usize> = free.iter().copied().filter(|&i| greens[i] > g_max).collect();
        if !low.is_empty() {
            low.iter().for_each(|&i| fixed[i] = Some(g_min));
        } else if !high.is_empty() {
            high.iter().for_each(|&i| fixed[i] = Some(g_max));
        } else {
            break;
        }
        if free.len() == low.len().max(high.len()) {
            // Everything clamped; the feasibility check above guarantees a fit.
            for i in 0..k {
                greens[i] = fixed[i].unwrap_or(greens[i]);
            }
            break;
        }
    }
    for i in 0..k {
        if let Some(g) = fixed[i] {
            greens[i] = g;
        }
    }

    // Residual goes to the largest-volume phase that can take it.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| volumes[b].total_cmp(&volumes[a]).then(a.cmp(&b)));
    let snap = |g: f64| {
        let mut q = (g * SPLIT_GRID).round() / SPLIT_GRID;
        if q < g_min {
            q = (g_min * SPLIT_GRID).ceil() / SPLIT_GRID;
        }
        if q > g_max {
            q = (g_max * SPLIT_GRID).floor() / SPLIT_GRID;
        }
        q
    };
    let snapped: Vec<f64> = greens.iter().map(|&g| snap(g)).collect();
    for &r in &order {
        let others: f64 = (0..k).filter(|&i| i != r).map(|i| snapped[i]).sum();
        let residual = available - others;
        if residual >= g_min - 1e-9 && residual <= g_max + 1e-9 {
            let mut out = snapped.clone();
            out[r] = residual;
            return Ok(out);
        }
    }
    Err(Error::Oversaturated("no phase can absorb the split residual".into()))
}

/// Webster's uniform-delay term f_in / (1 - f_in/u_sat) · λ, where λ is
/// the red interval between consecutive greens of the lane.
pub fn webster_delay(f_in_vph: f64, u_sat_vph: f64, red_interval_s: f64) -> Result<f64> {
    if !(f_in_vph >= 0.0) {
        return Err(Error::config("f_in>=0", format!("f_in = {f_in_vph}")));
    }
    if f_in_vph >= u_sat_vph {
        return Err(Error::Oversaturated(format!(
            "inflow {f_in_vph} vph reaches saturation flow {u_sat_vph} vph"
        )));
    }
    Ok(f_in_vph / (1.0 - f_in_vph / u_sat_vph) * red_interval_s)
}

/// Timing plan controller: estimates lane inflows online and re-plans the
/// Webster cycle and splits every measurement window.
#[derive(Debug, Clone)]
pub struct WebsterController {
    params: WebsterParams,
    phase_lanes: Vec<Vec<usize>>,
    estimator: FlowEstimator,
    last_f_in: Vec<Option<f64>>,
    counts_before: Vec<u32>,
    fallback: FixedTime,
    plan: Option<Vec<f64>>,
    next_replan_s: u64,
    plans_made: usize,
}

impl WebsterController {
    pub fn new(config: &IntersectionConfig, params: WebsterParams) -> Result<Self> {
        params.validate(config.phase_count())?;
        let phase_lanes = (0..config.phase_count())
            .map(|k| {
                config
                    .green_mask(k)
                    .iter()
                    .enumerate()
                    .filter_map(|(j, &g)| g.then_some(j))
                    .collect()
            })
            .collect();
        let fallback = FixedTime::default();
        // First plan once a full fallback cycle has shown every lane under red.
        let warmup = config.phase_count() as u64 * (fallback.phase_duration_s + config.transition_s()) as u64;
        Ok(WebsterController {
            estimator: FlowEstimator::new(config.lane_count()),
            last_f_in: vec![None; config.lane_count()],
            counts_before: vec![0; config.lane_count()],
            phase_lanes,
            fallback,
            plan: None,
            next_replan_s: warmup,
            plans_made: 0,
            params,
        })
    }

    pub fn with_defaults(config: &IntersectionConfig) -> Result<Self> {
        Self::new(config, WebsterParams::for_intersection(config))
    }

    /// Current green durations per phase, once a plan exists.
    pub fn plan(&self) -> Option<&[f64]> {
        self.plan.as_deref()
    }

    pub fn plans_made(&self) -> usize {
        self.plans_made
    }

    /// Builds a plan directly from per-lane inflows in vehicles/hour.
    pub fn plan_from_lane_volumes(&self, lane_vph: &[f64]) -> (f64, Vec<f64>) {
        let k = self.phase_lanes.len();
        // Critical volume: the busiest lane of each phase (first on ties).
        let critical: Vec<f64> = self
            .phase_lanes
            .iter()
            .map(|lanes| lanes.iter().map(|&j| lane_vph[j]).fold(0.0, f64::max))
            .collect();
        let v_c: f64 = critical.iter().sum();
        let cycle = webster_cycle_length(v_c, &self.params, k);
        match webster_phase_splits(&critical, cycle, &self.params, k) {
            Ok(greens) => (cycle, greens),
            Err(_) => {
                let c_max = self.params.cycle_bounds_s.1;
                let greens = split_greens(&critical, c_max, &self.params, k)
                    .unwrap_or_else(|_| vec![(c_max - k as f64 * self.params.loss_time_per_phase_s) / k as f64; k]);
                (c_max, greens)
            }
        }
    }

    fn replan(&mut self) {
        let est = self.estimator.estimate();
        for (last, new) in self.last_f_in.iter_mut().zip(est.f_in_per_lane) {
            if new.is_some() {
                *last = new;
            }
        }
        if self.last_f_in.iter().all(Option::is_some) {
            let vph: Vec<f64> = self
                .last_f_in
                .iter()
                .map(|f| f.unwrap_or(0.0).max(0.0) * 3600.0)
                .collect();
            let (_, greens) = self.plan_from_lane_volumes(&vph);
            self.plan = Some(greens);
            self.plans_made += 1;
        }
        self.estimator.reset();
    }
}

impl Controller for WebsterController {
    fn decide(&mut self, sim: &IntersectionSim) -> Action {
        if sim.clock() >= self.next_replan_s {
            self.replan();
            self.next_replan_s = sim.clock() + self.params.measurement_window_s;
        }
        self.counts_before = sim.vehicle_counts();
        if sim.in_transition() {
            return Action::Keep;
        }
        match &self.plan {
            Some(greens) => {
                let target = greens[sim.phase_index()].round().max(1.0) as u32;
                fixed_time_decide(sim.green_elapsed_s(), target)
            }
            None => self.fallback.decide(sim),
        }
    }

    fn after_step(&mut self, _sim: &IntersectionSim, outcome: &StepOutcome) {
        let backlog: Vec<bool> = outcome.queues.iter().map(|&q| q > 0).collect();
        self.estimator.record(
            &self.counts_before,
            &outcome.observation.vehicle_counts,
            &outcome.green,
            &backlog,
        );
    }
}
