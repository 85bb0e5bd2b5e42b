//! TOML experiment configuration.
//!
//! Every section is optional and falls back to the defaults printed by
//! [`ExperimentConfig::defaults_toml`]. Unknown keys are rejected; errors
//! name the offending key path and the line it sits on.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::control::{FixedTime, Sotl, WebsterParams};
use crate::demand::{self, entry_lanes, ArrivalProcess, DemandSpec, LaneProfile, RateWindow};
use crate::error::{Error, Result};
use crate::types::{
    build_grid_network, build_standard_intersection, Approach, IntersectionConfig, NetworkConfig, Vehicle,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[serde(alias = "fixed_time")]
    Fixedtime,
    /// Webster plan re-estimated online.
    #[serde(alias = "formula")]
    Webster,
    Sotl,
    Lit,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::Fixedtime,
        ControllerKind::Webster,
        ControllerKind::Sotl,
        ControllerKind::Lit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Fixedtime => "fixedtime",
            ControllerKind::Webster => "webster",
            ControllerKind::Sotl => "sotl",
            ControllerKind::Lit => "lit",
        }
    }

    pub fn is_learning(self) -> bool {
        self == ControllerKind::Lit
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixedtime" | "fixed_time" => Ok(ControllerKind::Fixedtime),
            "webster" | "formula" => Ok(ControllerKind::Webster),
            "sotl" => Ok(ControllerKind::Sotl),
            "lit" => Ok(ControllerKind::Lit),
            other => Err(Error::config(
                "known_controller",
                format!("`{other}`; expected one of fixedtime, webster, sotl, lit"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// 2 or 4.
    pub phases: usize,
    pub rows: usize,
    pub cols: usize,
    pub road_length_m: f64,
    pub free_flow_speed_mps: f64,
    pub saturation_headway_s: f64,
    pub yellow_s: u32,
    pub all_red_s: u32,
    pub min_green_s: u32,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            phases: 2,
            rows: 1,
            cols: 1,
            road_length_m: 300.0,
            free_flow_speed_mps: 10.0,
            saturation_headway_s: 2.0,
            yellow_s: 3,
            all_red_s: 2,
            min_green_s: 5,
        }
    }
}

impl NetworkSection {
    pub fn intersection(&self) -> Result<IntersectionConfig> {
        let mut c = build_standard_intersection(self.phases)?;
        c.road_length_m = self.road_length_m;
        c.free_flow_speed_mps = self.free_flow_speed_mps;
        c.saturation_headway_s = self.saturation_headway_s;
        c.yellow_s = self.yellow_s;
        c.all_red_s = self.all_red_s;
        c.min_green_s = self.min_green_s;
        c.validate()?;
        Ok(c)
    }

    pub fn build(&self) -> Result<NetworkConfig> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("grid_nonempty", format!("{}x{}", self.rows, self.cols)));
        }
        let base = self.intersection()?;
        if self.rows == 1 && self.cols == 1 {
            Ok(NetworkConfig::single(base))
        } else {
            build_grid_network(self.rows, self.cols, &base)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakSection {
    pub rate_vph: f64,
    /// `[start_s, end_s)` pairs.
    pub windows: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandSection {
    pub process: ArrivalProcess,
    /// Base rate for every entry lane.
    pub rate_vph: f64,
    /// Per-approach base rates (`W`, `E`, `N`, `S`) overriding `rate_vph`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub approach_rates: BTreeMap<String, f64>,
    /// Peak windows scale each lane's base rate by `peak.rate_vph / rate_vph`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak: Option<PeakSection>,
    /// Demand CSV to replay instead of generating.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for DemandSection {
    fn default() -> Self {
        DemandSection {
            process: ArrivalProcess::DeterministicUniform,
            rate_vph: 300.0,
            approach_rates: BTreeMap::new(),
            peak: None,
            file: None,
        }
    }
}

impl DemandSection {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_vph >= 0.0) || !self.rate_vph.is_finite() {
            return Err(Error::config("demand.rate_vph>=0", format!("{}", self.rate_vph)));
        }
        for (k, &v) in &self.approach_rates {
            k.parse::<Approach>()
                .map_err(|e| Error::config("demand.approach_rates_key", e))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config("demand.approach_rates>=0", format!("{k} = {v}")));
            }
        }
        if let Some(p) = &self.peak {
            if !(p.rate_vph >= 0.0) || !p.rate_vph.is_finite() {
                return Err(Error::config("demand.peak.rate_vph>=0", format!("{}", p.rate_vph)));
            }
            if self.rate_vph == 0.0 && p.rate_vph > 0.0 {
                return Err(Error::config(
                    "demand.peak_needs_base_rate",
                    "rate_vph = 0 cannot be scaled",
                ));
            }
        }
        Ok(())
    }

    fn lane_rate(&self, approach: Approach) -> f64 {
        self.approach_rates
            .iter()
            .find(|(k, _)| k.parse::<Approach>().ok() == Some(approach))
            .map(|(_, &v)| v)
            .unwrap_or(self.rate_vph)
    }

    /// The generator spec for one seed.
    pub fn spec(&self, network: &NetworkConfig, horizon_s: u64, seed: u64) -> Result<DemandSpec> {
        self.validate()?;
        let peaks: Vec<(u64, u64)> = self
            .peak
            .as_ref()
            .map(|p| p.windows.iter().map(|w| (w[0], w[1])).collect())
            .unwrap_or_default();
        let factor = match &self.peak {
            Some(p) if self.rate_vph > 0.0 => p.rate_vph / self.rate_vph,
            _ => 1.0,
        };
        let profiles = entry_lanes(network)
            .into_iter()
            .map(|lane| {
                let base = self.lane_rate(lane.approach);
                let windows: Vec<RateWindow> = demand::peaked_windows(base, base * factor, &peaks, horizon_s)?;
                Ok(LaneProfile { lane, windows })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DemandSpec {
            profiles,
            horizon_s,
            process: self.process,
            seed,
        })
    }

    /// Vehicles for one seed: the replay file if set, else generated.
    pub fn build(&self, network: &NetworkConfig, horizon_s: u64, seed: u64, base_dir: &Path) -> Result<Vec<Vehicle>> {
        match &self.file {
            Some(f) => demand::load_demand_file(&base_dir.join(f), network),
            None => demand::generate(&self.spec(network, horizon_s, seed)?, network),
        }
    }

    /// Whether two seeds can give different vehicles.
    pub fn is_stochastic(&self) -> bool {
        self.file.is_none() && self.process == ArrivalProcess::Poisson
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub controllers: Vec<ControllerKind>,
    pub seeds: Vec<u64>,
    pub horizon_s: u64,
    /// Extra seconds after the horizon for evaluation episodes to drain.
    pub drain_s: u64,
    /// Training episodes for learning controllers.
    pub episodes: usize,
    pub train_drain_s: u64,
    /// Greedy evaluation episodes after training (every controller).
    pub eval_episodes: usize,
    /// Draw new stochastic training demand each episode.
    pub resample_training_demand: bool,
    /// Run the online-learning / sampling-guidance / forecast ablations.
    pub ablation: bool,
    pub convergence_window: usize,
    pub convergence_tolerance: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            controllers: ControllerKind::ALL.to_vec(),
            seeds: vec![1],
            horizon_s: 3600,
            drain_s: 3600,
            episodes: 50,
            train_drain_s: crate::agent::TrainingSchedule::DEFAULT_TRAIN_DRAIN_S,
            eval_episodes: 1,
            resample_training_demand: true,
            ablation: false,
            convergence_window: crate::metrics::ConvergenceReport::DEFAULT_WINDOW,
            convergence_tolerance: crate::metrics::ConvergenceReport::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedTimeSection {
    pub phase_duration_s: u32,
}

impl Default for FixedTimeSection {
    fn default() -> Self {
        FixedTimeSection {
            phase_duration_s: FixedTime::DEFAULT_PHASE_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SotlSection {
    pub theta_red: u32,
    pub theta_green: u32,
}

impl Default for SotlSection {
    fn default() -> Self {
        let s = Sotl::default();
        SotlSection {
            theta_red: s.theta_red,
            theta_green: s.theta_green,
        }
    }
}

/// Unset fields are derived from the intersection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebsterSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_time_per_phase_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle_min_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle_max_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub green_min_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub green_max_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replan_interval_s: Option<u64>,
}

impl WebsterSection {
    pub fn params(&self, intersection: &IntersectionConfig) -> WebsterParams {
        let mut p = WebsterParams::for_intersection(intersection);
        if let Some(v) = self.loss_time_per_phase_s {
            p.loss_time_per_phase_s = v;
        }
        if let Some(v) = self.cycle_min_s {
            p.cycle_bounds_s.0 = v;
        }
        if let Some(v) = self.cycle_max_s {
            p.cycle_bounds_s.1 = v;
        }
        if let Some(v) = self.green_min_s {
            p.green_bounds_s.0 = v;
        }
        if let Some(v) = self.green_max_s {
            p.green_bounds_s.1 = v;
        }
        if let Some(v) = self.replan_interval_s {
            p.measurement_window_s = v;
        }
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    /// Training demand, and evaluation demand unless overridden.
    pub demand: DemandSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation_demand: Option<DemandSection>,
    pub experiment: RunSection,
    pub fixedtime: FixedTimeSection,
    pub sotl: SotlSection,
    pub webster: WebsterSection,
    pub agent: AgentConfig,
}

impl ExperimentConfig {
    /// Parses TOML text. Unknown keys and type errors report the key path
    /// and 1-based line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| toml_error(text, String::new(), &e))?;
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            toml_error(text, path, e.inner())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Defaults with the intersection-derived Webster bounds filled in.
    pub fn defaults_toml() -> String {
        ExperimentConfig::default()
            .with_resolved_defaults()
            .expect("defaults are valid")
            .to_toml()
    }

    /// Copy with every derived default written out explicitly.
    pub fn with_resolved_defaults(&self) -> Result<Self> {
        let ic = self.network.intersection()?;
        let p = self.webster.params(&ic);
        let mut out = self.clone();
        out.webster = WebsterSection {
            loss_time_per_phase_s: Some(p.loss_time_per_phase_s),
            cycle_min_s: Some(p.cycle_bounds_s.0),
            cycle_max_s: Some(p.cycle_bounds_s.1),
            green_min_s: Some(p.green_bounds_s.0),
            green_max_s: Some(p.green_bounds_s.1),
            replan_interval_s: Some(p.measurement_window_s),
        };
        Ok(out)
    }

    /// Cross-section invariants that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let network = self.network.build()?;
        self.demand.validate()?;
        if let Some(d) = &self.evaluation_demand {
            d.validate()?;
        }
        let run = &self.experiment;
        if run.controllers.is_empty() {
            return Err(Error::config("experiment.controllers_nonempty", "no controllers"));
        }
        if run.seeds.is_empty() {
            return Err(Error::config("experiment.seeds_nonempty", "no seeds"));
        }
        if run.horizon_s == 0 {
            return Err(Error::config("experiment.horizon_s>0", "0"));
        }
        if run.eval_episodes == 0 {
            return Err(Error::config("experiment.eval_episodes>0", "0"));
        }
        if run.convergence_window < 2 {
            return Err(Error::config(
                "experiment.convergence_window>=2",
                run.convergence_window.to_string(),
            ));
        }
        if !(run.convergence_tolerance >= 0.0) {
            return Err(Error::config(
                "experiment.convergence_tolerance>=0",
                run.convergence_tolerance.to_string(),
            ));
        }
        if self.fixedtime.phase_duration_s == 0 {
            return Err(Error::config("fixedtime.phase_duration_s>0", "0"));
        }
        let intersection = &network.intersections[0];
        self.webster.params(intersection).validate(intersection.phase_count())?;
        self.agent.validate()?;
        Ok(())
    }

    pub fn evaluation_demand(&self) -> &DemandSection {
        self.evaluation_demand.as_ref().unwrap_or(&self.demand)
    }
}

fn toml_error(text: &str, key: String, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        line,
        key,
        message: e.message().to_string(),
    }
}
