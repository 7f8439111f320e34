//! Experiment configuration, input files and environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ambopt_core::geo::{serde_secs, Time};
use ambopt_core::heuristics::PolicyKind;
use ambopt_core::model::{Call, Instance};
use ambopt_core::reassign::{voronoi_assign, Bbr, BaseRule, Demand, DEFAULT_ALPHA, DEFAULT_DELTA};
use ambopt_core::scenario::{CallModel, GridSpec, RolloutConfig, ServiceProfile};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const HOUR: Time = 3_600_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    Hbr,
    Cbr,
    Bbr,
}

impl std::str::FromStr for RuleName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hbr" => Ok(RuleName::Hbr),
            "cbr" => Ok(RuleName::Cbr),
            "bbr" => Ok(RuleName::Bbr),
            _ => Err(format!("unknown base rule '{s}' (expected hbr, cbr or bbr)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbrSection {
    #[serde(rename = "delta_s", with = "serde_secs", default = "default_delta")]
    pub delta: Time,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_delta() -> Time {
    DEFAULT_DELTA
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for BbrSection {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, alpha: DEFAULT_ALPHA }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(rename = "horizon_s", with = "serde_secs", default = "default_horizon")]
    pub horizon: Time,
    #[serde(default)]
    pub all_hospitals: bool,
}

fn default_scenarios() -> usize {
    25
}

fn default_horizon() -> Time {
    2 * HOUR
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self { scenarios: default_scenarios(), horizon: default_horizon(), all_hospitals: false }
    }
}

/// One experiment: every combination of policy, base rule and fleet size,
/// each run over the same replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: PathBuf,
    /// Demand file: replications sample their calls from it, rollout samples
    /// its scenarios from it and BBR sizes its demand with it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<PathBuf>,
    /// Fixed call list used by every replication instead of sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calls: Option<PathBuf>,
    #[serde(rename = "start_s", with = "serde_secs", default)]
    pub start: Time,
    #[serde(rename = "duration_s", with = "serde_secs", default = "default_duration")]
    pub duration: Time,
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_rules")]
    pub base_rules: Vec<RuleName>,
    #[serde(default)]
    pub bbr: BbrSection,
    /// Empty means the fleet listed in the instance.
    #[serde(default)]
    pub fleet_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Write the trip log of the first replication of every run.
    #[serde(default)]
    pub record_trips: bool,
}

fn default_duration() -> Time {
    24 * HOUR
}

fn default_rules() -> Vec<RuleName> {
    vec![RuleName::Cbr]
}

fn default_replications() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Read and parse a JSON file, reporting the line of any syntax or schema
/// error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Environment variables that override configuration values.
pub const ENV_SEED: &str = "AMBOPT_SEED";
pub const ENV_REPLICATIONS: &str = "AMBOPT_REPLICATIONS";
pub const ENV_OUTPUT_DIR: &str = "AMBOPT_OUTPUT_DIR";

fn env_number<T: std::str::FromStr>(name: &str) -> CliResult<Option<T>> {
    match std::env::var(name) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::config(format!("{name}={v:?} is not a valid number"))),
        Err(_) => Ok(None),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg: Self = read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [Some(&mut cfg.instance), cfg.demand.as_mut(), cfg.calls.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> CliResult<()> {
        if let Some(s) = env_number(ENV_SEED)? {
            self.seed = s;
        }
        if let Some(r) = env_number(ENV_REPLICATIONS)? {
            self.replications = r;
        }
        if let Ok(d) = std::env::var(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(d);
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.policies.is_empty() {
            return Err(CliError::config("at least one policy is required"));
        }
        if self.base_rules.is_empty() {
            return Err(CliError::config("at least one base rule is required"));
        }
        if self.replications == 0 {
            return Err(CliError::config("replications must be at least 1"));
        }
        if self.duration <= 0 {
            return Err(CliError::config("duration_s must be positive"));
        }
        if self.fleet_sizes.contains(&0) {
            return Err(CliError::config("fleet sizes must be positive"));
        }
        if self.rollout.scenarios == 0 || self.rollout.horizon <= 0 {
            return Err(CliError::config("rollout needs at least one scenario and a positive horizon"));
        }
        Ok(())
    }
}

/// Sparse intensity entry: expected calls of one type in one cell during
/// one occurrence of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntry {
    pub cell: usize,
    pub window: usize,
    #[serde(rename = "type")]
    pub call_type: usize,
    pub rate: f64,
}

/// On-disk demand model. Rates are listed sparsely; missing entries are
/// zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandFile {
    pub grid: GridSpec,
    #[serde(rename = "window_len_s", with = "serde_secs")]
    pub window_len: Time,
    pub windows: usize,
    pub types: usize,
    pub entries: Vec<RateEntry>,
    pub profiles: Vec<ServiceProfile>,
}

impl DemandFile {
    pub fn from_model(m: &CallModel) -> Self {
        let t = &m.table;
        let mut entries = Vec::new();
        for cell in 0..t.cells {
            for window in 0..t.windows {
                for call_type in 0..t.types {
                    let rate = t.rate(cell, window, call_type);
                    if rate != 0.0 {
                        entries.push(RateEntry { cell, window, call_type, rate });
                    }
                }
            }
        }
        Self {
            grid: m.grid.clone(),
            window_len: t.window_len,
            windows: t.windows,
            types: t.types,
            entries,
            profiles: m.profiles.clone(),
        }
    }

    pub fn into_model(self) -> CliResult<CallModel> {
        let mut table = ambopt_core::reassign::IntensityTable::zeros(
            self.grid.cells(),
            self.windows,
            self.types,
            self.window_len,
        );
        for (i, e) in self.entries.iter().enumerate() {
            if e.cell >= table.cells || e.window >= table.windows || e.call_type >= table.types {
                return Err(CliError::config(format!("entry {i} is outside the grid, windows or types")));
            }
            if !(e.rate.is_finite() && e.rate >= 0.0) {
                return Err(CliError::config(format!("entry {i}: rate must be non-negative")));
            }
            *table.rate_mut(e.cell, e.window, e.call_type) = e.rate;
        }
        let model = CallModel { grid: self.grid, table, profiles: self.profiles };
        model.validate()?;
        Ok(model)
    }
}

pub fn load_demand(path: &Path) -> CliResult<CallModel> {
    let file: DemandFile = read_json(path)?;
    file.into_model().map_err(|e| e.in_file(path))
}

/// Everything a run needs, loaded once.
pub struct Inputs {
    pub instance: Instance,
    pub demand: Option<Arc<CallModel>>,
    pub calls: Option<Vec<Call>>,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> CliResult<Self> {
        let instance: Instance = read_json(&cfg.instance)?;
        instance.validate().map_err(|e| CliError::from(e).in_file(&cfg.instance))?;
        let demand = cfg.demand.as_deref().map(load_demand).transpose()?.map(Arc::new);
        if let Some(d) = &demand {
            if d.table.types != instance.call_types.len() {
                return Err(CliError::config("demand and instance disagree on the number of call types"));
            }
        }
        let calls: Option<Vec<Call>> = cfg.calls.as_deref().map(read_json).transpose()?;
        if let Some(cs) = &calls {
            for c in cs {
                instance.check_call(c).map_err(|e| CliError::from(e).in_file(cfg.calls.as_deref().unwrap()))?;
            }
        }
        Ok(Self { instance, demand, calls })
    }

    pub fn rule(&self, name: RuleName, bbr: &BbrSection) -> CliResult<BaseRule> {
        Ok(match name {
            RuleName::Hbr => BaseRule::Home,
            RuleName::Cbr => BaseRule::Closest,
            RuleName::Bbr => {
                let model = self
                    .demand
                    .as_ref()
                    .ok_or_else(|| CliError::config("the bbr base rule needs a demand file"))?;
                let centroids: Vec<_> = (0..model.grid.cells()).map(|c| model.grid.centroid(c)).collect();
                let sites: Vec<_> = self.instance.bases.iter().map(|b| b.loc).collect();
                let group = voronoi_assign(&centroids, &sites, &self.instance.geo);
                let table = Arc::new(model.table.aggregate(&group, sites.len()));
                BaseRule::Best(Bbr::new(bbr.delta, Demand::Quantile { table, alpha: bbr.alpha })?)
            }
        })
    }

    pub fn rollout_config(&self, cfg: &ExperimentConfig, base_policy: PolicyKind, seed: u64) -> RolloutConfig {
        RolloutConfig {
            scenarios: cfg.rollout.scenarios,
            horizon: cfg.rollout.horizon,
            base_policy,
            all_hospitals: cfg.rollout.all_hospitals,
            seed,
        }
    }
}

/// Parse a `x_min,y_min,x_max,y_max,nx,ny` grid description.
pub fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 6 {
        return Err("expected x_min,y_min,x_max,y_max,nx,ny".into());
    }
    let f = |i: usize| parts[i].parse::<f64>().map_err(|e| format!("{}: {e}", parts[i]));
    let n = |i: usize| parts[i].parse::<usize>().map_err(|e| format!("{}: {e}", parts[i]));
    let g = GridSpec { x_min: f(0)?, y_min: f(1)?, x_max: f(2)?, y_max: f(3)?, nx: n(4)?, ny: n(5)? };
    g.validate().map_err(|e| e.to_string())?;
    Ok(g)
}
