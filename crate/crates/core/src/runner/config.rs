use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::commsim::{TopologyKind, DEFAULT_DELAY_S};
use crate::coordinator::{ConvergenceCriteria, CoordinatorConfig};
use crate::linear::ObjectiveKind;
use crate::opf::OpfSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Twin only, DERs at their default output.
    Powerflow,
    CentralLinear,
    CentralLinearDt,
    DistributedLinear,
    DistributedLinearDt,
}

impl Mode {
    pub fn projects(self) -> bool {
        matches!(self, Mode::CentralLinearDt | Mode::DistributedLinearDt)
    }

    pub fn is_distributed(self) -> bool {
        matches!(self, Mode::DistributedLinear | Mode::DistributedLinearDt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Powerflow => "powerflow",
            Mode::CentralLinear => "central-linear",
            Mode::CentralLinearDt => "central-linear-dt",
            Mode::DistributedLinear => "distributed-linear",
            Mode::DistributedLinearDt => "distributed-linear-dt",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Mode::Powerflow,
            Mode::CentralLinear,
            Mode::CentralLinearDt,
            Mode::DistributedLinear,
            Mode::DistributedLinearDt,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommConfig {
    pub kind: TopologyKind,
    pub bandwidth_bps: f64,
    pub delay_s: f64,
    /// Topology JSON to load instead of building one.
    pub topology: Option<PathBuf>,
}

impl Default for CommConfig {
    fn default() -> Self {
        CommConfig {
            kind: TopologyKind::Ideal,
            bandwidth_bps: 1e6,
            delay_s: DEFAULT_DELAY_S,
            topology: None,
        }
    }
}

impl CommConfig {
    pub fn label(&self) -> String {
        match &self.topology {
            Some(p) => p.display().to_string(),
            None => format!("{}@{}bps", self.kind, self.bandwidth_bps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeseriesConfig {
    pub steps: usize,
    pub load_min: f64,
    pub load_max: f64,
    pub step_minutes: f64,
}

impl Default for TimeseriesConfig {
    fn default() -> Self {
        TimeseriesConfig {
            steps: 60,
            load_min: 0.78,
            load_max: 0.98,
            step_minutes: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressCell {
    pub kind: TopologyKind,
    pub bandwidth_bps: f64,
}

fn default_stress() -> Vec<StressCell> {
    let mut cells = Vec::new();
    for kind in [TopologyKind::Ideal, TopologyKind::Ring] {
        for bw in [3000.0, 2000.0, 1000.0] {
            cells.push(StressCell { kind, bandwidth_bps: bw });
        }
    }
    cells.push(StressCell {
        kind: TopologyKind::Blackout,
        bandwidth_bps: 1000.0,
    });
    cells
}

/// Everything a run needs. Missing fields take their defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Feeder JSON; the bundled 123-bus feeder when absent.
    pub feeder: Option<PathBuf>,
    /// Partition JSON; the bundled four-area split for the bundled feeder,
    /// a single area otherwise.
    pub partition: Option<PathBuf>,
    pub objective: ObjectiveKind,
    /// DER fleet `i`, `ii`, `iii`, or `none` to keep the feeder's own DERs.
    pub scenario: String,
    pub mode: Mode,
    /// Substation voltage magnitude, pu.
    pub slack_v: Option<f64>,
    pub comm: CommConfig,
    pub criteria: ConvergenceCriteria,
    pub cadence_s: f64,
    pub dispatch_latency_s: f64,
    pub staleness_s: f64,
    pub max_sim_time_s: f64,
    pub parallel: bool,
    pub opf: OpfSettings,
    pub seed: u64,
    pub timeseries: TimeseriesConfig,
    pub stress: Vec<StressCell>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            feeder: None,
            partition: None,
            objective: ObjectiveKind::LossMin,
            scenario: "i".into(),
            mode: Mode::DistributedLinearDt,
            slack_v: None,
            comm: CommConfig::default(),
            criteria: ConvergenceCriteria::default(),
            cadence_s: 2.0,
            dispatch_latency_s: 0.2,
            staleness_s: 4.0,
            max_sim_time_s: 3600.0,
            parallel: true,
            opf: OpfSettings::default(),
            seed: 0,
            timeseries: TimeseriesConfig::default(),
            stress: default_stress(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<RunConfig, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        RunConfig::from_json_str(&text)
    }

    /// Applies the fields present in a JSON config document on top of `self`.
    pub fn overlay(&self, text: &str) -> Result<RunConfig, RunError> {
        let bad = |e: serde_json::Error| RunError::Config(e.to_string());
        let mut base = serde_json::to_value(self).map_err(bad)?;
        let top: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        merge(&mut base, top);
        serde_json::from_value(base).map_err(bad)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        self.criteria
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if !(self.cadence_s > 0.0) || !(self.dispatch_latency_s >= 0.0) || !(self.staleness_s > 0.0) {
            return bad("cadence, latency and staleness must be positive".into());
        }
        if !(self.max_sim_time_s > 0.0) {
            return bad("max_sim_time_s must be positive".into());
        }
        if let Some(v) = self.slack_v {
            if !(v > 0.5 && v < 1.5) {
                return bad(format!("slack voltage {v} pu is implausible"));
            }
        }
        let ts = &self.timeseries;
        if ts.steps == 0 {
            return bad("timeseries needs at least one step".into());
        }
        if !(0.0 < ts.load_min && ts.load_min <= ts.load_max) {
            return bad(format!("bad load range [{}, {}]", ts.load_min, ts.load_max));
        }
        if self.comm.topology.is_none() && !(self.comm.bandwidth_bps > 0.0) {
            return bad(format!("bandwidth {} must be positive", self.comm.bandwidth_bps));
        }
        Ok(())
    }

    pub fn coordinator(&self, kind: ObjectiveKind) -> CoordinatorConfig {
        CoordinatorConfig {
            kind,
            project: self.mode.projects(),
            criteria: self.criteria,
            opf: self.opf.clone(),
            cadence_s: self.cadence_s,
            dispatch_latency_s: self.dispatch_latency_s,
            staleness_s: self.staleness_s,
            max_sim_time_s: self.max_sim_time_s,
            parallel: self.parallel,
        }
    }
}

fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
