use std::str::FromStr;

use super::{Der, DerMode, FeederError, FeederModel};
use crate::phase::PhaseSet;

/// Bus ids hosting DERs in the ten-unit fleet.
pub const TEN_DER_SITES: [&str; 10] = ["15", "23", "30", "37", "49", "50", "51", "67", "78", "107"];

/// Named DER fleets for the bundled 123-bus feeder. Each also fixes the
/// substation voltage used with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerScenario {
    /// 10 units, 60 kVA per phase, 50 kW fixed output, reactive dispatch.
    I,
    /// 30 units, 48 kVA per phase, 20 kW fixed output, reactive dispatch.
    II,
    /// 30 units, 60 kVA per phase, active dispatch.
    III,
}

impl DerScenario {
    pub fn name(self) -> &'static str {
        match self {
            DerScenario::I => "i",
            DerScenario::II => "ii",
            DerScenario::III => "iii",
        }
    }

    pub fn source_voltage(self) -> f64 {
        match self {
            DerScenario::I | DerScenario::II => 1.04,
            DerScenario::III => 1.05,
        }
    }

    fn rating_kva(self) -> f64 {
        match self {
            DerScenario::I | DerScenario::III => 60.0,
            DerScenario::II => 48.0,
        }
    }

    fn p_fixed_kw(self) -> f64 {
        match self {
            DerScenario::I => 50.0,
            DerScenario::II => 20.0,
            DerScenario::III => 0.0,
        }
    }

    pub fn mode(self) -> DerMode {
        match self {
            DerScenario::III => DerMode::ActiveDispatch,
            _ => DerMode::ReactiveDispatch,
        }
    }
}

impl FromStr for DerScenario {
    type Err = FeederError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(DerScenario::I),
            "ii" | "2" => Ok(DerScenario::II),
            "iii" | "3" => Ok(DerScenario::III),
            _ => Err(FeederError::Scenario(s.to_string())),
        }
    }
}

fn numeric_id(id: &str) -> u64 {
    id.parse().unwrap_or(u64::MAX)
}

/// The ten named sites plus the twenty three-phase buses with the largest
/// active load, ties broken by the lower numeric id.
pub fn thirty_der_sites(model: &FeederModel) -> Vec<usize> {
    let mut sites: Vec<usize> = TEN_DER_SITES.iter().filter_map(|id| model.bus_index(id)).collect();
    let mut candidates: Vec<usize> = (0..model.n_buses())
        .filter(|&j| model.bus(j).phases == PhaseSet::ABC && !sites.contains(&j))
        .collect();
    let load = |j: usize| -> f64 { model.bus(j).load.iter().map(|s| s.re).sum() };
    candidates.sort_by(|&a, &b| {
        load(b)
            .partial_cmp(&load(a))
            .unwrap()
            .then(numeric_id(&model.bus(a).id).cmp(&numeric_id(&model.bus(b).id)))
    });
    sites.extend(candidates.into_iter().take(20));
    sites.sort_by_key(|&j| numeric_id(&model.bus(j).id));
    sites
}

/// Installs a scenario's DER fleet and substation voltage.
pub fn apply_der_scenario(model: &FeederModel, scenario: DerScenario) -> Result<FeederModel, FeederError> {
    let sites = match scenario {
        DerScenario::I => {
            let mut v = Vec::new();
            for id in TEN_DER_SITES {
                v.push(model.bus_index(id).ok_or_else(|| FeederError::UnknownBus(id.to_string()))?);
            }
            v
        }
        DerScenario::II | DerScenario::III => thirty_der_sites(model),
    };
    let s_base = model.s_base_kva();
    let ders = sites
        .into_iter()
        .map(|j| {
            let phases = model.bus(j).phases;
            let mut s = [0.0; 3];
            let mut p = [0.0; 3];
            for i in phases.indices() {
                s[i] = scenario.rating_kva() / s_base;
                p[i] = scenario.p_fixed_kw() / s_base;
            }
            Der {
                bus: j,
                phases,
                s_rated: s,
                mode: scenario.mode(),
                p_fixed: p,
            }
        })
        .collect();
    Ok(model.clone().with_source_voltage(scenario.source_voltage()).with_ders(ders)?)
}
