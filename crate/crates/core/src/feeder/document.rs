use serde::{Deserialize, Deserializer, Serialize};

use crate::phase::PhaseSet;

/// Bus identifiers may be written as JSON strings or integers.
pub(crate) fn id_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

pub type PhaseValues = [Option<f64>; 3];
pub type PhaseMatrix = [[Option<f64>; 3]; 3];

/// Feeder file as stored on disk, in physical units.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeederDocument {
    pub base_kva: f64,
    pub base_kv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_v_pu: Option<f64>,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    #[serde(default)]
    pub ders: Vec<DerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BusRecord {
    #[serde(deserialize_with = "id_string")]
    pub id: String,
    pub phases: PhaseSet,
    #[serde(default)]
    pub load_kw: PhaseValues,
    #[serde(default)]
    pub load_kvar: PhaseValues,
    #[serde(default)]
    pub shunt_kvar: PhaseValues,
    #[serde(default = "default_vmin")]
    pub vmin: f64,
    #[serde(default = "default_vmax")]
    pub vmax: f64,
    #[serde(default)]
    pub slack: bool,
}

fn default_vmin() -> f64 {
    0.95
}

fn default_vmax() -> f64 {
    1.05
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BranchRecord {
    #[serde(deserialize_with = "id_string")]
    pub from: String,
    #[serde(deserialize_with = "id_string")]
    pub to: String,
    pub phases: PhaseSet,
    pub r_ohm: PhaseMatrix,
    pub x_ohm: PhaseMatrix,
    #[serde(default)]
    pub amps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DerRecord {
    #[serde(deserialize_with = "id_string")]
    pub bus: String,
    pub phases: PhaseSet,
    pub s_kva: PhaseValues,
    pub mode: super::DerMode,
    #[serde(default)]
    pub p_fixed_kw: PhaseValues,
}

/// Area assignment file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PartitionDocument {
    pub areas: Vec<AreaRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AreaRecord {
    pub name: String,
    pub buses: Vec<String>,
}
