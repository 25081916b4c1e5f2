use std::collections::HashMap;
use std::path::Path;

use num_complex::Complex64;

use super::{Bus, FeederError, FeederModel, PartitionDocument, IEEE123_4AREA_JSON};
use crate::phase::PhaseSet;

#[derive(Debug, Clone)]
pub struct Area {
    pub name: String,
    /// Member buses in tree order, head first.
    pub buses: Vec<usize>,
    /// Most upstream bus of the area.
    pub head: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Interface towards the parent area.
    pub up: Option<usize>,
    /// Interfaces towards child areas.
    pub down: Vec<usize>,
}

/// A cut branch between two areas. The child area owns the shared bus; the
/// parent owns the branch and sees the shared bus as a load.
#[derive(Debug, Clone)]
pub struct BoundaryInterface {
    pub parent_area: usize,
    pub child_area: usize,
    pub shared_bus: usize,
    pub branch: usize,
    pub phases: PhaseSet,
}

#[derive(Debug, Clone)]
pub struct AreaPartition {
    areas: Vec<Area>,
    interfaces: Vec<BoundaryInterface>,
    area_of: Vec<usize>,
}

/// Validates an area assignment against the feeder tree.
pub fn partition_feeder(model: &FeederModel, doc: &PartitionDocument) -> Result<AreaPartition, FeederError> {
    let n = model.n_buses();
    if doc.areas.is_empty() {
        return Err(FeederError::Partition("no areas given".into()));
    }
    let mut area_of = vec![usize::MAX; n];
    let mut names = HashMap::new();
    for (a, rec) in doc.areas.iter().enumerate() {
        if names.insert(rec.name.clone(), a).is_some() {
            return Err(FeederError::Partition(format!("duplicate area name {}", rec.name)));
        }
        if rec.buses.is_empty() {
            return Err(FeederError::Partition(format!("area {} is empty", rec.name)));
        }
        for id in &rec.buses {
            let j = model.bus_index(id).ok_or_else(|| FeederError::UnknownBus(id.clone()))?;
            if area_of[j] != usize::MAX {
                return Err(FeederError::Partition(format!("bus {} assigned to more than one area", id)));
            }
            area_of[j] = a;
        }
    }
    if let Some(j) = area_of.iter().position(|&a| a == usize::MAX) {
        return Err(FeederError::Partition(format!("bus {} is not assigned to an area", model.bus(j).id)));
    }

    let mut heads = vec![Vec::new(); doc.areas.len()];
    for j in 0..n {
        let upstream_area = model.parent(j).map(|p| area_of[p]);
        if upstream_area != Some(area_of[j]) {
            heads[area_of[j]].push(j);
        }
    }
    let mut areas = Vec::with_capacity(doc.areas.len());
    for (a, rec) in doc.areas.iter().enumerate() {
        if heads[a].len() != 1 {
            return Err(FeederError::Partition(format!("area {} is not connected", rec.name)));
        }
        let head = heads[a][0];
        areas.push(Area {
            name: rec.name.clone(),
            buses: model.order().iter().copied().filter(|&j| area_of[j] == a).collect(),
            head,
            parent: model.parent(head).map(|p| area_of[p]),
            children: Vec::new(),
            up: None,
            down: Vec::new(),
        });
    }
    let mut interfaces = Vec::new();
    for &j in model.order() {
        let a = area_of[j];
        if areas[a].head != j {
            continue;
        }
        if let (Some(parent), Some(branch)) = (areas[a].parent, model.parent_branch(j)) {
            let k = interfaces.len();
            interfaces.push(BoundaryInterface {
                parent_area: parent,
                child_area: a,
                shared_bus: j,
                branch,
                phases: model.branch(branch).phases,
            });
            areas[a].up = Some(k);
            areas[parent].down.push(k);
            areas[parent].children.push(a);
        }
    }
    let roots = areas.iter().filter(|a| a.parent.is_none()).count();
    if roots != 1 {
        return Err(FeederError::Partition("area adjacency is not a tree".into()));
    }
    Ok(AreaPartition {
        areas,
        interfaces,
        area_of,
    })
}

impl AreaPartition {
    /// The whole feeder as one area.
    pub fn single(model: &FeederModel) -> AreaPartition {
        let doc = PartitionDocument {
            areas: vec![super::AreaRecord {
                name: "feeder".into(),
                buses: model.buses().iter().map(|b| b.id.clone()).collect(),
            }],
        };
        partition_feeder(model, &doc).expect("single area partition is valid")
    }

    /// The bundled four-area split of the IEEE 123-bus feeder.
    pub fn ieee123_four_area(model: &FeederModel) -> Result<AreaPartition, FeederError> {
        let doc: PartitionDocument = serde_json::from_str(IEEE123_4AREA_JSON)?;
        partition_feeder(model, &doc)
    }

    pub fn load(model: &FeederModel, path: impl AsRef<Path>) -> Result<AreaPartition, FeederError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let doc: PartitionDocument = serde_json::from_str(&text)?;
        partition_feeder(model, &doc)
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn area(&self, a: usize) -> &Area {
        &self.areas[a]
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn interfaces(&self) -> &[BoundaryInterface] {
        &self.interfaces
    }

    pub fn interface(&self, k: usize) -> &BoundaryInterface {
        &self.interfaces[k]
    }

    pub fn area_of(&self, bus: usize) -> usize {
        self.area_of[bus]
    }

    pub fn root(&self) -> usize {
        self.areas.iter().position(|a| a.parent.is_none()).unwrap()
    }

    /// Neighbouring areas: parent first, then children.
    pub fn neighbors(&self, a: usize) -> Vec<usize> {
        let area = &self.areas[a];
        area.parent.into_iter().chain(area.children.iter().copied()).collect()
    }

    /// Sub-feeder of one area. The head becomes a local slack at voltage
    /// `sqrt(head_v2)`, and each child interface becomes a leaf bus carrying
    /// the matching entry of `withdrawals`.
    pub fn area_model(
        &self,
        model: &FeederModel,
        a: usize,
        head_v2: [f64; 3],
        withdrawals: &[[Complex64; 3]],
    ) -> AreaModel {
        let area = &self.areas[a];
        assert_eq!(withdrawals.len(), area.down.len(), "one withdrawal per child interface");
        let mut local = HashMap::new();
        let mut buses = Vec::new();
        let mut global_bus = Vec::new();
        for &j in &area.buses {
            local.insert(j, buses.len());
            let mut bus = model.bus(j).clone();
            bus.slack = j == area.head;
            buses.push(bus);
            global_bus.push(j);
        }
        let mut branches = Vec::new();
        let mut global_branch = Vec::new();
        for &j in &area.buses {
            if j == area.head {
                continue;
            }
            let k = model.parent_branch(j).unwrap();
            let mut br = model.branch(k).clone();
            br.from = local[&br.from];
            br.to = local[&j];
            branches.push(br);
            global_branch.push(k);
        }
        let mut ghosts = Vec::new();
        for (slot, &i) in area.down.iter().enumerate() {
            let iface = &self.interfaces[i];
            let shared = model.bus(iface.shared_bus);
            let ghost = buses.len();
            buses.push(Bus {
                id: shared.id.clone(),
                phases: iface.phases,
                load: withdrawals[slot],
                shunt_q: [0.0; 3],
                v_min: shared.v_min,
                v_max: shared.v_max,
                slack: false,
            });
            global_bus.push(iface.shared_bus);
            let mut br = model.branch(iface.branch).clone();
            br.from = local[&br.from];
            br.to = ghost;
            branches.push(br);
            global_branch.push(iface.branch);
            ghosts.push((ghost, i));
        }
        let mut ders = Vec::new();
        let mut global_der = Vec::new();
        for (d, der) in model.ders().iter().enumerate() {
            if let Some(&lj) = local.get(&der.bus) {
                let mut der = der.clone();
                der.bus = lj;
                ders.push(der);
                global_der.push(d);
            }
        }
        let source = head_v2.map(|v| v.max(0.0).sqrt());
        let sub = FeederModel::assemble(model.base_kva(), model.base_kv(), source, buses, branches, ders)
            .expect("area sub-feeder is radial");
        AreaModel {
            model: sub,
            area: a,
            global_bus,
            global_branch,
            global_der,
            ghosts,
        }
    }
}

/// Sub-feeder for one area together with its index maps into the full feeder.
#[derive(Debug, Clone)]
pub struct AreaModel {
    pub model: FeederModel,
    pub area: usize,
    pub global_bus: Vec<usize>,
    pub global_branch: Vec<usize>,
    pub global_der: Vec<usize>,
    /// (local bus, interface) for each child interface, in `Area::down` order.
    pub ghosts: Vec<(usize, usize)>,
}

impl AreaModel {
    /// The entire feeder as a single area.
    pub fn whole(model: &FeederModel) -> AreaModel {
        let part = AreaPartition::single(model);
        let v = model.source_voltage().map(|v| v * v);
        part.area_model(model, 0, v, &[])
    }

    pub fn is_ghost(&self, local_bus: usize) -> bool {
        self.ghosts.iter().any(|&(g, _)| g == local_bus)
    }
}
