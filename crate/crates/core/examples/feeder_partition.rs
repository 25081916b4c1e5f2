//! The bundled four-area split and the local model each area solves.

use dopf::coordinator::init_boundary;
use dopf::feeder::{AreaPartition, FeederModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = FeederModel::ieee123();
    let part = AreaPartition::ieee123_four_area(&model)?;
    let init = init_boundary(&model, &part);
    for (a, area) in part.areas().iter().enumerate() {
        let head = match area.up {
            Some(i) => init.interfaces[i].v2,
            None => model.source_voltage().map(|v| v * v),
        };
        let withdrawals: Vec<_> = area.down.iter().map(|&i| init.interfaces[i].flow).collect();
        let local = part.area_model(&model, a, head, &withdrawals);
        println!(
            "area {a} {:>8}: {:>3} buses, head bus {}, parent {:?}, children {:?}, local model {} buses",
            area.name,
            area.buses.len(),
            model.bus(area.head).id,
            area.parent,
            area.children,
            local.model.n_buses()
        );
    }
    let s_base = model.s_base_kva();
    for (k, iface) in part.interfaces().iter().enumerate() {
        let s: f64 = init.interfaces[k].flow.iter().map(|s| s.re).sum::<f64>() * s_base;
        println!(
            "interface {k}: area {} -> {} at bus {}, initial withdrawal {s:.1} kW",
            iface.parent_area,
            iface.child_area,
            model.bus(iface.shared_bus).id
        );
    }
    Ok(())
}
