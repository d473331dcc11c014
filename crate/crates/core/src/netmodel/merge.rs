use std::collections::HashMap;

use super::{Branch, BranchStatus, Bus, BusKind, Network, NetworkData, NetworkError, PccLink};

/// A distribution network extended with its coupling bus.
#[derive(Debug, Clone)]
pub struct PccNetwork {
    pub network: Network,
    /// Positional index of the coupling bus.
    pub pcc_bus: usize,
    pub link: PccLink,
}

impl PccNetwork {
    pub fn base_mva(&self) -> f64 {
        self.network.base_mva()
    }
}

fn interconnect_branch(link: &PccLink, from_bus: usize, to_bus: usize) -> Branch {
    let ic = &link.interconnect;
    Branch {
        from_bus,
        to_bus,
        r: ic.r,
        x: ic.x,
        b_charge: ic.b_charge,
        tap: ic.tap,
        shift: ic.shift,
        rating: ic.rating,
        status: BranchStatus::Closed,
    }
}

/// Add the coupling bus in front of the distribution root.
///
/// The new bus takes the next free id, carries the link's voltage band and a
/// zero angle reference, and is joined to `link.ds_bus` through the
/// interconnect. The root loses its slack designation.
pub fn attach_pcc(ds: &Network, link: &PccLink) -> Result<PccNetwork, NetworkError> {
    if ds.bus_index(link.ds_bus).is_none() {
        return Err(NetworkError::DanglingBus { what: format!("pcc link {}", link.ds_name), bus: link.ds_bus });
    }
    let mut data = ds.to_data();
    let pcc_id = data.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
    for b in data.buses.iter_mut().filter(|b| b.kind == BusKind::Slack) {
        b.kind = BusKind::Pq;
    }
    let base_kv = data.buses.iter().find(|b| b.id == link.ds_bus).map_or(0.0, |b| b.base_kv);
    data.buses.push(Bus {
        theta_min: 0.0,
        theta_max: 0.0,
        base_kv,
        ..Bus::new(pcc_id, BusKind::Pcc, link.v_min, link.v_max)
    });
    data.branches.push(interconnect_branch(link, pcc_id, link.ds_bus));
    let network = Network::new(data)?;
    let pcc_bus = network.bus_index(pcc_id).unwrap();
    Ok(PccNetwork { network, pcc_bus, link: link.clone() })
}

/// Bookkeeping produced by [`merge_ts_ds`] for translating results back.
#[derive(Debug, Clone, PartialEq)]
pub struct BusMap {
    /// Per attachment: original distribution bus id -> merged bus id.
    pub ds_bus: Vec<HashMap<usize, usize>>,
    /// Per attachment: positional range of its branches in the merged network
    /// (the interconnect is the last one).
    pub ds_branches: Vec<std::ops::Range<usize>>,
    pub ds_generators: Vec<std::ops::Range<usize>>,
    pub ds_dgs: Vec<std::ops::Range<usize>>,
    pub ds_loads: Vec<std::ops::Range<usize>>,
    ds_base: Vec<f64>,
    ds_name: Vec<String>,
    ds_kinds: Vec<HashMap<usize, BusKind>>,
}

impl BusMap {
    pub fn n_attachments(&self) -> usize {
        self.ds_bus.len()
    }

    /// Recover attachment `k` as a stand-alone network on its own base with its
    /// original bus ids and kinds.
    pub fn extract(&self, merged: &Network, k: usize) -> Result<Network, NetworkError> {
        let inv: HashMap<usize, usize> = self.ds_bus[k].iter().map(|(&o, &m)| (m, o)).collect();
        let scale = merged.base_mva() / self.ds_base[k];
        let d = merged.data();
        let mut buses: Vec<Bus> = d
            .buses
            .iter()
            .filter_map(|b| inv.get(&b.id).map(|&orig| (orig, b)))
            .map(|(orig, b)| Bus {
                id: orig,
                kind: self.ds_kinds[k][&orig],
                gs: b.gs * scale,
                bs: b.bs * scale,
                ..b.clone()
            })
            .collect();
        buses.sort_by_key(|b| b.id);
        let mut r = self.ds_branches[k].clone();
        r.end -= 1; // drop the interconnect
        let branches = d.branches[r]
            .iter()
            .map(|br| Branch {
                from_bus: inv[&br.from_bus],
                to_bus: inv[&br.to_bus],
                ..rebase_branch(br, 1.0 / scale)
            })
            .collect();
        let remap_gen = |g: &super::Generator| super::Generator { bus: inv[&g.bus], ..rebase_generator(g, scale) };
        let data = NetworkData {
            name: self.ds_name[k].clone(),
            base_mva: self.ds_base[k],
            buses,
            branches,
            generators: d.generators[self.ds_generators[k].clone()].iter().map(remap_gen).collect(),
            dgs: d.dgs[self.ds_dgs[k].clone()]
                .iter()
                .map(|dg| rebase_dg(dg, scale))
                .map(|mut dg| {
                    dg.generator.bus = inv[&dg.generator.bus];
                    dg
                })
                .collect(),
            loads: d.loads[self.ds_loads[k].clone()]
                .iter()
                .map(|l| super::Load { bus: inv[&l.bus], p_d: l.p_d * scale, q_d: l.q_d * scale })
                .collect(),
        };
        Network::new(data)
    }
}

/// `z_ratio` multiplies impedances (new_base / old_base).
fn rebase_branch(br: &Branch, z_ratio: f64) -> Branch {
    Branch {
        r: br.r * z_ratio,
        x: br.x * z_ratio,
        b_charge: br.b_charge / z_ratio,
        rating: br.rating / z_ratio,
        ..br.clone()
    }
}

/// `p_ratio` multiplies powers (old_base / new_base).
fn rebase_generator(g: &super::Generator, p_ratio: f64) -> super::Generator {
    // cost(p_old) with p_old = p_new / p_ratio
    super::Generator {
        p_min: g.p_min * p_ratio,
        p_max: g.p_max * p_ratio,
        q_min: g.q_min * p_ratio,
        q_max: g.q_max * p_ratio,
        cost_a: g.cost_a / (p_ratio * p_ratio),
        cost_b: g.cost_b / p_ratio,
        ..g.clone()
    }
}

fn rebase_dg(dg: &super::DgUnit, p_ratio: f64) -> super::DgUnit {
    super::DgUnit {
        generator: rebase_generator(&dg.generator, p_ratio),
        capability: dg
            .capability
            .iter()
            .map(|h| super::HalfPlane { delta: h.delta * p_ratio, ..*h })
            .collect(),
        s_max: dg.s_max.map(|s| s * p_ratio),
    }
}

/// Integrate distribution systems into a transmission network.
///
/// Distribution buses are renumbered after the largest transmission id and
/// rebased to the transmission base. Each distribution root connects to its
/// coupling bus through the link's interconnect; the coupling bus voltage band
/// is intersected with the link's band.
pub fn merge_ts_ds(ts: &Network, attachments: &[(PccLink, Network)]) -> Result<(Network, BusMap), NetworkError> {
    let mut data = ts.to_data();
    let mut next_id = data.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
    let mut map = BusMap {
        ds_bus: Vec::new(),
        ds_branches: Vec::new(),
        ds_generators: Vec::new(),
        ds_dgs: Vec::new(),
        ds_loads: Vec::new(),
        ds_base: Vec::new(),
        ds_name: Vec::new(),
        ds_kinds: Vec::new(),
    };
    for (link, ds) in attachments {
        let pcc = ts.bus_index(link.ts_bus).ok_or_else(|| NetworkError::DanglingBus {
            what: format!("pcc link {}", link.ds_name),
            bus: link.ts_bus,
        })?;
        if !ts.is_empty_bus(link.ts_bus) {
            return Err(NetworkError::PccNotEmpty(link.ts_bus));
        }
        if ds.bus_index(link.ds_bus).is_none() {
            return Err(NetworkError::DanglingBus { what: format!("pcc link {}", link.ds_name), bus: link.ds_bus });
        }
        let tb = &mut data.buses[pcc];
        tb.v_min = tb.v_min.max(link.v_min);
        tb.v_max = tb.v_max.min(link.v_max);

        let p_ratio = ds.base_mva() / ts.base_mva();
        let z_ratio = 1.0 / p_ratio;
        let mut ids = HashMap::new();
        let mut kinds = HashMap::new();
        for b in ds.buses() {
            ids.insert(b.id, next_id);
            kinds.insert(b.id, b.kind);
            data.buses.push(Bus {
                id: next_id,
                kind: if b.kind == BusKind::Pv { BusKind::Pv } else { BusKind::Pq },
                gs: b.gs * p_ratio,
                bs: b.bs * p_ratio,
                ..b.clone()
            });
            next_id += 1;
        }
        let b0 = data.branches.len();
        for br in ds.branches() {
            data.branches.push(Branch { from_bus: ids[&br.from_bus], to_bus: ids[&br.to_bus], ..rebase_branch(br, z_ratio) });
        }
        let ic = rebase_branch(&interconnect_branch(link, link.ts_bus, ids[&link.ds_bus]), z_ratio);
        data.branches.push(ic);
        let g0 = data.generators.len();
        for g in ds.generators() {
            data.generators.push(super::Generator { bus: ids[&g.bus], ..rebase_generator(g, p_ratio) });
        }
        let d0 = data.dgs.len();
        for dg in ds.dgs() {
            let mut u = rebase_dg(dg, p_ratio);
            u.generator.bus = ids[&dg.generator.bus];
            data.dgs.push(u);
        }
        let l0 = data.loads.len();
        for l in ds.loads() {
            data.loads.push(super::Load { bus: ids[&l.bus], p_d: l.p_d * p_ratio, q_d: l.q_d * p_ratio });
        }
        map.ds_bus.push(ids);
        map.ds_kinds.push(kinds);
        map.ds_branches.push(b0..data.branches.len());
        map.ds_generators.push(g0..data.generators.len());
        map.ds_dgs.push(d0..data.dgs.len());
        map.ds_loads.push(l0..data.loads.len());
        map.ds_base.push(ds.base_mva());
        map.ds_name.push(ds.name().to_string());
    }
    data.name = std::iter::once(ts.name())
        .chain(attachments.iter().map(|(_, d)| d.name()))
        .collect::<Vec<_>>()
        .join("+");
    Ok((Network::new(data)?, map))
}
