//! Synthetic radial feeders built from a single cable type.

use std::collections::VecDeque;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use super::{
    build_admittance, build_measurement_matrix, build_network, build_selector, check_observability,
    BusId, LineSpec, NetworkModel, SlackSpec,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeederTopology {
    /// Bus `i` hangs off bus `i - 1`.
    Chain,
    /// Bus `i` hangs off bus `(i - 1) / fanout`.
    Tree { fanout: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeederSpec {
    pub buses: usize,
    pub phases: usize,
    pub topology: FeederTopology,
    /// Self resistance and reactance of one unit-length section, per unit.
    pub r: f64,
    pub x: f64,
    /// Mutual impedance between phases as a fraction of the self impedance.
    pub mutual_fraction: f64,
    /// Total shunt susceptance of one unit-length section, per unit.
    pub b: f64,
    /// Section lengths cycle through this pattern (multiplies r, x, b).
    pub lengths: Vec<f64>,
    pub short_circuit_power: f64,
    pub r_over_x: f64,
    pub first_bus_id: BusId,
}

impl Default for FeederSpec {
    fn default() -> Self {
        FeederSpec {
            buses: 13,
            phases: 3,
            topology: FeederTopology::Tree { fanout: 2 },
            r: 0.006,
            x: 0.005,
            mutual_fraction: 0.3,
            b: 2e-5,
            lengths: vec![1.0, 0.6, 1.4, 0.8],
            // 300 MVA on a 1 MVA base
            short_circuit_power: 300.0,
            r_over_x: 0.1,
            first_bus_id: 1,
        }
    }
}

impl FeederSpec {
    fn parent(&self, i: usize) -> usize {
        match self.topology {
            FeederTopology::Chain => i - 1,
            FeederTopology::Tree { fanout } => (i - 1) / fanout.max(1),
        }
    }
}

/// Builds the feeder with the slack at its first bus.
pub fn synthetic_feeder(spec: &FeederSpec) -> Result<NetworkModel> {
    if spec.buses == 0 {
        return Err(Error::InvalidInput("feeder needs at least one bus".into()));
    }
    if spec.lengths.is_empty() || spec.lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput(
            "section lengths must be positive".into(),
        ));
    }
    let id = |i: usize| spec.first_bus_id + i as BusId;
    let z_self = Complex::new(spec.r, spec.x);
    let lines = (1..spec.buses)
        .map(|i| {
            let len = spec.lengths[(i - 1) % spec.lengths.len()];
            LineSpec::coupled(
                id(spec.parent(i)),
                id(i),
                z_self * len,
                z_self * (len * spec.mutual_fraction),
                spec.b * len,
                spec.phases,
            )
        })
        .collect();
    build_network(
        (0..spec.buses).map(id).collect(),
        spec.phases,
        lines,
        SlackSpec::balanced(
            id(0),
            1.0,
            spec.phases,
            spec.short_circuit_power,
            spec.r_over_x,
        ),
    )
}

/// PMUs at every bus an even number of hops away from the slack, then
/// further buses (in canonical order) until `H` has full column rank.
pub fn default_pmu_placement(net: &NetworkModel) -> Result<Vec<BusId>> {
    let n = net.buses().len();
    let mut adjacency = vec![Vec::new(); n];
    for l in net.lines() {
        let (a, b) = (
            net.bus_position(l.from).unwrap(),
            net.bus_position(l.to).unwrap(),
        );
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let root = net.bus_position(net.slack().bus).unwrap();
    let mut depth = vec![usize::MAX; n];
    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(a) = queue.pop_front() {
        for &b in &adjacency[a] {
            if depth[b] == usize::MAX {
                depth[b] = depth[a] + 1;
                queue.push_back(b);
            }
        }
    }

    let y = build_admittance(net)?;
    let rank_of = |pmus: &[BusId]| -> Result<usize> {
        let sel = build_selector(net, pmus)?;
        Ok(check_observability(&build_measurement_matrix(&sel, &y)?).rank)
    };
    let mut chosen: Vec<bool> = depth.iter().map(|d| d % 2 == 0).collect();
    let list = |chosen: &[bool]| -> Vec<BusId> {
        (0..n)
            .filter(|&i| chosen[i])
            .map(|i| net.buses()[i])
            .collect()
    };
    let mut rank = rank_of(&list(&chosen))?;
    let target = net.state_count();
    while rank < target {
        let mut improved = false;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            chosen[i] = true;
            let r = rank_of(&list(&chosen))?;
            if r > rank {
                rank = r;
                improved = true;
                break;
            }
            chosen[i] = false;
        }
        if !improved {
            return Err(Error::Unobservable {
                rank,
                states: target,
            });
        }
    }
    Ok(list(&chosen))
}
