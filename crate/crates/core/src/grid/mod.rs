//! Network topology, compound admittance matrix and the linear PMU
//! measurement model.
//!
//! Every vector over network nodes uses the same canonical order: buses in
//! the order they were given to [`build_network`], and within a bus the
//! phases `0..phases`. A node index is therefore `bus_position * phases + phase`.
//! State vectors stack the real parts of all node voltages on top of the
//! imaginary parts.

mod feeder;
mod file;

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub use feeder::{default_pmu_placement, synthetic_feeder, FeederSpec, FeederTopology};
pub use file::{LineRecord, NetworkFile, PhaseParam, SlackRecord};

pub type BusId = u32;

/// A complex phasor in per unit. `norm()` and `arg()` give the polar form.
pub type Phasor = Complex<f64>;

/// Relative singular-value threshold used by [`check_observability`].
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Nominal phase angle of phase `phase` in a balanced system with `phases`
/// phases: `0`, `-2π/3`, `+2π/3`.
pub fn nominal_angle(phase: usize, phases: usize) -> f64 {
    if phases == 1 {
        return 0.0;
    }
    match phase % 3 {
        0 => 0.0,
        1 => -2.0 * PI / 3.0,
        _ => 2.0 * PI / 3.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSpec {
    pub from: BusId,
    pub to: BusId,
    /// Series impedance phase matrix, `phases × phases`, per unit.
    pub series_impedance: DMatrix<Phasor>,
    /// Total shunt susceptance per phase, per unit. Half goes to each end.
    pub shunt_susceptance: DVector<f64>,
}

impl LineSpec {
    /// Line with identical uncoupled phases.
    pub fn balanced(from: BusId, to: BusId, z: Phasor, b: f64, phases: usize) -> Self {
        Self::coupled(from, to, z, Complex::new(0.0, 0.0), b, phases)
    }

    /// Line with self impedance `z_self` and mutual impedance `z_mutual`
    /// between every pair of phases.
    pub fn coupled(
        from: BusId,
        to: BusId,
        z_self: Phasor,
        z_mutual: Phasor,
        b: f64,
        phases: usize,
    ) -> Self {
        let series_impedance =
            DMatrix::from_fn(
                phases,
                phases,
                |i, j| if i == j { z_self } else { z_mutual },
            );
        LineSpec {
            from,
            to,
            series_impedance,
            shunt_susceptance: DVector::from_element(phases, b),
        }
    }
}

/// Slack bus with a Thevenin source behind the short-circuit impedance.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackSpec {
    pub bus: BusId,
    /// Source voltage per phase.
    pub voltage: Vec<Phasor>,
    /// Short-circuit power in per unit.
    pub short_circuit_power: f64,
    pub r_over_x: f64,
}

impl SlackSpec {
    /// Balanced slack source with magnitude `magnitude` at the nominal angles.
    pub fn balanced(
        bus: BusId,
        magnitude: f64,
        phases: usize,
        sc_power: f64,
        r_over_x: f64,
    ) -> Self {
        SlackSpec {
            bus,
            voltage: (0..phases)
                .map(|p| Complex::from_polar(magnitude, nominal_angle(p, phases)))
                .collect(),
            short_circuit_power: sc_power,
            r_over_x,
        }
    }

    /// Norton admittance `1/Z_sc`. `|Z_sc| = 1/S_sc` (per unit, unit voltage)
    /// and `R_sc/X_sc = r_over_x`, so `arg(Z_sc) = atan2(1, r_over_x)` and
    /// `arg(1/Z_sc) = -atan2(1, r_over_x)`.
    pub fn source_admittance(&self) -> Phasor {
        let z_abs = 1.0 / self.short_circuit_power;
        let angle = 1.0f64.atan2(self.r_over_x);
        Complex::from_polar(1.0 / z_abs, -angle)
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<BusId>,
    phases: usize,
    lines: Vec<LineSpec>,
    slack: SlackSpec,
    position: HashMap<BusId, usize>,
}

impl NetworkModel {
    pub fn buses(&self) -> &[BusId] {
        &self.buses
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn lines(&self) -> &[LineSpec] {
        &self.lines
    }

    pub fn slack(&self) -> &SlackSpec {
        &self.slack
    }

    /// Number of (bus, phase) nodes.
    pub fn node_count(&self) -> usize {
        self.buses.len() * self.phases
    }

    /// Number of real state variables, `2|B||P|`.
    pub fn state_count(&self) -> usize {
        2 * self.node_count()
    }

    pub fn bus_position(&self, bus: BusId) -> Option<usize> {
        self.position.get(&bus).copied()
    }

    pub fn node_index(&self, bus_position: usize, phase: usize) -> usize {
        bus_position * self.phases + phase
    }

    /// Node indices belonging to the slack bus.
    pub fn slack_nodes(&self) -> Vec<usize> {
        let pos = self.position[&self.slack.bus];
        (0..self.phases).map(|p| self.node_index(pos, p)).collect()
    }
}

/// Validates the inputs and fixes the canonical node ordering.
pub fn build_network(
    buses: Vec<BusId>,
    phases: usize,
    lines: Vec<LineSpec>,
    slack: SlackSpec,
) -> Result<NetworkModel> {
    if phases != 1 && phases != 3 {
        return Err(Error::InvalidInput(format!(
            "phase count must be 1 or 3, got {phases}"
        )));
    }
    if buses.is_empty() {
        return Err(Error::InvalidInput("network has no buses".into()));
    }
    let mut position = HashMap::with_capacity(buses.len());
    for (i, &b) in buses.iter().enumerate() {
        if position.insert(b, i).is_some() {
            return Err(Error::DuplicateBus(b));
        }
    }
    for (i, line) in lines.iter().enumerate() {
        for bus in [line.from, line.to] {
            if !position.contains_key(&bus) {
                return Err(Error::DanglingLine { line: i, bus });
            }
        }
        if line.from == line.to {
            return Err(Error::InvalidInput(format!(
                "line {i} connects bus {} to itself",
                line.from
            )));
        }
        if line.series_impedance.shape() != (phases, phases)
            || line.shunt_susceptance.len() != phases
        {
            return Err(Error::DimensionMismatch(format!(
                "line {i} parameters do not match {phases} phase(s)"
            )));
        }
    }
    if !position.contains_key(&slack.bus) {
        return Err(Error::InvalidInput(format!(
            "slack bus {} does not exist",
            slack.bus
        )));
    }
    if slack.voltage.len() != phases {
        return Err(Error::DimensionMismatch("slack voltage per phase".into()));
    }
    if !(slack.short_circuit_power > 0.0) || !(slack.r_over_x >= 0.0) {
        return Err(Error::InvalidInput(
            "slack needs short_circuit_power > 0 and r_over_x >= 0".into(),
        ));
    }

    // Connectivity from the slack bus.
    let mut adjacency = vec![Vec::new(); buses.len()];
    for line in &lines {
        let (a, b) = (position[&line.from], position[&line.to]);
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let mut seen = vec![false; buses.len()];
    let mut queue = VecDeque::from([position[&slack.bus]]);
    seen[position[&slack.bus]] = true;
    while let Some(n) = queue.pop_front() {
        for &m in &adjacency[n] {
            if !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Disconnected(buses[i]));
    }

    Ok(NetworkModel {
        buses,
        phases,
        lines,
        slack,
        position,
    })
}

/// Nodal admittance matrix `Y` with `I = Y V`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundAdmittance {
    pub y: DMatrix<Phasor>,
}

impl CompoundAdmittance {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    /// Conductance matrix `G = Re(Y)`.
    pub fn conductance(&self) -> DMatrix<f64> {
        self.y.map(|c| c.re)
    }

    /// Susceptance matrix `B = Im(Y)`.
    pub fn susceptance(&self) -> DMatrix<f64> {
        self.y.map(|c| c.im)
    }
}

/// Assembles `Y` from π-model lines and adds the slack's Norton admittance
/// `1/Z_sc` on the slack diagonal.
pub fn build_admittance(net: &NetworkModel) -> Result<CompoundAdmittance> {
    let mut y = build_branch_admittance(net)?;
    let ysc = net.slack.source_admittance();
    for n in net.slack_nodes() {
        y.y[(n, n)] += ysc;
    }
    Ok(y)
}

/// Line contributions only, without the slack source admittance.
pub fn build_branch_admittance(net: &NetworkModel) -> Result<CompoundAdmittance> {
    let n = net.node_count();
    let p = net.phases;
    let mut y = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for (i, line) in net.lines.iter().enumerate() {
        let y_series = line
            .series_impedance
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
            .ok_or(Error::SingularImpedance(i))?;
        let a = net.position[&line.from] * p;
        let b = net.position[&line.to] * p;
        for r in 0..p {
            for c in 0..p {
                let v = y_series[(r, c)];
                y[(a + r, a + c)] += v;
                y[(b + r, b + c)] += v;
                y[(a + r, b + c)] -= v;
                y[(b + r, a + c)] -= v;
            }
            let half_shunt = Complex::new(0.0, line.shunt_susceptance[r] / 2.0);
            y[(a + r, a + r)] += half_shunt;
            y[(b + r, b + r)] += half_shunt;
        }
    }
    Ok(CompoundAdmittance { y })
}

/// The 0/1 matrix `Γ` picking PMU-measured nodes out of network vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorMatrix {
    pub gamma: DMatrix<f64>,
    /// Measured buses in canonical order.
    pub pmu_buses: Vec<BusId>,
    /// Node index selected by each row.
    pub nodes: Vec<usize>,
}

impl SelectorMatrix {
    pub fn rows(&self) -> usize {
        self.nodes.len()
    }

    /// `Γ v` for a complex node vector.
    pub fn select(&self, v: &DVector<Phasor>) -> DVector<Phasor> {
        DVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&n| v[n]))
    }
}

pub fn build_selector(net: &NetworkModel, pmu_buses: &[BusId]) -> Result<SelectorMatrix> {
    if pmu_buses.is_empty() {
        return Err(Error::EmptyPmuSet);
    }
    let mut positions = Vec::with_capacity(pmu_buses.len());
    for &b in pmu_buses {
        let pos = net.bus_position(b).ok_or(Error::UnknownPmuBus(b))?;
        positions.push(pos);
    }
    positions.sort_unstable();
    if positions.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("PMU bus listed twice".into()));
    }
    let nodes: Vec<usize> = positions
        .iter()
        .flat_map(|&pos| (0..net.phases).map(move |p| pos * net.phases + p))
        .collect();
    let mut gamma = DMatrix::zeros(nodes.len(), net.node_count());
    for (row, &col) in nodes.iter().enumerate() {
        gamma[(row, col)] = 1.0;
    }
    let pmu_buses = positions.iter().map(|&p| net.buses[p]).collect();
    Ok(SelectorMatrix {
        gamma,
        pmu_buses,
        nodes,
    })
}

/// Linear measurement model `z = H x + v` (`D × S`).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    pub h: DMatrix<f64>,
}

impl MeasurementMatrix {
    pub fn states(&self) -> usize {
        self.h.ncols()
    }

    pub fn measurements(&self) -> usize {
        self.h.nrows()
    }
}

/// `H = [[Γ, 0], [0, Γ], [ΓG, -ΓB], [ΓB, ΓG]]`.
pub fn build_measurement_matrix(
    selector: &SelectorMatrix,
    y: &CompoundAdmittance,
) -> Result<MeasurementMatrix> {
    let gamma = &selector.gamma;
    let n = y.dim();
    if gamma.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "selector has {} columns but Y is {n}×{n}",
            gamma.ncols()
        )));
    }
    let m = gamma.nrows();
    let gg = gamma * y.conductance();
    let gb = gamma * y.susceptance();
    let mut h = DMatrix::zeros(4 * m, 2 * n);
    h.view_mut((0, 0), (m, n)).copy_from(gamma);
    h.view_mut((m, n), (m, n)).copy_from(gamma);
    h.view_mut((2 * m, 0), (m, n)).copy_from(&gg);
    h.view_mut((2 * m, n), (m, n)).copy_from(&(-&gb));
    h.view_mut((3 * m, 0), (m, n)).copy_from(&gb);
    h.view_mut((3 * m, n), (m, n)).copy_from(&gg);
    Ok(MeasurementMatrix { h })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observability {
    pub observable: bool,
    pub rank: usize,
}

/// Numerical rank of `H` from its singular values; observable iff the rank
/// equals the number of states.
pub fn check_observability(h: &MeasurementMatrix) -> Observability {
    let rank = numerical_rank(&h.h);
    Observability {
        observable: rank == h.states(),
        rank,
    }
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// `(S, D) = (2|B||P|, 4|M||P|)`.
pub fn dims(net: &NetworkModel, pmu_buses: &[BusId]) -> (usize, usize) {
    dims_from_counts(net.buses.len(), net.phases, pmu_buses.len())
}

pub fn dims_from_counts(buses: usize, phases: usize, pmus: usize) -> (usize, usize) {
    (2 * buses * phases, 4 * pmus * phases)
}

/// Convenience bundle of everything the estimator needs from the grid.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub network: NetworkModel,
    pub admittance: CompoundAdmittance,
    pub selector: SelectorMatrix,
    pub measurement: MeasurementMatrix,
}

impl GridModel {
    /// Builds `Y`, `Γ` and `H` and rejects unobservable placements.
    pub fn new(network: NetworkModel, pmu_buses: &[BusId]) -> Result<Self> {
        let admittance = build_admittance(&network)?;
        let selector = build_selector(&network, pmu_buses)?;
        let measurement = build_measurement_matrix(&selector, &admittance)?;
        let obs = check_observability(&measurement);
        if !obs.observable {
            return Err(Error::Unobservable {
                rank: obs.rank,
                states: measurement.states(),
            });
        }
        Ok(GridModel {
            network,
            admittance,
            selector,
            measurement,
        })
    }
}

/// Converts a complex node vector into the `[Re; Im]` state layout.
pub fn to_state(v: &DVector<Phasor>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`to_state`].
pub fn from_state(x: &DVector<f64>) -> DVector<Phasor> {
    let n = x.len() / 2;
    DVector::from_fn(n, |i, _| Complex::new(x[i], x[i + n]))
}
