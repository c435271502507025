//! JSON network description.
//!
//! ```json
//! {
//!   "phases": 3,
//!   "buses": [800, 802, 806],
//!   "lines": [
//!     { "from": 800, "to": 802, "r": 0.004, "x": 0.003, "b": 1e-5 },
//!     { "from": 802, "to": 806, "r": [0.004, 0.004, 0.005], "x": 0.003 }
//!   ],
//!   "slack": { "bus": 800, "v": 1.0, "short_circuit_power": 300.0, "r_over_x": 0.1 },
//!   "pmu": [800, 806]
//! }
//! ```
//!
//! `r`, `x` accept a scalar (same for every phase, no coupling), a per-phase
//! list, or a full `phases × phases` matrix. `b` is the total shunt
//! susceptance per phase (scalar or list). All values are per unit.

use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{build_network, nominal_angle, BusId, LineSpec, NetworkModel, SlackSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseParam {
    Scalar(f64),
    PerPhase(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl PhaseParam {
    fn matrix(&self, phases: usize, what: &str) -> Result<DMatrix<f64>> {
        match self {
            PhaseParam::Scalar(v) => Ok(DMatrix::from_diagonal_element(phases, phases, *v)),
            PhaseParam::PerPhase(v) if v.len() == phases => {
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
            }
            PhaseParam::Matrix(rows)
                if rows.len() == phases && rows.iter().all(|r| r.len() == phases) =>
            {
                Ok(DMatrix::from_fn(phases, phases, |i, j| rows[i][j]))
            }
            _ => Err(Error::DimensionMismatch(format!(
                "{what} does not match {phases} phase(s)"
            ))),
        }
    }

    fn diagonal(&self, phases: usize, what: &str) -> Result<DVector<f64>> {
        match self {
            PhaseParam::Scalar(v) => Ok(DVector::from_element(phases, *v)),
            PhaseParam::PerPhase(v) if v.len() == phases => Ok(DVector::from_column_slice(v)),
            _ => Err(Error::DimensionMismatch(format!(
                "{what} must be a scalar or a list of {phases} value(s)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: BusId,
    pub to: BusId,
    pub r: PhaseParam,
    pub x: PhaseParam,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<PhaseParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackRecord {
    pub bus: BusId,
    /// Source voltage magnitude, per unit.
    #[serde(default = "unit")]
    pub v: f64,
    pub short_circuit_power: f64,
    pub r_over_x: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub phases: usize,
    pub buses: Vec<BusId>,
    pub lines: Vec<LineRecord>,
    pub slack: SlackRecord,
    #[serde(default)]
    pub pmu: Vec<BusId>,
}

impl NetworkFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn to_network(&self) -> Result<NetworkModel> {
        let p = self.phases;
        let lines = self
            .lines
            .iter()
            .map(|l| {
                let r = l.r.matrix(p, "r")?;
                let x = l.x.matrix(p, "x")?;
                let b = match &l.b {
                    Some(b) => b.diagonal(p, "b")?,
                    None => DVector::zeros(p),
                };
                Ok(LineSpec {
                    from: l.from,
                    to: l.to,
                    series_impedance: r.zip_map(&x, Complex::new),
                    shunt_susceptance: b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let slack = SlackSpec {
            bus: self.slack.bus,
            voltage: (0..p)
                .map(|ph| Complex::from_polar(self.slack.v, nominal_angle(ph, p)))
                .collect(),
            short_circuit_power: self.slack.short_circuit_power,
            r_over_x: self.slack.r_over_x,
        };
        build_network(self.buses.clone(), p, lines, slack)
    }

    /// Writes a model back into the file schema (full matrices for `r`, `x`).
    pub fn from_network(net: &NetworkModel, pmu: &[BusId]) -> Self {
        let p = net.phases();
        let lines = net
            .lines()
            .iter()
            .map(|l| {
                let part = |f: fn(&Complex<f64>) -> f64| {
                    if p == 1 {
                        PhaseParam::Scalar(f(&l.series_impedance[(0, 0)]))
                    } else {
                        PhaseParam::Matrix(
                            (0..p)
                                .map(|i| (0..p).map(|j| f(&l.series_impedance[(i, j)])).collect())
                                .collect(),
                        )
                    }
                };
                LineRecord {
                    from: l.from,
                    to: l.to,
                    r: part(|c| c.re),
                    x: part(|c| c.im),
                    b: Some(PhaseParam::PerPhase(
                        l.shunt_susceptance.iter().copied().collect(),
                    )),
                }
            })
            .collect();
        let slack = net.slack();
        NetworkFile {
            phases: p,
            buses: net.buses().to_vec(),
            lines,
            slack: SlackRecord {
                bus: slack.bus,
                v: slack.voltage[0].norm(),
                short_circuit_power: slack.short_circuit_power,
                r_over_x: slack.r_over_x,
            },
            pmu: pmu.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_admittance;

    const DOC_EXAMPLE: &str = r#"{
      "phases": 3,
      "buses": [800, 802, 806],
      "lines": [
        { "from": 800, "to": 802, "r": 0.004, "x": 0.003, "b": 1e-5 },
        { "from": 802, "to": 806, "r": [0.004, 0.004, 0.005], "x": 0.003 }
      ],
      "slack": { "bus": 800, "v": 1.0, "short_circuit_power": 300.0, "r_over_x": 0.1 },
      "pmu": [800, 806]
    }"#;

    #[test]
    fn parses_documented_example() {
        let file: NetworkFile = serde_json::from_str(DOC_EXAMPLE).unwrap();
        let net = file.to_network().unwrap();
        assert_eq!(net.node_count(), 9);
        assert_eq!(
            net.lines()[1].series_impedance[(2, 2)],
            Complex::new(0.005, 0.003)
        );
        assert_eq!(net.lines()[0].shunt_susceptance[1], 1e-5);
        assert_eq!(file.pmu, vec![800, 806]);
    }

    #[test]
    fn round_trips_through_schema() {
        let file: NetworkFile = serde_json::from_str(DOC_EXAMPLE).unwrap();
        let net = file.to_network().unwrap();
        let back = NetworkFile::from_network(&net, &file.pmu)
            .to_network()
            .unwrap();
        assert_eq!(
            build_admittance(&net).unwrap(),
            build_admittance(&back).unwrap()
        );
    }

    #[test]
    fn wrong_phase_count_in_line() {
        let text = DOC_EXAMPLE.replace("[0.004, 0.004, 0.005]", "[0.004, 0.004]");
        let file: NetworkFile = serde_json::from_str(&text).unwrap();
        assert!(matches!(
            file.to_network(),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
