//! Ground-truth nodal voltages from nodal power injections.
//!
//! Fixed-point current-injection iteration: the slack voltages are held at
//! the source voltage and the remaining rows solve
//! `Y_nn V_n = conj(S_n / V_n) - Y_ns V_s` with `Y_nn` factorized once.
//! Injections follow the generator convention (generation positive, load
//! negative). The slack Norton admittance only touches slack rows, so it has
//! no influence here.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusId, CompoundAdmittance, NetworkModel, Phasor};
use crate::noise::{NoiseSource, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadFlowOptions {
    /// Convergence threshold on `‖ΔV‖∞`, per unit.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LoadFlowOptions {
    fn default() -> Self {
        LoadFlowOptions {
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadFlowSolution {
    pub v: DVector<Phasor>,
    pub iterations: usize,
    /// `‖Y V - conj(S/V)‖∞` over non-slack nodes.
    pub residual: f64,
    /// `max |V conj(Y V) - S|` over non-slack nodes.
    pub power_residual: f64,
}

/// Load-flow solver with the reduced admittance matrix factorized once.
pub struct LoadFlowSolver {
    y: DMatrix<Phasor>,
    free: Vec<usize>,
    slack_voltage: DVector<Phasor>,
    /// `Y_ns V_s` for the free rows.
    slack_coupling: DVector<Phasor>,
    lu: LU<Phasor, Dyn, Dyn>,
}

impl LoadFlowSolver {
    pub fn new(net: &NetworkModel, y: &CompoundAdmittance) -> Result<Self> {
        let n = net.node_count();
        if y.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "Y is {}×{} for {n} nodes",
                y.dim(),
                y.dim()
            )));
        }
        let slack_nodes = net.slack_nodes();
        let mut slack_voltage = DVector::from_element(n, Complex::new(0.0, 0.0));
        for (p, &s) in slack_nodes.iter().enumerate() {
            slack_voltage[s] = net.slack().voltage[p];
        }
        let free: Vec<usize> = (0..n).filter(|i| !slack_nodes.contains(i)).collect();
        let y_nn = y.y.select_rows(&free).select_columns(&free);
        let y_ns = y.y.select_rows(&free).select_columns(&slack_nodes);
        let v_s = DVector::from_iterator(
            slack_nodes.len(),
            slack_nodes.iter().map(|&s| slack_voltage[s]),
        );
        let slack_coupling = y_ns * v_s;
        let lu = y_nn.lu();
        if !free.is_empty() && !lu.is_invertible() {
            return Err(Error::InvalidInput(
                "reduced admittance matrix is singular".into(),
            ));
        }
        Ok(LoadFlowSolver {
            y: y.y.clone(),
            free,
            slack_voltage,
            slack_coupling,
            lu,
        })
    }

    /// Solves for one vector of nodal injections (slack entries are ignored).
    pub fn solve(
        &self,
        injections: &DVector<Phasor>,
        opts: &LoadFlowOptions,
    ) -> Result<LoadFlowSolution> {
        if injections.len() != self.y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} injections for {} nodes",
                injections.len(),
                self.y.nrows()
            )));
        }
        if !(opts.tolerance > 0.0) || opts.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "load flow needs tolerance > 0 and max_iterations >= 1".into(),
            ));
        }
        if injections
            .iter()
            .any(|s| !(s.re.is_finite() && s.im.is_finite()))
        {
            return Err(Error::InvalidInput("non-finite injection".into()));
        }
        let phases = self.slack_voltage.len() - self.free.len();
        // Flat start: every node copies the slack voltage of its phase.
        let slack_of_phase: Vec<Phasor> = (0..self.slack_voltage.len())
            .filter(|i| !self.free.contains(i))
            .map(|i| self.slack_voltage[i])
            .collect();
        let mut v_free = DVector::from_iterator(
            self.free.len(),
            self.free.iter().map(|&i| slack_of_phase[i % phases.max(1)]),
        );
        let s_free =
            DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| injections[i]));

        let mut iterations = 0;
        let mut last_update = 0.0;
        let mut converged = self.free.is_empty();
        while !converged && iterations < opts.max_iterations {
            iterations += 1;
            let mut rhs = DVector::from_element(self.free.len(), Complex::new(0.0, 0.0));
            for (j, (&s, &v)) in s_free.iter().zip(v_free.iter()).enumerate() {
                if v.norm() < 1e-12 {
                    return Err(Error::ZeroVoltage(self.free[j]));
                }
                rhs[j] = (s / v).conj() - self.slack_coupling[j];
            }
            let next = self.lu.solve(&rhs).ok_or_else(|| {
                Error::InvalidInput("reduced admittance matrix is singular".into())
            })?;
            last_update = (&next - &v_free)
                .iter()
                .map(|d| d.norm())
                .fold(0.0, f64::max);
            if !last_update.is_finite() {
                return Err(Error::NonConvergence {
                    iterations,
                    last_update,
                });
            }
            v_free = next;
            converged = last_update <= opts.tolerance;
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations,
                last_update,
            });
        }

        let mut v = self.slack_voltage.clone();
        for (j, &i) in self.free.iter().enumerate() {
            v[i] = v_free[j];
        }
        let current = &self.y * &v;
        let mut residual: f64 = 0.0;
        let mut power_residual: f64 = 0.0;
        for &i in &self.free {
            residual = residual.max((current[i] - (injections[i] / v[i]).conj()).norm());
            power_residual = power_residual.max((v[i] * current[i].conj() - injections[i]).norm());
        }
        Ok(LoadFlowSolution {
            v,
            iterations,
            residual,
            power_residual,
        })
    }
}

/// One-shot convenience wrapper around [`LoadFlowSolver`].
pub fn solve_loadflow(
    net: &NetworkModel,
    y: &CompoundAdmittance,
    injections: &DVector<Phasor>,
    opts: &LoadFlowOptions,
) -> Result<LoadFlowSolution> {
    LoadFlowSolver::new(net, y)?.solve(injections, opts)
}

/// `I = Y V`.
pub fn nodal_currents(y: &CompoundAdmittance, v: &DVector<Phasor>) -> Result<DVector<Phasor>> {
    if v.len() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "V has {} entries, Y is {}×{}",
            v.len(),
            y.dim(),
            y.dim()
        )));
    }
    Ok(&y.y * v)
}

/// Complex nodal power injections per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionProfile {
    pub steps: Vec<DVector<Phasor>>,
}

impl InjectionProfile {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Reads `k,bus,phase,P_pu,Q_pu` rows (header line required, `k` from 0,
    /// `phase` from 1). Missing rows mean zero injection. The horizon is
    /// `horizon` if given, otherwise the largest `k` plus one.
    pub fn from_csv(path: &Path, net: &NetworkModel, horizon: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err(ln + 1, format!("expected 5 fields, found {}", f.len())));
            }
            let k: usize = f[0].parse().map_err(|e| err(ln + 1, format!("k: {e}")))?;
            let bus: BusId = f[1].parse().map_err(|e| err(ln + 1, format!("bus: {e}")))?;
            let phase: usize = f[2]
                .parse()
                .map_err(|e| err(ln + 1, format!("phase: {e}")))?;
            let p: f64 = f[3].parse().map_err(|e| err(ln + 1, format!("P: {e}")))?;
            let q: f64 = f[4].parse().map_err(|e| err(ln + 1, format!("Q: {e}")))?;
            let pos = net
                .bus_position(bus)
                .ok_or_else(|| err(ln + 1, format!("unknown bus {bus}")))?;
            if phase == 0 || phase > net.phases() {
                return Err(err(ln + 1, format!("phase {phase} out of range")));
            }
            if !(p.is_finite() && q.is_finite()) {
                return Err(err(ln + 1, "non-finite power".into()));
            }
            rows.push((k, net.node_index(pos, phase - 1), Complex::new(p, q)));
        }
        let horizon = horizon.unwrap_or_else(|| rows.iter().map(|r| r.0 + 1).max().unwrap_or(0));
        if horizon == 0 {
            return Err(Error::InvalidInput("injection profile is empty".into()));
        }
        let mut steps =
            vec![DVector::from_element(net.node_count(), Complex::new(0.0, 0.0)); horizon];
        for (k, node, s) in rows {
            if k < horizon {
                steps[k][node] += s;
            }
        }
        Ok(InjectionProfile { steps })
    }

    pub fn write_csv(&self, path: &Path, net: &NetworkModel) -> Result<()> {
        let mut out = String::from("k,bus,phase,P_pu,Q_pu\n");
        for (k, s) in self.steps.iter().enumerate() {
            for (pos, &bus) in net.buses().iter().enumerate() {
                for p in 0..net.phases() {
                    let v = s[net.node_index(pos, p)];
                    if v.re != 0.0 || v.im != 0.0 {
                        out += &format!("{k},{bus},{},{:e},{:e}\n", p + 1, v.re, v.im);
                    }
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Random-walk injection profile used when no measured profile is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    /// Buses with generation (active power only). `None`: every fourth
    /// non-slack bus.
    pub generators: Option<Vec<BusId>>,
    /// Buses with load. `None`: every non-slack bus without generation.
    pub loads: Option<Vec<BusId>>,
    /// Initial active load per phase, per unit (positive number).
    pub load_p: f64,
    pub load_power_factor: f64,
    /// Initial generation per phase, per unit.
    pub generation_p: f64,
    /// Standard deviation of the per-step random-walk increment, per unit.
    pub step_std: f64,
    /// Active power stays within `[-bound, bound]`.
    pub bound: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            generators: None,
            loads: None,
            load_p: 0.05,
            load_power_factor: 0.95,
            generation_p: 0.03,
            step_std: 5e-4,
            bound: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeKind {
    Load,
    Generation,
    Idle,
}

impl SyntheticProfile {
    pub fn generate(
        &self,
        net: &NetworkModel,
        horizon: usize,
        source: &NoiseSource,
    ) -> Result<InjectionProfile> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.load_power_factor) || self.load_power_factor == 0.0 {
            return Err(Error::InvalidInput(
                "load power factor must be in (0, 1]".into(),
            ));
        }
        let slack = net.slack().bus;
        let non_slack: Vec<BusId> = net
            .buses()
            .iter()
            .copied()
            .filter(|&b| b != slack)
            .collect();
        let generators: Vec<BusId> = match &self.generators {
            Some(g) => g.clone(),
            None => non_slack.iter().copied().skip(3).step_by(4).collect(),
        };
        let loads: Vec<BusId> = match &self.loads {
            Some(l) => l.clone(),
            None => non_slack
                .iter()
                .copied()
                .filter(|b| !generators.contains(b))
                .collect(),
        };
        let mut kind: HashMap<BusId, NodeKind> = HashMap::new();
        for &b in &loads {
            kind.insert(b, NodeKind::Load);
        }
        for &b in &generators {
            kind.insert(b, NodeKind::Generation);
        }
        for b in kind.keys() {
            if net.bus_position(*b).is_none() {
                return Err(Error::InvalidInput(format!(
                    "profile references unknown bus {b}"
                )));
            }
        }
        let tan_phi = (1.0 - self.load_power_factor.powi(2)).sqrt() / self.load_power_factor;

        let n = net.node_count();
        let mut steps = vec![DVector::from_element(n, Complex::new(0.0, 0.0)); horizon];
        for (pos, &bus) in net.buses().iter().enumerate() {
            if bus == slack {
                continue;
            }
            let kind = kind.get(&bus).copied().unwrap_or(NodeKind::Idle);
            let (p, lo, hi) = match kind {
                NodeKind::Load => (-self.load_p, -self.bound, 0.0),
                NodeKind::Generation => (self.generation_p, 0.0, self.bound),
                NodeKind::Idle => continue,
            };
            for ph in 0..net.phases() {
                let node = net.node_index(pos, ph);
                let mut stream = source.stream(StreamDomain::Injection, node as u64);
                let mut level = p;
                for step in steps.iter_mut() {
                    let q = if kind == NodeKind::Load {
                        level * tan_phi
                    } else {
                        0.0
                    };
                    step[node] = Complex::new(level, q);
                    level = (level + self.step_std * stream.next_normal()).clamp(lo, hi);
                }
            }
        }
        Ok(InjectionProfile { steps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{
        build_admittance, build_branch_admittance, build_network, LineSpec, SlackSpec,
    };

    fn two_bus_resistive() -> NetworkModel {
        build_network(
            vec![1, 2],
            1,
            vec![LineSpec::balanced(1, 2, Complex::new(0.1, 0.0), 0.0, 1)],
            SlackSpec::balanced(1, 1.0, 1, 300.0, 0.1),
        )
        .unwrap()
    }

    fn load(p: f64) -> DVector<Phasor> {
        DVector::from_vec(vec![Complex::new(0.0, 0.0), Complex::new(-p, 0.0)])
    }

    #[test]
    fn zero_injection_gives_flat_profile() {
        let net = crate::grid::synthetic_feeder(&crate::grid::FeederSpec {
            b: 0.0,
            ..Default::default()
        })
        .unwrap();
        let y = build_admittance(&net).unwrap();
        let zero = DVector::from_element(net.node_count(), Complex::new(0.0, 0.0));
        let sol = solve_loadflow(&net, &y, &zero, &LoadFlowOptions::default()).unwrap();
        for (i, v) in sol.v.iter().enumerate() {
            let expected = net.slack().voltage[i % 3];
            assert!((v - expected).norm() < 1e-12);
        }
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn two_bus_closed_form() {
        let net = two_bus_resistive();
        let y = build_admittance(&net).unwrap();
        let p = 0.1;
        let sol = solve_loadflow(&net, &y, &load(p), &LoadFlowOptions::default()).unwrap();
        // V² - V + P r = 0
        let expected = (1.0 + (1.0 - 4.0 * p * 0.1f64).sqrt()) / 2.0;
        assert!((sol.v[1].re - expected).abs() < 1e-8);
        assert!(sol.v[1].im.abs() < 1e-12);
        assert!((sol.v[1].re - 0.989898).abs() < 1e-6);

        let i = nodal_currents(&y, &sol.v).unwrap();
        let s2 = sol.v[1] * i[1].conj();
        assert!((s2 - Complex::new(-0.1, 0.0)).norm() < 1e-7);
        assert!(sol.power_residual < 1e-8);
    }

    #[test]
    fn no_real_solution_does_not_converge() {
        let net = two_bus_resistive();
        let y = build_branch_admittance(&net).unwrap();
        let err = solve_loadflow(&net, &y, &load(3.0), &LoadFlowOptions::default()).unwrap_err();
        assert!(
            matches!(err, Error::NonConvergence { .. } | Error::ZeroVoltage(_)),
            "{err}"
        );
    }

    #[test]
    fn nodal_current_examples() {
        let y = CompoundAdmittance {
            y: DMatrix::identity(2, 2),
        };
        let v = DVector::from_vec(vec![Complex::new(0.2, 0.1), Complex::new(-1.0, 3.0)]);
        assert_eq!(nodal_currents(&y, &v).unwrap(), v);

        let z = Complex::new(1.0, 0.0) / Complex::new(1.0, -2.0);
        let net = build_network(
            vec![1, 2],
            1,
            vec![LineSpec::balanced(1, 2, z, 0.0, 1)],
            SlackSpec::balanced(1, 1.0, 1, 300.0, 0.1),
        )
        .unwrap();
        let yb = build_branch_admittance(&net).unwrap();
        let ones = DVector::from_element(2, Complex::new(1.0, 0.0));
        assert!(nodal_currents(&yb, &ones)
            .unwrap()
            .iter()
            .all(|c| c.norm() < 1e-12));
        assert!(nodal_currents(&yb, &DVector::from_element(3, ones[0])).is_err());
    }

    #[test]
    fn lighter_load_raises_voltage() {
        let net = crate::grid::synthetic_feeder(&crate::grid::FeederSpec::default()).unwrap();
        let y = build_admittance(&net).unwrap();
        let solver = LoadFlowSolver::new(&net, &y).unwrap();
        let profile = SyntheticProfile::default()
            .generate(&net, 1, &NoiseSource::new(3))
            .unwrap();
        let full = solver
            .solve(&profile.steps[0], &LoadFlowOptions::default())
            .unwrap();
        let loads_only = profile.steps[0].map(|s| {
            if s.re < 0.0 {
                s
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        let heavy = solver
            .solve(&loads_only, &LoadFlowOptions::default())
            .unwrap();
        let half = solver
            .solve(
                &(loads_only * Complex::new(0.5, 0.0)),
                &LoadFlowOptions::default(),
            )
            .unwrap();
        for i in 0..net.node_count() {
            assert!(half.v[i].norm() >= heavy.v[i].norm() - 1e-12);
        }
        assert!(full.power_residual < 1e-7);
    }

    #[test]
    fn deterministic() {
        let net = crate::grid::synthetic_feeder(&crate::grid::FeederSpec::default()).unwrap();
        let y = build_admittance(&net).unwrap();
        let profile = SyntheticProfile::default()
            .generate(&net, 3, &NoiseSource::new(11))
            .unwrap();
        let a = solve_loadflow(&net, &y, &profile.steps[2], &LoadFlowOptions::default()).unwrap();
        let b = solve_loadflow(&net, &y, &profile.steps[2], &LoadFlowOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let net = crate::grid::synthetic_feeder(&crate::grid::FeederSpec::default()).unwrap();
        let profile = SyntheticProfile::default()
            .generate(&net, 4, &NoiseSource::new(1))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inj.csv");
        profile.write_csv(&path, &net).unwrap();
        let back = InjectionProfile::from_csv(&path, &net, None).unwrap();
        assert_eq!(back, profile);
    }
}
