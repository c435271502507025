//! Stimuli generation and the two filter engines: the golden model (batch
//! gain form, binary64) and the model under test (blocked sequential
//! filter in the configured precision).

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;

use super::files::{Producer, ResponseSet, StimuliSet};
use super::scenario::Scenario;
use crate::block::{cycle_cost, memory_footprint, sdkf_step_blocked, ArithConfig, Precision};
use crate::error::{Error, Result};
use crate::grid::to_state;
use crate::kalman::{
    closed_form_op_count, dkf_update_gain_form, init_state, predict, Algorithm, FilterState,
    InversionModel, MeasurementFrame, NoiseCovariance, Phase,
};
use crate::loadflow::{nodal_currents, LoadFlowSolver};
use crate::noise::{add_polar_noise, CovarianceDiag, NoiseSource};

/// Load flow per step, then polar noise on the PMU voltage and current
/// phasors. Steps are solved in parallel; every step only depends on its
/// own injections and its own noise streams, so the result is independent
/// of the thread count.
pub fn generate_stimuli(scenario: &Scenario) -> Result<StimuliSet> {
    let grid = &scenario.grid;
    let cfg = &scenario.config;
    let solver = LoadFlowSolver::new(&grid.network, &grid.admittance)?;
    let source = NoiseSource::new(cfg.noise.seed);
    let m = grid.selector.rows() as u64;

    let steps: Vec<(DVector<f64>, DVector<f64>, f64)> = scenario
        .injections
        .steps
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let sol = solver.solve(s, &cfg.loadflow).map_err(|e| e.at_step(k))?;
            let current = nodal_currents(&grid.admittance, &sol.v)?;
            let base = k as u64 * 2 * m;
            let v = grid.selector.select(&sol.v);
            let i = grid.selector.select(&current);
            let v_noisy = add_polar_noise(
                v.as_slice(),
                cfg.noise.e_rho,
                cfg.noise.e_phi,
                &source,
                base,
            );
            let i_noisy = add_polar_noise(
                i.as_slice(),
                cfg.noise.e_rho,
                cfg.noise.e_phi,
                &source,
                base + m,
            );
            let z = DVector::from_iterator(
                4 * m as usize,
                v_noisy
                    .iter()
                    .map(|c| c.re)
                    .chain(v_noisy.iter().map(|c| c.im))
                    .chain(i_noisy.iter().map(|c| c.re))
                    .chain(i_noisy.iter().map(|c| c.im)),
            );
            Ok((to_state(&sol.v), z, sol.power_residual))
        })
        .collect::<Result<_>>()?;

    let max_power_residual = steps.iter().map(|s| s.2).fold(0.0, f64::max);
    let (truth, z) = steps.into_iter().map(|(t, z, _)| (t, z)).unzip();
    Ok(StimuliSet {
        buses: grid.network.buses().to_vec(),
        phases: grid.network.phases(),
        pmu: grid.selector.pmu_buses.clone(),
        h: grid.measurement.h.clone(),
        r: scenario.r.diagonal().clone(),
        q: scenario.q.diagonal().clone(),
        x0: None,
        p0: None,
        truth,
        z,
        max_power_residual,
    })
}

fn setup(stimuli: &StimuliSet) -> Result<(FilterState, NoiseCovariance)> {
    stimuli.validate()?;
    if let Some((index, &value)) = stimuli
        .q
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
    {
        return Err(Error::NonPositiveVariance { index, value });
    }
    let r = NoiseCovariance::Diagonal(CovarianceDiag::new(stimuli.r.clone())?);
    let p0 = CovarianceDiag::new(stimuli.p0.clone().unwrap_or_else(|| stimuli.q.clone()))?;
    let state = match &stimuli.x0 {
        Some(x0) => FilterState {
            x: x0.clone(),
            p: p0.to_matrix(),
            phase: Phase::APosteriori,
            k: 0,
        },
        None => init_state(&p0, stimuli.phases)?,
    };
    Ok((state, r))
}

/// Batch filter in binary64: predict, then the gain-form update, per step.
pub fn run_golden(stimuli: &StimuliSet) -> Result<ResponseSet> {
    let (mut state, r) = setup(stimuli)?;
    let mut states = Vec::with_capacity(stimuli.horizon());
    for (k, z) in stimuli.z.iter().enumerate() {
        let frame = MeasurementFrame {
            z: z.clone(),
            h: stimuli.h.clone(),
            r: r.clone(),
        };
        let prior = predict(&state, &stimuli.q).map_err(|e| e.at_step(k))?;
        state = dkf_update_gain_form(&prior, &frame)
            .map_err(|e| e.at_step(k))?
            .0;
        states.push(state.x.clone());
    }
    let mut meta = BTreeMap::new();
    meta.insert("precision".into(), "binary64".into());
    let counts = closed_form_op_count(
        Algorithm::Dkf,
        stimuli.states() as u64,
        stimuli.measurements() as u64,
        InversionModel::default(),
    );
    meta.insert("add_sub".into(), counts.add_sub.to_string());
    meta.insert("mul_div".into(), counts.mul_div.to_string());
    meta.insert(
        "inversion_add_sub".into(),
        counts.inversion_add_sub.to_string(),
    );
    meta.insert(
        "inversion_mul_div".into(),
        counts.inversion_mul_div.to_string(),
    );
    Ok(ResponseSet {
        producer: Producer::Gm,
        meta,
        states,
    })
}

/// Blocked sequential filter with parallelization `p` in `precision`.
pub fn run_mut(
    stimuli: &StimuliSet,
    p: usize,
    precision: Precision,
    arith: &ArithConfig,
) -> Result<ResponseSet> {
    let (mut state, r) = setup(stimuli)?;
    let (s, d) = (stimuli.states(), stimuli.measurements());
    let cost = cycle_cost(s, d, p, arith)?;
    let memory = memory_footprint(s, d, p, arith.budget_words)?;
    let mut states = Vec::with_capacity(stimuli.horizon());
    for (k, z) in stimuli.z.iter().enumerate() {
        let frame = MeasurementFrame {
            z: z.clone(),
            h: stimuli.h.clone(),
            r: r.clone(),
        };
        state = sdkf_step_blocked(&state, &stimuli.q, &frame, p, precision)
            .map_err(|e| e.at_step(k))?;
        states.push(state.x.clone());
    }
    let counts = closed_form_op_count(
        Algorithm::Sdkf,
        s as u64,
        d as u64,
        InversionModel::default(),
    );
    let mut meta = BTreeMap::new();
    meta.insert("precision".into(), format!("binary{}", precision.bits()));
    meta.insert("P".into(), p.to_string());
    meta.insert("cycles_per_step".into(), cost.total_cycles.to_string());
    meta.insert("add_sub".into(), counts.add_sub.to_string());
    meta.insert("mul_div".into(), counts.mul_div.to_string());
    meta.insert("memory_words".into(), memory.words.to_string());
    meta.insert("memory_feasible".into(), memory.feasible.to_string());
    Ok(ResponseSet {
        producer: Producer::Mut,
        meta,
        states,
    })
}
