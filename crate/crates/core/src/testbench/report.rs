//! Estimation-error and GM/MUT mismatch statistics in polar coordinates.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use super::files::{ResponseSet, StimuliSet};
use crate::error::{Error, Result};
use crate::grid::{from_state, BusId};

/// Five-number summary with linear interpolation between order statistics:
/// the `p`-quantile of sorted `x₀ ≤ … ≤ x_{n-1}` is read at position
/// `p·(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("no samples".into()));
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("NaN sample".into()));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let h = p * (s.len() - 1) as f64;
            let lo = h.floor() as usize;
            if lo + 1 >= s.len() {
                s[lo]
            } else {
                s[lo] + (h - lo as f64) * (s[lo + 1] - s[lo])
            }
        };
        Ok(Quantiles {
            min: s[0],
            q25: at(0.25),
            median: at(0.5),
            q75: at(0.75),
            max: s[s.len() - 1],
        })
    }

    pub fn iqr(&self) -> (f64, f64) {
        (self.q25, self.q75)
    }
}

/// `a - b` mapped into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut d = (a + PI).rem_euclid(2.0 * PI) - PI;
    if d == -PI {
        d = PI;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelReport {
    pub bus: BusId,
    /// Phase index starting at 1.
    pub phase: usize,
    pub gm_magnitude_error: Quantiles,
    pub gm_phase_error: Quantiles,
    pub mut_magnitude_error: Quantiles,
    pub mut_phase_error: Quantiles,
    pub magnitude_mismatch: Quantiles,
    pub phase_mismatch: Quantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub channels: Vec<ChannelReport>,
    /// `|MUT − GM|` pooled over every channel and step.
    pub abs_magnitude_mismatch: Quantiles,
    pub abs_phase_mismatch: Quantiles,
    /// Response header entries (operation and cycle counts).
    pub gm_meta: Vec<(String, String)>,
    pub mut_meta: Vec<(String, String)>,
    pub skipped_steps: usize,
}

struct Polar {
    mag: Vec<f64>,
    angle: Vec<f64>,
}

fn polar(x: &DVector<f64>) -> Polar {
    let v = from_state(x);
    Polar {
        mag: v.iter().map(|c| c.norm()).collect(),
        angle: v.iter().map(|c| c.arg()).collect(),
    }
}

/// Error is estimate − truth, mismatch is MUT − GM, both per (bus, phase)
/// in magnitude (pu) and angle (rad, wrapped). The first `skip` steps are
/// left out of the statistics.
pub fn compare_responses(
    truth: &StimuliSet,
    gm: &ResponseSet,
    mut_: &ResponseSet,
    skip: usize,
) -> Result<ErrorReport> {
    let k = truth.horizon();
    if gm.horizon() != k || mut_.horizon() != k {
        return Err(Error::DimensionMismatch(format!(
            "horizons differ: truth {k}, GM {}, MUT {}",
            gm.horizon(),
            mut_.horizon()
        )));
    }
    if skip >= k {
        return Err(Error::InvalidInput(format!(
            "cannot skip {skip} of {k} steps"
        )));
    }
    let s = truth.states();
    if gm.states.iter().chain(&mut_.states).any(|x| x.len() != s) {
        return Err(Error::DimensionMismatch(format!(
            "responses do not have {s} states"
        )));
    }
    if truth.phases == 0 || s != 2 * truth.buses.len() * truth.phases {
        return Err(Error::DimensionMismatch(
            "stimuli carry no bus/phase layout".into(),
        ));
    }
    let nodes = s / 2;
    let steps = k - skip;
    let mut samples: Vec<Vec<Vec<f64>>> = (0..nodes)
        .map(|_| (0..6).map(|_| Vec::with_capacity(steps)).collect())
        .collect();
    for step in skip..k {
        let t = polar(&truth.truth[step]);
        let g = polar(&gm.states[step]);
        let m = polar(&mut_.states[step]);
        for (n, row) in samples.iter_mut().enumerate() {
            row[0].push(g.mag[n] - t.mag[n]);
            row[1].push(wrap_angle(g.angle[n] - t.angle[n]));
            row[2].push(m.mag[n] - t.mag[n]);
            row[3].push(wrap_angle(m.angle[n] - t.angle[n]));
            row[4].push(m.mag[n] - g.mag[n]);
            row[5].push(wrap_angle(m.angle[n] - g.angle[n]));
        }
    }
    let mut channels = Vec::with_capacity(nodes);
    for (n, row) in samples.iter().enumerate() {
        channels.push(ChannelReport {
            bus: truth.buses[n / truth.phases],
            phase: n % truth.phases + 1,
            gm_magnitude_error: Quantiles::of(&row[0])?,
            gm_phase_error: Quantiles::of(&row[1])?,
            mut_magnitude_error: Quantiles::of(&row[2])?,
            mut_phase_error: Quantiles::of(&row[3])?,
            magnitude_mismatch: Quantiles::of(&row[4])?,
            phase_mismatch: Quantiles::of(&row[5])?,
        });
    }
    let pooled = |i: usize| -> Vec<f64> {
        samples
            .iter()
            .flat_map(|r| r[i].iter().map(|v| v.abs()))
            .collect()
    };
    Ok(ErrorReport {
        channels,
        abs_magnitude_mismatch: Quantiles::of(&pooled(4))?,
        abs_phase_mismatch: Quantiles::of(&pooled(5))?,
        gm_meta: gm
            .meta
            .iter()
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect(),
        mut_meta: mut_
            .meta
            .iter()
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect(),
        skipped_steps: skip,
    })
}

impl ErrorReport {
    /// `bus,phase,metric,min,q25,median,q75,max` rows, then the pooled
    /// mismatch rows (`bus = all`) and the response metadata as comments.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bus,phase,metric,min,q25,median,q75,max\n");
        let mut row = |bus: &str, phase: &str, metric: &str, q: &Quantiles| {
            let _ = writeln!(
                out,
                "{bus},{phase},{metric},{:e},{:e},{:e},{:e},{:e}",
                q.min, q.q25, q.median, q.q75, q.max
            );
        };
        for c in &self.channels {
            let (b, p) = (c.bus.to_string(), c.phase.to_string());
            row(&b, &p, "gm_magnitude_error", &c.gm_magnitude_error);
            row(&b, &p, "gm_phase_error", &c.gm_phase_error);
            row(&b, &p, "mut_magnitude_error", &c.mut_magnitude_error);
            row(&b, &p, "mut_phase_error", &c.mut_phase_error);
            row(&b, &p, "magnitude_mismatch", &c.magnitude_mismatch);
            row(&b, &p, "phase_mismatch", &c.phase_mismatch);
        }
        row(
            "all",
            "all",
            "abs_magnitude_mismatch",
            &self.abs_magnitude_mismatch,
        );
        row("all", "all", "abs_phase_mismatch", &self.abs_phase_mismatch);
        let _ = writeln!(out, "# skipped_steps={}", self.skipped_steps);
        for (k, v) in &self.gm_meta {
            let _ = writeln!(out, "# gm.{k}={v}");
        }
        for (k, v) in &self.mut_meta {
            let _ = writeln!(out, "# mut.{k}={v}");
        }
        out
    }
}
