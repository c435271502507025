//! Closed-form operation counts per filter cycle (one prediction plus one
//! estimation step) and instrumented executions that count every scalar
//! operation they perform.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{FilterState, MeasurementFrame, NoiseCovariance, Phase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Algorithm {
    Dkf,
    Sdkf,
}

/// Cost attributed to inverting the `D × D` innovation covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InversionModel {
    /// `m = n = D³`.
    #[default]
    GaussJordan,
    Explicit {
        add_sub: u64,
        mul_div: u64,
    },
}

impl InversionModel {
    fn counts(self, d: u64) -> (u64, u64) {
        match self {
            InversionModel::GaussJordan => (d * d * d, d * d * d),
            InversionModel::Explicit { add_sub, mul_div } => (add_sub, mul_div),
        }
    }
}

/// Scalar operation counts. The matrix-inversion terms are kept apart from
/// the rest so scaling checks do not depend on the inversion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OpCount {
    pub add_sub: u64,
    pub mul_div: u64,
    pub inversion_add_sub: u64,
    pub inversion_mul_div: u64,
}

impl OpCount {
    pub fn total_add_sub(&self) -> u64 {
        self.add_sub + self.inversion_add_sub
    }

    pub fn total_mul_div(&self) -> u64 {
        self.mul_div + self.inversion_mul_div
    }
}

pub fn closed_form_op_count(
    algorithm: Algorithm,
    s: u64,
    d: u64,
    inversion: InversionModel,
) -> OpCount {
    let prediction = s;
    match algorithm {
        Algorithm::Sdkf => OpCount {
            add_sub: prediction + d * s * (s - 1) + d * s + 2 * d * s + d * s * s,
            mul_div: d * s * s + d * (2 * s + 1) + 2 * d * s + d * s * s,
            ..OpCount::default()
        },
        Algorithm::Dkf => {
            let (m, n) = inversion.counts(d);
            // 2D²S + D(1 − D − S) = D²(S − 1) + D + D(D − 1)S
            let gain_add = d * d * (s - 1) + d + d * (d - 1) * s;
            OpCount {
                add_sub: prediction + d * s * (s - 1) + gain_add + 2 * d * s + d * s * s,
                mul_div: d * s * s + 2 * d * d * s + 2 * d * s + d * s * s,
                inversion_add_sub: m,
                inversion_mul_div: n,
            }
        }
    }
}

#[derive(Default)]
struct Counter {
    add_sub: u64,
    mul_div: u64,
}

impl Counter {
    fn add(&mut self, a: f64, b: f64) -> f64 {
        self.add_sub += 1;
        a + b
    }

    fn sub(&mut self, a: f64, b: f64) -> f64 {
        self.add_sub += 1;
        a - b
    }

    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.mul_div += 1;
        a * b
    }

    fn div(&mut self, a: f64, b: f64) -> f64 {
        self.mul_div += 1;
        a / b
    }

    /// `Σ aᵢ bᵢ` with `n` products and `n − 1` additions.
    fn dot(&mut self, a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
        let mut acc: Option<f64> = None;
        for (x, y) in a.zip(b) {
            let p = self.mul(x, y);
            acc = Some(match acc {
                None => p,
                Some(s) => self.add(s, p),
            });
        }
        acc.unwrap_or(0.0)
    }

    fn into_count(self) -> OpCount {
        OpCount {
            add_sub: self.add_sub,
            mul_div: self.mul_div,
            ..OpCount::default()
        }
    }
}

fn check_cycle(state: &FilterState, q: &DVector<f64>, frame: &MeasurementFrame) -> Result<()> {
    if state.phase != Phase::APosteriori {
        return Err(Error::InvalidInput(
            "a filter cycle starts from an a-posteriori state".into(),
        ));
    }
    if q.len() != state.states() {
        return Err(Error::DimensionMismatch(format!(
            "Q has {} entries for {} states",
            q.len(),
            state.states()
        )));
    }
    frame.check(state)
}

fn predict_counted(c: &mut Counter, state: &FilterState, q: &DVector<f64>) -> DMatrix<f64> {
    let mut p = state.p.clone();
    for i in 0..q.len() {
        p[(i, i)] = c.add(p[(i, i)], q[i]);
    }
    p
}

/// One predict + sequential update (form A) with every scalar operation
/// counted. Returns the un-symmetrized posterior.
pub fn sdkf_cycle_counted(
    state: &FilterState,
    q: &DVector<f64>,
    frame: &MeasurementFrame,
) -> Result<(FilterState, OpCount)> {
    check_cycle(state, q, frame)?;
    let r = match &frame.r {
        NoiseCovariance::Diagonal(d) => d.diagonal().clone(),
        NoiseCovariance::Dense(_) => {
            return Err(Error::Hypothesis(
                "sequential update needs a diagonal R".into(),
            ))
        }
    };
    let s = state.states();
    let mut c = Counter::default();
    let mut p = predict_counted(&mut c, state, q);
    let mut x = state.x.clone();
    for i in 0..frame.measurements() {
        let h = frame.h.row(i);
        let dtz: Vec<f64> = (0..s)
            .map(|col| c.dot(h.iter().copied(), p.column(col).iter().copied()))
            .collect();
        let dr = c.dot(dtz.iter().copied(), h.iter().copied());
        let w = c.add(r[i], dr);
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Hypothesis(format!(
                "scalar innovation variance W = {w} at measurement {i}"
            )));
        }
        let inv_w = c.div(1.0, w);
        let k: Vec<f64> = dtz.iter().map(|&t| c.mul(t, inv_w)).collect();
        let z_hat = c.dot(h.iter().copied(), x.iter().copied());
        let dz = c.sub(frame.z[i], z_hat);
        for a in 0..s {
            let dx = c.mul(k[a], dz);
            x[a] = c.add(x[a], dx);
        }
        for a in 0..s {
            for b in 0..s {
                let dp = c.mul(k[a], dtz[b]);
                p[(a, b)] = c.sub(p[(a, b)], dp);
            }
        }
    }
    let next = FilterState {
        x,
        p,
        phase: Phase::APosteriori,
        k: state.k + 1,
    };
    Ok((next, c.into_count()))
}

/// One predict + batch gain-form update with every scalar operation counted,
/// except the inversion of `W`, whose cost comes from `inversion`.
pub fn dkf_cycle_counted(
    state: &FilterState,
    q: &DVector<f64>,
    frame: &MeasurementFrame,
    inversion: InversionModel,
) -> Result<(FilterState, OpCount)> {
    check_cycle(state, q, frame)?;
    let r = frame.r.to_matrix();
    let (s, d) = (state.states(), frame.measurements());
    let h = &frame.h;
    let mut c = Counter::default();
    let mut p = predict_counted(&mut c, state, q);

    let dtz = DMatrix::from_fn(d, s, |i, j| {
        c.dot(h.row(i).iter().copied(), p.column(j).iter().copied())
    });
    let dr = DMatrix::from_fn(d, d, |i, j| {
        c.dot(dtz.row(i).iter().copied(), h.row(j).iter().copied())
    });
    let mut w = dr;
    for i in 0..d {
        w[(i, i)] = c.add(r[(i, i)], w[(i, i)]);
    }
    for i in 0..d {
        for j in 0..d {
            if i != j {
                w[(i, j)] += r[(i, j)];
            }
        }
    }
    let w_inv = w
        .try_inverse()
        .ok_or_else(|| Error::Hypothesis("innovation covariance W is singular".into()))?;
    let k = DMatrix::from_fn(s, d, |i, j| {
        c.dot(
            dtz.column(i).iter().copied(),
            w_inv.column(j).iter().copied(),
        )
    });
    let z_hat: Vec<f64> = (0..d)
        .map(|i| c.dot(h.row(i).iter().copied(), state.x.iter().copied()))
        .collect();
    let dz: Vec<f64> = (0..d).map(|i| c.sub(frame.z[i], z_hat[i])).collect();
    let mut x = state.x.clone();
    for a in 0..s {
        let dx = c.dot(k.row(a).iter().copied(), dz.iter().copied());
        x[a] = c.add(x[a], dx);
    }
    let dp = DMatrix::from_fn(s, s, |a, b| {
        c.dot(k.row(a).iter().copied(), dtz.column(b).iter().copied())
    });
    for a in 0..s {
        for b in 0..s {
            p[(a, b)] = c.sub(p[(a, b)], dp[(a, b)]);
        }
    }
    let (m, n) = inversion.counts(d as u64);
    let mut count = c.into_count();
    count.inversion_add_sub = m;
    count.inversion_mul_div = n;
    Ok((
        FilterState {
            x,
            p,
            phase: Phase::APosteriori,
            k: state.k + 1,
        },
        count,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::CovarianceDiag;

    #[test]
    fn table_substitutions() {
        let sdkf = closed_form_op_count(Algorithm::Sdkf, 2, 2, InversionModel::default());
        assert_eq!(sdkf.mul_div, 34);
        assert_eq!(sdkf.add_sub, 26);
        assert_eq!(sdkf.inversion_mul_div, 0);
        let dkf = closed_form_op_count(
            Algorithm::Dkf,
            1,
            1,
            InversionModel::Explicit {
                add_sub: 1,
                mul_div: 1,
            },
        );
        assert_eq!(dkf.total_mul_div(), 7);
    }

    #[test]
    fn sdkf_is_linear_in_d() {
        for s in 1..10 {
            for d in 1..10 {
                let c = |d| closed_form_op_count(Algorithm::Sdkf, s, d, InversionModel::default());
                let base = c(0);
                assert_eq!(
                    c(2 * d).mul_div - base.mul_div,
                    2 * (c(d).mul_div - base.mul_div)
                );
                assert_eq!(
                    c(2 * d).add_sub - base.add_sub,
                    2 * (c(d).add_sub - base.add_sub)
                );
            }
        }
    }

    #[test]
    fn counted_scalar_cycle() {
        let state = FilterState {
            x: DVector::zeros(1),
            p: DMatrix::from_element(1, 1, 0.5),
            phase: Phase::APosteriori,
            k: 0,
        };
        let frame = MeasurementFrame::new(
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            NoiseCovariance::Diagonal(CovarianceDiag::new(DVector::from_element(1, 1.0)).unwrap()),
        )
        .unwrap();
        let q = DVector::from_element(1, 0.5);
        let (out, count) = sdkf_cycle_counted(&state, &q, &frame).unwrap();
        assert_eq!((out.x[0], out.p[(0, 0)]), (0.5, 0.5));
        assert_eq!(
            count,
            closed_form_op_count(Algorithm::Sdkf, 1, 1, InversionModel::default())
        );
        let (out, count) = dkf_cycle_counted(
            &state,
            &q,
            &frame,
            InversionModel::Explicit {
                add_sub: 0,
                mul_div: 1,
            },
        )
        .unwrap();
        assert_eq!((out.x[0], out.p[(0, 0)]), (0.5, 0.5));
        assert_eq!(
            count,
            closed_form_op_count(
                Algorithm::Dkf,
                1,
                1,
                InversionModel::Explicit {
                    add_sub: 0,
                    mul_div: 1
                }
            )
        );
    }
}
