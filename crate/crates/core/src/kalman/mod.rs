//! Discrete Kalman filter with the persistence process model
//! `x_k = x_{k-1} + w_{k-1}`.
//!
//! The batch update exists in three algebraically equivalent forms (gain,
//! information and Joseph); the sequential update processes one scalar
//! measurement at a time and needs a diagonal `R`, trading the `D × D`
//! inversion for `D` scalar divisions.

mod opcount;

pub use opcount::{
    closed_form_op_count, dkf_cycle_counted, sdkf_cycle_counted, Algorithm, InversionModel, OpCount,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::grid::nominal_angle;
use crate::noise::CovarianceDiag;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    APriori,
    APosteriori,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub phase: Phase,
    pub k: usize,
}

impl FilterState {
    pub fn states(&self) -> usize {
        self.x.len()
    }

    /// Largest `|P - Pᵀ|` entry relative to the largest `|P|` entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.p.amax();
        if scale == 0.0 {
            return 0.0;
        }
        (&self.p - self.p.transpose()).amax() / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCovariance {
    Diagonal(CovarianceDiag),
    Dense(DMatrix<f64>),
}

impl NoiseCovariance {
    pub fn dim(&self) -> usize {
        match self {
            NoiseCovariance::Diagonal(d) => d.len(),
            NoiseCovariance::Dense(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            NoiseCovariance::Diagonal(d) => d.to_matrix(),
            NoiseCovariance::Dense(m) => m.clone(),
        }
    }
}

/// One time step worth of measurements: `z = H x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub z: DVector<f64>,
    pub h: DMatrix<f64>,
    pub r: NoiseCovariance,
}

impl MeasurementFrame {
    pub fn new(z: DVector<f64>, h: DMatrix<f64>, r: NoiseCovariance) -> Result<Self> {
        let d = h.nrows();
        if z.len() != d || r.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "z has {} entries, H has {d} rows, R is {}×{}",
                z.len(),
                r.dim(),
                r.dim()
            )));
        }
        if let NoiseCovariance::Dense(m) = &r {
            if !m.is_square() {
                return Err(Error::DimensionMismatch("R is not square".into()));
            }
        }
        Ok(MeasurementFrame { z, h, r })
    }

    pub fn measurements(&self) -> usize {
        self.h.nrows()
    }

    fn check(&self, state: &FilterState) -> Result<()> {
        if self.h.ncols() != state.states() {
            return Err(Error::DimensionMismatch(format!(
                "H has {} columns for {} states",
                self.h.ncols(),
                state.states()
            )));
        }
        if self.z.len() != self.h.nrows() || self.r.dim() != self.h.nrows() {
            return Err(Error::DimensionMismatch(
                "measurement frame is inconsistent".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    /// `K`, `S × D`.
    pub gain: DMatrix<f64>,
    /// `dz = z - H x⁻`.
    pub innovation: DVector<f64>,
    /// `W = H P⁻ Hᵀ + R`.
    pub innovation_covariance: DMatrix<f64>,
}

/// Diagnostics of one scalar step of the sequential update.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDiagnostics {
    pub gain: DVector<f64>,
    pub innovation: f64,
    pub innovation_variance: f64,
}

/// Which recursion the sequential update uses for `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequentialForm {
    /// `K = P hᵀ / W`, `P ← P - K (h P)`.
    A,
    /// `P⁻¹ ← P⁻¹ + hᵀ h / r`, `K = P hᵀ / r`.
    B,
}

/// Every update implementation, for code that wants to pick one at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateVariant {
    Gain,
    Information,
    Joseph,
    Sequential(SequentialForm),
}

impl UpdateVariant {
    pub const ALL: [UpdateVariant; 5] = [
        UpdateVariant::Gain,
        UpdateVariant::Information,
        UpdateVariant::Joseph,
        UpdateVariant::Sequential(SequentialForm::A),
        UpdateVariant::Sequential(SequentialForm::B),
    ];
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// Flat start: unit magnitude with nominal phase angles, `P₀ = diag(Q)`.
pub fn init_state(q: &CovarianceDiag, phases: usize) -> Result<FilterState> {
    let s = q.len();
    if s == 0 || !s.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "state length {s} is not a positive even number"
        )));
    }
    if phases == 0 || !(s / 2).is_multiple_of(phases) {
        return Err(Error::InvalidInput(format!(
            "{} nodes do not split into {phases} phases",
            s / 2
        )));
    }
    let nodes = s / 2;
    let x = DVector::from_fn(s, |i, _| {
        let angle = nominal_angle((i % nodes) % phases, phases);
        if i < nodes {
            angle.cos()
        } else {
            angle.sin()
        }
    });
    Ok(FilterState {
        x,
        p: q.to_matrix(),
        phase: Phase::APosteriori,
        k: 0,
    })
}

/// `x⁻ = x⁺`, `P⁻ = P⁺ + diag(q)`.
pub fn predict(state: &FilterState, q: &DVector<f64>) -> Result<FilterState> {
    if state.phase != Phase::APosteriori {
        return Err(Error::InvalidInput(
            "predict needs an a-posteriori state".into(),
        ));
    }
    if q.len() != state.states() {
        return Err(Error::DimensionMismatch(format!(
            "Q has {} entries for {} states",
            q.len(),
            state.states()
        )));
    }
    if let Some((index, &value)) = q
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
    {
        return Err(Error::NonPositiveVariance { index, value });
    }
    let mut p = state.p.clone();
    for i in 0..q.len() {
        p[(i, i)] += q[i];
    }
    Ok(FilterState {
        x: state.x.clone(),
        p,
        phase: Phase::APriori,
        k: state.k + 1,
    })
}

fn require_a_priori(state: &FilterState, frame: &MeasurementFrame) -> Result<()> {
    if state.phase != Phase::APriori {
        return Err(Error::InvalidInput("update needs an a-priori state".into()));
    }
    frame.check(state)
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Hypothesis(format!("{what} has non-finite entries")));
    }
    Cholesky::new(m).ok_or_else(|| Error::Hypothesis(format!("{what} is not positive definite")))
}

/// `K = P⁻Hᵀ(HP⁻Hᵀ+R)⁻¹`, `x⁺ = x⁻ + K(z − Hx⁻)`, `P⁺ = (I − KH)P⁻`.
pub fn dkf_update_gain_form(
    state: &FilterState,
    frame: &MeasurementFrame,
) -> Result<(FilterState, UpdateDiagnostics)> {
    require_a_priori(state, frame)?;
    let h = &frame.h;
    let ph_t = &state.p * h.transpose();
    let w = h * &ph_t + frame.r.to_matrix();
    let chol = cholesky(w.clone(), "innovation covariance W")?;
    // K = P Hᵀ W⁻¹  ⇔  W Kᵀ = H P (W and P symmetric)
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let innovation = &frame.z - h * &state.x;
    let x = &state.x + &gain * &innovation;
    let mut p = &state.p - &gain * (h * &state.p);
    symmetrize(&mut p);
    let next = FilterState {
        x,
        p,
        phase: Phase::APosteriori,
        k: state.k,
    };
    Ok((
        next,
        UpdateDiagnostics {
            gain,
            innovation,
            innovation_covariance: w,
        },
    ))
}

/// `(P⁺)⁻¹ = (P⁻)⁻¹ + HᵀR⁻¹H`, `K = P⁺HᵀR⁻¹`.
pub fn dkf_update_information_form(
    state: &FilterState,
    frame: &MeasurementFrame,
) -> Result<(FilterState, UpdateDiagnostics)> {
    require_a_priori(state, frame)?;
    let h = &frame.h;
    let r_inv_h = match &frame.r {
        NoiseCovariance::Diagonal(d) => {
            let mut m = h.clone();
            for (i, v) in d.diagonal().iter().enumerate() {
                m.row_mut(i).scale_mut(1.0 / v);
            }
            m
        }
        NoiseCovariance::Dense(r) => cholesky(r.clone(), "R")?.solve(h),
    };
    let prior_info = cholesky(state.p.clone(), "P⁻")?.inverse();
    let mut info = prior_info + h.transpose() * &r_inv_h;
    symmetrize(&mut info);
    let mut p = cholesky(info, "posterior information matrix")?.inverse();
    symmetrize(&mut p);
    let gain = &p * r_inv_h.transpose();
    let innovation = &frame.z - h * &state.x;
    let x = &state.x + &gain * &innovation;
    let w = h * &state.p * h.transpose() + frame.r.to_matrix();
    let next = FilterState {
        x,
        p,
        phase: Phase::APosteriori,
        k: state.k,
    };
    Ok((
        next,
        UpdateDiagnostics {
            gain,
            innovation,
            innovation_covariance: w,
        },
    ))
}

/// Gain-form state update with `P⁺ = (I−KH)P⁻(I−KH)ᵀ + KRKᵀ`.
pub fn joseph_update(state: &FilterState, frame: &MeasurementFrame) -> Result<FilterState> {
    let (gain_state, diag) = dkf_update_gain_form(state, frame)?;
    let p = joseph_covariance(&state.p, &frame.h, &frame.r.to_matrix(), &diag.gain);
    Ok(FilterState { p, ..gain_state })
}

/// Joseph update with a caller-supplied (possibly suboptimal) gain.
pub fn joseph_update_with_gain(
    state: &FilterState,
    frame: &MeasurementFrame,
    gain: &DMatrix<f64>,
) -> Result<FilterState> {
    require_a_priori(state, frame)?;
    if gain.shape() != (state.states(), frame.measurements()) {
        return Err(Error::DimensionMismatch(format!(
            "gain is {:?}",
            gain.shape()
        )));
    }
    let x = &state.x + gain * (&frame.z - &frame.h * &state.x);
    let p = joseph_covariance(&state.p, &frame.h, &frame.r.to_matrix(), gain);
    Ok(FilterState {
        x,
        p,
        phase: Phase::APosteriori,
        k: state.k,
    })
}

fn joseph_covariance(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> DMatrix<f64> {
    let a = DMatrix::identity(p.nrows(), p.nrows()) - k * h;
    &a * p * a.transpose() + k * r * k.transpose()
}

/// Sequential update over the scalar measurements in row order.
pub fn sdkf_update(
    state: &FilterState,
    frame: &MeasurementFrame,
    form: SequentialForm,
) -> Result<(FilterState, Vec<ScalarDiagnostics>)> {
    let order: Vec<usize> = (0..frame.measurements()).collect();
    sdkf_update_ordered(state, frame, form, &order)
}

/// Sequential update visiting the measurements in the given order.
pub fn sdkf_update_ordered(
    state: &FilterState,
    frame: &MeasurementFrame,
    form: SequentialForm,
    order: &[usize],
) -> Result<(FilterState, Vec<ScalarDiagnostics>)> {
    require_a_priori(state, frame)?;
    let r = match &frame.r {
        NoiseCovariance::Diagonal(d) => d.diagonal(),
        NoiseCovariance::Dense(_) => {
            return Err(Error::Hypothesis(
                "sequential update needs a diagonal R".into(),
            ));
        }
    };
    let s = state.states();
    let mut x = state.x.clone();
    let mut p = state.p.clone();
    let mut info = match form {
        SequentialForm::A => None,
        SequentialForm::B => Some(cholesky(p.clone(), "P⁻")?.inverse()),
    };
    let mut steps = Vec::with_capacity(order.len());
    for &i in order {
        let h = frame.h.row(i);
        let dtz = h * &p;
        let w = (&dtz * h.transpose())[(0, 0)] + r[i];
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Hypothesis(format!(
                "scalar innovation variance W = {w} at measurement {i}"
            )));
        }
        let z_hat = (h * &x)[(0, 0)];
        let dz = frame.z[i] - z_hat;
        let gain: DVector<f64> = match info.as_mut() {
            None => {
                let inv_w = 1.0 / w;
                let k = dtz.transpose() * inv_w;
                p -= &k * &dtz;
                k
            }
            Some(lambda) => {
                *lambda += h.transpose() * h / r[i];
                symmetrize(lambda);
                p = cholesky(lambda.clone(), "information matrix")?.inverse();
                &p * h.transpose() / r[i]
            }
        };
        x += &gain * dz;
        steps.push(ScalarDiagnostics {
            gain,
            innovation: dz,
            innovation_variance: w,
        });
    }
    debug_assert_eq!(x.len(), s);
    symmetrize(&mut p);
    Ok((
        FilterState {
            x,
            p,
            phase: Phase::APosteriori,
            k: state.k,
        },
        steps,
    ))
}

/// Runs one update with the chosen implementation.
pub fn update(
    state: &FilterState,
    frame: &MeasurementFrame,
    variant: UpdateVariant,
) -> Result<FilterState> {
    match variant {
        UpdateVariant::Gain => dkf_update_gain_form(state, frame).map(|r| r.0),
        UpdateVariant::Information => dkf_update_information_form(state, frame).map(|r| r.0),
        UpdateVariant::Joseph => joseph_update(state, frame),
        UpdateVariant::Sequential(form) => sdkf_update(state, frame, form).map(|r| r.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> NoiseCovariance {
        NoiseCovariance::Diagonal(CovarianceDiag::new(DVector::from_column_slice(v)).unwrap())
    }

    fn prior(x: &[f64], p: DMatrix<f64>) -> FilterState {
        FilterState {
            x: DVector::from_column_slice(x),
            p,
            phase: Phase::APriori,
            k: 1,
        }
    }

    fn scalar_frame(z: f64, r: f64) -> MeasurementFrame {
        MeasurementFrame::new(
            DVector::from_element(1, z),
            DMatrix::from_element(1, 1, 1.0),
            diag(&[r]),
        )
        .unwrap()
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax() / a.amax().max(b.amax()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn flat_start() {
        let s1 = init_state(
            &CovarianceDiag::new(DVector::from_element(2, 1e-6)).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!(s1.x.as_slice(), &[1.0, 0.0]);
        let s3 = init_state(
            &CovarianceDiag::new(DVector::from_element(6, 1e-6)).unwrap(),
            3,
        )
        .unwrap();
        let h = 3f64.sqrt() / 2.0;
        let expected = [1.0, -0.5, -0.5, 0.0, -h, h];
        for (a, b) in s3.x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s3.p, DMatrix::from_diagonal_element(6, 6, 1e-6));
        assert!(CovarianceDiag::new(DVector::from_vec(vec![1.0, 0.0])).is_err());
        assert!(init_state(
            &CovarianceDiag::new(DVector::from_element(3, 1.0)).unwrap(),
            1
        )
        .is_err());
    }

    #[test]
    fn prediction_examples() {
        let post = FilterState {
            x: DVector::from_vec(vec![1.0, 2.0]),
            p: DMatrix::identity(2, 2),
            phase: Phase::APosteriori,
            k: 0,
        };
        let pre = predict(&post, &DVector::from_element(2, 1e-6)).unwrap();
        assert_eq!(pre.x, post.x);
        assert_eq!(pre.p, DMatrix::from_diagonal_element(2, 2, 1.000001));
        assert_eq!(pre.phase, Phase::APriori);
        assert_eq!(pre.k, 1);
        assert_eq!(predict(&post, &DVector::zeros(2)).unwrap().p, post.p);

        let one = FilterState {
            x: DVector::zeros(1),
            p: DMatrix::from_element(1, 1, 2.0),
            phase: Phase::APosteriori,
            k: 0,
        };
        assert_eq!(
            predict(&one, &DVector::from_element(1, 3.0)).unwrap().p[(0, 0)],
            5.0
        );
        assert!(predict(&pre, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn scalar_update_all_forms() {
        let s = prior(&[0.0], DMatrix::from_element(1, 1, 1.0));
        let f = scalar_frame(1.0, 1.0);
        let (g, d) = dkf_update_gain_form(&s, &f).unwrap();
        for v in [d.gain[(0, 0)], g.x[0], g.p[(0, 0)]] {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let (i, d) = dkf_update_information_form(&s, &f).unwrap();
        assert!((d.gain[(0, 0)] - 0.5).abs() < 1e-15 && (i.x[0] - 0.5).abs() < 1e-15);
        assert!((i.p[(0, 0)] - 0.5).abs() < 1e-15);
        let j = joseph_update(&s, &f).unwrap();
        assert!((j.x[0] - 0.5).abs() < 1e-15 && (j.p[(0, 0)] - 0.5).abs() < 1e-15);
        let (a, _) = sdkf_update(&s, &f, SequentialForm::A).unwrap();
        assert_eq!((a.x[0], a.p[(0, 0)]), (0.5, 0.5));
    }

    #[test]
    fn uninformative_measurement() {
        let s = prior(&[0.3], DMatrix::from_element(1, 1, 1.0));
        let (g, d) = dkf_update_gain_form(&s, &scalar_frame(7.0, 1e12)).unwrap();
        assert!(d.gain[(0, 0)] < 1e-11);
        assert!((g.x[0] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn equal_information_fusion_halves_covariance() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = prior(&[0.0, 0.0], p.clone());
        let f = MeasurementFrame::new(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            NoiseCovariance::Dense(p.clone()),
        )
        .unwrap();
        let (i, _) = dkf_update_information_form(&s, &f).unwrap();
        assert!(rel(&i.p, &(p / 2.0)) < 1e-14);
    }

    #[test]
    fn joseph_with_zero_gain_keeps_prior() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = prior(&[1.0, 2.0], p.clone());
        let f = MeasurementFrame::new(
            DVector::from_vec(vec![5.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            diag(&[0.1]),
        )
        .unwrap();
        let j = joseph_update_with_gain(&s, &f, &DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(j.p, p);
        assert_eq!(j.x, s.x);
    }

    #[test]
    fn sequential_hand_recursion() {
        let s = prior(&[0.0], DMatrix::from_element(1, 1, 1.0));
        let f = MeasurementFrame::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            diag(&[1.0, 1.0]),
        )
        .unwrap();
        let first = sdkf_update_ordered(&s, &f, SequentialForm::A, &[0])
            .unwrap()
            .0;
        assert_eq!((first.x[0], first.p[(0, 0)]), (0.5, 0.5));
        for form in [SequentialForm::A, SequentialForm::B] {
            let (out, steps) = sdkf_update(&s, &f, form).unwrap();
            assert_eq!(steps.len(), 2);
            assert!((out.x[0] - 2.0 / 3.0).abs() < 1e-15);
            assert!((out.p[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        }
        let (batch, _) = dkf_update_gain_form(&s, &f).unwrap();
        assert!((batch.x[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sequential_rejects_dense_r_and_bad_phase() {
        let s = prior(&[0.0], DMatrix::from_element(1, 1, 1.0));
        let f = MeasurementFrame::new(
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            NoiseCovariance::Dense(DMatrix::from_element(1, 1, 1.0)),
        )
        .unwrap();
        assert!(matches!(
            sdkf_update(&s, &f, SequentialForm::A),
            Err(Error::Hypothesis(_))
        ));
        let post = FilterState {
            phase: Phase::APosteriori,
            ..s
        };
        assert!(dkf_update_gain_form(&post, &scalar_frame(1.0, 1.0)).is_err());
    }

    #[test]
    fn indefinite_covariance_is_a_hypothesis_violation() {
        let s = prior(&[0.0], DMatrix::from_element(1, 1, -2.0));
        let err = dkf_update_gain_form(&s, &scalar_frame(1.0, 1.0)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(sdkf_update(&s, &scalar_frame(1.0, 1.0), SequentialForm::A).is_err());
    }
}
