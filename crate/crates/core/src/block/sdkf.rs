//! One full filter cycle (prediction plus sequential update) built only from
//! the blocked primitives.

use nalgebra::{DMatrix, DVector};

use super::{
    inner_product_tree, mat_add, mat_sub, matvec_transposed, outer, vec_add, vec_scale,
    BlockedMatrix, BlockedVector, Precision, Real,
};
use crate::error::{Error, Result};
use crate::kalman::{FilterState, MeasurementFrame, NoiseCovariance, Phase};

/// Predict with `diag(q)` and update with every row of `frame`, in the given
/// precision. The returned state holds the datapath values widened to `f64`.
pub fn sdkf_step_blocked(
    state: &FilterState,
    q: &DVector<f64>,
    frame: &MeasurementFrame,
    p: usize,
    precision: Precision,
) -> Result<FilterState> {
    match precision {
        Precision::Binary32 => sdkf_step_blocked_typed::<f32>(state, q, frame, p),
        Precision::Binary64 => sdkf_step_blocked_typed::<f64>(state, q, frame, p),
    }
}

pub fn sdkf_step_blocked_typed<T: Real>(
    state: &FilterState,
    q: &DVector<f64>,
    frame: &MeasurementFrame,
    p: usize,
) -> Result<FilterState> {
    if state.phase != Phase::APosteriori {
        return Err(Error::InvalidInput(
            "a filter cycle starts from an a-posteriori state".into(),
        ));
    }
    let s = state.states();
    if q.len() != s || frame.h.ncols() != s || frame.z.len() != frame.h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "state {s}, Q {}, H {}×{}, z {}",
            q.len(),
            frame.h.nrows(),
            frame.h.ncols(),
            frame.z.len()
        )));
    }
    let r = match &frame.r {
        NoiseCovariance::Diagonal(d) if d.len() == frame.h.nrows() => d.diagonal(),
        NoiseCovariance::Diagonal(_) => {
            return Err(Error::DimensionMismatch("R does not match H".into()))
        }
        NoiseCovariance::Dense(_) => {
            return Err(Error::Hypothesis(
                "sequential update needs a diagonal R".into(),
            ))
        }
    };

    let mut cov = BlockedMatrix::<T>::from_f64(&state.p, p)?;
    let mut x = BlockedVector::<T>::from_f64(&state.x, p)?;
    let q_diag = BlockedMatrix::<T>::from_f64(&DMatrix::from_diagonal(q), p)?;
    cov = mat_add(&cov, &q_diag)?;

    let h_rows: Vec<BlockedVector<T>> = (0..frame.h.nrows())
        .map(|i| BlockedVector::from_f64(&frame.h.row(i).transpose(), p))
        .collect::<Result<_>>()?;
    for (i, h) in h_rows.iter().enumerate() {
        let dtz = matvec_transposed(&cov, h)?;
        let dr = inner_product_tree(dtz.as_padded(), h.as_padded(), p)?;
        let w = T::from_f64(r[i]) + dr;
        if !(w > T::ZERO) || !w.to_f64().is_finite() {
            return Err(Error::Hypothesis(format!(
                "scalar innovation variance W = {w:?} at measurement {i}"
            )));
        }
        let inv_w = T::ONE / w;
        let k = vec_scale(&dtz, inv_w);
        let z_hat = inner_product_tree(h.as_padded(), x.as_padded(), p)?;
        let dz = T::from_f64(frame.z[i]) - z_hat;
        x = vec_add(&x, &vec_scale(&k, dz))?;
        cov = mat_sub(&cov, &outer(&k, &dtz)?)?;
    }

    let half = T::from_f64(0.5);
    let dense = cov.unpartition();
    let sym = DMatrix::from_fn(s, s, |a, b| {
        if a == b {
            dense[(a, a)]
        } else {
            (dense[(a, b)] + dense[(b, a)]) * half
        }
    });
    Ok(FilterState {
        x: x.to_f64(),
        p: sym.map(T::to_f64),
        phase: Phase::APosteriori,
        k: state.k + 1,
    })
}
