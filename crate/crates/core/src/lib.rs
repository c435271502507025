//! Linear state estimation for multi-phase distribution grids observed by
//! phasor measurement units.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`] builds the compound admittance matrix, the PMU selector and the
//!   linear measurement matrix.
//! * [`loadflow`] produces ground-truth nodal voltages from power injections.
//! * [`noise`] perturbs phasors in polar coordinates and builds the `Q` and
//!   `R` covariance matrices.
//! * [`kalman`] holds the batch and sequential filter updates and the
//!   operation-count model.
//! * [`block`] emulates a partitioned single-precision datapath running the
//!   sequential filter, with cycle, memory and DSP estimators.
//! * [`testbench`] ties everything into stimuli/response files, golden model
//!   versus model-under-test comparison and scalability sweeps.
//!
//! State vectors are laid out as `[Re V; Im V]` with nodes ordered
//! bus-major, phase-minor. Measurement vectors are `[Re ΓV; Im ΓV; Re ΓI; Im ΓI]`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod block;
pub mod error;
pub mod grid;
pub mod kalman;
pub mod loadflow;
pub mod noise;
pub mod testbench;

pub use error::{Error, Result};
