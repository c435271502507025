//! Sensor uncertainty: the polar-to-rectangular variance projection,
//! deterministic Gaussian perturbation of phasors, and the diagonal `Q` and
//! `R` covariance matrices.
//!
//! Random numbers come from ChaCha8 keyed by the scenario seed, with one
//! independent stream per (domain, channel). Gaussian samples use the
//! Box–Muller transform, so every phasor perturbation consumes exactly one
//! uniform pair from its own stream and the result does not depend on the
//! order in which channels are evaluated.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{nominal_angle, NetworkModel, Phasor, SelectorMatrix};

/// Standard deviations of magnitude (pu) and phase (rad) errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarUncertainty {
    pub sigma_m: f64,
    pub sigma_p: f64,
}

impl PolarUncertainty {
    /// Maximum errors are read as three standard deviations.
    pub fn from_max_errors(e_rho: f64, e_phi: f64) -> Self {
        PolarUncertainty {
            sigma_m: e_rho / 3.0,
            sigma_p: e_phi / 3.0,
        }
    }
}

/// Variances `(σ_r², σ_i²)` of the real and imaginary parts of
/// `(|V| + Δ|V|)∠(δ + Δδ)` for independent `Δ|V| ~ N(0, σ_m²)` and
/// `Δδ ~ N(0, σ_p²)`.
pub fn polar_to_rect_variance(mag: f64, delta: f64, sigma_m: f64, sigma_p: f64) -> (f64, f64) {
    let s = sigma_p * sigma_p;
    let e = (-s).exp();
    let (ch, sh) = (s.cosh(), s.sinh());
    let (c2, s2) = (delta.cos().powi(2), delta.sin().powi(2));
    let m2 = mag * mag;
    let sm2 = sigma_m * sigma_m;
    let var_r = m2 * e * (c2 * (ch - 1.0) + s2 * sh) + sm2 * e * (c2 * ch + s2 * sh);
    let var_i = m2 * e * (s2 * (ch - 1.0) + c2 * sh) + sm2 * e * (s2 * ch + c2 * sh);
    (var_r, var_i)
}

/// Independent random streams, separated by purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Measurement = 1,
    Injection = 2,
    Instance = 3,
}

/// Seeded factory of independent Gaussian streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, domain: StreamDomain, index: u64) -> GaussianStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((domain as u64) << 56) | (index & ((1 << 56) - 1)));
        GaussianStream { rng, spare: None }
    }
}

pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One Box–Muller pair of independent standard normals.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        box_muller(u1, u2)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.normal_pair();
        self.spare = Some(b);
        a
    }
}

/// Box–Muller transform of `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`.
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Multiplicative polar perturbation of every phasor:
/// `ρ = (1 + N(0, e_ρ/3))·|x|`, `φ = (1 + N(0, e_φ/3))·∠x`.
///
/// Element `i` draws from measurement stream `first_channel + i`.
pub fn add_polar_noise(
    phasors: &[Phasor],
    e_rho: f64,
    e_phi: f64,
    source: &NoiseSource,
    first_channel: u64,
) -> Vec<Phasor> {
    if e_rho == 0.0 && e_phi == 0.0 {
        return phasors.to_vec();
    }
    let sigma = PolarUncertainty::from_max_errors(e_rho, e_phi);
    phasors
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (gm, gp) = source
                .stream(StreamDomain::Measurement, first_channel + i as u64)
                .normal_pair();
            let rho = (1.0 + sigma.sigma_m * gm) * x.norm();
            let phi = (1.0 + sigma.sigma_p * gp) * x.arg();
            Complex::from_polar(rho, phi)
        })
        .collect()
}

/// Strictly positive diagonal of a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDiag(DVector<f64>);

impl CovarianceDiag {
    pub fn new(diag: DVector<f64>) -> Result<Self> {
        if let Some((index, &value)) = diag
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::NonPositiveVariance { index, value });
        }
        Ok(CovarianceDiag(diag))
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.0)
    }
}

/// Constant diagonal `R` in measurement-vector order
/// `[Re Ṽ; Im Ṽ; Re Ĩ; Im Ĩ]`, projected at the balanced flat profile
/// (unit voltage, nominal phase angles) and at `nominal_current` for the
/// current channels.
pub fn build_measurement_covariance(
    net: &NetworkModel,
    selector: &SelectorMatrix,
    polar: PolarUncertainty,
    nominal_current: f64,
) -> Result<CovarianceDiag> {
    let m = selector.rows();
    let mut r = DVector::zeros(4 * m);
    for (row, &node) in selector.nodes.iter().enumerate() {
        let angle = nominal_angle(node % net.phases(), net.phases());
        let (vr, vi) = polar_to_rect_variance(1.0, angle, polar.sigma_m, polar.sigma_p);
        let (cr, ci) = polar_to_rect_variance(nominal_current, angle, polar.sigma_m, polar.sigma_p);
        r[row] = vr;
        r[m + row] = vi;
        r[2 * m + row] = cr;
        r[3 * m + row] = ci;
    }
    CovarianceDiag::new(r)
}

/// `Q = q·I` with `S` entries.
pub fn build_process_covariance(states: usize, q: f64) -> Result<CovarianceDiag> {
    if states == 0 {
        return Err(Error::InvalidInput(
            "process covariance needs at least one state".into(),
        ));
    }
    if !(q > 0.0) {
        return Err(Error::NonPositiveVariance { index: 0, value: q });
    }
    CovarianceDiag::new(DVector::from_element(states, q))
}
