//! Analytic cycle, memory and DSP models of the partitioned datapath.
//!
//! These are reference models: they reproduce the shape of the hardware
//! costs (matrix work sped up by `P²`, vector work by `P`, a scalar
//! dependency chain per measurement), not absolute timings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One pipelined arithmetic block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArithUnit {
    /// Results per cycle.
    pub throughput: f64,
    /// Cycles from operands to result.
    pub latency: u64,
    /// DSP slices per instance.
    pub dsp: u64,
}

impl ArithUnit {
    fn cycles(&self, results: u64) -> u64 {
        (results as f64 / self.throughput).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArithConfig {
    pub add_sub: ArithUnit,
    pub mul: ArithUnit,
    pub sum: ArithUnit,
    pub div: ArithUnit,
    /// Storage budget in scalars; `None` uses [`default_budget_words`].
    pub budget_words: Option<u64>,
}

impl Default for ArithConfig {
    fn default() -> Self {
        ArithConfig {
            add_sub: ArithUnit {
                throughput: 1.0,
                latency: 5,
                dsp: 2,
            },
            mul: ArithUnit {
                throughput: 1.0,
                latency: 2,
                dsp: 3,
            },
            sum: ArithUnit {
                throughput: 1.0,
                latency: 20,
                dsp: 9,
            },
            div: ArithUnit {
                throughput: 1.0,
                latency: 20,
                dsp: 8,
            },
            budget_words: None,
        }
    }
}

impl ArithConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, u) in [
            ("add_sub", self.add_sub),
            ("mul", self.mul),
            ("sum", self.sum),
            ("div", self.div),
        ] {
            if !(u.throughput > 0.0 && u.throughput.is_finite()) || u.latency < 1 {
                return Err(Error::InvalidInput(format!(
                    "{name}: throughput must be positive and latency at least 1"
                )));
            }
        }
        Ok(())
    }

    /// Latency of the scalar chain `dR → W → W⁻¹ → dz → dx` that every
    /// sequential step has to wait for: `× + Σ + ÷ + ± + ×`.
    pub fn scalar_chain_latency(&self) -> u64 {
        self.mul.latency
            + self.sum.latency
            + self.div.latency
            + self.add_sub.latency
            + self.mul.latency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CycleCost {
    pub total_cycles: u64,
    /// `P⁻ = P⁺ + Q`: one pass over the diagonal blocks plus the adder latency.
    pub prediction: u64,
    /// `dTz`, `dP` and the `P` update, `B²` block operations each.
    pub matrix: u64,
    /// `K`, `ẑ`, `dx` and the `x` update, `B` block operations each.
    pub vector: u64,
    /// Scalar dependency chain, once per measurement.
    pub latency: u64,
}

/// Cycles of one filter cycle with `B = ⌈S/P⌉`:
/// `D (3B² + 4B + Λ) + B + L±` at unit throughput.
pub fn cycle_cost(s: usize, d: usize, p: usize, cfg: &ArithConfig) -> Result<CycleCost> {
    if s == 0 || d == 0 || p == 0 {
        return Err(Error::InvalidInput("S, D and P must be at least 1".into()));
    }
    cfg.validate()?;
    let b = s.div_ceil(p) as u64;
    let d = d as u64;
    let matrix = d * (cfg.sum.cycles(b * b) + cfg.mul.cycles(b * b) + cfg.add_sub.cycles(b * b));
    let vector = d * (2 * cfg.mul.cycles(b) + cfg.sum.cycles(b) + cfg.add_sub.cycles(b));
    let latency = d * cfg.scalar_chain_latency();
    let prediction = cfg.add_sub.cycles(b) + cfg.add_sub.latency;
    Ok(CycleCost {
        total_cycles: prediction + matrix + vector + latency,
        prediction,
        matrix,
        vector,
        latency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryFootprint {
    pub words: u64,
    /// Memories needed to feed one `P × P` block per cycle.
    pub separate_memories_required: u64,
    pub budget_words: u64,
    pub feasible: bool,
}

fn words(s: u64, d: u64, p: u64) -> u64 {
    let sp = s.div_ceil(p) * p;
    // Q, R, H, z, dTz, K, x, P, plus the scalars W⁻¹ and ẑ
    sp + d + d * sp + d + sp + sp + sp + sp * sp + 2
}

/// Budget at which `S = D = 255` still fits and `S = D = 256` does not.
pub fn default_budget_words(p: usize) -> u64 {
    words(255, 255, p.max(1) as u64)
}

/// Stored scalars, with every `S`-sized dimension padded to a multiple of `P`.
pub fn memory_footprint(
    s: usize,
    d: usize,
    p: usize,
    budget_words: Option<u64>,
) -> Result<MemoryFootprint> {
    if s == 0 || d == 0 || p == 0 {
        return Err(Error::InvalidInput("S, D and P must be at least 1".into()));
    }
    let w = words(s as u64, d as u64, p as u64);
    let budget = budget_words.unwrap_or_else(|| default_budget_words(p));
    Ok(MemoryFootprint {
        words: w,
        separate_memories_required: (p * p) as u64,
        budget_words: budget,
        feasible: w <= budget,
    })
}

/// Approximate DSP usage: `P²` multiplier/adder pairs for the matrix
/// operations, `P` inner-product units of `P` multipliers and one adder tree
/// each, and one divider.
pub fn resource_estimate(p: usize, cfg: &ArithConfig) -> u64 {
    let p = p as u64;
    p * p * (cfg.mul.dsp + cfg.add_sub.dsp) + p * (p * cfg.mul.dsp + cfg.sum.dsp) + cfg.div.dsp
}
