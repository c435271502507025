//! Random filter instances, the scalability sweep and least-squares
//! polynomial fits.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::block::{cycle_cost, memory_footprint, sdkf_step_blocked, ArithConfig, Precision};
use crate::error::{Error, Result};
use crate::grid::numerical_rank;
use crate::kalman::{FilterState, MeasurementFrame, NoiseCovariance, Phase};
use crate::noise::{CovarianceDiag, GaussianStream, NoiseSource, StreamDomain};

/// A random filter problem: a-priori state, process noise and one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomInstance {
    pub prior: FilterState,
    pub q: DVector<f64>,
    pub frame: MeasurementFrame,
}

impl RandomInstance {
    /// The prior seen as the a-posteriori state of the previous step.
    pub fn posterior_before(&self) -> FilterState {
        FilterState {
            phase: Phase::APosteriori,
            k: self.prior.k.saturating_sub(1),
            ..self.prior.clone()
        }
    }
}

const MAX_RESAMPLES: usize = 16;

fn uniform(stream: &mut GaussianStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * stream.uniform()
}

/// `P⁻ = MMᵀ + 10⁻³ I` with `M ~ U(-1, 1)/√S`, `H ~ U(-1, 1)` resampled
/// until it has full column rank (when `D ≥ S`), `R ~ U(0.5, 1.5)` diagonal,
/// `x, z ~ U(-1, 1)`, `Q = 10⁻⁶`. Deterministic in `(s, d, seed, index)`.
pub fn random_instance(s: usize, d: usize, seed: u64, index: u64) -> Result<RandomInstance> {
    if s == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "random instance needs S, D >= 1".into(),
        ));
    }
    let mut stream = NoiseSource::new(seed).stream(StreamDomain::Instance, index);
    let scale = 1.0 / (s as f64).sqrt();
    let m = DMatrix::from_fn(s, s, |_, _| uniform(&mut stream, -1.0, 1.0) * scale);
    let mut p = &m * m.transpose();
    for i in 0..s {
        p[(i, i)] += 1e-3;
    }
    let mut h = None;
    for _ in 0..MAX_RESAMPLES {
        let cand = DMatrix::from_fn(d, s, |_, _| uniform(&mut stream, -1.0, 1.0));
        if numerical_rank(&cand) == s.min(d) {
            h = Some(cand);
            break;
        }
    }
    let h = h.ok_or_else(|| {
        Error::Hypothesis(format!(
            "no full-rank {d}×{s} H after {MAX_RESAMPLES} draws"
        ))
    })?;
    let r = CovarianceDiag::new(DVector::from_fn(d, |_, _| uniform(&mut stream, 0.5, 1.5)))?;
    let x = DVector::from_fn(s, |_, _| uniform(&mut stream, -1.0, 1.0));
    let z = DVector::from_fn(d, |_, _| uniform(&mut stream, -1.0, 1.0));
    Ok(RandomInstance {
        prior: FilterState {
            x,
            p,
            phase: Phase::APriori,
            k: 1,
        },
        q: DVector::from_element(s, 1e-6),
        frame: MeasurementFrame::new(z, h, NoiseCovariance::Diagonal(r))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyFit {
    /// Ascending powers: `y ≈ Σ cⱼ xʲ`.
    pub coefficients: Vec<f64>,
    /// Root-mean-square residual.
    pub residual: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Least squares through the normal equations on `t = (x - min)/(max - min)`;
/// the coefficients are mapped back to powers of `x`.
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} x values, {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() <= degree {
        return Err(Error::InvalidInput(format!(
            "{} points cannot determine a degree-{degree} polynomial",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { hi - lo } else { 1.0 };
    let n = degree + 1;
    let t: Vec<f64> = xs.iter().map(|x| (x - lo) / width).collect();
    let a = DMatrix::from_fn(xs.len(), n, |i, j| t[i].powi(j as i32));
    let y = DVector::from_column_slice(ys);
    let normal = a.transpose() * &a;
    let chol = Cholesky::new(normal).ok_or(Error::RankDeficient)?;
    let diag_min = chol
        .l_dirty()
        .diagonal()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let diag_max = chol
        .l_dirty()
        .diagonal()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    if !(diag_min > 1e-7 * diag_max) {
        return Err(Error::RankDeficient);
    }
    let c = chol.solve(&(a.transpose() * &y));
    let fitted = &a * &c;
    let residual = ((&y - fitted).norm_squared() / xs.len() as f64).sqrt();

    // y = Σ_j c_j ((x - lo)/w)^j = Σ_j c_j / w^j Σ_i C(j,i) x^i (-lo)^(j-i)
    let mut coefficients = vec![0.0; n];
    for (j, cj) in c.iter().enumerate() {
        let scaled = cj / width.powi(j as i32);
        for (i, coef) in coefficients.iter_mut().enumerate().take(j + 1) {
            *coef += scaled * binomial(j, i) * (-lo).powi((j - i) as i32);
        }
    }
    Ok(PolyFit {
        coefficients,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub s: usize,
    pub d: usize,
    pub cycles: u64,
    pub memory_words: u64,
    pub memory_feasible: bool,
    /// Median wall time of one blocked filter cycle, seconds.
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFit {
    /// `"restricted"` (S up to the restricted limit) or `"full"`.
    pub range: String,
    /// `"cycles"` or `"wall"`.
    pub series: String,
    pub requested_degree: usize,
    pub degree: usize,
    /// The requested degree was lowered because of too few points.
    pub degenerate: bool,
    pub fit: PolyFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub p: usize,
    pub restricted_limit: usize,
    pub points: Vec<SweepPoint>,
    pub fits: Vec<SweepFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub p: usize,
    pub precision: Precision,
    pub seed: u64,
    pub arith: ArithConfig,
    /// Largest `S` in the restricted fit range.
    pub restricted_limit: usize,
    /// Time the blocked filter on a random instance (non-deterministic).
    pub wall_time: bool,
    pub repetitions: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            p: 4,
            precision: Precision::Binary32,
            seed: 1,
            arith: ArithConfig::default(),
            restricted_limit: 80,
            wall_time: false,
            repetitions: 5,
        }
    }
}

fn time_instance(s: usize, opts: &SweepOptions) -> Result<f64> {
    let inst = random_instance(s, s, opts.seed, s as u64)?;
    let start_state = inst.posterior_before();
    let run = || -> Result<f64> {
        let t0 = Instant::now();
        let out = sdkf_step_blocked(&start_state, &inst.q, &inst.frame, opts.p, opts.precision)?;
        let dt = t0.elapsed().as_secs_f64();
        std::hint::black_box(out);
        Ok(dt)
    };
    run()?;
    let mut times = (0..opts.repetitions.max(1))
        .map(|_| run())
        .collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn fit_series(
    xs: &[f64],
    ys: &[f64],
    range: &str,
    series: &str,
    fits: &mut Vec<SweepFit>,
) -> Result<()> {
    for requested in [2usize, 3] {
        if xs.is_empty() {
            continue;
        }
        let degree = requested.min(xs.len() - 1);
        fits.push(SweepFit {
            range: range.to_string(),
            series: series.to_string(),
            requested_degree: requested,
            degree,
            degenerate: degree < requested,
            fit: fit_polynomial(xs, ys, degree)?,
        });
    }
    Ok(())
}

/// Cycle cost (and optionally wall time) for `S = D` over `sizes`, with
/// quadratic and cubic fits over the restricted and the full range.
pub fn scalability_sweep(sizes: &[usize], opts: &SweepOptions) -> Result<SweepReport> {
    if sizes.is_empty() {
        return Err(Error::InvalidInput("no sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::InvalidInput(
            "sizes must be positive and strictly increasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let cost = cycle_cost(s, s, opts.p, &opts.arith)?;
        let mem = memory_footprint(s, s, opts.p, opts.arith.budget_words)?;
        let wall_seconds = if opts.wall_time {
            Some(time_instance(s, opts)?)
        } else {
            None
        };
        points.push(SweepPoint {
            s,
            d: s,
            cycles: cost.total_cycles,
            memory_words: mem.words,
            memory_feasible: mem.feasible,
            wall_seconds,
        });
    }
    let mut fits = Vec::new();
    for (range, limit) in [("restricted", opts.restricted_limit), ("full", usize::MAX)] {
        let sel: Vec<&SweepPoint> = points.iter().filter(|p| p.s <= limit).collect();
        let xs: Vec<f64> = sel.iter().map(|p| p.s as f64).collect();
        let cycles: Vec<f64> = sel.iter().map(|p| p.cycles as f64).collect();
        fit_series(&xs, &cycles, range, "cycles", &mut fits)?;
        if opts.wall_time {
            let wall: Vec<f64> = sel.iter().filter_map(|p| p.wall_seconds).collect();
            fit_series(&xs, &wall, range, "wall", &mut fits)?;
        }
    }
    Ok(SweepReport {
        p: opts.p,
        restricted_limit: opts.restricted_limit,
        points,
        fits,
    })
}

impl SweepReport {
    pub fn fit(&self, range: &str, series: &str, requested_degree: usize) -> Option<&SweepFit> {
        self.fits.iter().find(|f| {
            f.range == range && f.series == series && f.requested_degree == requested_degree
        })
    }

    /// Points as `S,D,cycles,memory_words,memory_feasible,wall_seconds`,
    /// followed by one `# fit` comment line per fit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("S,D,cycles,memory_words,memory_feasible,wall_seconds\n");
        for p in &self.points {
            let wall = p.wall_seconds.map(|w| format!("{w:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{wall}",
                p.s, p.d, p.cycles, p.memory_words, p.memory_feasible
            );
        }
        let _ = writeln!(
            out,
            "# P={} restricted_limit={}",
            self.p, self.restricted_limit
        );
        for f in &self.fits {
            let coefs: Vec<String> = f
                .fit
                .coefficients
                .iter()
                .map(|c| format!("{c:e}"))
                .collect();
            let _ = writeln!(
                out,
                "# fit range={} series={} degree={} degenerate={} residual={:e} coefficients={}",
                f.range,
                f.series,
                f.degree,
                f.degenerate,
                f.fit.residual,
                coefs.join(";")
            );
        }
        out
    }
}
