use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdkf::block::Precision;
use sdkf::kalman::{closed_form_op_count, Algorithm, InversionModel};
use sdkf::noise::{polar_to_rect_variance, PolarUncertainty};
use sdkf::testbench::{
    compare_responses, generate_stimuli, run_golden, run_mut, scalability_sweep, ResponseSet,
    Scenario, ScenarioConfig, StimuliSet, SweepOptions,
};
use sdkf::{Error, Result};

/// Kalman-filter state estimation testbench for PMU-observed distribution grids.
#[derive(Parser)]
#[command(name = "sdkf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Degree of parallelization P of the blocked datapath.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Arithmetic precision of the blocked datapath.
    #[arg(long, value_parser = ["32", "64"])]
    precision: Option<String>,
    /// Output file (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stimuli file from a scenario.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Run the golden model (batch filter, binary64) on a stimuli file.
    RunGm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stimuli: PathBuf,
    },
    /// Run the model under test (blocked sequential filter) on a stimuli file.
    RunMut {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stimuli: PathBuf,
    },
    /// Compare golden-model and model-under-test responses with the truth.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stimuli: PathBuf,
        #[arg(long)]
        gm: PathBuf,
        #[arg(long = "mut")]
        mut_: PathBuf,
        /// Leading steps left out of the statistics.
        #[arg(long, default_value_t = 0)]
        skip: usize,
    },
    /// Cycle cost and memory over S = D, with quadratic and cubic fits.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sizes; default 16, 32, …, 256.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Also time the blocked filter (output is then not reproducible).
        #[arg(long)]
        wall_time: bool,
    },
    /// Standard deviations of the rectangular components of a unit phasor.
    TableA {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-3)]
        e_rho: f64,
        #[arg(long, default_value_t = 1.5e-3)]
        e_phi: f64,
    },
    /// Closed-form operation counts of both filters.
    Counts {
        #[command(flatten)]
        common: Common,
        /// Comma-separated state counts.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32])]
        states: Vec<usize>,
        /// Comma-separated measurement counts.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32])]
        measurements: Vec<usize>,
    },
}

impl Common {
    fn scenario_config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.noise.seed = seed;
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if let Some(bits) = &self.precision {
            cfg.precision = Precision::from_bits(bits.parse().unwrap_or(0))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => write_file(path, text),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn table_a(e_rho: f64, e_phi: f64) -> String {
    let sigma = PolarUncertainty::from_max_errors(e_rho, e_phi);
    let mut out = String::from("delta_deg,sigma_r,sigma_i\n");
    for (label, delta) in [
        ("0", 0.0),
        ("±30", PI / 6.0),
        ("±60", PI / 3.0),
        ("±90", PI / 2.0),
        ("±120", 2.0 * PI / 3.0),
        ("±150", 5.0 * PI / 6.0),
        ("180", PI),
    ] {
        let (vr, vi) = polar_to_rect_variance(1.0, delta, sigma.sigma_m, sigma.sigma_p);
        out += &format!("{label},{:.3e},{:.3e}\n", vr.sqrt(), vi.sqrt());
    }
    out
}

fn counts(states: &[usize], measurements: &[usize]) -> String {
    let mut out =
        String::from("algorithm,S,D,add_sub,mul_div,inversion_add_sub,inversion_mul_div\n");
    for (name, alg) in [("DKF", Algorithm::Dkf), ("SDKF", Algorithm::Sdkf)] {
        for &s in states {
            for &d in measurements {
                let c = closed_form_op_count(alg, s as u64, d as u64, InversionModel::default());
                out += &format!(
                    "{name},{s},{d},{},{},{},{}\n",
                    c.add_sub, c.mul_div, c.inversion_add_sub, c.inversion_mul_div
                );
            }
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common } => {
            let cfg = common.scenario_config()?;
            let stimuli = generate_stimuli(&Scenario::build(&cfg)?)?;
            common.emit(&stimuli.to_text())
        }
        Command::RunGm { common, stimuli } => {
            let responses = run_golden(&StimuliSet::read(&stimuli)?)?;
            common.emit(&responses.to_text())
        }
        Command::RunMut { common, stimuli } => {
            let cfg = common.scenario_config()?;
            let responses = run_mut(
                &StimuliSet::read(&stimuli)?,
                cfg.parallelism,
                cfg.precision,
                &cfg.arith,
            )?;
            common.emit(&responses.to_text())
        }
        Command::Compare {
            common,
            stimuli,
            gm,
            mut_,
            skip,
        } => {
            let report = compare_responses(
                &StimuliSet::read(&stimuli)?,
                &ResponseSet::read(&gm)?,
                &ResponseSet::read(&mut_)?,
                skip,
            )?;
            common.emit(&report.to_csv())
        }
        Command::Sweep {
            common,
            sizes,
            wall_time,
        } => {
            let cfg = common.scenario_config()?;
            let sizes = sizes.unwrap_or_else(|| (1..=16).map(|i| 16 * i).collect());
            let opts = SweepOptions {
                p: cfg.parallelism,
                precision: cfg.precision,
                seed: cfg.noise.seed,
                arith: cfg.arith,
                wall_time,
                ..SweepOptions::default()
            };
            common.emit(&scalability_sweep(&sizes, &opts)?.to_csv())
        }
        Command::TableA {
            common,
            e_rho,
            e_phi,
        } => common.emit(&table_a(e_rho, e_phi)),
        Command::Counts {
            common,
            states,
            measurements,
        } => {
            if states.contains(&0) || measurements.contains(&0) {
                return Err(Error::InvalidInput("S and D must be at least 1".into()));
            }
            common.emit(&counts(&states, &measurements))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
