//! Command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 on a verification failure, 2 on
//! usage or I/O errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::branchsim::{self, SimulationError};
use crate::chain::{self, ChainError, MarkovChain, SpectralError};
use crate::circuit::{
    self, AngleCircuitModel, CircuitError, CostConfig, UpdateCircuit, DEFAULT_ANGLE_BITS_EXTRA,
};
use crate::costmodel::{self, CostError, CostParams, Method};
use crate::randchain::{self, RandomChainError, RandomChainSpec};
use crate::szegedy::{self, ColumnSource, WalkError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Tolerance on the Gram deviation of simulated update columns.
pub const GRAM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    RandomChain(#[from] RandomChainError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        let failed_check = |e: &SpectralError| {
            matches!(
                e,
                SpectralError::NotReversible { .. } | SpectralError::NoConvergence { .. }
            )
        };
        match self {
            CliError::Simulation(
                SimulationError::DirtyAncilla { .. } | SimulationError::NormDrift { .. },
            ) => EXIT_FAIL,
            CliError::Spectral(e) | CliError::Walk(WalkError::Spectral(e)) if failed_check(e) => {
                EXIT_FAIL
            }
            CliError::Walk(WalkError::NonOrthonormal { .. } | WalkError::NotUnitary { .. }) => {
                EXIT_FAIL
            }
            _ => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    /// Only `cost` supports CSV.
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "qwalk",
    version,
    about = "Sparse Markov-chain quantum update circuits and walk checks"
)]
pub struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Seed for randomized commands.
    #[arg(long, global = true, env = "QWALK_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// Chain file (text or JSON).
    #[arg(long)]
    pub chain: PathBuf,
    /// Re-express the chain with this many probability bits.
    #[arg(long)]
    pub t: Option<u32>,
}

#[derive(Debug, Args)]
pub struct CircuitArgs {
    /// Angle bits; defaults to ⌈3t/2⌉ + n-extra.
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_ANGLE_BITS_EXTRA)]
    pub n_extra: u32,
    /// Coefficient K of the angle-circuit cost K·n^e.
    #[arg(long, default_value_t = 1.0)]
    pub angle_k: f64,
    /// Exponent e of the angle-circuit cost K·n^e.
    #[arg(long, default_value_t = 3)]
    pub angle_exponent: u32,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stationary distribution, spectrum and reversibility of a chain.
    Analyze {
        #[command(flatten)]
        chain: ChainArgs,
        /// Detailed-balance tolerance.
        #[arg(long, default_value_t = chain::REVERSIBILITY_TOL)]
        tolerance: f64,
    },
    /// Emit the update circuit and its cost report.
    Synth {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        circuit: CircuitArgs,
        /// Specialize rotation angles to this input state.
        #[arg(long)]
        x: Option<u64>,
    },
    /// Simulate the circuit on one basis input and print the branch trace.
    Simulate {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        circuit: CircuitArgs,
        #[arg(long)]
        x: u64,
    },
    /// Check the update precision bound on every input state.
    Verify {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        circuit: CircuitArgs,
        /// Residual tolerance; defaults to the precision bound.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Build the walk operator and compare its phase gap with √δ.
    Spectrum {
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        circuit: CircuitArgs,
        /// Use exact √p columns instead of simulated circuit columns.
        #[arg(long)]
        ideal: bool,
    },
    /// Compare update-method cost models or print the permanent scenario.
    Cost {
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        /// Problem size for the permanent scenario.
        #[arg(long, default_value_t = 100)]
        n: u32,
        #[arg(long, default_value_t = 10)]
        m: u32,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 8, 16, 32])]
        d: Vec<u32>,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        polylog_power: f64,
        #[arg(long, default_value_t = 1.0)]
        constant: f64,
    },
    /// Generate a random reversible chain.
    Randchain {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        d: u32,
        #[arg(long)]
        t: u32,
        /// Force self-loop probability at least 1/2.
        #[arg(long)]
        lazy: bool,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Permanent,
}

/// A finished command: its report in both renderings and whether it passed.
struct Report {
    text: String,
    json: Value,
    pass: bool,
}

fn read_chain(args: &ChainArgs) -> Result<MarkovChain, CliError> {
    let text = std::fs::read_to_string(&args.chain).map_err(|source| CliError::Io {
        path: args.chain.clone(),
        source,
    })?;
    let chain = chain::load_chain(&text)?;
    Ok(match args.t {
        Some(t) => chain.with_precision(t)?,
        None => chain,
    })
}

fn build_circuit(
    chain: &MarkovChain,
    args: &CircuitArgs,
) -> Result<(UpdateCircuit, CostConfig), CliError> {
    let model = AngleCircuitModel {
        coefficient: args.angle_k,
        exponent: args.angle_exponent,
    };
    let n = args
        .n
        .unwrap_or_else(|| circuit::default_angle_bits(chain.t(), args.n_extra));
    let c = circuit::synthesize_update_with(chain, n, &model)?;
    Ok((c, CostConfig { angle_model: model }))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn analyze(chain: &MarkovChain, tolerance: f64) -> Result<Report, CliError> {
    let pi = chain::stationary_distribution(chain, chain::STATIONARY_TOL)?;
    let violation = chain::detailed_balance_violation(chain, &pi);
    let reversible = violation <= tolerance;
    let spectrum = if reversible && chain.num_states() <= chain::MAX_DENSE_STATES {
        Some(chain::spectral_gap(chain)?)
    } else {
        None
    };
    let mut text = format!(
        "chain m={} d={} t={} states={}\nreversible: {reversible} (violation {violation:.3e}, tolerance {tolerance:.1e})\n",
        chain.m(),
        chain.d(),
        chain.t(),
        chain.num_states()
    );
    if let Some(s) = &spectrum {
        let _ = writeln!(text, "spectral gap: {:.12}", s.gap);
        let _ = writeln!(
            text,
            "second eigenvalue: {:.12}",
            s.second_eigenvalue().unwrap_or(1.0)
        );
    }
    let _ = writeln!(text, "stationary:");
    for (x, p) in pi.iter().enumerate() {
        let _ = writeln!(text, "  {x}: {p:.12}");
    }
    let json = json!({
        "m": chain.m(),
        "d": chain.d(),
        "t": chain.t(),
        "states": chain.num_states(),
        "stationary": pi,
        "detailed_balance_violation": violation,
        "eigenvalues": spectrum.as_ref().map(|s| &s.eigenvalues),
        "gap": spectrum.as_ref().map(|s| s.gap),
        "tolerances": {
            "stationary": chain::STATIONARY_TOL,
            "reversibility": tolerance,
        },
        "reversible": reversible,
        "pass": reversible,
    });
    Ok(Report {
        text,
        json,
        pass: reversible,
    })
}

fn synth(chain: &MarkovChain, args: &CircuitArgs, x: Option<u64>) -> Result<Report, CliError> {
    let (c, config) = build_circuit(chain, args)?;
    let listing = c.to_text(x)?;
    let cost = circuit::gate_count(&c, &config);
    let mut text = listing.clone();
    let _ = writeln!(
        text,
        "# qubits={} operations={} rotation_sites={} epsilon_bound={:e}",
        cost.total_qubits, cost.total_operations, cost.rotation_sites, cost.parameters.epsilon
    );
    let json = json!({
        "circuit": listing.lines().collect::<Vec<_>>(),
        "cost": to_value(&cost),
    });
    Ok(Report {
        text,
        json,
        pass: true,
    })
}

fn simulate(chain: &MarkovChain, args: &CircuitArgs, x: u64) -> Result<Report, CliError> {
    let (c, _) = build_circuit(chain, args)?;
    let mut trace = Vec::new();
    let state = branchsim::simulate_update_traced(&c, x, Some(&mut trace))?;
    let residual = branchsim::verify_update(chain, &c, x)?;
    let l = c.layout();
    let bound = circuit::precision_bound(l.d, l.t, l.n);
    let outputs: Vec<(u64, f64)> = state
        .output_amplitudes(l)
        .into_iter()
        .map(|(y, a)| (y, a.re))
        .collect();
    let mut text = branchsim::format_trace(&trace);
    for (y, a) in &outputs {
        let _ = writeln!(text, "y={y} amplitude={a:.15}");
    }
    let _ = writeln!(text, "residual={residual:.3e} bound={bound:.3e}");
    let json = json!({
        "x": x,
        "n": l.n,
        "trace": to_value(&trace),
        "amplitudes": outputs.iter().map(|(y, a)| json!({"y": y, "amplitude": a})).collect::<Vec<_>>(),
        "residual": residual,
        "bound": bound,
        "tolerances": {"norm": 1e-12, "residual": bound},
        "pass": residual <= bound,
    });
    Ok(Report {
        text,
        json,
        pass: residual <= bound,
    })
}

fn verify(
    chain: &MarkovChain,
    args: &CircuitArgs,
    tolerance: Option<f64>,
) -> Result<Report, CliError> {
    let (c, _) = build_circuit(chain, args)?;
    let l = c.layout();
    let bound = circuit::precision_bound(l.d, l.t, l.n);
    let tolerance = tolerance.unwrap_or(bound);
    let residuals = branchsim::verify_all(chain, &c)?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let gram = if chain.num_states() <= branchsim::MAX_COLUMN_STATES {
        Some(branchsim::unitarity_check(chain, &c)?)
    } else {
        None
    };
    let pass = max_residual <= tolerance && gram.is_none_or(|g| g <= GRAM_TOL);
    let mut text = format!("m={} d={} t={} n={}\n", l.m, l.d, l.t, l.n);
    for (x, r) in residuals.iter().enumerate() {
        let _ = writeln!(text, "x={x} residual={r:.3e}");
    }
    let _ = writeln!(
        text,
        "max residual {max_residual:.3e} (tolerance {tolerance:.3e})"
    );
    if let Some(g) = gram {
        let _ = writeln!(text, "gram deviation {g:.3e} (tolerance {GRAM_TOL:.1e})");
    }
    let _ = writeln!(text, "{}", if pass { "PASS" } else { "FAIL" });
    let json = json!({
        "m": l.m, "d": l.d, "t": l.t, "n": l.n,
        "bound": bound,
        "residuals": residuals,
        "max_residual": max_residual,
        "gram_deviation": gram,
        "tolerances": {"residual": tolerance, "gram": GRAM_TOL},
        "pass": pass,
    });
    Ok(Report { text, json, pass })
}

fn spectrum(chain: &MarkovChain, args: &CircuitArgs, ideal: bool) -> Result<Report, CliError> {
    let report = if ideal {
        szegedy::spectrum_report(chain, ColumnSource::Ideal)?
    } else {
        let (c, _) = build_circuit(chain, args)?;
        szegedy::spectrum_report(chain, ColumnSource::Circuit(&c))?
    };
    let fmt_opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.12}"));
    let text = format!(
        "columns: {}\ndelta: {:.12}\nsqrt_delta: {:.12}\nphase_gap: {}\nmin_eigenphase: {}\nstationary_residual: {:.3e} (tolerance {:.3e})\nunitarity_deviation: {:.3e}\n{}\n",
        report.columns,
        report.delta,
        report.sqrt_delta,
        fmt_opt(report.phase_gap),
        fmt_opt(report.min_eigenphase),
        report.stationary_residual,
        report.tolerances.stationary,
        report.unitarity_deviation,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(Report {
        text,
        pass: report.pass,
        json: to_value(&report),
    })
}

/// Runs one command. `cost` CSV output is rendered here since it has no
/// JSON counterpart.
fn execute(cli: &Cli) -> Result<(Report, Option<String>), CliError> {
    let plain = |r| Ok((r, None));
    match &cli.command {
        Command::Analyze { chain, tolerance } => plain(analyze(&read_chain(chain)?, *tolerance)?),
        Command::Synth { chain, circuit, x } => plain(synth(&read_chain(chain)?, circuit, *x)?),
        Command::Simulate { chain, circuit, x } => {
            plain(simulate(&read_chain(chain)?, circuit, *x)?)
        }
        Command::Verify {
            chain,
            circuit,
            tolerance,
        } => plain(verify(&read_chain(chain)?, circuit, *tolerance)?),
        Command::Spectrum {
            chain,
            circuit,
            ideal,
        } => plain(spectrum(&read_chain(chain)?, circuit, *ideal)?),
        Command::Cost {
            scenario,
            n,
            m,
            d,
            epsilon,
            kappa,
            polylog_power,
            constant,
        } => {
            if let Some(Scenario::Permanent) = scenario {
                let rows = costmodel::permanent_scenario(*n)?;
                let csv = rows.iter().fold(
                    String::from(
                        "method,steps_exponent,per_step_exponent,per_step_polylog,total_exponent\n",
                    ),
                    |mut s, r| {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{}",
                            r.label,
                            r.steps_exponent,
                            r.per_step_exponent,
                            r.per_step_polylog,
                            r.total_exponent
                        );
                        s
                    },
                );
                let report = Report {
                    text: costmodel::scenario_text(*n, &rows),
                    json: json!({"scenario": "permanent", "n": n, "rows": to_value(&rows)}),
                    pass: true,
                };
                return Ok((report, Some(csv)));
            }
            let template = CostParams {
                method: Method::Ours,
                m: *m,
                d: 1,
                epsilon: *epsilon,
                constant: *constant,
                polylog_power: *polylog_power,
                kappa: *kappa,
            };
            let mut estimates = Vec::new();
            for &dv in d {
                for method in Method::ALL {
                    let e = costmodel::estimate_cost(&CostParams {
                        method,
                        d: dv,
                        ..template
                    })?;
                    estimates.push(json!({"d": dv, "method": method, "estimate": e.estimate, "scaling": e.scaling}));
                }
            }
            let report = Report {
                text: costmodel::comparison_text(&template, d)?,
                json: json!({"parameters": to_value(&template), "estimates": estimates}),
                pass: true,
            };
            Ok((report, Some(costmodel::comparison_csv(&template, d)?)))
        }
        Command::Randchain {
            m,
            d,
            t,
            lazy,
            output,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let spec = RandomChainSpec {
                m: *m,
                d: *d,
                t: *t,
                lazy: *lazy,
            };
            let chain = randchain::random_reversible_chain(spec, &mut rng)?;
            let body = match cli.format {
                Format::Json => chain.to_json() + "\n",
                _ => chain.to_text(),
            };
            let report = match output {
                Some(path) => {
                    write_file(path, &body)?;
                    Report {
                        text: format!(
                            "wrote {} states to {}\n",
                            chain.num_states(),
                            path.display()
                        ),
                        json: json!({"output": path, "states": chain.num_states(), "seed": cli.seed, "pass": true}),
                        pass: true,
                    }
                }
                None => Report {
                    text: body.clone(),
                    json: serde_json::from_str(&body).unwrap_or(Value::Null),
                    pass: true,
                },
            };
            plain(report)
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `argv`, runs the command and writes the report; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let (report, csv) = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let body = match (cli.format, csv) {
        (Format::Text, _) => report.text,
        (Format::Json, _) => {
            serde_json::to_string_pretty(&report.json).expect("reports serialize") + "\n"
        }
        (Format::Csv, Some(csv)) => csv,
        (Format::Csv, None) => {
            let _ = writeln!(err, "error: --format csv is only supported by `cost`");
            return EXIT_USAGE;
        }
    };
    if out.write_all(body.as_bytes()).is_err() {
        return EXIT_USAGE;
    }
    if report.pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}
