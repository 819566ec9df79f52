//! `scvlab`: single customer value models from the command line.
//!
//! Results are JSON on stdout, diagnostics go to stderr. Exit status is 0 on
//! success, 2 for invalid input and 3 when a computation does not converge.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use scvlab_core::calibration::{fit_churn_curve, hazard_rates, synthesize_cohort, CohortTable, Noise};
use scvlab_core::model::ModelKind;
use scvlab_core::sensitivity::DEFAULT_STEP;
use scvlab_core::validator::{classify_validity, sweep_with, RecordWriter, SweepGrid, DEFAULT_HORIZON};
use scvlab_core::wire::{self, from_json, to_json, Horizon, ParamsDoc};
use scvlab_core::Error;

#[derive(Parser)]
#[command(name = "scvlab", version, about = "Single customer value models for subscription businesses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate SCV for a params file.
    Compute {
        #[arg(long)]
        params: PathBuf,
        /// exp-closed, const-closed, exact-series or approx-series.
        #[arg(long, default_value = "exp-closed")]
        model: ModelKind,
        /// Periods summed by the series models: a count or `auto`.
        #[arg(long, default_value = "auto")]
        horizon: Horizon,
    },
    /// Sweep a parameter grid comparing approximate and exact exit probabilities.
    ValidateApprox {
        /// Grid JSON file, or `default` for 10 points per axis.
        #[arg(long, default_value = "default")]
        grid: String,
        /// Write per-point records here as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
        /// Deviation at or above which a point counts as an offender.
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        /// Write the validity report (offenders and their pattern) as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Partial derivatives of the closed-form SCV.
    Sensitivity {
        #[arg(long)]
        params: PathBuf,
        /// Also compute central finite differences.
        #[arg(long)]
        verify: bool,
        /// Relative finite-difference step.
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
    },
    /// Fit churn parameters to a cohort retention CSV.
    Calibrate {
        #[arg(long)]
        cohorts: PathBuf,
        /// Write the fitted params document here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Copy costs from this params file into the output.
        #[arg(long)]
        costs_from: Option<PathBuf>,
    },
    /// Change in SCV when the mean time to churn moves between two values.
    Whatif {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        tau_from: f64,
        #[arg(long)]
        tau_to: f64,
        /// Share of customers affected.
        #[arg(long, default_value_t = 1.0)]
        share: f64,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "SCVLAB_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Scenario registry file; scenarios are kept in memory if omitted.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Print a cohort retention CSV that follows the given churn curve.
    SynthCohort {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        periods: usize,
        /// Relative standard deviation of multiplicative hazard noise.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "c1")]
        id: String,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_params(path: &Path) -> Result<ParamsDoc, Error> {
    from_json(&read(path)?)
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn emit(text: &str) -> Result<(), Error> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Compute { params, model, horizon } => {
            let doc = read_params(&params)?;
            emit(&to_json(&wire::compute_scv(&doc, model, horizon)?))
        }
        Command::ValidateApprox {
            grid,
            out,
            horizon,
            threshold,
            report,
        } => {
            let grid: SweepGrid = if grid == "default" {
                SweepGrid::default()
            } else {
                from_json(&read(Path::new(&grid))?)?
            };
            if horizon == 0 {
                return Err(Error::Validation {
                    field: "horizon".into(),
                    message: "must be positive".into(),
                });
            }
            let mut writer = match &out {
                Some(path) => Some(RecordWriter::new(
                    fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
                )),
                None => None,
            };
            let mut records = Vec::with_capacity(grid.len());
            let stats = sweep_with(&grid, horizon, |r| {
                records.push(*r);
                match writer.as_mut() {
                    Some(w) => w.write(r),
                    None => Ok(()),
                }
            })?;
            if let Some(w) = writer {
                w.finish()?;
            }
            let validity = classify_validity(&records, threshold, horizon)?;
            eprintln!(
                "{} of {} points below {threshold} ({})",
                validity.valid_points, validity.total_points, validity.summary
            );
            if let Some(path) = report {
                write(&path, &to_json(&validity))?;
            }
            emit(&to_json(&stats))
        }
        Command::Sensitivity { params, verify, step } => {
            let doc = read_params(&params)?;
            emit(&to_json(&wire::compute_sensitivity(&doc, verify.then_some(step))?))
        }
        Command::Calibrate {
            cohorts,
            out,
            costs_from,
        } => {
            let table = CohortTable::from_csv(read(&cohorts)?.as_bytes())?;
            let costs = match costs_from {
                Some(path) => {
                    let doc = read_params(&path)?;
                    let costs = doc.costs.ok_or_else(|| Error::Validation {
                        field: "costs".into(),
                        message: format!("{} has no costs", path.display()),
                    })?;
                    Some(costs.resolve()?)
                }
                None => None,
            };
            let series = hazard_rates(&table)?;
            for w in &series.diagnostics {
                eprintln!("warning: {w}");
            }
            let fit = fit_churn_curve(&series)?;
            let response = wire::calibrate_response(&series, &fit, costs.as_ref())?;
            if let Some(path) = out {
                write(&path, &to_json(&response.params))?;
            }
            emit(&to_json(&response))
        }
        Command::Whatif {
            params,
            tau_from,
            tau_to,
            share,
        } => {
            let doc = read_params(&params)?;
            emit(&to_json(&wire::compute_whatif(&doc, tau_from, tau_to, share)?))
        }
        Command::Serve {
            port,
            host,
            static_dir,
            registry,
        } => serve(&host, port, static_dir, registry),
        Command::SynthCohort {
            params,
            periods,
            noise,
            seed,
            id,
        } => {
            let churn = read_params(&params)?.churn()?;
            if let Some(sigma) = noise {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::Validation {
                        field: "noise".into(),
                        message: "must be a non-negative number".into(),
                    });
                }
            }
            let active = synthesize_cohort(&churn, periods, noise.map(|sigma| Noise { sigma, seed }));
            let mut buf = Vec::new();
            CohortTable::single(id, active)?.to_csv(&mut buf)?;
            emit(&String::from_utf8_lossy(&buf))
        }
    }
}

fn serve(host: &str, port: u16, static_dir: Option<PathBuf>, registry: Option<PathBuf>) -> Result<(), Error> {
    let listener = std::net::TcpListener::bind((host, port))
        .map_err(|e| Error::Io(format!("cannot bind {host}:{port}: {e}")))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let registry = match registry {
        Some(path) => scvlab_server::Registry::open(path)?,
        None => scvlab_server::Registry::ephemeral(),
    };
    let state = scvlab_server::AppState {
        registry: Arc::new(registry),
    };
    let app = scvlab_server::router(state, static_dir);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        eprintln!("listening on http://{addr}");
        scvlab_server::serve(listener, app).await
    })?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_convergence() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scvlab: {e}");
            if let Some(field) = e.field() {
                eprintln!("  field: {field}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
