//! `qbl`: capacities and Brascamp–Lieb constants of quiver data from the command line.

mod config;
mod report;
mod shape;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quiver_bl::io::{read_datum, read_filtration, read_pd_tuple, DatumView};
use quiver_bl::json::Real;
use quiver_bl::objective::{
    capacity_at_fixed_point, fixed_point_residual, geometric_residual, objective_value,
    FixedPointPair,
};
use quiver_bl::oracle::oracle_minimize;
use quiver_bl::quiver::{check_perp, random_datum, validate_datum, RandomMode};
use quiver_bl::scaling::{bookkeeping_error, capacity, extremizer_from_scaling, scale};
use quiver_bl::stability::{
    classify_feasibility, coordinate_subrep_scan, degeneration_check, Evidence, Feasibility,
    SubrepCertificate, DEFAULT_SCAN_BUDGET,
};
use quiver_bl::{Error, QuiverDatum, Result, ScalingResult, ScalingStatus};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use config::{ConfigFile, OutputMode, Overrides, RunConfig};
use report::{
    json, matrices, reals, to_value, CapacityOut, Report, EXIT_INCONCLUSIVE, EXIT_INPUT, EXIT_OK,
};

#[derive(Debug, Parser)]
#[command(
    name = "qbl",
    version,
    about = "Capacities and Brascamp-Lieb constants of quiver data"
)]
struct Cli {
    /// Scaling tolerance on the geometric residual.
    #[arg(long, global = true, value_name = "TOL")]
    tol: Option<f64>,
    /// Maximum number of scaling sweeps.
    #[arg(long = "max-iters", global = true, value_name = "N")]
    max_iters: Option<usize>,
    /// Seed for randomized steps (oracle restarts, random data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print JSON reports.
    #[arg(long, global = true)]
    json: bool,
    /// Run the command on every `*.json` file in DIR instead of FILE.
    #[arg(long, global = true, value_name = "DIR")]
    batch: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a datum file for structural problems.
    Validate { file: Option<PathBuf> },
    /// Evaluate the capacity objective at a PD tuple.
    Objective {
        file: Option<PathBuf>,
        /// PD tuple file `{"y": [...]}`.
        #[arg(long, value_name = "YFILE")]
        y: PathBuf,
    },
    /// Report the geometric residuals of a datum.
    Geometric { file: Option<PathBuf> },
    /// Run the alternating scaling and report the scaled datum.
    Scale { file: Option<PathBuf> },
    /// Capacity and Brascamp-Lieb constant via scaling.
    Capacity { file: Option<PathBuf> },
    /// Minimise the objective directly by gradient descent.
    Oracle { file: Option<PathBuf> },
    /// Classify a datum as feasible, infeasible or inconclusive.
    Feasible { file: Option<PathBuf> },
    /// List violated coordinate subrepresentation inequalities.
    Subreps { file: Option<PathBuf> },
    /// Check that capacity is constant along a filtration's degeneration.
    Degenerate {
        file: Option<PathBuf>,
        #[arg(long, value_name = "FFILE")]
        filtration: PathBuf,
    },
    /// Draw a random datum of the given shape.
    Random {
        /// e.g. `sources=2;sinks=1,1,1;weights=2/3,2/3,2/3[;mult=N]`
        #[arg(long, value_name = "SPEC")]
        shape: String,
        /// Scale the draw into geometric position.
        #[arg(long)]
        geometric: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Objective { .. } => "objective",
            Command::Geometric { .. } => "geometric",
            Command::Scale { .. } => "scale",
            Command::Capacity { .. } => "capacity",
            Command::Oracle { .. } => "oracle",
            Command::Feasible { .. } => "feasible",
            Command::Subreps { .. } => "subreps",
            Command::Degenerate { .. } => "degenerate",
            Command::Random { .. } => "random",
        }
    }

    fn file(&self) -> Option<&Path> {
        match self {
            Command::Validate { file }
            | Command::Objective { file, .. }
            | Command::Geometric { file }
            | Command::Scale { file }
            | Command::Capacity { file }
            | Command::Oracle { file }
            | Command::Feasible { file }
            | Command::Subreps { file }
            | Command::Degenerate { file, .. } => file.as_deref(),
            Command::Random { .. } => None,
        }
    }
}

/// Result of one command on one input: exit code plus the `result` object.
type Outcome = Result<(i32, Value)>;

fn status_exit(status: ScalingStatus) -> i32 {
    match status {
        ScalingStatus::Converged | ScalingStatus::Collapsed => EXIT_OK,
        ScalingStatus::MaxIterations => EXIT_INCONCLUSIVE,
    }
}

#[derive(Serialize)]
struct ScalingOut {
    status: String,
    iterations: usize,
    initial_residual: Real,
    final_residual: Real,
    log_capacity: Real,
    stalled: bool,
    left_orbit: bool,
}

impl From<&ScalingResult> for ScalingOut {
    fn from(r: &ScalingResult) -> Self {
        ScalingOut {
            status: r.status.to_string(),
            iterations: r.iterations,
            initial_residual: Real(r.residual_history.first().copied().unwrap_or(f64::NAN)),
            final_residual: Real(r.final_residual()),
            log_capacity: Real(r.log_cap),
            stalled: r.stalled,
            left_orbit: r.left_orbit,
        }
    }
}

#[derive(Serialize)]
struct CertificateOut {
    source_subsets: Vec<Vec<usize>>,
    sink_subsets: Vec<Vec<usize>>,
    lhs: Real,
    rhs: Real,
    slack: Real,
}

impl From<&SubrepCertificate> for CertificateOut {
    fn from(c: &SubrepCertificate) -> Self {
        CertificateOut {
            source_subsets: c.source_subsets.clone(),
            sink_subsets: c.sink_subsets.clone(),
            lhs: Real(c.lhs),
            rhs: Real(c.rhs),
            slack: Real(c.slack),
        }
    }
}

fn cmd_validate(file: &Path) -> Outcome {
    #[derive(Serialize)]
    struct Out {
        valid: bool,
        violations: Vec<String>,
        balanced: Option<bool>,
        balance_residual: Option<Real>,
    }
    let (violations, datum) = match read_datum(file) {
        Ok(d) => (
            validate_datum(&d)
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect(),
            Some(d),
        ),
        Err(Error::InvalidDatum(r)) => (
            r.violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>(),
            None,
        ),
        Err(e) => return Err(e),
    };
    let perp = datum.as_ref().map(|d| {
        check_perp(
            &d.dims,
            &d.weights,
            quiver_bl::NumericConfig::default().perp_tol,
        )
    });
    let valid = violations.is_empty();
    let out = Out {
        valid,
        violations,
        balanced: perp.map(|p| p.holds),
        balance_residual: perp.map(|p| Real(p.residual)),
    };
    Ok((if valid { EXIT_OK } else { EXIT_INPUT }, to_value(&out)))
}

fn cmd_objective(file: &Path, yfile: &Path, cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct Out {
        objective: CapacityOut,
        fixed_point_residual: Real,
        m_min_eigenvalues: Vec<Real>,
    }
    let datum = read_datum(file)?;
    let y = read_pd_tuple(yfile)?;
    let nc = cfg.numeric();
    let value = objective_value(&datum, &y, &nc)?;
    let res = fixed_point_residual(&datum, &y, &nc)?;
    let out = Out {
        objective: value.into(),
        fixed_point_residual: Real(res.max_residual()),
        m_min_eigenvalues: reals(&res.m_min_eigenvalues),
    };
    Ok((EXIT_OK, to_value(&out)))
}

fn cmd_geometric(file: &Path, cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct Out {
        geometric: bool,
        source_residual: Real,
        sink_residual: Real,
        residual: Real,
        tolerance: Real,
    }
    let datum = read_datum(file)?;
    let r = geometric_residual(&datum);
    let tol = cfg.numeric().geometric_tol;
    let out = Out {
        geometric: r.max <= tol,
        source_residual: Real(r.source),
        sink_residual: Real(r.sink),
        residual: Real(r.max),
        tolerance: Real(tol),
    };
    Ok((EXIT_OK, to_value(&out)))
}

fn cmd_scale(file: &Path, cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        scaling: ScalingOut,
        bookkeeping_error: Real,
        residual_history: Vec<Real>,
        g: Vec<Vec<Vec<f64>>>,
        h: Vec<Vec<Vec<f64>>>,
        scaled: DatumView<'a>,
    }
    let datum = read_datum(file)?;
    let r = scale(&datum, &cfg.scaling())?;
    let out = Out {
        scaling: (&r).into(),
        bookkeeping_error: Real(bookkeeping_error(&datum, &r).unwrap_or(f64::NAN)),
        residual_history: reals(&r.residual_history),
        g: matrices(&r.g),
        h: matrices(&r.h),
        scaled: DatumView(&r.final_datum),
    };
    Ok((status_exit(r.status), to_value(&out)))
}

fn cmd_capacity(file: &Path, cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct Formula {
        capacity: Option<CapacityOut>,
        error: Option<String>,
    }
    #[derive(Serialize)]
    struct Out {
        status: String,
        capacity: Real,
        log_capacity: Real,
        bl_constant: Real,
        iterations: usize,
        final_residual: Real,
        formula: Option<Formula>,
    }
    let datum = read_datum(file)?;
    let run = capacity(&datum, &cfg.scaling())?;
    // the determinant formula at the extremizer, as a second read-out
    let formula = (run.status == ScalingStatus::Converged).then(|| {
        let nc = cfg.numeric();
        match extremizer_from_scaling(&run.result)
            .and_then(|y| capacity_at_fixed_point(&FixedPointPair::new(datum.clone(), y), &nc))
        {
            Ok(c) => Formula {
                capacity: Some(c.into()),
                error: None,
            },
            Err(e) => Formula {
                capacity: None,
                error: Some(e.to_string()),
            },
        }
    });
    let out = Out {
        status: run.status.to_string(),
        capacity: Real(run.estimate.value),
        log_capacity: Real(run.estimate.log),
        bl_constant: Real(run.estimate.bl_constant()),
        iterations: run.result.iterations,
        final_residual: Real(run.result.final_residual()),
        formula,
    };
    Ok((status_exit(run.status), to_value(&out)))
}

fn cmd_oracle(file: &Path, cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct Out {
        capacity: Real,
        bl_constant: Real,
        best_value: Real,
        best_log: Real,
        collapsed: bool,
        restarts_used: usize,
        gradient_norm: Real,
        best_y: Vec<Vec<Vec<f64>>>,
    }
    let datum = read_datum(file)?;
    let r = oracle_minimize(&datum, &cfg.oracle())?;
    let cap = r.capacity_estimate();
    let out = Out {
        capacity: Real(cap),
        bl_constant: Real(quiver_bl::objective::bl_constant(cap)?),
        best_value: Real(r.best.value),
        best_log: Real(r.best.log),
        collapsed: r.collapsed,
        restarts_used: r.restarts_used,
        gradient_norm: Real(r.converged_gradient_norm),
        best_y: matrices(r.best_y.matrices()),
    };
    Ok((EXIT_OK, to_value(&out)))
}

fn cmd_feasible(file: &Path, cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    #[serde(tag = "kind")]
    enum EvidenceOut {
        Unbalanced { residual: Real },
        Certificate(CertificateOut),
        Scaling(ScalingOut),
    }
    #[derive(Serialize)]
    struct Out {
        class: String,
        evidence: EvidenceOut,
    }
    let datum = read_datum(file)?;
    let r = classify_feasibility(&datum, &cfg.classify())?;
    let evidence = match &r.evidence {
        Evidence::Unbalanced { residual } => EvidenceOut::Unbalanced {
            residual: Real(*residual),
        },
        Evidence::Certificate(c) => EvidenceOut::Certificate(c.into()),
        Evidence::Scaling(s) => EvidenceOut::Scaling(s.as_ref().into()),
    };
    let code = match r.class {
        Feasibility::Feasible | Feasibility::Infeasible => EXIT_OK,
        Feasibility::Inconclusive => EXIT_INCONCLUSIVE,
    };
    let out = Out {
        class: format!("{:?}", r.class),
        evidence,
    };
    Ok((code, to_value(&out)))
}

fn cmd_subreps(file: &Path) -> Outcome {
    #[derive(Serialize)]
    struct Out {
        budget: usize,
        certificates: Vec<CertificateOut>,
    }
    let datum = read_datum(file)?;
    let certs = coordinate_subrep_scan(&datum, DEFAULT_SCAN_BUDGET)?;
    let out = Out {
        budget: DEFAULT_SCAN_BUDGET,
        certificates: certs.iter().map(Into::into).collect(),
    };
    Ok((EXIT_OK, to_value(&out)))
}

fn cmd_degenerate(file: &Path, ffile: &Path, cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct Sample {
        t: Real,
        capacity: CapacityOut,
    }
    #[derive(Serialize)]
    struct Out {
        samples: Vec<Sample>,
        diagonal: CapacityOut,
        input: CapacityOut,
        max_deviation: Real,
        det_balance_residual: Real,
        below_diagonal: Real,
    }
    let datum = read_datum(file)?;
    let filtration = read_filtration(ffile, &datum.dims)?;
    let r = degeneration_check(&datum, &filtration, &cfg.degeneration())?;
    let out = Out {
        samples: r
            .caps
            .iter()
            .map(|&(t, c)| Sample {
                t: Real(t),
                capacity: c.into(),
            })
            .collect(),
        diagonal: r.cap_diag.into(),
        input: r.cap_input.into(),
        max_deviation: Real(r.max_deviation),
        det_balance_residual: Real(r.det_balance_residual),
        below_diagonal: Real(r.triangularization.max_below),
    };
    Ok((EXIT_OK, to_value(&out)))
}

fn cmd_random(spec: &str, geometric: bool, cfg: &RunConfig) -> Result<QuiverDatum> {
    let s = shape::parse_shape(spec)?;
    let mode = if geometric {
        RandomMode::GeometricAttempt(cfg.scaling())
    } else {
        RandomMode::Generic
    };
    random_datum(&s.quiver, &s.dims, &s.weights, cfg.seed, &mode)
}

fn run_file(command: &Command, file: &Path, cfg: &RunConfig) -> Report {
    let outcome = match command {
        Command::Validate { .. } => cmd_validate(file),
        Command::Objective { y, .. } => cmd_objective(file, y, cfg),
        Command::Geometric { .. } => cmd_geometric(file, cfg),
        Command::Scale { .. } => cmd_scale(file, cfg),
        Command::Capacity { .. } => cmd_capacity(file, cfg),
        Command::Oracle { .. } => cmd_oracle(file, cfg),
        Command::Feasible { .. } => cmd_feasible(file, cfg),
        Command::Subreps { .. } => cmd_subreps(file),
        Command::Degenerate { filtration, .. } => cmd_degenerate(file, filtration, cfg),
        Command::Random { .. } => unreachable!("random takes no input file"),
    };
    let input = Some(file.display().to_string());
    match outcome {
        Ok((code, result)) => Report::success(command.name(), input, *cfg, code, result),
        Err(e) => Report::failure(command.name(), input, *cfg, &e),
    }
}

fn batch_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        Error::InvalidInput(format!("cannot read directory {}: {e}", dir.display()))
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn emit(reports: &[Report], cfg: &RunConfig, batch: bool) {
    let mut out = String::new();
    match (cfg.output_mode, batch) {
        (OutputMode::Json, false) => out = json(&reports[0]),
        (OutputMode::Json, true) => out = json(reports),
        (OutputMode::Human, _) => {
            for r in reports {
                if batch {
                    out.push_str(&format!("== {} ==\n", r.input.as_deref().unwrap_or("-")));
                }
                out.push_str(&report::human(r));
            }
        }
    }
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{}", out.trim_end());
    if cfg.output_mode == OutputMode::Human {
        for r in reports {
            if let Some(e) = &r.error {
                eprintln!("qbl {}: {}", r.command, e.message);
            }
        }
    }
}

fn input_error(command: &'static str, cfg: RunConfig, e: &Error) -> i32 {
    let r = Report::failure(command, None, cfg, e);
    let code = r.exit_code;
    emit(&[r], &cfg, false);
    code
}

fn run(cli: Cli) -> i32 {
    let flags = Overrides {
        tolerance: cli.tol,
        max_iterations: cli.max_iters,
        seed: cli.seed,
        json: cli.json,
    };
    let name = cli.command.name();
    let cfg = match ConfigFile::from_env().and_then(|f| RunConfig::resolve(f, &flags)) {
        Ok(c) => c,
        Err(e) => {
            let fallback = RunConfig {
                output_mode: if cli.json {
                    OutputMode::Json
                } else {
                    OutputMode::Human
                },
                ..RunConfig::default()
            };
            return input_error(name, fallback, &e);
        }
    };

    if let Command::Random { shape, geometric } = &cli.command {
        if cli.batch.is_some() {
            return input_error(
                name,
                cfg,
                &Error::InvalidInput("random does not take --batch".into()),
            );
        }
        return match cmd_random(shape, *geometric, &cfg) {
            Ok(datum) if cfg.output_mode == OutputMode::Human => {
                println!("{}", quiver_bl::io::datum_to_json(&datum));
                EXIT_OK
            }
            Ok(datum) => {
                let r = Report::success(name, None, cfg, EXIT_OK, to_value(&DatumView(&datum)));
                emit(&[r], &cfg, false);
                EXIT_OK
            }
            Err(e) => input_error(name, cfg, &e),
        };
    }

    match (cli.command.file(), &cli.batch) {
        (Some(file), None) => {
            let r = run_file(&cli.command, file, &cfg);
            let code = r.exit_code;
            emit(&[r], &cfg, false);
            code
        }
        (None, Some(dir)) => {
            let files = match batch_files(dir) {
                Ok(f) => f,
                Err(e) => return input_error(name, cfg, &e),
            };
            let reports: Vec<Report> = files
                .par_iter()
                .map(|f| run_file(&cli.command, f, &cfg))
                .collect();
            emit(&reports, &cfg, true);
            reports.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_OK)
        }
        (Some(_), Some(_)) => input_error(
            name,
            cfg,
            &Error::InvalidInput("give either FILE or --batch DIR, not both".into()),
        ),
        (None, None) => input_error(
            name,
            cfg,
            &Error::InvalidInput("missing input FILE (or --batch DIR)".into()),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    ExitCode::from(run(cli) as u8)
}
