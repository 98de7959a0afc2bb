//! Subcommands behind the `yamabe` binary.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{run_flow, solve_yamabe, FlowTrace};
use crate::geometry::{volume_element, BackgroundGeometry};
use crate::spectral::{first_eigen, BoundaryCondition, OperatorDescriptor};
use crate::svg::{line_plot, Series};
use crate::trace_io::{parse_csv, write_csv, TraceTable};
use crate::verify::{run_check, CheckContext, CheckOptions, Verdict, VerdictReport};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub reversed: bool,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

fn exit_code(err: &Error) -> i32 {
    if err.is_solver_error() {
        EXIT_SOLVER
    } else {
        EXIT_CONFIG
    }
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
    if ov.deterministic {
        cfg.deterministic = true;
        cfg.flow.deterministic = true;
    }
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
        cfg.flow.spectral.seed = seed;
    }
    if ov.threads.is_some() {
        cfg.threads = ov.threads;
    }
    Ok(cfg)
}

struct RunOutput {
    bg: BackgroundGeometry,
    u0: Vec<f64>,
    trace: FlowTrace,
    /// Solver failure that cut the run short, if any.
    failure: Option<Error>,
}

fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    let bg = cfg.build_background()?;
    let u0 = cfg.initial_factor(&bg)?;
    match run_flow(&bg, &u0, &cfg.flow) {
        Ok((_, trace)) => Ok(RunOutput { bg, u0, trace, failure: None }),
        Err(Error::Stiffness { t, dt, trace }) => Ok(RunOutput {
            bg,
            u0,
            trace: *trace.clone(),
            failure: Some(Error::Stiffness { t, dt, trace }),
        }),
        Err(e) => Err(e),
    }
}

fn write_trace(cfg: &RunConfig, trace: &FlowTrace) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(&cfg.trace_name);
    let file = fs::File::create(&path)?;
    write_csv(trace, std::io::BufWriter::new(file))?;
    if cfg.plots {
        let table = parse_csv(&fs::read_to_string(&path)?)?;
        write_plots(&table, &cfg.out_dir)?;
    }
    Ok(path)
}

/// Writes `lambda.svg`, `curvature.svg`, `volume.svg` and `diameter.svg`.
pub fn write_plots(table: &TraceTable, dir: &Path) -> Result<()> {
    let t = table.column("t").unwrap_or_default();
    let pair = |name: &str| -> Vec<(f64, f64)> {
        table
            .column(name)
            .map(|c| t.iter().copied().zip(c).collect())
            .unwrap_or_default()
    };
    let lambda_cols: Vec<&String> = table.columns.iter().filter(|c| c.starts_with("lambda[")).collect();
    let plots: Vec<(&str, &str, Vec<Series>)> = vec![
        (
            "lambda.svg",
            "first eigenvalues",
            lambda_cols
                .iter()
                .map(|c| Series { label: c.as_str(), points: pair(c) })
                .collect(),
        ),
        (
            "curvature.svg",
            "curvature extrema and average",
            ["minR", "maxR", "Rbar"]
                .iter()
                .map(|c| Series { label: c, points: pair(c) })
                .collect(),
        ),
        ("volume.svg", "total volume", vec![Series { label: "volume", points: pair("volume") }]),
        ("diameter.svg", "diameter", vec![Series { label: "diameter", points: pair("diameter") }]),
    ];
    for (file, title, series) in plots {
        fs::write(dir.join(file), line_plot(title, "t", &series))?;
    }
    Ok(())
}

/// `run`: executes the flow and writes the trace and plots.
pub fn cmd_run(config: &Path, ov: &Overrides) -> i32 {
    let result = (|| -> Result<Option<Error>> {
        let cfg = load_config(config, ov)?;
        let out = execute(&cfg)?;
        let path = write_trace(&cfg, &out.trace)?;
        eprintln!(
            "{} samples, status {}, trace written to {}",
            out.trace.samples.len(),
            out.trace.status.name(),
            path.display()
        );
        Ok(out.failure)
    })();
    match result {
        Ok(None) => EXIT_OK,
        Ok(Some(e)) | Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Eigenvalue pair `(λ(g_0), λ(g_Y))` entering the sandwich estimate.
fn sandwich_eigenvalues(cfg: &RunConfig, out: &RunOutput) -> Result<(f64, f64)> {
    let bc = if out.bg.has_boundary() {
        BoundaryCondition::Dirichlet
    } else {
        BoundaryCondition::Closed
    };
    let op = OperatorDescriptor::laplacian(bc);
    let (_, volume) = volume_element(&out.bg, &out.u0)?;
    let (u_y, _) = solve_yamabe(&out.bg, volume, 1e-10)?;
    let l0 = first_eigen(&out.bg, &out.u0, &op, &cfg.flow.spectral)?.lambda;
    let ly = first_eigen(&out.bg, &u_y, &op, &cfg.flow.spectral)?.lambda;
    Ok((l0, ly))
}

/// Runs the configured checks on a completed run.
pub fn verify_run(cfg: &RunConfig, reversed: bool) -> Result<(FlowTrace, Vec<VerdictReport>)> {
    let out = execute(cfg)?;
    if let Some(e) = out.failure {
        return Err(e);
    }
    let mut ctx = CheckContext {
        sandwich: None,
        sandwich_tol: cfg.sandwich_tol,
        opts: CheckOptions { reversed },
    };
    if cfg.checks.iter().any(|c| c == "sandwich") && out.trace.initial().max_r < 0.0 {
        ctx.sandwich = Some(sandwich_eigenvalues(cfg, &out)?);
    }
    let mut reports = Vec::new();
    for id in &cfg.checks {
        reports.extend(run_check(id, &out.trace, &ctx)?);
    }
    reports.sort_by(|a, b| a.check_id.cmp(&b.check_id));
    Ok((out.trace, reports))
}

/// `verify`: runs the flow and the configured checks; exit 0 iff every
/// conclusive check passes.
pub fn cmd_verify(config: &Path, ov: &Overrides) -> i32 {
    let result = (|| -> Result<bool> {
        let cfg = load_config(config, ov)?;
        let (trace, reports) = verify_run(&cfg, ov.reversed)?;
        write_trace(&cfg, &trace)?;
        let text: String = reports.iter().map(|r| format!("{r}\n")).collect();
        fs::write(cfg.out_dir.join(&cfg.report_name), &text)?;
        print!("{text}");
        Ok(reports.iter().all(|r| r.verdict != Verdict::Fail))
    })();
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// `report`: renders plots and a summary from an existing trace CSV.
pub fn cmd_report(trace_path: &Path, out: Option<&Path>) -> i32 {
    let result = (|| -> Result<()> {
        let text = fs::read_to_string(trace_path)?;
        let table = parse_csv(&text)?;
        let dir = out
            .map(Path::to_path_buf)
            .unwrap_or_else(|| trace_path.parent().unwrap_or(Path::new(".")).to_path_buf());
        fs::create_dir_all(&dir)?;
        write_plots(&table, &dir)?;
        let first = table.rows.first().ok_or_else(|| Error::Usage("trace has no samples".into()))?;
        let last = table.rows.last().expect("nonempty");
        println!("samples: {}", table.rows.len());
        for (k, name) in table.columns.iter().enumerate() {
            println!("{name}: {:.10e} -> {:.10e}", first[k], last[k]);
        }
        Ok(())
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
