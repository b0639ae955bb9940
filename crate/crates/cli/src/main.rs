use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridres_core::cmt::{coupled_eigenmodes, CoupledSystem};
use hybridres_core::extract::{analyze_features, fit_lorentzian, q_phase_slope, q_three_db};
use hybridres_core::network::{default_grid, linear_grid, synthesize_s21, Spectrum};
use hybridres_core::resonator::{fit_derivative_at, fit_frequency_vs_temperature, read_temperature_points_path};
use hybridres_core::scenario::Scenario;
use hybridres_core::sensitivity::responsivity;
use hybridres_core::sweep::{run_sweep, Cell, Observable, SweepPlan, SweepTable, SweepVariable};
use hybridres_core::units::Hertz;
use hybridres_core::Error;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hybridres", version, about = "Coupled cavity/dielectric resonator toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled eigenmodes at one operating point.
    Modes(ModesArgs),
    /// Synthesize S21, write it as CSV and print the feature summary.
    Spectrum(SpectrumArgs),
    /// Extract f0 and loaded Q from a measured or synthesized spectrum.
    Fit(FitArgs),
    /// Parameter sweep written as a CSV table.
    Sweep(SweepArgs),
    /// Temperature responsivity of both coupled modes.
    Sensitivity(SensitivityArgs),
    /// Quadratic fit of puck frequency against temperature.
    FitTemp(FitTempArgs),
}

#[derive(Args)]
struct Point {
    /// Scenario file (JSON).
    #[arg(short, long)]
    scenario: PathBuf,
    /// Override the scenario coupling coefficient.
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<f64>,
    /// Move the cavity onto the bare puck frequency.
    #[arg(long)]
    tuned: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Where {
    /// Puck permittivity.
    #[arg(long)]
    eps_r: Option<f64>,
    /// Temperature in K, resolved through the permittivity model.
    #[arg(long)]
    temp: Option<f64>,
}

#[derive(Args)]
struct ModesArgs {
    #[command(flatten)]
    point: Point,
    #[command(flatten)]
    at: Where,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    point: Point,
    #[command(flatten)]
    at: Where,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    /// Grid start (defaults to the scenario grid around the modes).
    #[arg(long, requires = "to")]
    from: Option<Hertz>,
    #[arg(long, requires = "from")]
    to: Option<Hertz>,
    /// Number of grid points (defaults to the scenario grid).
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    #[value(name = "3db")]
    ThreeDb,
    Lorentz,
    Phase,
}

#[derive(Args)]
struct FitArgs {
    /// Spectrum CSV.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "3db")]
    method: FitMethod,
    /// Select the resonance nearest this frequency (e.g. `1.3GHz`).
    #[arg(long)]
    near: Option<Hertz>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Output {
    Modes,
    Betas,
    Spectrum,
    Products,
    TemperatureFit,
}

impl From<Output> for Observable {
    fn from(o: Output) -> Self {
        match o {
            Output::Modes => Observable::Modes,
            Output::Betas => Observable::Betas,
            Output::Spectrum => Observable::Spectrum,
            Output::Products => Observable::Products,
            Output::TemperatureFit => Observable::TemperatureFit,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(short, long)]
    scenario: PathBuf,
    /// eps_r, kappa or temp.
    #[arg(long)]
    var: SweepVariable,
    #[arg(long, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, allow_negative_numbers = true)]
    to: f64,
    #[arg(long)]
    steps: usize,
    /// Column groups to compute.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "modes")]
    outputs: Vec<Output>,
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<f64>,
    /// Permittivity held fixed during a kappa sweep.
    #[arg(long)]
    fixed_eps_r: Option<f64>,
    /// Temperature held fixed during eps_r or kappa sweeps.
    #[arg(long)]
    fixed_temp: Option<f64>,
    /// Output CSV file; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the table as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Worker threads (0 uses all available cores).
    #[arg(long, env = "HYBRIDRES_WORKERS", default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    point: Point,
    #[arg(long)]
    temp: f64,
    /// Puck frequency slope per kelvin (e.g. `-10kHz`), overriding the
    /// permittivity model.
    #[arg(long, allow_hyphen_values = true)]
    dfsto_dt: Option<Hertz>,
}

#[derive(Args)]
struct FitTempArgs {
    /// CSV with temperature (K) and frequency (Hz) columns.
    #[arg(long = "in")]
    input: PathBuf,
    /// Temperatures at which to report the fitted slope.
    #[arg(long, value_delimiter = ',')]
    at: Vec<f64>,
}

enum Failure {
    Config(String),
    Model(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Io(_) | Error::InvalidModel(_) => Failure::Config(e.to_string()),
            _ => Failure::Model(e.to_string()),
        }
    }
}

type CmdResult = Result<Value, Failure>;

fn load(path: &Path, kappa: Option<f64>) -> Result<Scenario, Failure> {
    let s = Scenario::load(path)?;
    Ok(match kappa {
        Some(k) => {
            let s = s.with_kappa(k);
            s.validate()?;
            s
        }
        None => s,
    })
}

fn resolve_system(s: &Scenario, at: &Where, tuned: bool) -> Result<(f64, Option<f64>, CoupledSystem), Failure> {
    let kappa = s.kappa()?;
    let (eps, t) = match (at.eps_r, at.temp) {
        (Some(e), _) => (e, None),
        (None, Some(t)) => (s.permittivity_model()?.eval(t)?, Some(t)),
        (None, None) => unreachable!("clap enforces one of --eps-r/--temp"),
    };
    let mut sys = s.system_at_eps(eps, kappa, t)?;
    if tuned {
        sys.f_cav_hz = sys.f_sto_hz;
    }
    Ok((eps, t, sys))
}

fn cmd_modes(a: ModesArgs) -> CmdResult {
    let s = load(&a.point.scenario, a.point.kappa)?;
    let (eps, t, sys) = resolve_system(&s, &a.at, a.point.tuned)?;
    let m = coupled_eigenmodes(&sys)?;
    Ok(json!({
        "eps_r": eps,
        "t_k": t,
        "system": sys,
        "mode1": m.mode1,
        "mode2": m.mode2,
        "gap_hz": m.gap_hz(),
    }))
}

fn cmd_spectrum(a: SpectrumArgs) -> CmdResult {
    let s = load(&a.point.scenario, a.point.kappa)?;
    let (eps, t, sys) = resolve_system(&s, &a.at, a.point.tuned)?;
    let model = s.two_port(sys)?;
    let points = a.points.unwrap_or(s.grid.points);
    if points < 2 {
        return Err(Failure::Config("--points must be at least 2".into()));
    }
    let grid = match (a.from, a.to) {
        (Some(lo), Some(hi)) if hi.hz() > lo.hz() && lo.hz() > 0.0 => linear_grid(lo.hz(), hi.hz(), points),
        (Some(_), Some(_)) => return Err(Failure::Config("--from must be positive and below --to".into())),
        _ => default_grid(&model, points, s.grid.span_factor)?,
    };
    let spec = synthesize_s21(&model, &grid)?;
    let file = File::create(&a.out).map_err(|e| Failure::Config(format!("{}: {e}", a.out.display())))?;
    spec.write_csv(BufWriter::new(file))?;

    let (peaks, notch) = match analyze_features(&model) {
        Ok(f) => (
            vec![f.f_peak1_hz, f.f_peak2_hz],
            json!({ "f_hz": f.f_notch_hz, "depth_db": f.depth_db }),
        ),
        Err(Error::PeaksNotResolved { single_peak_hz }) => (vec![single_peak_hz], Value::Null),
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "eps_r": eps,
        "t_k": t,
        "system": sys,
        "out": a.out,
        "points": grid.len(),
        "f_lo_hz": grid[0],
        "f_hi_hz": grid[grid.len() - 1],
        "peaks_hz": peaks,
        "notch": notch,
    }))
}

fn cmd_fit(a: FitArgs) -> CmdResult {
    let file = File::open(&a.input).map_err(|e| Failure::Config(format!("{}: {e}", a.input.display())))?;
    let spec = Spectrum::read_csv(BufReader::new(file))?;
    let near = match a.near {
        Some(f) => f.hz(),
        None => {
            let db = spec.magnitude_db();
            let k = (0..db.len()).max_by(|&i, &j| db[i].total_cmp(&db[j])).unwrap_or(0);
            spec.freqs()[k]
        }
    };
    let est = match a.method {
        FitMethod::ThreeDb => q_three_db(&spec, near),
        FitMethod::Lorentz => fit_lorentzian(&spec, near),
        FitMethod::Phase => q_phase_slope(&spec, near),
    }?;
    Ok(serde_json::to_value(est).expect("estimate serializes"))
}

fn write_table(path: &Path, table: &SweepTable) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    table.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<Option<Value>, Failure> {
    let scenario = load(&a.scenario, a.kappa)?;
    let outputs = a.outputs.iter().map(|&o| o.into()).collect();
    let mut plan = SweepPlan::linear(a.var, a.from, a.to, a.steps, scenario, outputs)?;
    plan.fixed_eps_r = a.fixed_eps_r;
    plan.fixed_t_k = a.fixed_temp;
    let table = run_sweep(&plan, a.workers)?;
    if let Some(path) = &a.out {
        write_table(path, &table)?;
    }
    match (a.json, &a.out) {
        (true, _) => Ok(Some(serde_json::from_str(&table.to_json()).expect("table is valid JSON"))),
        (false, Some(path)) => {
            let errors = table.column("error").unwrap_or_default().iter().filter(|c| matches!(c, Cell::Text(_))).count();
            Ok(Some(json!({ "out": path, "rows": table.rows.len(), "columns": table.columns, "row_errors": errors })))
        }
        (false, None) => {
            let stdout = std::io::stdout();
            table.write_csv(stdout.lock())?;
            Ok(None)
        }
    }
}

fn cmd_sensitivity(a: SensitivityArgs) -> CmdResult {
    let mut s = load(&a.point.scenario, a.point.kappa)?;
    if let Some(d) = a.dfsto_dt {
        s.dfsto_dt_hz_per_k = Some(d.hz());
    }
    let op = s.operating_point(a.temp, a.point.tuned)?;
    Ok(serde_json::to_value(responsivity(&op)?).expect("report serializes"))
}

fn cmd_fit_temp(a: FitTempArgs) -> CmdResult {
    let points = read_temperature_points_path(&a.input)?;
    let out = fit_frequency_vs_temperature(&points)?;
    let slopes: Vec<Value> = a
        .at
        .iter()
        .map(|&t| json!({ "t_k": t, "df_dt_hz_per_k": fit_derivative_at(&out.fit, t) }))
        .collect();
    Ok(json!({
        "fit": out.fit,
        "residual_norm_hz": out.residual_norm_hz,
        "vertex_k": out.fit.vertex_k(),
        "points": points.len(),
        "slopes": slopes,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Modes(a) => cmd_modes(a).map(Some),
        Command::Spectrum(a) => cmd_spectrum(a).map(Some),
        Command::Fit(a) => cmd_fit(a).map(Some),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Sensitivity(a) => cmd_sensitivity(a).map(Some),
        Command::FitTemp(a) => cmd_fit_temp(a).map(Some),
    };
    match result {
        Ok(value) => {
            if let Some(v) = value {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("JSON output"));
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("hybridres: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Model(msg)) => {
            eprintln!("hybridres: {msg}");
            ExitCode::from(3)
        }
    }
}
