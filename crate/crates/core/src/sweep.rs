//! Deterministic parameter sweeps over ε_r, κ or temperature.
//!
//! Every grid point is evaluated independently on a worker pool and rows
//! are assembled by grid index, so the output does not depend on the
//! number of workers. Failures are recorded per row in the `error` column.

use crate::cmt::{beta_coefficients, coupled_eigenmodes, Mode};
use crate::extract::{analyze_features, sensitivity_q_product, DEFAULT_EPS_DELTA};
use crate::materials::eval_permittivity;
use crate::resonator::fit_derivative_at;
use crate::scenario::Scenario;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    EpsR,
    Kappa,
    Temperature,
}

impl SweepVariable {
    pub fn column(self) -> &'static str {
        match self {
            SweepVariable::EpsR => "eps_r",
            SweepVariable::Kappa => "kappa",
            SweepVariable::Temperature => "t_k",
        }
    }
}

impl FromStr for SweepVariable {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eps_r" => Ok(SweepVariable::EpsR),
            "kappa" => Ok(SweepVariable::Kappa),
            "temp" | "temperature" => Ok(SweepVariable::Temperature),
            other => Err(format!("unknown sweep variable `{other}` (expected eps_r|kappa|temp)")),
        }
    }
}

/// Groups of output columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Eigen-solver modes, sorted by frequency, with dominance labels.
    Modes,
    Betas,
    /// Refined peaks and notch of the transmission spectrum.
    Spectrum,
    /// ε_r sensitivities of the spectral features and their products
    /// with the phase derivative.
    Products,
    /// The quadratic frequency-vs-temperature fit and its slope.
    TemperatureFit,
}

impl Observable {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Observable::Modes => &["f_sto_hz", "f1_hz", "q1", "label1", "f2_hz", "q2", "label2", "gap_hz"],
            Observable::Betas => &["beta1", "beta2"],
            Observable::Spectrum => &["f_peak1_hz", "f_peak2_hz", "f_notch_hz", "depth_db"],
            Observable::Products => &[
                "df1_deps",
                "df2_deps",
                "dfnotch_deps",
                "dphi_peak1",
                "dphi_peak2",
                "dphi_notch",
                "product1",
                "product2",
                "product_notch",
            ],
            Observable::TemperatureFit => &["fit_f_hz", "fit_df_dt_hz_per_k"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub scenario: Scenario,
    pub outputs: Vec<Observable>,
    /// ε_r held fixed when sweeping κ; defaults to the permittivity model
    /// at `fixed_t_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_eps_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_t_k: Option<f64>,
}

impl SweepPlan {
    /// `steps` evenly spaced points on `[from, to]`.
    pub fn linear(variable: SweepVariable, from: f64, to: f64, steps: usize, scenario: Scenario, outputs: Vec<Observable>) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidModel("a sweep needs at least 2 steps".into()));
        }
        let plan = SweepPlan {
            variable,
            grid: crate::network::linear_grid(from, to, steps),
            scenario,
            outputs,
            fixed_eps_r: None,
            fixed_t_k: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() < 2 {
            return Err(Error::InvalidModel("a sweep needs at least 2 grid points".into()));
        }
        if self.grid.iter().any(|v| !v.is_finite()) || self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel("sweep grid must be finite and strictly increasing".into()));
        }
        if self.outputs.is_empty() {
            return Err(Error::InvalidModel("a sweep needs at least one output".into()));
        }
        self.scenario.validate()?;
        if self.variable != SweepVariable::Kappa {
            self.scenario.kappa()?;
        }
        if self.outputs.contains(&Observable::TemperatureFit) {
            if self.variable != SweepVariable::Temperature {
                return Err(Error::InvalidModel("temperature_fit output needs a temperature sweep".into()));
            }
            if self.scenario.temperature_fit.is_none() {
                return Err(Error::InvalidModel("temperature_fit output needs scenario.temperature_fit".into()));
            }
        }
        if self.variable == SweepVariable::Kappa && self.fixed_eps_r.is_none() && self.fixed_t_k.is_none() {
            if let Err(e) = self.scenario.permittivity_model().and_then(|m| match m {
                crate::materials::PermittivityModel::Constant { .. } => Ok(()),
                _ => Err(Error::InvalidModel("a kappa sweep needs fixed_eps_r or fixed_t_k".into())),
            }) {
                return Err(e);
            }
        }
        Ok(())
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec![self.variable.column().to_string()];
        for o in &self.outputs {
            cols.extend(o.columns().iter().map(|c| c.to_string()));
        }
        cols.push("error".into());
        cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl SweepTable {
    pub fn column(&self, name: &str) -> Option<Vec<Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    /// Numeric column values, `NaN` where the cell is not a number.
    pub fn numbers(&self, name: &str) -> Option<Vec<f64>> {
        Some(self.column(name)?.iter().map(|c| c.as_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "# {k}={v}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            out.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

struct RowContext<'a> {
    plan: &'a SweepPlan,
    x: f64,
}

impl RowContext<'_> {
    fn kappa(&self) -> Result<f64> {
        match self.plan.variable {
            SweepVariable::Kappa => Ok(self.x),
            _ => self.plan.scenario.kappa(),
        }
    }

    fn temperature(&self) -> Option<f64> {
        match self.plan.variable {
            SweepVariable::Temperature => Some(self.x),
            _ => self.plan.fixed_t_k,
        }
    }

    fn eps_r(&self) -> Result<f64> {
        let s = &self.plan.scenario;
        match self.plan.variable {
            SweepVariable::EpsR => Ok(self.x),
            SweepVariable::Temperature => eval_permittivity(&s.permittivity_model()?, self.x),
            SweepVariable::Kappa => match (self.plan.fixed_eps_r, self.plan.fixed_t_k) {
                (Some(e), _) => Ok(e),
                (None, Some(t)) => eval_permittivity(&s.permittivity_model()?, t),
                (None, None) => eval_permittivity(&s.permittivity_model()?, 1.0),
            },
        }
    }

    fn observable(&self, o: Observable) -> Result<Vec<Cell>> {
        let s = &self.plan.scenario;
        let num = Cell::Num;
        match o {
            Observable::TemperatureFit => {
                let fit = s.temperature_fit.expect("validated").fit();
                Ok(vec![num(fit.eval(self.x)), num(fit_derivative_at(&fit, self.x))])
            }
            _ => {
                let kappa = self.kappa()?;
                let t = self.temperature();
                let eps = self.eps_r()?;
                let sys = s.system_at_eps(eps, kappa, t)?;
                match o {
                    Observable::Modes => {
                        let m = coupled_eigenmodes(&sys)?;
                        let label = |m: &Mode| Cell::Text(serde_json::to_value(m.label).unwrap().as_str().unwrap().to_string());
                        Ok(vec![
                            num(sys.f_sto_hz),
                            num(m.mode1.f_hz),
                            num(m.mode1.q),
                            label(&m.mode1),
                            num(m.mode2.f_hz),
                            num(m.mode2.q),
                            label(&m.mode2),
                            num(m.gap_hz()),
                        ])
                    }
                    Observable::Betas => {
                        let b = beta_coefficients(&sys);
                        Ok(vec![num(b.beta1), num(b.beta2)])
                    }
                    Observable::Spectrum => {
                        let a = analyze_features(&s.two_port(sys)?)?;
                        Ok(vec![num(a.f_peak1_hz), num(a.f_peak2_hz), num(a.f_notch_hz), num(a.depth_db)])
                    }
                    Observable::Products => {
                        let build = |e: f64| s.two_port(s.system_at_eps(e, kappa, t)?);
                        let p = sensitivity_q_product(build, eps, DEFAULT_EPS_DELTA)?;
                        let (d, f) = (p.sensitivity, p.features);
                        Ok(vec![
                            num(d.df1_deps),
                            num(d.df2_deps),
                            num(d.dfnotch_deps),
                            num(f.dphi_peak1),
                            num(f.dphi_peak2),
                            num(f.dphi_notch),
                            num(p.mode1),
                            num(p.mode2),
                            num(p.notch),
                        ])
                    }
                    Observable::TemperatureFit => unreachable!(),
                }
            }
        }
    }

    fn row(&self) -> Vec<Cell> {
        let mut row = vec![Cell::Num(self.x)];
        let mut errors = Vec::new();
        for &o in &self.plan.outputs {
            match self.observable(o) {
                Ok(cells) => row.extend(cells),
                Err(e) => {
                    row.extend(std::iter::repeat_n(Cell::Empty, o.columns().len()));
                    let name = serde_json::to_value(o).unwrap().as_str().unwrap().to_string();
                    errors.push(format!("{name}: {e}"));
                }
            }
        }
        row.push(if errors.is_empty() { Cell::Empty } else { Cell::Text(errors.join("; ")) });
        row
    }
}

/// Runs `plan` on `workers` threads (0 picks the available parallelism).
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<SweepTable> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Io(format!("worker pool: {e}")))?;
    let rows: Vec<Vec<Cell>> =
        pool.install(|| plan.grid.par_iter().map(|&x| RowContext { plan, x }.row()).collect());
    let metadata = vec![
        ("generator".to_string(), format!("hybridres-core {}", env!("CARGO_PKG_VERSION"))),
        ("variable".to_string(), plan.variable.column().to_string()),
        ("points".to_string(), plan.grid.len().to_string()),
        (
            "outputs".to_string(),
            serde_json::to_string(&plan.outputs).expect("outputs serialize"),
        ),
        ("note".to_string(), "puck frequency from the TE01d formula; the central hole is ignored".to_string()),
        ("scenario".to_string(), plan.scenario.to_json()),
    ];
    Ok(SweepTable { metadata, columns: plan.columns(), rows })
}
