//! Serializable model configuration.
//!
//! A scenario bundles the puck, its permittivity and loss models, the cavity
//! mode, the puck–cavity coupling and the port loading. It is the unit that
//! sweeps embed in their output for provenance.

use crate::cmt::{kappa_calibration, CoupledSystem};
use crate::materials::{LossModel, PermittivityModel, Table};
use crate::network::{TwoPortModel, DEFAULT_GRID_POINTS, DEFAULT_SPAN_FACTOR};
use crate::resonator::{puck_frequency, CavityMode, DielectricPuck, TemperatureFrequencyFit};
use crate::sensitivity::OperatingPoint;
use crate::units::Hertz;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PermittivitySpec {
    Constant { eps_r: f64 },
    InverseT { c: f64, t_min_k: f64, t_max_k: f64 },
    Table { rows: Table },
    /// CSV with header `T_K,eps_r`, relative to the scenario file.
    TableCsv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    Constant { tan_delta: f64 },
    /// Unloaded dielectric Q, the inverse of tanδ.
    Q { q: f64 },
    Table { rows: Table },
}

impl LossSpec {
    pub fn model(&self) -> LossModel {
        match self {
            LossSpec::Constant { tan_delta } => LossModel::Constant { tan_delta: *tan_delta },
            LossSpec::Q { q } => LossModel::Constant { tan_delta: 1.0 / q },
            LossSpec::Table { rows } => LossModel::Table { rows: rows.clone() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySpec {
    pub f: Hertz,
    pub q: f64,
}

/// κ given directly or as a named calibration entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Value(f64),
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub q_ext1: f64,
    pub q_ext2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub span_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points: DEFAULT_GRID_POINTS, span_factor: DEFAULT_SPAN_FACTOR }
    }
}

/// Quadratic `f(T) = k0 + k1·T + k2·T²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureFitSpec {
    pub k0: Hertz,
    pub k1_hz_per_k: f64,
    pub k2_hz_per_k2: f64,
}

impl TemperatureFitSpec {
    pub fn fit(&self) -> TemperatureFrequencyFit {
        TemperatureFrequencyFit { k0_hz: self.k0.hz(), k1_hz_per_k: self.k1_hz_per_k, k2_hz_per_k2: self.k2_hz_per_k2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_puck")]
    pub puck: DielectricPuck,
    pub permittivity: PermittivitySpec,
    pub loss: LossSpec,
    pub cavity: CavitySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaSpec>,
    pub ports: PortSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_fit: Option<TemperatureFitSpec>,
    /// Supplied puck slope in Hz/K that overrides the permittivity model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfsto_dt_hz_per_k: Option<f64>,
}

fn default_puck() -> DielectricPuck {
    DielectricPuck::STO_SAMPLE
}

impl Scenario {
    /// Parses and validates a scenario. `base_dir` resolves `table_csv`
    /// paths, which are inlined as tables.
    pub fn from_json_str(src: &str, base_dir: Option<&Path>) -> Result<Scenario> {
        let mut s: Scenario = serde_json::from_str(src).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if let PermittivitySpec::TableCsv { path } = &s.permittivity {
            let full = match base_dir {
                Some(d) if path.is_relative() => d.join(path),
                _ => path.clone(),
            };
            s.permittivity = PermittivitySpec::Table { rows: Table::from_csv_path(&full, "eps_r")? };
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Scenario::from_json_str(&src, path.parent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.puck.validate()?;
        self.permittivity_model()?.validate()?;
        self.loss_model().validate()?;
        CavityMode::new(self.cavity.f.hz(), self.cavity.q)?;
        let ok = |q: f64| q.is_finite() && q > 0.0;
        if !(ok(self.ports.q_ext1) && ok(self.ports.q_ext2)) {
            return Err(Error::InvalidModel("port external Q factors must be positive".into()));
        }
        if self.grid.points < 2 || !(self.grid.span_factor > 0.0) {
            return Err(Error::InvalidModel("grid needs at least 2 points and a positive span".into()));
        }
        if let Some(KappaSpec::Calibration(name)) = &self.kappa {
            if kappa_calibration(name).is_none() {
                return Err(Error::InvalidModel(format!("unknown kappa calibration entry `{name}`")));
            }
        }
        if let Some(KappaSpec::Value(k)) = self.kappa {
            if !(k.is_finite() && k.abs() < 1.0) {
                return Err(Error::InvalidModel(format!("kappa must satisfy |kappa| < 1, got {k}")));
            }
        }
        if let Some(d) = self.dfsto_dt_hz_per_k {
            if !d.is_finite() {
                return Err(Error::InvalidModel("dfsto_dt_hz_per_k must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn permittivity_model(&self) -> Result<PermittivityModel> {
        Ok(match &self.permittivity {
            PermittivitySpec::Constant { eps_r } => PermittivityModel::Constant { eps_r: *eps_r },
            PermittivitySpec::InverseT { c, t_min_k, t_max_k } => {
                PermittivityModel::InverseT { c: *c, t_min_k: *t_min_k, t_max_k: *t_max_k }
            }
            PermittivitySpec::Table { rows } => PermittivityModel::Table { rows: rows.clone() },
            PermittivitySpec::TableCsv { path } => {
                return Err(Error::InvalidModel(format!("table_csv `{}` was not resolved", path.display())))
            }
        })
    }

    pub fn loss_model(&self) -> LossModel {
        self.loss.model()
    }

    pub fn cavity(&self) -> CavityMode {
        CavityMode { f_hz: self.cavity.f.hz(), q: self.cavity.q }
    }

    pub fn kappa(&self) -> Result<f64> {
        match &self.kappa {
            Some(KappaSpec::Value(k)) => Ok(*k),
            Some(KappaSpec::Calibration(name)) => kappa_calibration(name)
                .ok_or_else(|| Error::InvalidModel(format!("unknown kappa calibration entry `{name}`"))),
            None => Err(Error::InvalidModel("the scenario has no kappa; supply one".into())),
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(KappaSpec::Value(kappa));
        self
    }

    /// Puck Q at `t_k`, or the constant value when no temperature is given.
    pub fn q_sto(&self, t_k: Option<f64>) -> Result<f64> {
        let loss = self.loss_model();
        match (t_k, &loss) {
            (Some(t), _) => loss.q(t),
            (None, LossModel::Constant { .. }) => loss.q(1.0),
            (None, LossModel::Table { .. }) => {
                Err(Error::InvalidModel("the loss table needs a temperature".into()))
            }
        }
    }

    /// Coupled system with the puck at permittivity `eps_r`.
    pub fn system_at_eps(&self, eps_r: f64, kappa: f64, t_k: Option<f64>) -> Result<CoupledSystem> {
        if !(eps_r.is_finite() && eps_r > 1.0) {
            return Err(Error::InvalidModel(format!("eps_r must be > 1, got {eps_r}")));
        }
        let c = self.cavity();
        CoupledSystem::new(puck_frequency(&self.puck, eps_r), self.q_sto(t_k)?, c.f_hz, c.q, kappa)
    }

    /// Coupled system with the puck at temperature `t_k`.
    pub fn system_at_temp(&self, t_k: f64, kappa: f64) -> Result<CoupledSystem> {
        let eps = self.permittivity_model()?.eval(t_k)?;
        self.system_at_eps(eps, kappa, Some(t_k))
    }

    pub fn two_port(&self, sys: CoupledSystem) -> Result<TwoPortModel> {
        TwoPortModel::new(sys, self.ports.q_ext1, self.ports.q_ext2)
    }

    /// Operating point at `t_k`; `tuned` moves the cavity onto the puck.
    pub fn operating_point(&self, t_k: f64, tuned: bool) -> Result<OperatingPoint> {
        let (puck, eps, loss, kappa) = (self.puck, self.permittivity_model()?, self.loss_model(), self.kappa()?);
        let op = if tuned {
            OperatingPoint::tuned(puck, eps, &loss, self.cavity.q, kappa, t_k)?
        } else {
            OperatingPoint::new(puck, eps, &loss, self.cavity(), kappa, t_k)?
        };
        match self.dfsto_dt_hz_per_k {
            Some(d) => op.with_dfsto_dt(d),
            None => Ok(op),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PEC: &str = r#"{
        "schema_version": 1,
        "puck": {"radius_mm": 8.17, "height_mm": 7.26, "hole_radius_mm": 2.0},
        "permittivity": {"type": "constant", "eps_r": 230},
        "loss": {"type": "q", "q": 1.01e4},
        "cavity": {"f": "1.3 GHz", "q": 4.2e7},
        "kappa": 0.0278,
        "ports": {"q_ext1": 8.6e7, "q_ext2": 8.6e7}
    }"#;

    #[test]
    fn parses_with_units_and_defaults() {
        let s = Scenario::from_json_str(PEC, None).unwrap();
        assert_eq!(s.cavity.f.hz(), 1.3e9);
        assert_eq!(s.grid, GridSpec::default());
        assert_eq!(s.kappa().unwrap(), 0.0278);
        assert!((s.q_sto(None).unwrap() - 1.01e4).abs() < 1e-9);
        let back = Scenario::from_json_str(&s.to_json(), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn calibration_kappa() {
        let src = PEC.replace("0.0278", "\"r_offset_10mm\"");
        assert_eq!(Scenario::from_json_str(&src, None).unwrap().kappa().unwrap(), 0.006);
        let src = PEC.replace("0.0278", "\"r_offset_19mm\"");
        assert!(matches!(Scenario::from_json_str(&src, None), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn missing_kappa_is_reported() {
        let src = PEC.replace("\"kappa\": 0.0278,", "");
        let s = Scenario::from_json_str(&src, None).unwrap();
        assert!(s.kappa().is_err());
        assert_eq!(s.with_kappa(0.01).kappa().unwrap(), 0.01);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Scenario::from_json_str(&PEC.replace("\"schema_version\": 1", "\"schema_version\": 7"), None), Err(Error::InvalidModel(_))));
        assert!(matches!(Scenario::from_json_str(&PEC.replace("1.3 GHz", "1.3 furlongs"), None), Err(Error::Parse { .. })));
        assert!(matches!(Scenario::from_json_str(&PEC.replace("\"q_ext1\"", "\"q_extra\""), None), Err(Error::Parse { .. })));
    }

    #[test]
    fn table_csv_is_inlined() {
        let dir = std::env::temp_dir().join(format!("hybridres-scenario-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("eps.csv"), "T_K,eps_r\n20,5000\n80,1250\n").unwrap();
        let src = PEC.replace(r#"{"type": "constant", "eps_r": 230}"#, r#"{"type": "table_csv", "path": "eps.csv"}"#);
        let s = Scenario::from_json_str(&src, Some(&dir)).unwrap();
        assert!(matches!(s.permittivity, PermittivitySpec::Table { .. }));
        assert_eq!(s.permittivity_model().unwrap().eval(50.0).unwrap(), 3125.0);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
