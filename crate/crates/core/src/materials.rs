//! Temperature-dependent permittivity and loss models for the dielectric.
//!
//! Models are evaluated strictly inside their declared validity: asking for a
//! temperature outside the range is an [`Error::OutOfRange`], never an
//! extrapolation, because SrTiO3 changes permittivity violently across its
//! phase transitions.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

/// Room-temperature SrTiO3 permittivity.
pub const STO_ROOM_EPS_R: f64 = 318.0;

/// Default SrTiO3 loss tangent, 1/8000 (the room-temperature loaded Q).
pub const STO_DEFAULT_TAN_DELTA: f64 = 1.25e-4;

/// A sorted `(T [K], value)` table, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct Table {
    rows: Vec<(f64, f64)>,
}

impl Table {
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidModel("table needs at least 2 rows".into()));
        }
        for (i, w) in rows.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidModel(format!(
                    "table temperatures must be strictly increasing (row {} -> {})",
                    i + 1,
                    i + 2
                )));
            }
        }
        if rows.iter().any(|(t, v)| !t.is_finite() || !v.is_finite() || *t <= 0.0) {
            return Err(Error::InvalidModel("table entries must be finite with T > 0".into()));
        }
        Ok(Table { rows })
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn range(&self) -> (f64, f64) {
        (self.rows[0].0, self.rows[self.rows.len() - 1].0)
    }

    fn check(&self, t_k: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if t_k >= lo && t_k <= hi {
            Ok(())
        } else {
            Err(Error::OutOfRange { t_k, lo_k: lo, hi_k: hi })
        }
    }

    /// Index of the segment `[i, i+1]` containing `t_k`.
    fn segment(&self, t_k: f64) -> usize {
        let idx = self.rows.partition_point(|(t, _)| *t <= t_k);
        idx.clamp(1, self.rows.len() - 1) - 1
    }

    pub fn eval(&self, t_k: f64) -> Result<f64> {
        self.check(t_k)?;
        let i = self.segment(t_k);
        let (t0, v0) = self.rows[i];
        let (t1, v1) = self.rows[i + 1];
        let w = (t_k - t0) / (t1 - t0);
        Ok(v0 + w * (v1 - v0))
    }

    /// Slope of the interpolant; at an interior knot the mean of both sides.
    pub fn slope(&self, t_k: f64) -> Result<f64> {
        self.check(t_k)?;
        let seg_slope = |i: usize| {
            let (t0, v0) = self.rows[i];
            let (t1, v1) = self.rows[i + 1];
            (v1 - v0) / (t1 - t0)
        };
        let i = self.segment(t_k);
        let at_knot = self.rows[i].0 == t_k && i > 0;
        if at_knot {
            Ok(0.5 * (seg_slope(i - 1) + seg_slope(i)))
        } else {
            Ok(seg_slope(i))
        }
    }

    /// Reads a two-column CSV whose header is `T_K,<value_column>`.
    pub fn from_csv_reader<R: Read>(reader: R, value_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
            .clone();
        if headers.len() != 2 || &headers[0] != "T_K" || &headers[1] != value_column {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `T_K,{value_column}`"),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number `{}`", &rec[i]),
                })
            };
            let t = field(0)?;
            let v = field(1)?;
            if let Some(&(prev, _)) = rows.last() {
                if t <= prev {
                    return Err(Error::Parse {
                        line,
                        message: format!("rows must be sorted by strictly increasing T_K ({t} after {prev})"),
                    });
                }
            }
            rows.push((t, v));
        }
        Table::new(rows)
    }

    pub fn from_csv_path(path: &Path, value_column: &str) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f, value_column)
    }
}

impl TryFrom<Vec<(f64, f64)>> for Table {
    type Error = Error;

    fn try_from(rows: Vec<(f64, f64)>) -> Result<Self> {
        Table::new(rows)
    }
}

impl From<Table> for Vec<(f64, f64)> {
    fn from(t: Table) -> Self {
        t.rows
    }
}

/// Relative permittivity as a function of temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PermittivityModel {
    Constant { eps_r: f64 },
    /// `ε_r = c / T`, valid on `[t_min_k, t_max_k]`.
    InverseT { c: f64, t_min_k: f64, t_max_k: f64 },
    Table { rows: Table },
}

impl PermittivityModel {
    /// The 20–80 K SrTiO3 approximation `ε_r ≈ 10^5 / T`.
    pub fn sto_inverse_t() -> Self {
        PermittivityModel::InverseT { c: 1e5, t_min_k: 20.0, t_max_k: 80.0 }
    }

    pub fn table(rows: Vec<(f64, f64)>) -> Result<Self> {
        let rows = Table::new(rows)?;
        let m = PermittivityModel::Table { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PermittivityModel::Constant { eps_r } => {
                if !(eps_r.is_finite() && *eps_r > 1.0) {
                    return Err(Error::InvalidModel(format!("eps_r must be > 1, got {eps_r}")));
                }
            }
            PermittivityModel::InverseT { c, t_min_k, t_max_k } => {
                if !(*t_min_k > 0.0 && t_max_k > t_min_k && t_max_k.is_finite()) {
                    return Err(Error::InvalidModel("inverse-T range must satisfy 0 < t_min < t_max".into()));
                }
                if !(c.is_finite() && c / t_max_k > 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "inverse-T model gives eps_r <= 1 at {t_max_k} K"
                    )));
                }
            }
            PermittivityModel::Table { rows } => {
                if rows.rows().iter().any(|(_, e)| *e <= 1.0) {
                    return Err(Error::InvalidModel("table eps_r values must be > 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Temperature range over which the model may be evaluated.
    pub fn valid_range(&self) -> (f64, f64) {
        match self {
            PermittivityModel::Constant { .. } => (0.0, f64::INFINITY),
            PermittivityModel::InverseT { t_min_k, t_max_k, .. } => (*t_min_k, *t_max_k),
            PermittivityModel::Table { rows } => rows.range(),
        }
    }

    pub fn eval(&self, t_k: f64) -> Result<f64> {
        if !(t_k > 0.0 && t_k.is_finite()) {
            return Err(Error::OutOfRange { t_k, lo_k: 0.0, hi_k: f64::INFINITY });
        }
        match self {
            PermittivityModel::Constant { eps_r } => Ok(*eps_r),
            PermittivityModel::InverseT { c, t_min_k, t_max_k } => {
                if t_k < *t_min_k || t_k > *t_max_k {
                    Err(Error::OutOfRange { t_k, lo_k: *t_min_k, hi_k: *t_max_k })
                } else {
                    Ok(c / t_k)
                }
            }
            PermittivityModel::Table { rows } => rows.eval(t_k),
        }
    }

    /// `dε_r/dT` in 1/K: analytic for constant and inverse-T models, the
    /// interpolant slope for tables.
    pub fn deps_dt(&self, t_k: f64) -> Result<f64> {
        self.eval(t_k)?;
        match self {
            PermittivityModel::Constant { .. } => Ok(0.0),
            PermittivityModel::InverseT { c, .. } => Ok(-c / (t_k * t_k)),
            PermittivityModel::Table { rows } => rows.slope(t_k),
        }
    }
}

/// Dielectric loss tangent as a function of temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LossModel {
    Constant { tan_delta: f64 },
    Table { rows: Table },
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LossModel::Constant { tan_delta } => tan_delta.is_finite() && *tan_delta > 0.0,
            LossModel::Table { rows } => rows.rows().iter().all(|(_, v)| *v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel("tan_delta must be > 0".into()))
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, LossModel::Constant { .. })
    }

    pub fn tan_delta(&self, t_k: f64) -> Result<f64> {
        match self {
            LossModel::Constant { tan_delta } => Ok(*tan_delta),
            LossModel::Table { rows } => rows.eval(t_k),
        }
    }

    /// Unloaded quality factor of the dielectric, `1 / tanδ`.
    pub fn q(&self, t_k: f64) -> Result<f64> {
        Ok(1.0 / self.tan_delta(t_k)?)
    }
}

pub fn eval_permittivity(model: &PermittivityModel, t_k: f64) -> Result<f64> {
    model.eval(t_k)
}

pub fn eval_loss_q(model: &LossModel, t_k: f64) -> Result<f64> {
    model.q(t_k)
}
