//! Temperature responsivity of the coupled modes.
//!
//! The puck frequency follows the permittivity, `df_sto/dT = (df_sto/dε)·dε/dT`,
//! and on resonance each coupled mode inherits a share `β_i` of that slope.
//! Detuned operating points difference the eigen-solver instead.

use crate::cmt::{beta_coefficients, coupled_eigenmodes, on_resonance_modes, CoupledSystem, ModePair};
use crate::materials::{eval_loss_q, eval_permittivity, LossModel, PermittivityModel};
use crate::resonator::{puck_frequency, puck_frequency_deriv_eps, CavityMode, DielectricPuck};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative step in f_sto used to difference the eigenmodes.
const FD_REL_STEP: f64 = 1e-7;

/// `df_sto/dT` in Hz/K for the puck at temperature `t_k`.
pub fn dfsto_dt(puck: &DielectricPuck, eps_model: &PermittivityModel, t_k: f64) -> Result<f64> {
    let eps = eval_permittivity(eps_model, t_k)?;
    let deps = eps_model.deps_dt(t_k)?;
    Ok(puck_frequency_deriv_eps(puck, eps) * deps)
}

/// A puck in a cavity at a fixed temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub t_k: f64,
    pub eps_model: PermittivityModel,
    pub puck: DielectricPuck,
    pub sys: CoupledSystem,
    /// `dε_r/dT` in 1/K.
    pub deps_dt: f64,
}

impl OperatingPoint {
    pub fn new(
        puck: DielectricPuck,
        eps_model: PermittivityModel,
        loss: &LossModel,
        cavity: CavityMode,
        kappa: f64,
        t_k: f64,
    ) -> Result<Self> {
        puck.validate()?;
        eps_model.validate()?;
        let eps = eval_permittivity(&eps_model, t_k)?;
        let sys = CoupledSystem::new(puck_frequency(&puck, eps), eval_loss_q(loss, t_k)?, cavity.f_hz, cavity.q, kappa)?;
        let deps_dt = eps_model.deps_dt(t_k)?;
        Ok(OperatingPoint { t_k, eps_model, puck, sys, deps_dt })
    }

    /// As [`OperatingPoint::new`] with the cavity tuned onto the puck.
    pub fn tuned(
        puck: DielectricPuck,
        eps_model: PermittivityModel,
        loss: &LossModel,
        q_cav: f64,
        kappa: f64,
        t_k: f64,
    ) -> Result<Self> {
        let eps = eval_permittivity(&eps_model, t_k)?;
        let f = puck_frequency(&puck, eps);
        Self::new(puck, eps_model, loss, CavityMode::new(f, q_cav)?, kappa, t_k)
    }

    /// Replaces the permittivity slope with the one implied by a supplied
    /// puck frequency slope in Hz/K.
    pub fn with_dfsto_dt(mut self, dfsto_dt: f64) -> Result<Self> {
        if !dfsto_dt.is_finite() {
            return Err(Error::InvalidModel("df_sto/dT must be finite".into()));
        }
        let eps = eval_permittivity(&self.eps_model, self.t_k)?;
        self.deps_dt = dfsto_dt / puck_frequency_deriv_eps(&self.puck, eps);
        Ok(self)
    }

    pub fn eps_r(&self) -> Result<f64> {
        eval_permittivity(&self.eps_model, self.t_k)
    }

    pub fn dfsto_dt(&self) -> Result<f64> {
        Ok(puck_frequency_deriv_eps(&self.puck, self.eps_r()?) * self.deps_dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponsivityMethod {
    /// On resonance: `df_i/dT = β_i · df_sto/dT`.
    BetaCoefficients,
    /// Detuned: central differences of the eigen-solver modes.
    EigenDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponsivityReport {
    pub t_k: f64,
    pub eps_r: f64,
    pub f_sto_hz: f64,
    pub dfsto_dt: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub df1_dt: f64,
    pub df2_dt: f64,
    pub modes: ModePair,
    /// `|df_i/dT| · Q_i / f_i` in 1/K: the shift per kelvin in units of
    /// the mode linewidth.
    pub figure_of_merit: [f64; 2],
    pub method: ResponsivityMethod,
    /// Set when the puck aspect ratio leaves the range the TE01δ formula
    /// was fitted on.
    pub aspect_caveat: bool,
}

/// Slopes `df_i/df_sto` of both eigen-solver modes at fixed cavity.
pub fn eigen_mode_slopes(sys: &CoupledSystem) -> Result<[f64; 2]> {
    let h = FD_REL_STEP * sys.f_sto_hz;
    let lo = coupled_eigenmodes(&sys.with_f_sto(sys.f_sto_hz - h))?;
    let hi = coupled_eigenmodes(&sys.with_f_sto(sys.f_sto_hz + h))?;
    Ok([
        (hi.mode1.f_hz - lo.mode1.f_hz) / (2.0 * h),
        (hi.mode2.f_hz - lo.mode2.f_hz) / (2.0 * h),
    ])
}

pub fn responsivity(op: &OperatingPoint) -> Result<ResponsivityReport> {
    let eps_r = op.eps_r()?;
    let expected = puck_frequency(&op.puck, eps_r);
    if ((op.sys.f_sto_hz - expected) / expected).abs() > 1e-12 {
        return Err(Error::InvalidModel("operating point f_sto does not match the puck at T".into()));
    }
    let dfsto = op.dfsto_dt()?;
    let (beta1, beta2, modes, method) = if op.sys.is_resonant() {
        let b = beta_coefficients(&op.sys);
        (b.beta1, b.beta2, on_resonance_modes(&op.sys)?, ResponsivityMethod::BetaCoefficients)
    } else {
        let [s1, s2] = eigen_mode_slopes(&op.sys)?;
        (s1, s2, coupled_eigenmodes(&op.sys)?, ResponsivityMethod::EigenDifference)
    };
    let df1 = beta1 * dfsto;
    let df2 = beta2 * dfsto;
    let fom = |df: f64, m: crate::cmt::Mode| df.abs() * m.q / m.f_hz;
    Ok(ResponsivityReport {
        t_k: op.t_k,
        eps_r,
        f_sto_hz: op.sys.f_sto_hz,
        dfsto_dt: dfsto,
        beta1,
        beta2,
        df1_dt: df1,
        df2_dt: df2,
        modes,
        figure_of_merit: [fom(df1, modes.mode1), fom(df2, modes.mode2)],
        method,
        aspect_caveat: op.puck.outside_formula_validity(),
    })
}
