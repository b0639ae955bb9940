//! Two-mode coupled-mode theory for the puck–cavity system.
//!
//! Two routes are provided and cross-checked in tests:
//!
//! * [`on_resonance_modes`]: the closed-form resonant expressions
//!   `f₁,₂ = f_cav √(1 ∓ κ)`, `Q₁,₂ = 2 √(1 ∓ |κ|) Q_S Q_C / (Q_S + Q_C)`.
//! * [`coupled_eigenmodes`]: a general (detuned) solver. Mode frequencies
//!   are the eigenvalues of the lossless coupling matrix
//!   `K = [[ω_s², κ ω_s ω_c], [κ ω_s ω_c, ω_c²]]`; each mode's decay rate is
//!   the energy-weighted mix of the bare decay rates,
//!   `γ_i = |v_s|² γ_s + |v_c|² γ_c` with `γ = ω / 2Q`. This is the
//!   first-order loss correction of the damped system `ẍ + 2Γẋ + Kx = 0`
//!   used by [`crate::network`], and on resonance it is exactly the
//!   energy balance `f/Q = |a₁|² f_S/Q_S + |b₂|² f_C/Q_C`.

use crate::linalg;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative detuning below which a system counts as resonant.
pub const RESONANCE_TOLERANCE: f64 = 1e-12;

/// Eigenvector components closer than this (relative) are "hybridized".
pub const HYBRID_TOLERANCE: f64 = 0.01;

/// Coupling coefficients from the eigenmode study, keyed by the radial
/// offset of the puck in the cavity.
pub const KAPPA_CALIBRATION: &[(&str, f64, f64)] = &[("r_offset_10mm", 10.0, 0.006), ("r_offset_50mm", 50.0, 0.03)];

pub fn kappa_calibration(name: &str) -> Option<f64> {
    KAPPA_CALIBRATION.iter().find(|(n, _, _)| *n == name).map(|(_, _, k)| *k)
}

/// The bare puck mode, the bare cavity mode and their coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledSystem {
    pub f_sto_hz: f64,
    pub q_sto: f64,
    pub f_cav_hz: f64,
    pub q_cav: f64,
    pub kappa: f64,
}

impl CoupledSystem {
    pub fn new(f_sto_hz: f64, q_sto: f64, f_cav_hz: f64, q_cav: f64, kappa: f64) -> Result<Self> {
        let s = CoupledSystem { f_sto_hz, q_sto, f_cav_hz, q_cav, kappa };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(pos(self.f_sto_hz) && pos(self.f_cav_hz) && pos(self.q_sto) && pos(self.q_cav)) {
            return Err(Error::InvalidModel("frequencies and Q factors must be positive and finite".into()));
        }
        if !(self.kappa.is_finite() && self.kappa.abs() < 1.0) {
            return Err(Error::InvalidModel(format!("|kappa| must be < 1, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn relative_detuning(&self) -> f64 {
        (self.f_sto_hz - self.f_cav_hz).abs() / self.f_cav_hz
    }

    pub fn is_resonant(&self) -> bool {
        self.relative_detuning() <= RESONANCE_TOLERANCE
    }

    /// Same system with the puck retuned.
    pub fn with_f_sto(self, f_sto_hz: f64) -> Self {
        CoupledSystem { f_sto_hz, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeLabel {
    StoDominant,
    CavityDominant,
    Hybridized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub f_hz: f64,
    pub q: f64,
    pub label: ModeLabel,
    /// Fraction of the mode energy stored in the puck, `|v_s|²`.
    pub sto_fraction: f64,
}

/// Coupled modes, mode 1 being the lower in frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePair {
    pub mode1: Mode,
    pub mode2: Mode,
}

impl ModePair {
    pub fn gap_hz(&self) -> f64 {
        self.mode2.f_hz - self.mode1.f_hz
    }

    pub fn modes(&self) -> [Mode; 2] {
        [self.mode1, self.mode2]
    }

    pub fn sto_dominant(&self) -> Option<Mode> {
        self.modes().into_iter().find(|m| m.label == ModeLabel::StoDominant)
    }

    pub fn cavity_dominant(&self) -> Option<Mode> {
        self.modes().into_iter().find(|m| m.label == ModeLabel::CavityDominant)
    }
}

/// Closed-form coupled modes of a resonant system.
pub fn on_resonance_modes(sys: &CoupledSystem) -> Result<ModePair> {
    sys.validate()?;
    if !sys.is_resonant() {
        return Err(Error::NotResonant { detuning: sys.relative_detuning() });
    }
    let k = sys.kappa.abs();
    let harmonic = sys.q_sto * sys.q_cav / (sys.q_sto + sys.q_cav);
    let mode = |sign: f64| Mode {
        f_hz: sys.f_cav_hz * (1.0 + sign * k).sqrt(),
        q: 2.0 * (1.0 + sign * k).sqrt() * harmonic,
        label: ModeLabel::Hybridized,
        sto_fraction: 0.5,
    };
    Ok(ModePair { mode1: mode(-1.0), mode2: mode(1.0) })
}

fn label_for(v: [f64; 2]) -> ModeLabel {
    let (s, c) = (v[0].abs(), v[1].abs());
    if (s - c).abs() <= HYBRID_TOLERANCE * s.max(c) {
        ModeLabel::Hybridized
    } else if s > c {
        ModeLabel::StoDominant
    } else {
        ModeLabel::CavityDominant
    }
}

/// Coupled modes for arbitrary detuning; see the module docs for the model.
pub fn coupled_eigenmodes(sys: &CoupledSystem) -> Result<ModePair> {
    sys.validate()?;
    let ws = 2.0 * PI * sys.f_sto_hz;
    let wc = 2.0 * PI * sys.f_cav_hz;
    let (lam_lo, lam_hi, v_lo, v_hi) = linalg::symmetric_eigen2(ws * ws, sys.kappa * ws * wc, wc * wc);
    let gamma_s = ws / (2.0 * sys.q_sto);
    let gamma_c = wc / (2.0 * sys.q_cav);

    let mode = |lam: f64, v: [f64; 2]| -> Result<Mode> {
        if !(lam > 0.0) {
            return Err(Error::Unphysical(format!("non-positive eigenvalue {lam:e}")));
        }
        let w = lam.sqrt();
        let sto_fraction = v[0] * v[0];
        let gamma = sto_fraction * gamma_s + v[1] * v[1] * gamma_c;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Unphysical(format!("decay rate {gamma:e} is not positive")));
        }
        Ok(Mode {
            f_hz: w / (2.0 * PI),
            q: w / (2.0 * gamma),
            label: label_for(v),
            sto_fraction,
        })
    };
    Ok(ModePair { mode1: mode(lam_lo, v_lo)?, mode2: mode(lam_hi, v_hi)? })
}

/// Coefficients mapping the puck's df/dT onto the coupled modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaCoefficients {
    pub beta1: f64,
    pub beta2: f64,
}

pub fn beta_coefficients(sys: &CoupledSystem) -> BetaCoefficients {
    let k = sys.kappa.abs();
    let denom = 1.0 + sys.q_sto / sys.q_cav;
    BetaCoefficients {
        beta1: (1.0 - k).sqrt() / denom,
        beta2: (1.0 + k).sqrt() / denom,
    }
}

/// Inverts `f₁ = f_c √(1−κ)`, `f₂ = f_c √(1+κ)`: returns `(κ, f_c)`.
pub fn kappa_from_split(f1_hz: f64, f2_hz: f64) -> Result<(f64, f64)> {
    if !(f1_hz > 0.0 && f2_hz >= f1_hz && f2_hz.is_finite()) {
        return Err(Error::InvalidModel("need 0 < f1 <= f2".into()));
    }
    let (a, b) = (f1_hz * f1_hz, f2_hz * f2_hz);
    let kappa = (b - a) / (b + a);
    let f_cav = (0.5 * (a + b)).sqrt();
    Ok((kappa, f_cav))
}

/// Relative residuals of `f_i/Q_i = (f_S/Q_S + f_C/Q_C) / 2` for a resonant
/// system, one per mode.
pub fn energy_balance_check(sys: &CoupledSystem, modes: &ModePair) -> [f64; 2] {
    let rhs = 0.5 * (sys.f_sto_hz / sys.q_sto + sys.f_cav_hz / sys.q_cav);
    modes.modes().map(|m| {
        let lhs = m.f_hz / m.q;
        (lhs - rhs).abs() / lhs
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn resonant() -> CoupledSystem {
        CoupledSystem::new(1296.9e6, 1.01e4, 1296.9e6, 4.2e7, 0.0278).unwrap()
    }

    #[test]
    fn resonant_split_and_q() {
        let m = on_resonance_modes(&resonant()).unwrap();
        assert!((m.mode1.f_hz - 1279e6).abs() < 0.5e6);
        assert!((m.mode2.f_hz - 1315e6).abs() < 0.5e6);
        // 2 √(1∓κ) × harmonic mean
        assert_relative_eq!(m.mode1.q, 19912.3, max_relative = 1e-4);
        assert_relative_eq!(m.mode2.q, 20473.7, max_relative = 1e-4);
        assert_eq!(m.mode1.label, ModeLabel::Hybridized);
    }

    #[test]
    fn zero_coupling_is_degenerate() {
        let s = CoupledSystem { kappa: 0.0, ..resonant() };
        let m = on_resonance_modes(&s).unwrap();
        assert_eq!(m.mode1.f_hz, s.f_cav_hz);
        assert_eq!(m.mode2.f_hz, s.f_cav_hz);
        let q = 2.0 * s.q_sto * s.q_cav / (s.q_sto + s.q_cav);
        assert_relative_eq!(m.mode1.q, q, max_relative = 1e-15);
        assert_relative_eq!(m.mode2.q, q, max_relative = 1e-15);
    }

    #[test]
    fn detuned_system_is_not_resonant() {
        let s = resonant().with_f_sto(1.25e9);
        assert!(matches!(on_resonance_modes(&s), Err(Error::NotResonant { .. })));
    }

    #[test]
    fn invalid_systems_rejected() {
        assert!(CoupledSystem::new(1e9, 1e4, 1e9, 1e7, 1.0).is_err());
        assert!(CoupledSystem::new(1e9, 0.0, 1e9, 1e7, 0.1).is_err());
        assert!(CoupledSystem::new(f64::NAN, 1e4, 1e9, 1e7, 0.1).is_err());
    }

    #[test]
    fn lossless_degenerate_eigenmodes_are_exact() {
        let s = CoupledSystem::new(1e9, 1e300, 1e9, 1e300, 0.2).unwrap();
        let m = coupled_eigenmodes(&s).unwrap();
        assert_relative_eq!(m.mode1.f_hz, 1e9 * 0.8f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(m.mode2.f_hz, 1e9 * 1.2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn uncoupled_eigenmodes_are_bare() {
        let s = CoupledSystem::new(1.1e9, 1e4, 1.3e9, 4.2e7, 0.0).unwrap();
        let m = coupled_eigenmodes(&s).unwrap();
        assert_relative_eq!(m.mode1.f_hz, 1.1e9, max_relative = 1e-15);
        assert_relative_eq!(m.mode1.q, 1e4, max_relative = 1e-12);
        assert_eq!(m.mode1.label, ModeLabel::StoDominant);
        assert_relative_eq!(m.mode2.f_hz, 1.3e9, max_relative = 1e-15);
        assert_relative_eq!(m.mode2.q, 4.2e7, max_relative = 1e-12);
        assert_eq!(m.mode2.label, ModeLabel::CavityDominant);
    }

    #[test]
    fn eigen_matches_closed_form_on_resonance() {
        let s = resonant();
        let a = on_resonance_modes(&s).unwrap();
        let b = coupled_eigenmodes(&s).unwrap();
        for (x, y) in a.modes().iter().zip(b.modes().iter()) {
            assert_relative_eq!(x.f_hz, y.f_hz, max_relative = 1e-10);
            assert_relative_eq!(x.q, y.q, max_relative = 0.03);
        }
        assert_eq!(b.mode1.label, ModeLabel::Hybridized);
    }

    #[test]
    fn betas() {
        let b = beta_coefficients(&CoupledSystem { kappa: 0.03, q_sto: 1.01e4, q_cav: 4.2e7, ..resonant() });
        assert_relative_eq!(b.beta2, 1.0146, max_relative = 1e-4);
        let b = beta_coefficients(&CoupledSystem { kappa: 0.006, q_sto: 1.01e4, q_cav: 4.2e7, ..resonant() });
        assert_relative_eq!(b.beta2, 1.0027, max_relative = 1e-4);
        let b = beta_coefficients(&CoupledSystem { kappa: 0.0, q_sto: 1e4, q_cav: 1e4, ..resonant() });
        assert_eq!((b.beta1, b.beta2), (0.5, 0.5));
    }

    #[test]
    fn split_inversion() {
        let (k, f) = kappa_from_split(1279e6, 1315e6).unwrap();
        assert_relative_eq!(k, 0.02775, max_relative = 1e-3);
        assert_relative_eq!(f, 1297.12e6, max_relative = 1e-5);
        assert_eq!(kappa_from_split(1e9, 1e9).unwrap(), (0.0, 1e9));
        assert!(kappa_from_split(2e9, 1e9).is_err());
    }

    #[test]
    fn energy_balance() {
        let s = resonant();
        let r = energy_balance_check(&s, &on_resonance_modes(&s).unwrap());
        assert!(r[0] < 1e-15 && r[1] < 1e-15, "{r:?}");
        let s0 = CoupledSystem { kappa: 0.0, ..s };
        let r = energy_balance_check(&s0, &on_resonance_modes(&s0).unwrap());
        assert!(r[0] < 1e-15 && r[1] < 1e-15);
        let r = energy_balance_check(&s, &coupled_eigenmodes(&s).unwrap());
        assert!(r[0] < 0.05 && r[1] < 0.05);
    }

    #[test]
    fn calibration_table() {
        assert_eq!(kappa_calibration("r_offset_10mm"), Some(0.006));
        assert_eq!(kappa_calibration("r_offset_50mm"), Some(0.03));
        assert_eq!(kappa_calibration("r_offset_19mm"), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn resonant() -> impl Strategy<Value = CoupledSystem> {
            (1e8f64..1e10, 1e3f64..1e6, 1e3f64..1e10, -0.05f64..0.05)
                .prop_map(|(f, qs, qc, k)| CoupledSystem::new(f, qs, f, qc, k).unwrap())
        }

        proptest! {
            #[test]
            fn split_round_trip(k in 1e-4f64..0.5, f in 1e8f64..1e10) {
                let s = CoupledSystem::new(f, 1e4, f, 1e7, k).unwrap();
                let m = on_resonance_modes(&s).unwrap();
                let (k2, f2) = kappa_from_split(m.mode1.f_hz, m.mode2.f_hz).unwrap();
                prop_assert!(((k2 - k) / k).abs() < 1e-12);
                prop_assert!(((f2 - f) / f).abs() < 1e-12);
            }

            #[test]
            fn closed_form_and_eigen_agree(s in resonant()) {
                let a = on_resonance_modes(&s).unwrap();
                let b = coupled_eigenmodes(&s).unwrap();
                for (x, y) in a.modes().iter().zip(b.modes().iter()) {
                    prop_assert!(((x.f_hz - y.f_hz) / x.f_hz).abs() < 1e-10);
                    prop_assert!(((x.q - y.q) / x.q).abs() < 0.03);
                }
            }

            #[test]
            fn level_repulsion_minimum_at_resonance(k in 0.005f64..0.1) {
                let f0 = 1.3e9;
                let base = CoupledSystem::new(f0, 1e4, f0, 4.2e7, k).unwrap();
                let m0 = coupled_eigenmodes(&base).unwrap();
                let resonant_gap = m0.gap_hz();
                let closed = f0 * ((1.0 + k).sqrt() - (1.0 - k).sqrt());
                prop_assert!(((resonant_gap - closed) / closed).abs() < 1e-6);
                let norm = |m: &ModePair| m.gap_hz() / (m.mode1.f_hz * m.mode2.f_hz).sqrt();
                let mut min_gap = f64::INFINITY;
                for i in -200..=200 {
                    if i == 0 { continue; }
                    let det = i as f64 * 1e-3 * k;
                    let m = coupled_eigenmodes(&base.with_f_sto(f0 * (1.0 + det))).unwrap();
                    // the ratio f2/f1 depends on f_sto/f_cav symmetrically
                    prop_assert!(norm(&m) > norm(&m0));
                    min_gap = min_gap.min(m.gap_hz());
                }
                // the raw gap bottoms out at a detuning of about -k^2/2, k^2/8 lower
                prop_assert!((resonant_gap - min_gap) / closed <= 0.13 * k * k);
            }

            #[test]
            fn avoided_crossing(k in 1e-4f64..0.3, det in -0.3f64..0.3) {
                let s = CoupledSystem::new(1.3e9 * (1.0 + det), 1e4, 1.3e9, 4.2e7, k).unwrap();
                let m = coupled_eigenmodes(&s).unwrap();
                prop_assert!(m.gap_hz() > 0.0);
                prop_assert!(m.mode1.f_hz <= m.mode2.f_hz);
            }

            #[test]
            fn q_between_bare_values_on_resonance(
                f in 1e8f64..1e10, qs in 1e3f64..1e6, ratio in 3.0f64..1e5, k in 0.0f64..0.5,
            ) {
                let qc = qs * ratio;
                let s = CoupledSystem::new(f, qs, f, qc, k).unwrap();
                for m in [on_resonance_modes(&s).unwrap(), coupled_eigenmodes(&s).unwrap()] {
                    for mode in m.modes() {
                        prop_assert!(mode.q >= qs * (1.0 - 1e-12) && mode.q <= qc * (1.0 + 1e-12));
                    }
                }
            }

            #[test]
            fn far_detuning_recovers_bare_modes(
                k in 0.001f64..0.012, side in prop::bool::ANY, extra in 1.0f64..5.0,
                qs in 1e3f64..1e5, qc_ratio in 0.1f64..300.0,
            ) {
                let fc = 1.3e9;
                // below the cavity the detuning must stay under 100 %
                let (k, det) = if side {
                    (k, 100.0 * k * extra * 1.0001)
                } else {
                    let k = k.min(0.0019);
                    (k, -100.0 * k * extra.min(2.5) * 1.0001)
                };
                let fs = fc * (1.0 + det);
                let qc = qs * qc_ratio;
                let s = CoupledSystem::new(fs, qs, fc, qc, k).unwrap();
                let m = coupled_eigenmodes(&s).unwrap();
                let sto = m.sto_dominant().unwrap();
                let cav = m.cavity_dominant().unwrap();
                prop_assert!(((sto.f_hz - fs) / fs).abs() < 1e-4);
                prop_assert!(((cav.f_hz - fc) / fc).abs() < 1e-4);
                prop_assert!(((sto.q - qs) / qs).abs() < 0.05);
                prop_assert!(((cav.q - qc) / qc).abs() < 0.05);
            }

            #[test]
            fn beta_ratio_and_bound(k in -0.999f64..0.999, qs in 1.0f64..1e8, qc in 1.0f64..1e10) {
                let s = CoupledSystem::new(1e9, qs, 1e9, qc, k).unwrap();
                let b = beta_coefficients(&s);
                let ratio = ((1.0 + k.abs()) / (1.0 - k.abs())).sqrt();
                prop_assert!((b.beta2 / b.beta1 - ratio).abs() <= 1e-12 * ratio);
                prop_assert!(b.beta2 < 2f64.sqrt() / (1.0 + qs / qc));
                prop_assert!(b.beta2 < 2f64.sqrt());
                prop_assert!(b.beta1 <= b.beta2);
            }
        }
    }
}
