//! Puck and cavity descriptions, the semi-analytic TE01δ frequency of a
//! cylindrical dielectric resonator, and the quadratic low-temperature fit of
//! the puck frequency.

use crate::linalg;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

/// Cylindrical dielectric resonator. Dimensions in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DielectricPuck {
    pub radius_mm: f64,
    pub height_mm: f64,
    /// Central bore. Recorded for provenance; the TE01δ formula ignores it.
    #[serde(default)]
    pub hole_radius_mm: f64,
}

impl DielectricPuck {
    /// The SrTiO3 puck characterised at room temperature: a = 8.17 mm,
    /// d = 7.26 mm, with a 2 mm central hole.
    pub const STO_SAMPLE: DielectricPuck = DielectricPuck {
        radius_mm: 8.17,
        height_mm: 7.26,
        hole_radius_mm: 2.0,
    };

    pub fn new(radius_mm: f64, height_mm: f64, hole_radius_mm: f64) -> Result<Self> {
        let p = DielectricPuck { radius_mm, height_mm, hole_radius_mm };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.radius_mm.is_finite() && self.height_mm.is_finite() && self.hole_radius_mm.is_finite();
        if !finite || self.radius_mm <= 0.0 || self.height_mm <= 0.0 {
            return Err(Error::InvalidModel("puck radius and height must be positive".into()));
        }
        if self.hole_radius_mm < 0.0 || self.hole_radius_mm >= self.radius_mm {
            return Err(Error::InvalidModel("hole radius must lie in [0, radius)".into()));
        }
        Ok(())
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.radius_mm / self.height_mm
    }

    /// True when a/d lies outside [0.3, 3], where the TE01δ formula is not
    /// known to hold.
    pub fn outside_formula_validity(&self) -> bool {
        !(0.3..=3.0).contains(&self.aspect_ratio())
    }
}

/// Bare cavity mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityMode {
    pub f_hz: f64,
    pub q: f64,
}

impl CavityMode {
    pub fn new(f_hz: f64, q: f64) -> Result<Self> {
        if !(f_hz.is_finite() && f_hz > 0.0 && q.is_finite() && q > 0.0) {
            return Err(Error::InvalidModel("cavity frequency and Q must be positive and finite".into()));
        }
        Ok(CavityMode { f_hz, q })
    }
}

/// `α = (34 / a) (a/d + 3.45)` GHz with a, d in mm, returned in Hz.
pub fn puck_alpha(puck: &DielectricPuck) -> f64 {
    let a = puck.radius_mm;
    let d = puck.height_mm;
    34.0 / a * (a / d + 3.45) * 1e9
}

/// TE01δ frequency `α / √ε_r` in Hz.
pub fn puck_frequency(puck: &DielectricPuck, eps_r: f64) -> f64 {
    puck_alpha(puck) / eps_r.sqrt()
}

/// `∂f/∂ε_r = −(α/2) ε_r^{−3/2}` in Hz per unit permittivity.
pub fn puck_frequency_deriv_eps(puck: &DielectricPuck, eps_r: f64) -> f64 {
    -0.5 * puck_alpha(puck) / (eps_r * eps_r.sqrt())
}

/// Permittivity that puts the puck at `f_hz`.
pub fn eps_for_frequency(puck: &DielectricPuck, f_hz: f64) -> f64 {
    let r = puck_alpha(puck) / f_hz;
    r * r
}

/// `f(T) = k0 + k1 T + k2 T²`, coefficients in Hz, Hz/K, Hz/K².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFrequencyFit {
    pub k0_hz: f64,
    pub k1_hz_per_k: f64,
    pub k2_hz_per_k2: f64,
}

impl TemperatureFrequencyFit {
    /// Coefficients given in MHz, MHz/K, MHz/K².
    pub fn from_mhz(k0: f64, k1: f64, k2: f64) -> Self {
        TemperatureFrequencyFit {
            k0_hz: k0 * 1e6,
            k1_hz_per_k: k1 * 1e6,
            k2_hz_per_k2: k2 * 1e6,
        }
    }

    /// The sub-kelvin fit of the SrTiO3 sample: 116.88 MHz, −0.008 MHz/K,
    /// 0.012 MHz/K².
    pub fn sto_sub_kelvin() -> Self {
        Self::from_mhz(116.88, -0.008, 0.012)
    }

    pub fn eval(&self, t_k: f64) -> f64 {
        self.k0_hz + t_k * (self.k1_hz_per_k + t_k * self.k2_hz_per_k2)
    }

    /// Temperature of the parabola's minimum, when it has one.
    pub fn vertex_k(&self) -> Option<f64> {
        (self.k2_hz_per_k2 > 0.0).then(|| -self.k1_hz_per_k / (2.0 * self.k2_hz_per_k2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOutcome {
    pub fit: TemperatureFrequencyFit,
    /// Euclidean norm of the residuals, Hz.
    pub residual_norm_hz: f64,
}

/// Least-squares quadratic through `(T [K], f [Hz])` points.
///
/// Temperatures are centred and scaled to [-1, 1] before forming the normal
/// equations, then the coefficients are mapped back.
pub fn fit_frequency_vs_temperature(points: &[(f64, f64)]) -> Result<FitOutcome> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|(t, f)| !t.is_finite() || !f.is_finite()) {
        return Err(Error::DegenerateFit("non-finite input".into()));
    }
    let n = points.len() as f64;
    let center = points.iter().map(|p| p.0).sum::<f64>() / n;
    let scale = points.iter().fold(0.0f64, |m, p| m.max((p.0 - center).abs()));
    if scale == 0.0 {
        return Err(Error::DegenerateFit("all temperatures are identical".into()));
    }

    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for &(t, f) in points {
        let u = (t - center) / scale;
        let row = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * f;
        }
    }
    let [b0, b1, b2] = linalg::solve(ata, atb, 1e-12)
        .ok_or_else(|| Error::DegenerateFit("normal equations are rank deficient".into()))?;

    let s2 = scale * scale;
    let fit = TemperatureFrequencyFit {
        k0_hz: b0 - b1 * center / scale + b2 * center * center / s2,
        k1_hz_per_k: b1 / scale - 2.0 * b2 * center / s2,
        k2_hz_per_k2: b2 / s2,
    };
    let residual_norm_hz = points
        .iter()
        .map(|&(t, f)| {
            let u = (t - center) / scale;
            let r = f - (b0 + u * (b1 + u * b2));
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(FitOutcome { fit, residual_norm_hz })
}

/// `df/dT = k1 + 2 k2 T` in Hz/K.
pub fn fit_derivative_at(fit: &TemperatureFrequencyFit, t_k: f64) -> f64 {
    fit.k1_hz_per_k + 2.0 * fit.k2_hz_per_k2 * t_k
}

/// Reads `(T, f)` points from a CSV with header `T_K,f_Hz`.
pub fn read_temperature_points<R: Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if headers.len() != 2 || &headers[0] != "T_K" || &headers[1] != "f_Hz" {
        return Err(Error::Parse { line: 1, message: "expected header `T_K,f_Hz`".into() });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse { line, message: format!("invalid number `{s}`") })
        };
        out.push((parse(&rec[0])?, parse(&rec[1])?));
    }
    Ok(out)
}

pub fn read_temperature_points_path(path: &Path) -> Result<Vec<(f64, f64)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_temperature_points(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const PUCK: DielectricPuck = DielectricPuck::STO_SAMPLE;

    #[test]
    fn alpha_values() {
        assert_relative_eq!(puck_alpha(&PUCK), 19.0405e9, max_relative = 1e-5);
        let unit = DielectricPuck::new(34.0, 34.0, 0.0).unwrap();
        assert_relative_eq!(puck_alpha(&unit), 4.45e9, max_relative = 1e-15);
        let tall = DielectricPuck::new(8.17, 1e12, 0.0).unwrap();
        assert_relative_eq!(puck_alpha(&tall), 14.357e9, max_relative = 1e-4);
    }

    #[test]
    fn frequencies() {
        assert_relative_eq!(puck_frequency(&PUCK, 318.0), 1.0677e9, max_relative = 1e-4);
        assert_relative_eq!(puck_frequency(&PUCK, 230.0), 1.2555e9, max_relative = 1e-4);
        assert_relative_eq!(puck_frequency(&PUCK, 30000.0), 109.93e6, max_relative = 1e-4);
    }

    #[test]
    fn eps_derivative() {
        assert_relative_eq!(puck_frequency_deriv_eps(&PUCK, 230.0), -2.729e6, max_relative = 1e-3);
        assert_relative_eq!(puck_frequency_deriv_eps(&PUCK, 318.0), -1.679e6, max_relative = 1e-3);
        assert!(puck_frequency_deriv_eps(&PUCK, 1e30).abs() < 1e-30);
    }

    #[test]
    fn resonant_permittivity() {
        let eps = eps_for_frequency(&PUCK, 1.3e9);
        assert_relative_eq!(eps, 214.5, max_relative = 1e-3);
        assert_relative_eq!(puck_frequency(&PUCK, eps), 1.3e9, max_relative = 1e-14);
    }

    #[test]
    fn puck_validation() {
        assert!(DielectricPuck::new(1.0, 1.0, 1.0).is_err());
        assert!(DielectricPuck::new(-1.0, 1.0, 0.0).is_err());
        assert!(DielectricPuck::new(1.0, 0.0, 0.0).is_err());
        assert!(!PUCK.outside_formula_validity());
        assert!(DielectricPuck::new(0.5, 2.0, 0.0).unwrap().outside_formula_validity());
    }

    #[test]
    fn sub_kelvin_fit_recovered() {
        let truth = TemperatureFrequencyFit::sto_sub_kelvin();
        let pts: Vec<_> = [0.16, 0.3, 0.5, 0.8, 1.0].iter().map(|&t| (t, truth.eval(t))).collect();
        let out = fit_frequency_vs_temperature(&pts).unwrap();
        assert_relative_eq!(out.fit.k0_hz, 116.88e6, max_relative = 1e-8);
        assert_relative_eq!(out.fit.k1_hz_per_k, -0.008e6, max_relative = 1e-8);
        assert_relative_eq!(out.fit.k2_hz_per_k2, 0.012e6, max_relative = 1e-8);
        assert!(out.residual_norm_hz < 1e-4);
    }

    #[test]
    fn constant_fit() {
        let pts = [(1.0, 1e6), (2.0, 1e6), (3.0, 1e6)];
        let out = fit_frequency_vs_temperature(&pts).unwrap();
        assert_relative_eq!(out.fit.k0_hz, 1e6, max_relative = 1e-12);
        assert!(out.fit.k1_hz_per_k.abs() < 1e-6);
        assert!(out.fit.k2_hz_per_k2.abs() < 1e-6);
    }

    #[test]
    fn degenerate_fits() {
        assert!(matches!(
            fit_frequency_vs_temperature(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_frequency_vs_temperature(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(Error::DegenerateFit(_))
        ));
        // Two distinct temperatures cannot pin a parabola.
        assert!(matches!(
            fit_frequency_vs_temperature(&[(1.0, 1.0), (2.0, 2.0), (2.0, 2.5), (1.0, 0.9)]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn fit_derivative() {
        let fit = TemperatureFrequencyFit::sto_sub_kelvin();
        assert_relative_eq!(fit_derivative_at(&fit, 0.8), 11.2e3, max_relative = 1e-9);
        assert!(fit_derivative_at(&fit, 1.0 / 3.0).abs() < 1e-9);
        assert_relative_eq!(fit.vertex_k().unwrap(), 1.0 / 3.0, max_relative = 1e-12);
        let linear = TemperatureFrequencyFit::from_mhz(100.0, -1.0, 0.0);
        assert_eq!(fit_derivative_at(&linear, 7.0), -1e6);
        assert!(linear.vertex_k().is_none());
    }

    #[test]
    fn point_csv() {
        let src = "T_K,f_Hz\n0.16,116879000\n0.3,116878700\n";
        assert_eq!(read_temperature_points(src.as_bytes()).unwrap().len(), 2);
        assert!(read_temperature_points("T,f\n1,2\n".as_bytes()).is_err());
        assert!(matches!(
            read_temperature_points("T_K,f_Hz\n1,2\n1,x\n".as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    /// Normal equations of the quadratic fit solved by Cramer's rule in
    /// unscaled T, as an independent reference.
    fn cramer_quadratic(points: &[(f64, f64)]) -> [f64; 3] {
        let mut s = [0.0; 5];
        let mut r = [0.0; 3];
        for &(t, f) in points {
            for (k, v) in s.iter_mut().enumerate() {
                *v += t.powi(k as i32);
            }
            for (k, v) in r.iter_mut().enumerate() {
                *v += f * t.powi(k as i32);
            }
        }
        let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(m);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let mut mc = m;
            for row in 0..3 {
                mc[row][c] = r[row];
            }
            *o = det(mc) / d;
        }
        out
    }

    #[test]
    fn noisy_fit_matches_normal_equation_oracle() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let truth = TemperatureFrequencyFit::sto_sub_kelvin();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7e3f);
        let noise = Normal::new(0.0, 200.0).unwrap();
        let points: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let t = 0.16 + 0.84 * i as f64 / 49.0;
                (t, truth.eval(t) + noise.sample(&mut rng))
            })
            .collect();
        let fit = fit_frequency_vs_temperature(&points).unwrap().fit;
        let oracle = cramer_quadratic(&points);
        let got = [fit.k0_hz, fit.k1_hz_per_k, fit.k2_hz_per_k2];
        for (g, o) in got.iter().zip(oracle) {
            assert!((g - o).abs() <= 1e-6 * o.abs().max(1.0), "{g} vs {o}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frequency_times_sqrt_eps_is_alpha(eps in 1.0001f64..1e5, a in 0.5f64..50.0, d in 0.5f64..50.0) {
                let p = DielectricPuck::new(a, d, 0.0).unwrap();
                let lhs = puck_frequency(&p, eps) * eps.sqrt();
                prop_assert!((lhs - puck_alpha(&p)).abs() <= 4.0 * f64::EPSILON * puck_alpha(&p));
            }

            #[test]
            fn eps_derivative_matches_central_difference(eps in 1.5f64..1e5) {
                let h = 1e-3 * eps;
                let fd = (puck_frequency(&PUCK, eps + h) - puck_frequency(&PUCK, eps - h)) / (2.0 * h);
                let an = puck_frequency_deriv_eps(&PUCK, eps);
                prop_assert!(((fd - an) / an).abs() < 1e-6);
            }

            #[test]
            fn noise_free_quadratics_recovered(
                k0 in 1e6f64..1e9, k1 in -1e5f64..1e5, k2 in 1e2f64..1e5,
                t0 in 0.05f64..50.0, span in 0.5f64..20.0,
            ) {
                let truth = TemperatureFrequencyFit { k0_hz: k0, k1_hz_per_k: k1, k2_hz_per_k2: k2 };
                let pts: Vec<_> = (0..7).map(|i| {
                    let t = t0 + span * i as f64 / 6.0;
                    (t, truth.eval(t))
                }).collect();
                let fit = fit_frequency_vs_temperature(&pts).unwrap().fit;
                prop_assert!(((fit.k0_hz - k0) / k0).abs() < 1e-8);
                // k1, k2 relative to the size of their contribution over the span
                let fscale = k1.abs().max(k2 * (t0 + span));
                prop_assert!((fit.k1_hz_per_k - k1).abs() / fscale < 1e-8);
                prop_assert!(((fit.k2_hz_per_k2 - k2) / k2).abs() < 1e-8);
            }

            #[test]
            fn derivative_is_analytic(k1 in -1e5f64..1e5, k2 in -1e5f64..1e5, t in 0.0f64..100.0) {
                let fit = TemperatureFrequencyFit { k0_hz: 1e8, k1_hz_per_k: k1, k2_hz_per_k2: k2 };
                prop_assert_eq!(fit_derivative_at(&fit, t), k1 + 2.0 * k2 * t);
            }
        }
    }
}
