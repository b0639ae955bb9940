//! Resonance parameter extraction from transmission spectra and numerical
//! sensitivities of the spectral features to the puck permittivity.

use crate::cmt::coupled_eigenmodes;
use crate::linalg::{levenberg_marquardt, polyfit};
use crate::network::{
    differentiate, find_peaks_and_notch, half_power_crossings, linear_grid, parabolic_vertex, phase_curve,
    phase_derivative, prominent_maxima, synthesize_s21, Spectrum, TwoPortModel, DEFAULT_GRID_POINTS,
    DEFAULT_SPAN_FACTOR, PEAK_PROMINENCE_DB,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Candidate peaks more than this far below the strongest are ignored.
pub const PEAK_LEVEL_WINDOW_DB: f64 = 20.0;

/// Default ε_r step for the central differences.
pub const DEFAULT_EPS_DELTA: f64 = 0.5;

/// Zoom grid used to refine each spectral feature.
pub const ZOOM_POINTS: usize = 1201;
pub const ZOOM_HALF_WIDTHS: f64 = 6.0;

const FIT_REL_STEP: f64 = 1e-9;
const FIT_MAX_ITER: usize = 100;
const PHASE_FIT_HALF_WIDTHS: f64 = 1.5;
const HALF_POWER_DB: f64 = 3.010_299_956_639_812;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ThreeDb,
    LorentzFit,
    PhaseSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEstimate {
    pub f0_hz: f64,
    pub q_loaded: f64,
    /// Peak |S21|.
    pub amplitude: f64,
    pub method: Method,
    /// Sum of squared residuals over signal power, Lorentzian fit only.
    pub residual: Option<f64>,
}

impl ResonanceEstimate {
    pub fn linewidth_hz(&self) -> f64 {
        self.f0_hz / self.q_loaded
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }
}

/// Internal Q from loaded Q and the on-resonance insertion loss in dB,
/// `Q0 = QL / (1 − 10^(−IL/20))`.
pub fn unloaded_q_from_insertion_loss(q_loaded: f64, insertion_loss_db: f64) -> Result<f64> {
    if !(q_loaded > 0.0 && q_loaded.is_finite()) {
        return Err(Error::InvalidModel("loaded Q must be positive".into()));
    }
    if !(insertion_loss_db > 0.0 && insertion_loss_db.is_finite()) {
        return Err(Error::InvalidModel("insertion loss must be a positive number of dB".into()));
    }
    Ok(q_loaded / (1.0 - 10f64.powf(-insertion_loss_db / 20.0)))
}

/// Index of the resonance peak nearest `near`.
fn locate_peak(spec: &Spectrum, db: &[f64], near: f64) -> Result<usize> {
    let f = spec.freqs();
    let cands = prominent_maxima(db, PEAK_PROMINENCE_DB);
    if cands.is_empty() {
        let imax = (0..db.len()).max_by(|&a, &b| db[a].total_cmp(&db[b])).unwrap();
        if imax == 0 || imax == db.len() - 1 {
            return Err(Error::BandEdgeClipped { f_hz: f[imax] });
        }
        // A maximum whose half-power band runs off the grid.
        raw_crossings(f, db, imax, db[imax])?;
        return Err(Error::NoExtremum("no resonance peak in the spectrum".into()));
    }
    let top = cands.iter().map(|p| db[p.index]).fold(f64::NEG_INFINITY, f64::max);
    cands
        .iter()
        .filter(|p| db[p.index] >= top - PEAK_LEVEL_WINDOW_DB)
        .min_by(|a, b| {
            (f[a.index] - near)
                .abs()
                .total_cmp(&(f[b.index] - near).abs())
                .then(db[b.index].total_cmp(&db[a.index]))
        })
        .map(|p| p.index)
        .ok_or_else(|| Error::NoExtremum("no resonance peak in the spectrum".into()))
}

/// Raw `-3 dB` crossings around sample `i`, erroring at the band edges.
fn raw_crossings(f: &[f64], db: &[f64], i: usize, peak_db: f64) -> Result<(f64, f64)> {
    match half_power_crossings(f, db, i, peak_db) {
        (Some(lo), Some(hi)) => Ok((lo, hi)),
        (None, _) => Err(Error::BandEdgeClipped { f_hz: f[0] }),
        (_, None) => Err(Error::BandEdgeClipped { f_hz: f[f.len() - 1] }),
    }
}

/// Refined crossing of `level` near `guess`. Samples within `half` of the
/// crossing get a least-squares line in dB, which for two samples is plain
/// linear interpolation. The half-power point of a Lorentzian is an
/// inflection of its dB curve, so the line is nearly unbiased there.
fn refine_crossing(f: &[f64], db: &[f64], guess: f64, half: f64, level: f64) -> f64 {
    let mut x = guess;
    for _ in 0..3 {
        let lo = f.partition_point(|&v| v < x - half);
        let hi = f.partition_point(|&v| v <= x + half);
        if hi - lo < 4 {
            return x;
        }
        let Some([c0, c1]) = polyfit::<2>(&f[lo..hi], &db[lo..hi], x, half) else { return x };
        if c1 == 0.0 {
            return x;
        }
        let next = x + half * (level - c0) / c1;
        if !next.is_finite() || (next - x).abs() > half {
            return x;
        }
        x = next;
    }
    x
}

/// Peak level and position from a quadratic fit of 1/|S21|² over the
/// half-power band, falling back to a 3-point parabola in dB.
fn refine_peak(f: &[f64], db: &[f64], i: usize, lo: f64, hi: f64) -> (f64, f64) {
    let fallback = parabolic_vertex(f, db, i);
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let a = f.partition_point(|&v| v < center - half);
    let b = f.partition_point(|&v| v <= center + half);
    if b - a < 7 {
        return fallback;
    }
    let inv: Vec<f64> = db[a..b].iter().map(|d| 10f64.powf(-d / 10.0)).collect();
    let Some([c0, c1, c2]) = polyfit::<3>(&f[a..b], &inv, center, half) else { return fallback };
    if !(c2 > 0.0) {
        return fallback;
    }
    let t = -c1 / (2.0 * c2);
    let min_inv = c0 - c1 * c1 / (4.0 * c2);
    if !(t.abs() < 1.0 && min_inv > 0.0) {
        return fallback;
    }
    (center + half * t, -10.0 * min_inv.log10())
}

struct ThreeDb {
    f0: f64,
    lo: f64,
    hi: f64,
    peak_db: f64,
}

fn three_db_core(spec: &Spectrum, db: &[f64], i: usize) -> Result<ThreeDb> {
    let f = spec.freqs();
    let (lo0, hi0) = raw_crossings(f, db, i, db[i])?;
    let (f0, peak_db) = refine_peak(f, db, i, lo0, hi0);
    let (lo1, hi1) = raw_crossings(f, db, i, peak_db)?;
    let width = hi1 - lo1;
    let level = peak_db - HALF_POWER_DB;
    let lo = refine_crossing(f, db, lo1, 0.25 * width, level);
    let hi = refine_crossing(f, db, hi1, 0.25 * width, level);
    if lo < f[0] {
        return Err(Error::BandEdgeClipped { f_hz: f[0] });
    }
    if hi > f[f.len() - 1] {
        return Err(Error::BandEdgeClipped { f_hz: f[f.len() - 1] });
    }
    if !(hi > lo) {
        return Err(Error::DegenerateFit("half-power crossings collapsed".into()));
    }
    Ok(ThreeDb { f0, lo, hi, peak_db })
}

/// Loaded Q from the half-power bandwidth of the peak nearest `near`.
pub fn q_three_db(spec: &Spectrum, near: f64) -> Result<ResonanceEstimate> {
    let db = spec.magnitude_db();
    let i = locate_peak(spec, &db, near)?;
    let r = three_db_core(spec, &db, i)?;
    Ok(ResonanceEstimate {
        f0_hz: r.f0,
        q_loaded: r.f0 / (r.hi - r.lo),
        amplitude: 10f64.powf(r.peak_db / 20.0),
        method: Method::ThreeDb,
        residual: None,
    })
}

/// Index range around peak `i` reaching `half` on each side, cut at the
/// deepest minimum towards a neighbouring peak.
fn fit_window(f: &[f64], db: &[f64], i: usize, half: f64) -> (usize, usize) {
    let peaks = prominent_maxima(db, PEAK_PROMINENCE_DB);
    let mut lo = f.partition_point(|&v| v < f[i] - half);
    let mut hi = f.partition_point(|&v| v <= f[i] + half);
    if let Some(left) = peaks.iter().rev().find(|p| p.index < i) {
        let m = (left.index..i).min_by(|&a, &b| db[a].total_cmp(&db[b])).unwrap();
        lo = lo.max(m);
    }
    if let Some(right) = peaks.iter().find(|p| p.index > i) {
        let m = (i..=right.index).min_by(|&a, &b| db[a].total_cmp(&db[b])).unwrap();
        hi = hi.min(m + 1);
    }
    (lo, hi)
}

/// Least-squares fit of `|S21|² = A / (1 + 4Q²(f/f0 − 1)²) + B` to the peak
/// nearest `near`, over ±3 linewidths or up to the neighbouring minimum.
pub fn fit_lorentzian(spec: &Spectrum, near: f64) -> Result<ResonanceEstimate> {
    let db = spec.magnitude_db();
    let i = locate_peak(spec, &db, near)?;
    let guess = three_db_core(spec, &db, i)?;
    let f = spec.freqs();
    let fc = guess.f0;
    let q0 = fc / (guess.hi - guess.lo);
    let (lo, hi) = fit_window(f, &db, i, 3.0 * fc / q0);
    if hi - lo < 5 {
        return Err(Error::DegenerateFit("too few samples in the fit window".into()));
    }
    let x: Vec<f64> = f[lo..hi].iter().map(|&v| (v - fc) / fc).collect();
    let y: Vec<f64> = spec.s21()[lo..hi].iter().map(|s| s.norm_sqr()).collect();
    let a0 = 10f64.powf(guess.peak_db / 10.0);
    let out = levenberg_marquardt(
        &x,
        &y,
        None,
        [a0, 0.0, q0, 0.0],
        [a0, 1.0 / q0, q0, a0],
        FIT_REL_STEP,
        FIT_MAX_ITER,
        |x, p| {
            let [a, d, q, _] = *p;
            let u = (x - d) / (1.0 + d);
            let den = 1.0 + 4.0 * q * q * u * u;
            let dv_du = -a / (den * den) * 8.0 * q * q * u;
            let du_dd = -(1.0 + x) / ((1.0 + d) * (1.0 + d));
            (a / den + p[3], [1.0 / den, dv_du * du_dd, -a / (den * den) * 8.0 * q * u * u, 1.0])
        },
    );
    let [a, d, q, b] = out.params;
    let power: f64 = y.iter().map(|v| v * v).sum();
    let residual = out.ssr / power;
    let f0 = fc * (1.0 + d);
    if !out.converged {
        return Err(Error::NoConvergence { iterations: out.iterations, residual, last: vec![a, f0, q.abs(), b] });
    }
    if !(a > 0.0) || q == 0.0 || f0 < f[0] || f0 > f[f.len() - 1] {
        return Err(Error::DegenerateFit(format!("fit left the physical region (A={a}, Q={q}, f0={f0})")));
    }
    Ok(ResonanceEstimate { f0_hz: f0, q_loaded: q.abs(), amplitude: a.sqrt(), method: Method::LorentzFit, residual: Some(residual) })
}

/// Loaded Q from the transmission phase slope, `Q = f0 |dφ/df| / 2`.
///
/// The slope comes from an arctangent phase model fitted over 1.5
/// linewidths either side of the extremum, weighted by |S21|², so the
/// estimate holds up on noisy data. The extremum is the magnitude peak nearest `near`, or the
/// nearest strong |dφ/df| extremum when the magnitude has no peak.
pub fn q_phase_slope(spec: &Spectrum, near: f64) -> Result<ResonanceEstimate> {
    let deriv = phase_derivative(spec)?;
    let peak_slope = deriv.iter().map(|d| d.1.abs()).fold(0.0, f64::max);
    if peak_slope == 0.0 {
        return Err(Error::NoExtremum("phase derivative vanishes everywhere".into()));
    }
    let f = spec.freqs();
    let db = spec.magnitude_db();
    let amplitude_at = |f0: f64| {
        let k = f.partition_point(|&v| v < f0).clamp(1, f.len() - 1);
        let w = (f0 - f[k - 1]) / (f[k] - f[k - 1]);
        spec.s21()[k - 1].norm() * (1.0 - w) + spec.s21()[k].norm() * w
    };
    // Seed: the half-power estimate of the magnitude peak, or the raw
    // slope at the strongest nearby |dφ/df| extremum.
    let (j, fc, q_seed) = match locate_peak(spec, &db, near) {
        Ok(i) => {
            let r = three_db_core(spec, &db, i)?;
            let j = f.partition_point(|&v| v < r.f0).min(f.len() - 1);
            (j, r.f0, r.f0 / (r.hi - r.lo))
        }
        Err(Error::NoExtremum(_)) => {
            let abs: Vec<f64> = deriv.iter().map(|d| d.1.abs()).collect();
            let j = (1..abs.len() - 1)
                .filter(|&k| abs[k] >= abs[k - 1] && abs[k] >= abs[k + 1] && abs[k] >= 0.1 * peak_slope)
                .min_by(|&a, &b| (f[a] - near).abs().total_cmp(&(f[b] - near).abs()))
                .ok_or_else(|| Error::NoExtremum("no phase-derivative extremum".into()))?;
            (j, f[j], f[j] * abs[j] / 2.0)
        }
        Err(e) => return Err(e),
    };
    let sign = {
        let lo = j.saturating_sub(2);
        let hi = (j + 3).min(f.len());
        deriv[lo..hi].iter().map(|d| d.1).sum::<f64>().signum()
    };
    let width = PHASE_FIT_HALF_WIDTHS * fc / q_seed;
    let lo = f.partition_point(|&v| v < fc - width);
    let hi = f.partition_point(|&v| v <= fc + width);
    if hi - lo < 6 {
        let q = fc * deriv[j].1.abs() / 2.0;
        return Ok(ResonanceEstimate { f0_hz: fc, q_loaded: q, amplitude: amplitude_at(fc), method: Method::PhaseSlope, residual: None });
    }
    let phase = phase_curve(spec);
    let x: Vec<f64> = f[lo..hi].iter().map(|&v| (v - fc) / fc).collect();
    let y: Vec<f64> = phase[lo..hi].iter().map(|p| p.1).collect();
    // Phase noise variance scales as 1/|S21|².
    let w: Vec<f64> = spec.s21()[lo..hi].iter().map(|s| s.norm_sqr()).collect();
    let phi0 = phase[j].1;
    let out = levenberg_marquardt(
        &x,
        &y,
        Some(&w),
        [phi0, 0.0, q_seed, 0.0],
        [1.0, 1.0 / q_seed, q_seed, q_seed],
        FIT_REL_STEP,
        FIT_MAX_ITER,
        |x, p| {
            let [p0, d, q, c] = *p;
            let u = (x - d) / (1.0 + d);
            let z = 2.0 * q * u;
            let dz = 1.0 / (1.0 + z * z);
            let du_dd = -(1.0 + x) / ((1.0 + d) * (1.0 + d));
            (
                p0 + c * x + sign * z.atan(),
                [1.0, sign * dz * 2.0 * q * du_dd, sign * dz * 2.0 * u, x],
            )
        },
    );
    let [_, d, q, _] = out.params;
    let f0 = fc * (1.0 + d);
    if !out.converged {
        let power: f64 = y.iter().zip(&w).map(|(v, w)| w * v * v).sum();
        return Err(Error::NoConvergence { iterations: out.iterations, residual: out.ssr / power, last: out.params.to_vec() });
    }
    if q == 0.0 || f0 < f[0] || f0 > f[f.len() - 1] {
        return Err(Error::DegenerateFit(format!("phase fit left the physical region (Q={q}, f0={f0})")));
    }
    Ok(ResonanceEstimate { f0_hz: f0, q_loaded: q.abs(), amplitude: amplitude_at(f0), method: Method::PhaseSlope, residual: None })
}

/// Refined peaks and notch of a synthesized two-port response, together
/// with the phase-derivative extremum at each feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnalysis {
    pub f_peak1_hz: f64,
    pub f_peak2_hz: f64,
    pub f_notch_hz: f64,
    pub depth_db: f64,
    pub dphi_peak1: f64,
    pub dphi_peak2: f64,
    pub dphi_notch: f64,
}

struct Zoomed {
    f: f64,
    level_db: f64,
    dphi: f64,
}

/// Refines a maximum (or minimum) of |S21| on a fine grid around
/// `center`, re-centring if the extremum lands on the zoom edge.
fn zoom_feature(model: &TwoPortModel, mut center: f64, half: f64, maximum: bool) -> Result<Zoomed> {
    for _ in 0..8 {
        let spec = synthesize_s21(model, &linear_grid(center - half, center + half, ZOOM_POINTS))?;
        let db = spec.magnitude_db();
        let f = spec.freqs();
        let pick = |a: &usize, b: &usize| if maximum { db[*a].total_cmp(&db[*b]) } else { db[*b].total_cmp(&db[*a]) };
        let k = (0..db.len()).max_by(pick).unwrap();
        if k == 0 || k == db.len() - 1 {
            center = f[k];
            continue;
        }
        let (fk, level_db) = parabolic_vertex(f, &db, k);
        let deriv = differentiate(&phase_curve(&spec));
        let lo = k.saturating_sub(ZOOM_POINTS / 12);
        let hi = (k + ZOOM_POINTS / 12).min(deriv.len() - 1);
        let dphi = deriv[lo..=hi].iter().map(|d| d.1).fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        return Ok(Zoomed { f: fk, level_db, dphi });
    }
    Err(Error::NoExtremum(format!("feature near {center} Hz could not be bracketed")))
}

/// Locates both peaks and the notch of `model`. A default grid establishes
/// that two peaks are resolved; each feature is then refined on its own
/// zoom grid spanning ±6 linewidths.
pub fn analyze_features(model: &TwoPortModel) -> Result<FeatureAnalysis> {
    let grid = crate::network::default_grid(model, DEFAULT_GRID_POINTS, DEFAULT_SPAN_FACTOR)?;
    let modes = coupled_eigenmodes(&model.loaded_system())?;
    let width = |f: f64, q: f64| (ZOOM_HALF_WIDTHS * f / q).max(1e-9 * f);
    if let Err(Error::PeaksNotResolved { single_peak_hz }) = find_peaks_and_notch(&synthesize_s21(model, &grid)?) {
        let mode = modes
            .modes()
            .into_iter()
            .min_by(|a, b| (a.f_hz - single_peak_hz).abs().total_cmp(&(b.f_hz - single_peak_hz).abs()))
            .unwrap();
        let refined = zoom_feature(model, mode.f_hz, width(mode.f_hz, mode.q), true)?;
        return Err(Error::PeaksNotResolved { single_peak_hz: refined.f });
    }
    let p1 = zoom_feature(model, modes.mode1.f_hz, width(modes.mode1.f_hz, modes.mode1.q), true)?;
    let p2 = zoom_feature(model, modes.mode2.f_hz, width(modes.mode2.f_hz, modes.mode2.q), true)?;
    // The transmission zero sits at the bare puck frequency.
    let fs = model.sys.f_sto_hz;
    let n = zoom_feature(model, fs, width(fs, model.sys.q_sto), false)?;
    Ok(FeatureAnalysis {
        f_peak1_hz: p1.f,
        f_peak2_hz: p2.f,
        f_notch_hz: n.f,
        depth_db: n.level_db - p1.level_db.max(p2.level_db),
        dphi_peak1: p1.dphi,
        dphi_peak2: p2.dphi,
        dphi_notch: n.dphi,
    })
}

/// Central-difference sensitivities of the feature frequencies to ε_r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSensitivity {
    pub eps_r: f64,
    pub delta: f64,
    pub df1_deps: f64,
    pub df2_deps: f64,
    pub dfnotch_deps: f64,
}

/// Sensitivities multiplied by the phase-derivative extremum at each
/// feature, in (Hz per unit ε_r)·(rad/Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProducts {
    pub sensitivity: EpsSensitivity,
    pub features: FeatureAnalysis,
    pub mode1: f64,
    pub mode2: f64,
    pub notch: f64,
}

fn check_delta(eps_r: f64, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidModel("delta must be positive".into()));
    }
    if !(eps_r - delta > 0.0) {
        return Err(Error::InvalidModel("eps_r - delta must stay positive".into()));
    }
    Ok(())
}

fn difference(eps_r: f64, delta: f64, lo: &FeatureAnalysis, hi: &FeatureAnalysis) -> EpsSensitivity {
    let d = |a: f64, b: f64| (b - a) / (2.0 * delta);
    EpsSensitivity {
        eps_r,
        delta,
        df1_deps: d(lo.f_peak1_hz, hi.f_peak1_hz),
        df2_deps: d(lo.f_peak2_hz, hi.f_peak2_hz),
        dfnotch_deps: d(lo.f_notch_hz, hi.f_notch_hz),
    }
}

pub fn sensitivity_to_eps<B>(builder: B, eps_r: f64, delta: f64) -> Result<EpsSensitivity>
where
    B: Fn(f64) -> Result<TwoPortModel> + Sync,
{
    check_delta(eps_r, delta)?;
    let run = |e: f64| builder(e).and_then(|m| analyze_features(&m));
    let (lo, hi) = rayon::join(|| run(eps_r - delta), || run(eps_r + delta));
    Ok(difference(eps_r, delta, &lo?, &hi?))
}

pub fn sensitivity_q_product<B>(builder: B, eps_r: f64, delta: f64) -> Result<SensitivityProducts>
where
    B: Fn(f64) -> Result<TwoPortModel> + Sync,
{
    check_delta(eps_r, delta)?;
    let run = |e: f64| builder(e).and_then(|m| analyze_features(&m));
    let (mid, (lo, hi)) = rayon::join(|| run(eps_r), || rayon::join(|| run(eps_r - delta), || run(eps_r + delta)));
    let features = mid?;
    let s = difference(eps_r, delta, &lo?, &hi?);
    Ok(SensitivityProducts {
        sensitivity: s,
        features,
        mode1: s.df1_deps * features.dphi_peak1,
        mode2: s.df2_deps * features.dphi_peak2,
        notch: s.dfnotch_deps * features.dphi_notch,
    })
}
