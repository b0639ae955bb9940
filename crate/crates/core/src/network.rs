//! Two-port transmission of the cavity–puck system.
//!
//! Both ports couple to the cavity mode only; the puck couples only to the
//! cavity. The response is that of two damped coupled oscillators,
//!
//! ```text
//! M(ω) = [[ω_s² − ω² − 2iωγ_s,      κ ω_s ω_c           ],
//!         [κ ω_s ω_c,               ω_c² − ω² − 2iωΓ_c  ]]
//! S21(ω) = −4iω √(γ_e1 γ_e2) · [M(ω)⁻¹]_cc
//! ```
//!
//! with `γ = ω/2Q` half-linewidths and `Γ_c = γ_c + γ_e1 + γ_e2`. Near
//! resonance this reduces to the familiar input–output form
//! `2√(γ_e1γ_e2) / (i(ω_c−ω) + Γ_c + g²/(i(ω_s−ω) + γ_s))` with
//! `g ≈ κω₀/2`; its poles sit on the [`crate::cmt::coupled_eigenmodes`]
//! frequencies and its zero at the bare puck frequency.

use crate::cmt::{coupled_eigenmodes, CoupledSystem};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Minimum grid points across a resonance linewidth for phase derivatives.
pub const MIN_POINTS_PER_LINEWIDTH: f64 = 8.0;

/// Prominence a maximum needs to count as a resonance peak.
pub const PEAK_PROMINENCE_DB: f64 = 3.0;

/// The grid-resolution check looks at the strongest maximum and at any
/// other maximum within this level window and with at least this
/// prominence, so that noise ripple on the flanks does not trip it.
pub const RESOLUTION_LEVEL_WINDOW_DB: f64 = 10.0;
pub const RESOLUTION_PROMINENCE_DB: f64 = 10.0;

pub const DEFAULT_GRID_POINTS: usize = 20001;
pub const DEFAULT_SPAN_FACTOR: f64 = 5.0;

/// External loading of the two ports onto the cavity mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPortModel {
    pub sys: CoupledSystem,
    pub q_ext1: f64,
    pub q_ext2: f64,
}

impl TwoPortModel {
    pub fn new(sys: CoupledSystem, q_ext1: f64, q_ext2: f64) -> Result<Self> {
        let m = TwoPortModel { sys, q_ext1, q_ext2 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        let ok = |q: f64| q.is_finite() && q > 0.0;
        if !(ok(self.q_ext1) && ok(self.q_ext2)) {
            return Err(Error::InvalidModel("external Q factors must be positive and finite".into()));
        }
        Ok(())
    }

    /// Loaded Q of the bare cavity, `(1/Q_cav + 1/Q_e1 + 1/Q_e2)⁻¹`.
    pub fn cavity_loaded_q(&self) -> f64 {
        1.0 / (1.0 / self.sys.q_cav + 1.0 / self.q_ext1 + 1.0 / self.q_ext2)
    }

    /// The coupled system with the ports folded into the cavity loss.
    pub fn loaded_system(&self) -> CoupledSystem {
        CoupledSystem { q_cav: self.cavity_loaded_q(), ..self.sys }
    }

    /// Complex transmission at one frequency.
    pub fn s21(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz;
        let ws = 2.0 * PI * self.sys.f_sto_hz;
        let wc = 2.0 * PI * self.sys.f_cav_hz;
        let gamma_s = ws / (2.0 * self.sys.q_sto);
        let gamma_e1 = wc / (2.0 * self.q_ext1);
        let gamma_e2 = wc / (2.0 * self.q_ext2);
        let gamma_c = wc / (2.0 * self.sys.q_cav) + gamma_e1 + gamma_e2;
        let i = Complex64::i();
        let m_ss = Complex64::new((ws - w) * (ws + w), -2.0 * w * gamma_s);
        let m_cc = Complex64::new((wc - w) * (wc + w), -2.0 * w * gamma_c);
        let coupling = self.sys.kappa * ws * wc;
        let det = m_ss * m_cc - coupling * coupling;
        -4.0 * i * w * (gamma_e1 * gamma_e2).sqrt() * m_ss / det
    }
}

/// Frequency grid with complex transmission samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    freqs: Vec<f64>,
    s21: Vec<Complex64>,
    /// The model that produced the samples, when synthesized.
    pub meta: Option<TwoPortModel>,
}

impl Spectrum {
    pub fn new(freqs: Vec<f64>, s21: Vec<Complex64>) -> Result<Self> {
        if freqs.len() != s21.len() {
            return Err(Error::InvalidModel("frequency and sample counts differ".into()));
        }
        if freqs.len() < 2 {
            return Err(Error::InvalidModel("a spectrum needs at least 2 samples".into()));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) || freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidModel("frequencies must be finite and strictly increasing".into()));
        }
        if s21.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::InvalidModel("non-finite S21 sample".into()));
        }
        Ok(Spectrum { freqs, s21, meta: None })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn s21(&self) -> &[Complex64] {
        &self.s21
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.s21.iter().map(|s| to_db(s.norm())).collect()
    }

    /// Sub-spectrum over index range `[lo, hi)`.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Spectrum> {
        let mut s = Spectrum::new(self.freqs[lo..hi].to_vec(), self.s21[lo..hi].to_vec())?;
        s.meta = self.meta;
        Ok(s)
    }

    /// Writes the native `f_hz,s21_re,s21_im` format at 17 significant
    /// digits, which round-trips bit-exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "f_hz,s21_re,s21_im")?;
        for (f, s) in self.freqs.iter().zip(&self.s21) {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", f, s.re, s.im)?;
        }
        Ok(())
    }

    /// Reads either `f_hz,s21_re,s21_im` or `f_hz,s21_db,s21_phase_rad`.
    pub fn read_csv<R: Read>(r: R) -> Result<Spectrum> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        let polar = match cols.as_slice() {
            ["f_hz", "s21_re", "s21_im"] => false,
            ["f_hz", "s21_db", "s21_phase_rad"] => true,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header `f_hz,s21_re,s21_im` or `f_hz,s21_db,s21_phase_rad`".into(),
                })
            }
        };
        let mut freqs = Vec::new();
        let mut s21 = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64> {
                let v = rec[i].parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number `{}` in column {}", &rec[i], cols[i]),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse { line, message: format!("non-finite value in column {}", cols[i]) })
                }
            };
            let f = num(0)?;
            if let Some(&prev) = freqs.last() {
                if f <= prev {
                    return Err(Error::Parse { line, message: "frequencies must be strictly increasing".into() });
                }
            }
            let (a, b) = (num(1)?, num(2)?);
            freqs.push(f);
            s21.push(if polar {
                Complex64::from_polar(10f64.powf(a / 20.0), b)
            } else {
                Complex64::new(a, b)
            });
        }
        Spectrum::new(freqs, s21).map_err(|e| Error::Parse { line: 0, message: e.to_string() })
    }
}

pub(crate) fn to_db(mag: f64) -> f64 {
    20.0 * mag.max(1e-300).log10()
}

/// Evenly spaced grid of `n ≥ 2` points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Grid centred on the coupled modes spanning ± `span_factor` times their
/// splitting (or twice the broader linewidth when the splitting is smaller).
pub fn default_grid(model: &TwoPortModel, points: usize, span_factor: f64) -> Result<Vec<f64>> {
    let modes = coupled_eigenmodes(&model.loaded_system())?;
    let center = 0.5 * (modes.mode1.f_hz + modes.mode2.f_hz);
    let linewidth = modes
        .modes()
        .iter()
        .map(|m| m.f_hz / m.q)
        .fold(0.0f64, f64::max);
    let half = span_factor * modes.gap_hz().max(2.0 * linewidth);
    let lo = (center - half).max(0.01 * center);
    Ok(linear_grid(lo, center + half, points.max(2)))
}

pub fn synthesize_s21(model: &TwoPortModel, freqs: &[f64]) -> Result<Spectrum> {
    model.validate()?;
    let s21 = freqs.iter().map(|&f| model.s21(f)).collect();
    let mut spec = Spectrum::new(freqs.to_vec(), s21)?;
    spec.meta = Some(*model);
    Ok(spec)
}

/// Unwrapped phase of S21. Exact zeros are replaced by the complex mean of
/// their nearest non-zero neighbours before taking the argument.
pub fn phase_curve(spec: &Spectrum) -> Vec<(f64, f64)> {
    let s = spec.s21();
    let n = s.len();
    let mut masked = s.to_vec();
    for i in 0..n {
        if s[i].norm_sqr() == 0.0 {
            let left = (0..i).rev().find(|&j| s[j].norm_sqr() > 0.0);
            let right = (i + 1..n).find(|&j| s[j].norm_sqr() > 0.0);
            masked[i] = match (left, right) {
                (Some(l), Some(r)) => {
                    let w = (spec.freqs[i] - spec.freqs[l]) / (spec.freqs[r] - spec.freqs[l]);
                    s[l] * (1.0 - w) + s[r] * w
                }
                (Some(l), None) => s[l],
                (None, Some(r)) => s[r],
                (None, None) => Complex64::new(1.0, 0.0),
            };
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut offset = 0.0;
    let mut prev = masked[0].arg();
    out.push((spec.freqs[0], prev));
    for i in 1..n {
        let raw = masked[i].arg();
        let mut d = raw - prev;
        if d > PI {
            offset -= 2.0 * PI;
            d -= 2.0 * PI;
        } else if d < -PI {
            offset += 2.0 * PI;
            d += 2.0 * PI;
        }
        let _ = d;
        prev = raw;
        out.push((spec.freqs[i], raw + offset));
    }
    out
}

/// A local maximum of a sampled curve with its topographic prominence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Peak {
    pub index: usize,
    pub prominence: f64,
}

/// Local maxima of `v` with prominence at least `min_prominence`.
pub(crate) fn prominent_maxima(v: &[f64], min_prominence: f64) -> Vec<Peak> {
    let n = v.len();
    let mut out = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(v[i] > v[i - 1] && v[i] >= v[i + 1]) {
            continue;
        }
        let mut left_min = v[i];
        let mut j = i;
        while j > 0 {
            j -= 1;
            if v[j] > v[i] {
                break;
            }
            left_min = left_min.min(v[j]);
        }
        let mut right_min = v[i];
        let mut j = i;
        while j + 1 < n {
            j += 1;
            if v[j] > v[i] {
                break;
            }
            right_min = right_min.min(v[j]);
        }
        let prominence = v[i] - left_min.max(right_min);
        if prominence >= min_prominence {
            out.push(Peak { index: i, prominence });
        }
    }
    out
}

/// Vertex of the parabola through three samples around `i`, as
/// `(x, y)`. Falls back to the sample itself at the edges.
pub(crate) fn parabolic_vertex(x: &[f64], y: &[f64], i: usize) -> (f64, f64) {
    if i == 0 || i + 1 >= x.len() {
        return (x[i], y[i]);
    }
    let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if a == 0.0 || !a.is_finite() {
        return (x1, y1);
    }
    let b = d01 - a * (x0 + x1);
    let xv = (-b / (2.0 * a)).clamp(x0, x2);
    let yv = y1 + (xv - x1) * (d01 + a * (xv - x0));
    (xv, yv)
}

/// Interpolated `-3 dB` crossings around peak `i` of `db`, if both exist.
pub(crate) fn half_power_crossings(freqs: &[f64], db: &[f64], i: usize, peak_db: f64) -> (Option<f64>, Option<f64>) {
    let level = peak_db - 10.0 * 2f64.log10();
    let interp = |a: usize, b: usize| {
        let w = (level - db[a]) / (db[b] - db[a]);
        freqs[a] + w * (freqs[b] - freqs[a])
    };
    let lo = (0..i).rev().find(|&j| db[j] < level).map(|j| interp(j, j + 1));
    let hi = (i + 1..db.len()).find(|&j| db[j] < level).map(|j| interp(j - 1, j));
    (lo, hi)
}

/// Fails with [`Error::GridTooCoarse`] when any resonance peak is
/// narrower than [`MIN_POINTS_PER_LINEWIDTH`] grid steps.
pub(crate) fn check_resolution(spec: &Spectrum) -> Result<()> {
    let db = spec.magnitude_db();
    let f = spec.freqs();
    let peaks = prominent_maxima(&db, PEAK_PROMINENCE_DB);
    let top = peaks.iter().map(|p| db[p.index]).fold(f64::NEG_INFINITY, f64::max);
    let checked = peaks.iter().filter(|p| {
        db[p.index] == top || (db[p.index] >= top - RESOLUTION_LEVEL_WINDOW_DB && p.prominence >= RESOLUTION_PROMINENCE_DB)
    });
    for p in checked {
        let (lo, hi) = half_power_crossings(f, &db, p.index, db[p.index]);
        let (Some(lo), Some(hi)) = (lo, hi) else { continue };
        let i = p.index;
        let step = 0.5 * (f[(i + 1).min(f.len() - 1)] - f[i.saturating_sub(1)]);
        let points = (hi - lo) / step;
        if points < MIN_POINTS_PER_LINEWIDTH {
            return Err(Error::GridTooCoarse { f_hz: f[i], points });
        }
    }
    Ok(())
}

/// Central differences of the unwrapped phase, one-sided at the ends.
pub fn phase_derivative(spec: &Spectrum) -> Result<Vec<(f64, f64)>> {
    check_resolution(spec)?;
    Ok(differentiate(&phase_curve(spec)))
}

pub(crate) fn differentiate(curve: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = curve.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            (curve[i].0, (curve[b].1 - curve[a].1) / (curve[b].0 - curve[a].0))
        })
        .collect()
}

/// Two transmission peaks and the notch between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub f_peak1_hz: f64,
    pub f_peak2_hz: f64,
    pub f_notch_hz: f64,
    pub peak1_db: f64,
    pub peak2_db: f64,
    pub notch_db: f64,
    /// `20 log10(|S21|_notch / max |S21|_peak)`, negative.
    pub depth_db: f64,
}

pub fn find_peaks_and_notch(spec: &Spectrum) -> Result<Features> {
    let db = spec.magnitude_db();
    let f = spec.freqs();
    let mut peaks = prominent_maxima(&db, PEAK_PROMINENCE_DB);
    if peaks.len() < 2 {
        let imax = (0..db.len()).max_by(|&a, &b| db[a].total_cmp(&db[b])).unwrap();
        let (single, _) = parabolic_vertex(f, &db, imax);
        return Err(Error::PeaksNotResolved { single_peak_hz: single });
    }
    peaks.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.index.cmp(&b.index)));
    let (mut i1, mut i2) = (peaks[0].index, peaks[1].index);
    if i1 > i2 {
        std::mem::swap(&mut i1, &mut i2);
    }
    let inotch = (i1..=i2).min_by(|&a, &b| db[a].total_cmp(&db[b])).unwrap();
    let (fp1, p1) = parabolic_vertex(f, &db, i1);
    let (fp2, p2) = parabolic_vertex(f, &db, i2);
    let (fnotch, notch) = parabolic_vertex(f, &db, inotch);
    if notch > p1.min(p2) - PEAK_PROMINENCE_DB {
        let single = if p1 >= p2 { fp1 } else { fp2 };
        return Err(Error::PeaksNotResolved { single_peak_hz: single });
    }
    Ok(Features {
        f_peak1_hz: fp1,
        f_peak2_hz: fp2,
        f_notch_hz: fnotch,
        peak1_db: p1,
        peak2_db: p2,
        notch_db: notch,
        depth_db: notch - p1.max(p2),
    })
}
