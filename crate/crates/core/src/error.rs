use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("temperature {t_k} K is outside the model range [{lo_k}, {hi_k}] K")]
    OutOfRange { t_k: f64, lo_k: f64, hi_k: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("system is not resonant: relative detuning {detuning:e}")]
    NotResonant { detuning: f64 },

    #[error("unphysical coupled mode: {0}")]
    Unphysical(String),

    #[error("grid too coarse: linewidth near {f_hz} Hz spans {points:.1} grid points (need 8)")]
    GridTooCoarse { f_hz: f64, points: f64 },

    #[error("two peaks not resolved; single peak at {single_peak_hz} Hz")]
    PeaksNotResolved { single_peak_hz: f64 },

    #[error("-3 dB crossing falls outside the grid for the peak at {f_hz} Hz")]
    BandEdgeClipped { f_hz: f64 },

    #[error("fit did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("no extremum found: {0}")]
    NoExtremum(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
