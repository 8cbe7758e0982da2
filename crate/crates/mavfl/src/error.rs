use thiserror::Error;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("position {position} m lies outside the segment [0, {length} m]")]
    OutOfSegment { position: f64, length: f64 },

    #[error("invalid input in {context}: {detail}")]
    Domain {
        context: &'static str,
        detail: String,
    },

    #[error(
        "bandwidth floor violated: {selected} vehicles share {total_hz} Hz \
         but each needs at least {min_hz} Hz"
    )]
    BandwidthFloor {
        selected: usize,
        total_hz: f64,
        min_hz: f64,
    },

    #[error("selection is empty")]
    EmptySelection,

    #[error("success ratio is undefined for an empty selected set")]
    UndefinedRatio,

    #[error("aggregation weights sum to {0}, expected 1 within 1e-9")]
    WeightSum(f64),

    #[error("local training diverged: non-finite gradient encountered")]
    DivergedTraining,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Finite and strictly positive.
pub(crate) fn is_positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}
