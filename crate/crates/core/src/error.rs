use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("win probability undefined: both skills are zero")]
    ZeroSkills,

    #[error("log of non-positive value {value:e} at tournament {tournament}, pair ({winner}, {loser})")]
    LogDomain { tournament: usize, winner: usize, loser: usize, value: f64 },

    #[error("zero denominator in W update at tournament {tournament}, factor {factor}")]
    DegenerateW { tournament: usize, factor: usize },

    #[error("zero denominator in H update at factor {factor}, player {player}")]
    DegenerateH { factor: usize, player: usize },

    #[error("row {tournament} of W sums to zero; cannot row-normalize")]
    ZeroRowSum { tournament: usize },

    #[error("column {factor} of W sums to zero; cannot column-normalize")]
    ZeroColumnSum { factor: usize },

    #[error("non-finite value in {what} at ({row}, {col})")]
    NonFinite { what: &'static str, row: usize, col: usize },

    #[error("objective increased at iteration {iteration}: {previous} -> {current}")]
    MonotonicityViolation { iteration: usize, previous: f64, current: f64 },

    #[error("comparison graph is disconnected into {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<String>> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors that stem from the numerics or from the data being unidentifiable,
    /// as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroSkills
                | Error::LogDomain { .. }
                | Error::DegenerateW { .. }
                | Error::DegenerateH { .. }
                | Error::ZeroRowSum { .. }
                | Error::ZeroColumnSum { .. }
                | Error::NonFinite { .. }
                | Error::MonotonicityViolation { .. }
                | Error::Disconnected { .. }
        )
    }
}
