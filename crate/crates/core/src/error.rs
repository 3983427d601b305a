use thiserror::Error;

/// Errors raised by the imputation, estimation and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "allocation error: stratum {stratum} asks for {requested} units but holds {available}"
    )]
    Allocation {
        stratum: String,
        requested: usize,
        available: usize,
    },

    #[error("design error: {0}")]
    Design(String),

    #[error("degenerate size: x = {0} is not a positive finite total")]
    DegenerateSize(f64),

    #[error("no eligible donors in imputation cell(s): {}", cells.join(", "))]
    NoDonors { cells: Vec<String> },

    #[error("response draw left cell {cell} without respondents after {attempts} attempts")]
    EmptyCell { cell: String, attempts: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
