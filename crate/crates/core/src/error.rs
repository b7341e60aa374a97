use thiserror::Error;

pub type Result<T> = std::result::Result<T, IpmError>;

#[derive(Debug, Error)]
pub enum IpmError {
    #[error("grid degenerate: {distinct} distinct values for {classes} classes")]
    GridDegenerate { distinct: usize, classes: usize },

    #[error("no records")]
    NoRecords,

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("environment column required")]
    EnvironmentRequired,

    #[error("no survivors in the data")]
    NoSurvivors,

    #[error("rank-deficient design: column `{column}` is collinear with earlier columns")]
    RankDeficient { column: String },

    #[error("no real dominant eigenvalue")]
    NoRealDominantEigenvalue,

    #[error("degenerate eigenvalue")]
    DegenerateEigenvalue,

    #[error("non-positive environment growth term v'K_theta u for environment `{0}`")]
    NonPositiveEnvironment(String),

    #[error("all folds dropped")]
    AllFoldsDropped,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IpmError {
    /// True for failures of the numerical machinery rather than of the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            IpmError::RankDeficient { .. }
                | IpmError::NoRealDominantEigenvalue
                | IpmError::DegenerateEigenvalue
                | IpmError::NonPositiveEnvironment(_)
                | IpmError::AllFoldsDropped
        )
    }
}
