use thiserror::Error;

pub type Result<T> = std::result::Result<T, RisError>;

#[derive(Debug, Error)]
pub enum RisError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("infeasible TOA: c*tau = {path_length} m does not exceed the anchor separation {separation} m")]
    InfeasibleToa { path_length: f64, separation: f64 },

    #[error(
        "no real orientation solves the spatial-frequency equation (arcsin argument {argument})"
    )]
    InfeasibleOrientation { argument: f64 },

    #[error("singular Fisher information (condition number estimate {condition:e})")]
    SingularFim { condition: f64 },

    #[error("every ellipse grid point is infeasible for omega_hat = {omega_hat}")]
    NoFeasibleNu { omega_hat: f64 },

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<RisError>,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RisError {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        RisError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
