use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    /// A config value that parsed but breaks a rule. `path` is the JSON field path.
    #[error("invalid config at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("cannot parse {source_name} at `{path}`: {message}")]
    Parse { source_name: String, path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] marl_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("sweep point N={n_agents}, seed {seed} failed: {source}")]
    Point {
        n_agents: usize,
        seed: u64,
        #[source]
        source: Box<BenchError>,
    },

    #[error("reference trends have no growth entry for N={n_from}->{n_to}")]
    MissingReference { n_from: usize, n_to: usize },
}

impl BenchError {
    /// Problems with user input, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            BenchError::Validation { .. }
                | BenchError::Parse { .. }
                | BenchError::Core(marl_core::Error::InvalidConfig(_))
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
        let path = path.into();
        move |source| BenchError::Io { path, source }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
