//! Configuration, orchestration and output for replica experiments.

pub mod config;
pub mod dump;
pub mod output;
pub mod pf_tools;
pub mod runner;

pub use config::{validate_config, validate_str, ConfigError, ExperimentConfig, Task, Units};
pub use runner::{run_sweep, ResultRow};

/// Failures surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<ConfigError>),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

impl From<replica_core::Error> for CliError {
    fn from(e: replica_core::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}

/// Worker pool of `threads` workers, or rayon's default when `None`.
pub fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Numeric(format!("cannot start worker pool: {e}")))
}

/// `--threads`, else `REPLICA_THREADS`, else `None`.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("REPLICA_THREADS") {
        Ok(s) => s.trim().parse::<usize>().ok().filter(|t| *t > 0).map(Some).ok_or_else(|| {
            CliError::Validation(vec![ConfigError { path: "REPLICA_THREADS".into(), message: format!("{s:?} is not a positive integer") }])
        }),
        Err(_) => Ok(None),
    }
}
