use cecf_core::synth::SynthError;

/// Process exit codes.
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_VERIFICATION: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Core(#[from] cecf_core::Error),
    #[error("gradient check failed: {0}")]
    Verification(String),
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<cecf_core::graph::GraphError> for CliError {
    fn from(e: cecf_core::graph::GraphError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<cecf_core::autodiff::AutodiffError> for CliError {
    fn from(e: cecf_core::autodiff::AutodiffError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<cecf_core::tensor::TensorError> for CliError {
    fn from(e: cecf_core::tensor::TensorError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<cecf_core::model::CheckpointError> for CliError {
    fn from(e: cecf_core::model::CheckpointError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use cecf_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Csv { .. } => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Core(e) => match e {
                E::Divergence { .. } => EXIT_DIVERGED,
                E::InvalidConfig { .. }
                | E::Synth(_)
                | E::Graph(_)
                | E::Checkpoint(_)
                | E::Scope(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            },
        }
    }
}

pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}
