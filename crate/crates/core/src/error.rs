use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch{}: {what} expected {expected}, got {actual}", at_block(*.block))]
    DimMismatch {
        block: Option<usize>,
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value{} in {what}", at_block(*.block))]
    NonFinite {
        block: Option<usize>,
        what: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("trainable mask selects no parameters")]
    EmptyMask,

    #[error("forward cache does not match network: {0}")]
    CacheMismatch(String),

    #[error("cannot merge at block {position}: {reason}")]
    MergePattern { position: usize, reason: String },

    #[error("misaligned hybrid handoff at layer {layer}: student emits {student} dims, teacher expects {teacher}")]
    MisalignedHandoff {
        layer: usize,
        student: usize,
        teacher: usize,
    },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("all {0} probe pairs were degenerate")]
    DegenerateProbes(usize),

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("dimension chain broken at block {block}: {reason}")]
    DimensionChain { block: usize, reason: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("artifact {} does not match its manifest hash", .0.display())]
    HashMismatch(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn at_block(block: Option<usize>) -> String {
    match block {
        Some(b) => format!(" at block {b}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a block index to a dimension or finiteness error that lacks one.
    pub fn at(self, index: usize) -> Self {
        match self {
            Error::DimMismatch {
                block: None,
                what,
                expected,
                actual,
            } => Error::DimMismatch {
                block: Some(index),
                what,
                expected,
                actual,
            },
            Error::NonFinite { block: None, what } => Error::NonFinite {
                block: Some(index),
                what,
            },
            other => other,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Diverged { .. } => "diverged",
            Error::EmptyMask => "empty_mask",
            Error::CacheMismatch(_) => "cache_mismatch",
            Error::MergePattern { .. } => "merge_pattern",
            Error::MisalignedHandoff { .. } => "misaligned_handoff",
            Error::NoConvergence { .. } => "no_convergence",
            Error::DegenerateProbes(_) => "degenerate_probes",
            Error::EmptyEvalSet => "empty_eval_set",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Malformed(_) => "malformed",
            Error::DimensionChain { .. } => "dimension_chain",
            Error::Stage { .. } => "stage",
            Error::HashMismatch(_) => "hash_mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch {
            block: None,
            what,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { block: None, what })
    }
}
