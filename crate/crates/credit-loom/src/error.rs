//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. Errors are grouped into
//! [`ErrorKind`]s so the CLI can map them onto its exit-code contract
//! (0 success, 2 configuration, 3 gateway, 4 data).

use crate::datastore::LogRecord;

/// Coarse error category used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, template, or invocation.
    Config,
    /// Completion-channel failure (network, cache, critic output, budget).
    Gateway,
    /// Dataset, split, or log problems.
    Data,
    /// Contract violations and everything else.
    Internal,
}

impl ErrorKind {
    /// Process exit code for this category.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Gateway => 3,
            ErrorKind::Data => 4,
            ErrorKind::Internal => 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- prompt composition / protocol ---
    #[error("template references unsupported slot {{{name}}}")]
    UnknownPlaceholder { name: String },
    #[error("round {round} incomplete: completion for role '{role_id}' failed: {source}")]
    RoundIncomplete {
        role_id: String,
        round: u32,
        #[source]
        source: Box<Error>,
    },
    #[error("cannot aggregate an empty transcript")]
    EmptyTranscript,
    #[error(
        "aggregator prompt is for round {prompt_round} but transcript is round {transcript_round}"
    )]
    RoundMismatch {
        prompt_round: u32,
        transcript_round: u32,
    },
    #[error("completion failed: {0}")]
    CompletionFailure(String),
    #[error("trajectory for '{instance_id}' aborted at round {round}: {source}")]
    TrajectoryAborted {
        instance_id: String,
        round: u32,
        #[source]
        source: Box<Error>,
    },

    // --- gateway ---
    #[error("network failure after {attempts} attempt(s): {detail}")]
    NetworkFailure { attempts: u32, detail: String },
    #[error("replay cache miss for fingerprint {fingerprint}")]
    CacheMiss { fingerprint: String },
    #[error("call budget of {limit} completions exceeded")]
    BudgetExceeded { limit: u64 },
    #[error("unknown role '{0}' in synthetic profile")]
    UnknownRole(String),
    #[error("cache I/O error at {path}: {detail}")]
    CacheIo { path: String, detail: String },

    // --- critic parsing ---
    #[error("critic output unparseable: {0}")]
    CriticParseFailure(String),
    #[error("gold label is Invalid; dataset row is malformed")]
    GoldInvalid,

    // --- credit ---
    #[error("value out of range: {0}")]
    RangeViolation(String),
    #[error("cannot average an empty observation list")]
    EmptyObservations,

    // --- optimizer ---
    #[error("no failure records for role '{0}'")]
    NoFailures(String),
    #[error("optimizer returned an empty rewrite for '{0}'")]
    EmptyRewrite(String),

    // --- datastore ---
    #[error("malformed dataset row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate instance id '{0}'")]
    DuplicateId(String),
    #[error("log schema mismatch: expected header {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },
    #[error("corrupt log line {line}; {} preceding record(s) recovered", recovered.len())]
    CorruptLine {
        line: usize,
        recovered: Vec<LogRecord>,
    },
    #[error("optimizer invoked on id(s) outside the optimization split: {0:?}")]
    TestSetExposure(Vec<String>),

    // --- reporting ---
    #[error("log contains no records")]
    EmptyLog,
    #[error("paired logs cover different instances; only in before: {only_before:?}, only in after: {only_after:?}")]
    IdMismatch {
        only_before: Vec<String>,
        only_after: Vec<String>,
    },
    #[error("manifest history holds no snapshots to export")]
    MissingSnapshots,

    // --- config / io ---
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Category used by the CLI exit-code mapping.
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            UnknownPlaceholder { .. } | Config(_) | Io { .. } => ErrorKind::Config,
            RoundIncomplete { source, .. } | TrajectoryAborted { source, .. } => source.kind(),
            NetworkFailure { .. }
            | CacheMiss { .. }
            | BudgetExceeded { .. }
            | CompletionFailure(_)
            | CacheIo { .. }
            | CriticParseFailure(_)
            | EmptyRewrite(_) => ErrorKind::Gateway,
            MalformedRow { .. }
            | DuplicateId(_)
            | SchemaMismatch { .. }
            | CorruptLine { .. }
            | TestSetExposure(_)
            | GoldInvalid
            | EmptyLog
            | IdMismatch { .. }
            | MissingSnapshots => ErrorKind::Data,
            EmptyTranscript
            | RoundMismatch { .. }
            | UnknownRole(_)
            | RangeViolation(_)
            | EmptyObservations
            | NoFailures(_) => ErrorKind::Internal,
        }
    }

    /// True when this error (or any error it wraps) is the gateway call
    /// budget running out — the one failure the optimizer ends gracefully on.
    pub fn is_budget_exhaustion(&self) -> bool {
        match self {
            Error::BudgetExceeded { .. } => true,
            Error::RoundIncomplete { source, .. } | Error::TrajectoryAborted { source, .. } => {
                source.is_budget_exhaustion()
            }
            _ => false,
        }
    }

    /// Wraps an I/O error with the path it occurred at.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
