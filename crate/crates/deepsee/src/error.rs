use deepsee_core::CoreError;
use deepsee_metrics::MetricsError;
use deepsee_nn::NnError;
use serde::Serialize;

/// Error categories shared by the CLI (exit codes) and the service (HTTP
/// status codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad arguments or request payloads.
    Invalid,
    NotFound,
    MissingAsset,
    /// Everything else: IO, numerical failures, corrupt files.
    Failed,
}

#[derive(Debug, Clone, Serialize, thiserror::Error)]
#[error("{message}")]
pub struct AppError {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

impl AppError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            hint: None,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Invalid, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, message)
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Failed, message)
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.hint = Some(hint.into());
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Invalid | ErrorKind::NotFound => 2,
            ErrorKind::MissingAsset | ErrorKind::Failed => 1,
        }
    }

    /// `{"error": {...}}` on one line.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        let kind = match &e {
            CoreError::InvalidArgument(_)
            | CoreError::OutOfRange(_)
            | CoreError::Shape(_)
            | CoreError::LabelOutOfRange { .. }
            | CoreError::NotOneHot { .. }
            | CoreError::RegionOutOfRange { .. }
            | CoreError::UnknownRegion(_)
            | CoreError::Image(_)
            | CoreError::Png(_)
            | CoreError::Config(_) => ErrorKind::Invalid,
            _ => ErrorKind::Failed,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<NnError> for AppError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Core(c) => c.into(),
            NnError::MissingAsset { name, path } => Self::new(ErrorKind::MissingAsset, format!("missing asset `{name}` at {path}"))
                .with_hint(format!("run `deepsee assets fetch {name}`")),
            NnError::InvalidArgument(m) | NnError::Shape(m) => Self::invalid(m),
            other => Self::failed(other.to_string()),
        }
    }
}

impl From<MetricsError> for AppError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Nn(n) => n.into(),
            MetricsError::Core(c) => c.into(),
            MetricsError::InvalidArgument(m) | MetricsError::Shape(m) => Self::invalid(m),
            other => Self::failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        Self::failed(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
