use thiserror::Error;

use crate::ids::{DecisionId, PanelId, VariableId};

pub type Result<T, E = IdssError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IdssError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("unknown decision `{0}`")]
    UnknownDecision(DecisionId),

    #[error("unknown panel `{0}`")]
    UnknownPanel(PanelId),

    #[error("unknown variable `{0}`")]
    UnknownVariable(VariableId),

    #[error("panel `{panel}` cannot deliver `{variable}`: {reason}")]
    Delivery {
        panel: PanelId,
        variable: VariableId,
        reason: String,
    },

    #[error("degenerate forecast variance {0}")]
    DegenerateForecast(f64),

    #[error("malformed evidence `{id}`: {reason}")]
    Evidence { id: String, reason: String },

    #[error("non-finite draw at {0}")]
    NonFiniteDraw(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl IdssError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }
}
