//! Integrating decision support over a network of autonomous panel models.
//!
//! Panels own disjoint parameter blocks and deliver low-order moment
//! summaries of the variables they are responsible for. The engine scores
//! candidate policies by propagating a partial-utility message backwards
//! through the agreed DAG, and an admissibility gate keeps incoming evidence
//! panel separable so that each panel may keep learning on its own.

pub mod admissibility;
pub mod causal;
pub mod chain;
pub mod ck;
pub mod config;
pub mod engine;
pub mod error;
pub mod ids;
pub mod moments;
pub mod oracle;
pub mod panels;
pub mod par;
pub mod propagation;

pub use error::{IdssError, Result};
pub use ids::{DecisionId, PanelId, VariableId};
