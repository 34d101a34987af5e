//! Multi-format event argument extraction.
//!
//! Two format-specific prompt-based extractors and one format-shared extractor
//! are trained jointly; a sigmoid gate fuses the specific and shared sentence
//! representations, and the shared representation is regularised by a
//! variational information bottleneck.

pub mod backbone;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod extractor;
pub mod graph;
pub mod model;
pub mod optim;
pub mod prompts;
pub mod ssp;
pub mod trainkit;
pub mod vib;

pub use corpus::{CorpusStats, EventInstance, Span};
pub use error::{Error, Result};
pub use evalkit::MetricsReport;
pub use model::{ModelConfig, MultiFormatModel};
pub use prompts::{PromptTemplate, TemplateRegistry};
pub use trainkit::{Checkpoint, TrainConfig};
