//! Hierarchical transformer for dictionary-like log records.
//!
//! Records parse into trees, trees segment into per-node windows, and a
//! shared encoder walks the segments while threading a compact summary
//! state between steps — first from the deepest nodes up to the root, then
//! back down. Training is self-supervised (masked-token prediction plus a
//! hypersphere term that pulls record summaries together), and the trained
//! summaries drive anomaly detection, classification, and recommendation
//! evaluations.

pub mod detection;
pub mod error;
pub mod hlogformer;
pub mod log_tree;
pub mod model_core;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
pub use hlogformer::{ReadPass, RecordOutputs, RunMode, SummaryState};
pub use log_tree::segment::{Segment, SegmentPlan};
pub use log_tree::{LogNode, LogTree, NodeId};
pub use model_core::checkpoint::Checkpoint;
pub use model_core::{EncoderConfig, EncoderStack};
pub use tokenizer::Vocab;
pub use training::{TrainConfig, TrainOutcome};
