//! Iterative treebank construction: CoNLL-U handling, evaluation metrics,
//! a built-in trainable parser, an external parser protocol, double
//! annotation agreement and the pseudo-annotate / correct / fine-tune
//! project loop.

pub mod adapter;
pub mod agreement;
pub mod conllu;
pub mod metrics;
pub mod project;
pub mod refparser;

pub use conllu::{Sentence, Token, Treebank};
pub use metrics::{AttachmentScore, ConfusionMatrix, EvalOptions, KappaResult};
pub use project::{BatchReport, BatchState, Project, ProjectManifest};
pub use refparser::ParserModel;
