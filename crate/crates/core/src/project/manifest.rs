use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::adapter::ExternalParserConfig;
use crate::conllu::DEFAULT_ORIG_KEY;
use crate::metrics::{AttachmentScore, ConfusionMatrix, EvalOptions};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_BATCH_SIZE: usize = 50;
pub const DEFAULT_EPOCHS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub format_version: u32,
    pub name: String,
    pub created: DateTime<Utc>,
    pub pool_file: String,
    pub pool_size: usize,
    pub batch_size: usize,
    pub parser_backend: ParserBackend,
    pub model_versions: Vec<ModelRef>,
    pub batches: Vec<BatchRecord>,
    pub settings: Settings,
}

impl ProjectManifest {
    pub fn current_model(&self) -> &ModelRef {
        self.model_versions
            .last()
            .expect("a project always has a base model")
    }

    pub fn batch(&self, index: usize) -> Option<&BatchRecord> {
        index.checked_sub(1).and_then(|i| self.batches.get(i))
    }

    pub(crate) fn batch_mut(&mut self, index: usize) -> Option<&mut BatchRecord> {
        index.checked_sub(1).and_then(|i| self.batches.get_mut(i))
    }

    /// The batch that is neither finalized nor failed, if any.
    pub fn in_progress(&self) -> Option<&BatchRecord> {
        self.batches.iter().find(|b| b.state.is_in_progress())
    }

    pub fn model(&self, id: &str) -> Option<&ModelRef> {
        self.model_versions.iter().find(|m| m.id == id)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ignore_punct: self.settings.ignore_punct,
            strip_subtypes: self.settings.strip_subtypes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParserBackend {
    Builtin,
    External(ExternalParserConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub ignore_punct: bool,
    pub strip_subtypes: bool,
    pub misc_orig_key: String,
    pub sampling_seed: u64,
    /// Builtin parser training epochs, for the base model and every
    /// fine-tuning step.
    pub train_epochs: usize,
    pub train_seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            ignore_punct: false,
            strip_subtypes: false,
            misc_orig_key: DEFAULT_ORIG_KEY.to_string(),
            sampling_seed: 0,
            train_epochs: DEFAULT_EPOCHS,
            train_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    /// `iterNNN`; `iter000` is the base model.
    pub id: String,
    /// Relative to the project directory.
    pub path: String,
    /// Batch whose gold data produced this model; `None` for the base.
    pub trained_on: Option<usize>,
    pub created: DateTime<Utc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BatchState {
    Sampled,
    PseudoAnnotated,
    InCorrection,
    GoldFinalized,
    Finetuned,
    Failed,
}

impl BatchState {
    pub fn is_in_progress(self) -> bool {
        matches!(
            self,
            BatchState::Sampled | BatchState::PseudoAnnotated | BatchState::InCorrection
        )
    }

    pub fn is_editable(self) -> bool {
        matches!(self, BatchState::PseudoAnnotated | BatchState::InCorrection)
    }

    /// Whether `self -> next` is a legal single step.
    pub fn can_advance_to(self, next: BatchState) -> bool {
        use BatchState::*;
        match (self, next) {
            (Failed, _) => false,
            (_, Failed) => true,
            (Sampled, PseudoAnnotated)
            | (PseudoAnnotated, InCorrection)
            | (InCorrection, GoldFinalized)
            | (GoldFinalized, Finetuned) => true,
            _ => false,
        }
    }
}

impl fmt::Display for BatchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BatchState::Sampled => "SAMPLED",
            BatchState::PseudoAnnotated => "PSEUDO_ANNOTATED",
            BatchState::InCorrection => "IN_CORRECTION",
            BatchState::GoldFinalized => "GOLD_FINALIZED",
            BatchState::Finetuned => "FINETUNED",
            BatchState::Failed => "FAILED",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub state: BatchState,
    pub at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    /// 1-based.
    pub index: usize,
    pub sentence_ids: Vec<String>,
    pub state: BatchState,
    pub history: Vec<StateChange>,
    pub pseudo_file: String,
    pub draft_file: String,
    pub gold_file: String,
    pub audit_file: String,
    pub report: Option<BatchReport>,
    pub model_used: String,
    pub model_produced: Option<String>,
    pub failure: Option<String>,
}

impl BatchRecord {
    /// Moves to `next`, recording the step. Panics on an illegal step;
    /// callers check state before mutating anything.
    pub(crate) fn advance(&mut self, next: BatchState, at: DateTime<Utc>) {
        assert!(
            self.state.can_advance_to(next),
            "illegal batch transition {} -> {}",
            self.state,
            next
        );
        self.state = next;
        self.history.push(StateChange { state: next, at });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch: usize,
    pub size: usize,
    pub avg_word_count: f64,
    /// Pseudo-annotation scored against gold.
    pub attachment: AttachmentScore,
    pub confusion: ConfusionMatrix,
    /// Words whose HEAD or DEPREL differ between pseudo and gold.
    pub edit_count: usize,
    /// Words whose UPOS was corrected; not part of the scores.
    pub upos_edit_count: usize,
    pub model_used: String,
}

/// One point of the per-batch trend series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub batch: usize,
    pub size: usize,
    pub avg_word_count: f64,
    pub uas: f64,
    pub las: f64,
    pub edit_count: usize,
    pub model_used: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_only_move_forward() {
        use BatchState::*;
        let order = [
            Sampled,
            PseudoAnnotated,
            InCorrection,
            GoldFinalized,
            Finetuned,
        ];
        for (i, a) in order.iter().enumerate() {
            for (j, b) in order.iter().enumerate() {
                assert_eq!(a.can_advance_to(*b), j == i + 1, "{a} -> {b}");
            }
            assert!(a.can_advance_to(Failed));
            assert!(!Failed.can_advance_to(*a));
        }
    }

    #[test]
    fn states_serialize_in_upper_case() {
        let s = serde_json::to_string(&BatchState::GoldFinalized).unwrap();
        assert_eq!(s, "\"GOLD_FINALIZED\"");
        assert_eq!(BatchState::GoldFinalized.to_string(), "GOLD_FINALIZED");
    }
}
