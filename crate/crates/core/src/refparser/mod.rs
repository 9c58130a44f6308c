//! Built-in trainable dependency parser.
//!
//! First-order edge-factored scoring with an averaged structured perceptron
//! and maximum spanning arborescence decoding. Training can warm-start from
//! an existing model, which is how the annotation loop fine-tunes on newly
//! corrected batches.

mod decode;
mod features;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{Sentence, Treebank};

pub use decode::{decode, decode_with, DecodedTree, EdgeScoreTable};
pub use features::{HASH_BITS, TEMPLATE_VERSION, WEIGHT_SPACE};

use features::{label_key, slot, unlabelled_slot, vocabulary, SentenceAtoms};

/// File name of a serialized model inside a model directory.
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("model is untrained")]
    Untrained,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("epochs must be at least 1")]
    NoEpochs,
    #[error("training sentence {sent_id:?} is not a valid tree: {violations}")]
    InvalidTrainingSentence { sent_id: String, violations: String },
    #[error("model template version {found:?} does not match {expected:?}")]
    TemplateMismatch { found: String, expected: String },
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file {path}: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Sparse weight vector, sorted by slot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseWeights(pub Vec<(u32, f64)>);

impl SparseWeights {
    fn from_dense(dense: &[f64]) -> Self {
        SparseWeights(
            dense
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        )
    }

    fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; WEIGHT_SPACE];
        for &(i, w) in &self.0 {
            dense[i as usize] = w;
        }
        dense
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParserModel {
    pub template_version: String,
    pub label_set: Vec<String>,
    /// Lowercased training forms; other words back off to UPOS features.
    pub vocab: BTreeSet<String>,
    pub updates_seen: u64,
    pub weights: SparseWeights,
    pub averaged_weights: SparseWeights,
    #[serde(skip)]
    dense: OnceLock<Vec<f64>>,
}

impl PartialEq for ParserModel {
    fn eq(&self, other: &Self) -> bool {
        self.template_version == other.template_version
            && self.label_set == other.label_set
            && self.vocab == other.vocab
            && self.updates_seen == other.updates_seen
            && self.weights == other.weights
            && self.averaged_weights == other.averaged_weights
    }
}

impl ParserModel {
    /// Builds a model directly from averaged weights, e.g. for tests and
    /// tooling. Raw weights are set equal to the averaged ones.
    pub fn from_weights(
        label_set: Vec<String>,
        vocab: BTreeSet<String>,
        averaged: SparseWeights,
    ) -> Self {
        let mut label_set = label_set;
        label_set.sort();
        label_set.dedup();
        ParserModel {
            template_version: TEMPLATE_VERSION.to_string(),
            label_set,
            vocab,
            updates_seen: 0,
            weights: averaged.clone(),
            averaged_weights: averaged,
            dense: OnceLock::new(),
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.label_set.is_empty()
    }

    fn dense_averaged(&self) -> &[f64] {
        self.dense.get_or_init(|| self.averaged_weights.to_dense())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Writes `dir/model.json`, creating `dir` if needed.
    pub fn save(&self, dir: &Path) -> Result<(), ParserError> {
        let path = dir.join(MODEL_FILE);
        let io = |source| ParserError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(&path, self.to_json()).map_err(io)
    }

    /// Reads `dir/model.json`; refuses models built with other templates.
    pub fn load(dir: &Path) -> Result<Self, ParserError> {
        let path = dir.join(MODEL_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| ParserError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let model = Self::from_json(&text).map_err(|source| ParserError::Format {
            path: path.display().to_string(),
            source,
        })?;
        if model.template_version != TEMPLATE_VERSION {
            return Err(ParserError::TemplateMismatch {
                found: model.template_version,
                expected: TEMPLATE_VERSION.to_string(),
            });
        }
        Ok(model)
    }
}

/// Fills a score table: `score(h, d, l) = w · features(h, d, l)`.
fn fill_table(
    weights: &[f64],
    atoms: &SentenceAtoms,
    labels: &[String],
    keys: &[u64],
) -> EdgeScoreTable {
    let n = atoms.len();
    let mut table = EdgeScoreTable::new(n, labels.to_vec());
    let mut feats = Vec::with_capacity(32);
    for h in 0..=n {
        for d in 1..=n {
            if h == d {
                continue;
            }
            atoms.edge_features(h, d, &mut feats);
            let base: f64 = feats.iter().map(|&f| weights[unlabelled_slot(f)]).sum();
            for (l, &key) in keys.iter().enumerate() {
                let s: f64 = feats.iter().map(|&f| weights[slot(f, key)]).sum();
                table.set(h, d, l, base + s);
            }
        }
    }
    table
}

/// Edge scores of `s` under the model's averaged weights.
pub fn score_edges(model: &ParserModel, s: &Sentence) -> Result<EdgeScoreTable, ParserError> {
    if !model.is_trained() {
        return Err(ParserError::Untrained);
    }
    let atoms = SentenceAtoms::new(s, &model.vocab);
    let keys: Vec<u64> = model.label_set.iter().map(|l| label_key(l)).collect();
    Ok(fill_table(
        model.dense_averaged(),
        &atoms,
        &model.label_set,
        &keys,
    ))
}

/// Copy of `tb` with HEAD and DEPREL replaced by the model's trees. Every
/// other column and all comments are left as they are.
pub fn predict(model: &ParserModel, tb: &Treebank) -> Result<Treebank, ParserError> {
    let mut out = tb.clone();
    for s in &mut out.sentences {
        predict_sentence(model, s)?;
    }
    Ok(out)
}

pub fn predict_sentence(model: &ParserModel, s: &mut Sentence) -> Result<(), ParserError> {
    let table = score_edges(model, s)?;
    let tree = decode(&table);
    for ((tok, &head), deprel) in s
        .tokens
        .iter_mut()
        .zip(&tree.heads)
        .zip(tree.deprels(&table))
    {
        tok.head = Some(head);
        tok.deprel = Some(deprel.to_string());
    }
    Ok(())
}

/// Training state for the averaged perceptron. The running average is kept
/// lazily: `average = weights - totals / seen`.
struct Perceptron {
    weights: Vec<f64>,
    totals: Vec<f64>,
    seen: u64,
}

impl Perceptron {
    fn start(base: Option<&ParserModel>) -> Self {
        match base {
            None => Perceptron {
                weights: vec![0.0; WEIGHT_SPACE],
                totals: vec![0.0; WEIGHT_SPACE],
                seen: 0,
            },
            Some(m) => {
                let weights = m.weights.to_dense();
                let seen = m.updates_seen;
                let mut totals = vec![0.0; WEIGHT_SPACE];
                // chosen so that weights - totals / seen == base average
                for (i, t) in totals.iter_mut().enumerate() {
                    *t = seen as f64 * weights[i];
                }
                for &(i, a) in &m.averaged_weights.0 {
                    totals[i as usize] -= seen as f64 * a;
                }
                Perceptron {
                    weights,
                    totals,
                    seen,
                }
            }
        }
    }

    #[inline]
    fn bump(&mut self, slot: usize, delta: f64) {
        self.weights[slot] += delta;
        self.totals[slot] += self.seen as f64 * delta;
    }

    fn averaged(&self) -> Vec<f64> {
        if self.seen == 0 {
            return self.weights.clone();
        }
        let c = self.seen as f64;
        self.weights
            .iter()
            .zip(&self.totals)
            .map(|(w, t)| w - t / c)
            .collect()
    }
}

/// Trains a model with the averaged structured perceptron.
///
/// Each epoch visits the corpus in an order shuffled by `seed`; every
/// sentence is decoded with the current weights and, where the predicted
/// tree differs from the gold one, gold edge features are added and
/// predicted ones subtracted. With `base`, training continues from its
/// weights, running average and label set. Results are deterministic for
/// fixed inputs.
pub fn train(
    corpus: &Treebank,
    epochs: usize,
    seed: u64,
    base: Option<&ParserModel>,
) -> Result<ParserModel, ParserError> {
    if epochs == 0 {
        return Err(ParserError::NoEpochs);
    }
    let sentences: Vec<&Sentence> = corpus.sentences.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(ParserError::EmptyCorpus);
    }
    for s in &sentences {
        let violations = crate::conllu::validate(s);
        if !violations.is_empty() {
            return Err(ParserError::InvalidTrainingSentence {
                sent_id: s.sent_id.clone(),
                violations: violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
    }
    if let Some(b) = base {
        if b.template_version != TEMPLATE_VERSION {
            return Err(ParserError::TemplateMismatch {
                found: b.template_version.clone(),
                expected: TEMPLATE_VERSION.to_string(),
            });
        }
    }

    let mut labels: BTreeSet<String> = base
        .map(|b| b.label_set.iter().cloned().collect())
        .unwrap_or_default();
    let mut vocab = base.map(|b| b.vocab.clone()).unwrap_or_default();
    for s in &sentences {
        labels.extend(s.tokens.iter().filter_map(|t| t.deprel.clone()));
    }
    vocab.extend(vocabulary(sentences.iter().copied()));
    let labels: Vec<String> = labels.into_iter().collect();
    let keys: Vec<u64> = labels.iter().map(|l| label_key(l)).collect();

    struct Example {
        atoms: SentenceAtoms,
        heads: Vec<usize>,
        labels: Vec<usize>,
    }
    let examples: Vec<Example> = sentences
        .iter()
        .map(|s| Example {
            atoms: SentenceAtoms::new(s, &vocab),
            heads: s
                .tokens
                .iter()
                .map(|t| t.head.expect("validated"))
                .collect(),
            labels: s
                .tokens
                .iter()
                .map(|t| {
                    let d = t.deprel.as_deref().expect("validated");
                    labels
                        .binary_search_by(|l| l.as_str().cmp(d))
                        .expect("collected")
                })
                .collect(),
        })
        .collect();

    let mut p = Perceptron::start(base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut feats = Vec::with_capacity(32);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut errors = 0usize;
        for &i in &order {
            let ex = &examples[i];
            let table = fill_table(&p.weights, &ex.atoms, &labels, &keys);
            let tree = decode(&table);
            for d in 1..=ex.heads.len() {
                let (gh, gl) = (ex.heads[d - 1], ex.labels[d - 1]);
                let (ph, pl) = (tree.heads[d - 1], tree.labels[d - 1]);
                if (gh, gl) == (ph, pl) {
                    continue;
                }
                errors += 1;
                for (head, label, delta) in [(gh, gl, 1.0), (ph, pl, -1.0)] {
                    ex.atoms.edge_features(head, d, &mut feats);
                    for &f in &feats {
                        p.bump(unlabelled_slot(f), delta);
                        p.bump(slot(f, keys[label]), delta);
                    }
                }
            }
            p.seen += 1;
        }
        tracing::debug!(epoch, errors, "perceptron epoch");
    }

    let averaged = p.averaged();
    Ok(ParserModel {
        template_version: TEMPLATE_VERSION.to_string(),
        label_set: labels,
        vocab,
        updates_seen: p.seen,
        weights: SparseWeights::from_dense(&p.weights),
        averaged_weights: SparseWeights::from_dense(&averaged),
        dense: OnceLock::new(),
    })
}
