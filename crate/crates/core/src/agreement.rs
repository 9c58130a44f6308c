//! Double annotation: kappa and attachment agreement between two
//! annotators, and the list of disagreements to adjudicate.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{self, ParseError, Treebank};
use crate::metrics::{self, AttachmentScore, EvalOptions, KappaResult, MetricsError};

/// File listing the sentence ids of a study, one per line.
pub const STUDY_IDS_FILE: &str = "sentences.txt";
pub const ADJUDICATED_FILE: &str = "adjudicated.conllu";

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("a study needs exactly two annotators, found {0}")]
    AnnotatorCount(usize),
    #[error("annotator {annotator} is missing sentences: {}", .missing.join(", "))]
    Incomplete {
        annotator: String,
        missing: Vec<String>,
    },
    #[error("annotator {annotator} has sentences outside the study: {}", .extra.join(", "))]
    Extra {
        annotator: String,
        extra: Vec<String>,
    },
    #[error("sentence {0} has different words for the two annotators")]
    FormMismatch(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementStudy {
    pub sentence_ids: Vec<String>,
    /// Annotator id to that annotator's treebank.
    pub annotations: BTreeMap<String, Treebank>,
    /// Result of adjudication, stored as is.
    pub adjudicated: Option<Treebank>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Scored as "system".
    pub annotator_a: String,
    /// Scored as "gold".
    pub annotator_b: String,
    pub sentences: usize,
    pub kappa: KappaResult,
    pub attachment: AttachmentScore,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub sentence_id: String,
    pub token_id: usize,
    pub form: String,
    pub a_head: Option<usize>,
    pub a_deprel: Option<String>,
    pub b_head: Option<usize>,
    pub b_deprel: Option<String>,
}

/// Draws `n` sentence ids from `pool` for double annotation, in pool order.
pub fn sample_overlap(pool: &Treebank, n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n.min(pool.len());
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| pool.sentences[i].sent_id.clone())
        .collect()
}

impl AgreementStudy {
    pub fn new(a: (&str, Treebank), b: (&str, Treebank)) -> Self {
        let sentence_ids = a.1.sentences.iter().map(|s| s.sent_id.clone()).collect();
        let mut annotations = BTreeMap::new();
        annotations.insert(a.0.to_string(), a.1);
        annotations.insert(b.0.to_string(), b.1);
        AgreementStudy {
            sentence_ids,
            annotations,
            adjudicated: None,
        }
    }

    /// Reads a study directory: every `*.conllu` file except
    /// `adjudicated.conllu` is one annotator named after the file. The
    /// sentence ids come from `sentences.txt` when present, otherwise from
    /// the first annotator.
    pub fn load(dir: &Path) -> Result<Self, AgreementError> {
        let io = |source| AgreementError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut study = AgreementStudy::default();
        let mut names: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "conllu"))
            .collect();
        names.sort();
        for path in names {
            let tb = conllu::read_file(&path)?;
            if path.file_name().is_some_and(|n| n == ADJUDICATED_FILE) {
                study.adjudicated = Some(tb);
            } else {
                let id = path
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                study.annotations.insert(id, tb);
            }
        }
        let ids_path = dir.join(STUDY_IDS_FILE);
        study.sentence_ids = match std::fs::read_to_string(&ids_path) {
            Ok(text) => text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => study
                .annotations
                .values()
                .next()
                .map(|tb| tb.sentences.iter().map(|s| s.sent_id.clone()).collect())
                .unwrap_or_default(),
            Err(e) => return Err(io(e)),
        };
        Ok(study)
    }

    /// The two annotations in study order, checked for completeness and
    /// identical words.
    fn paired(&self) -> Result<(&str, Treebank, &str, Treebank), AgreementError> {
        if self.annotations.len() != 2 {
            return Err(AgreementError::AnnotatorCount(self.annotations.len()));
        }
        let mut ordered = Vec::with_capacity(2);
        for (name, tb) in &self.annotations {
            let mut missing = Vec::new();
            let mut sentences = Vec::with_capacity(self.sentence_ids.len());
            for id in &self.sentence_ids {
                match tb.find(id) {
                    Some(s) => sentences.push(s.clone()),
                    None => missing.push(id.clone()),
                }
            }
            if !missing.is_empty() {
                return Err(AgreementError::Incomplete {
                    annotator: name.clone(),
                    missing,
                });
            }
            let wanted: HashSet<&str> = self.sentence_ids.iter().map(String::as_str).collect();
            let extra: Vec<String> = tb
                .sentences
                .iter()
                .filter(|s| !wanted.contains(s.sent_id.as_str()))
                .map(|s| s.sent_id.clone())
                .collect();
            if !extra.is_empty() {
                return Err(AgreementError::Extra {
                    annotator: name.clone(),
                    extra,
                });
            }
            ordered.push((name.as_str(), Treebank::new(sentences)));
        }
        let (b_name, b) = ordered.pop().expect("two");
        let (a_name, a) = ordered.pop().expect("two");
        for (sa, sb) in a.sentences.iter().zip(&b.sentences) {
            if !sa.forms().eq(sb.forms()) {
                return Err(AgreementError::FormMismatch(sa.sent_id.clone()));
            }
        }
        Ok((a_name, a, b_name, b))
    }
}

/// Kappa over deprels and attachment scores with the alphabetically first
/// annotator as system and the second as gold.
pub fn agreement_report(
    study: &AgreementStudy,
    opts: &EvalOptions,
) -> Result<AgreementReport, AgreementError> {
    let (a_name, a, b_name, b) = study.paired()?;
    Ok(AgreementReport {
        annotator_a: a_name.to_string(),
        annotator_b: b_name.to_string(),
        sentences: a.len(),
        kappa: metrics::cohen_kappa(&a, &b, opts)?,
        attachment: metrics::attachment_scores(&a, &b, opts)?,
    })
}

/// One row per word whose head or (normalized) label differs, in study
/// sentence order and then by token id. Words excluded from scoring by
/// `opts` are skipped.
pub fn list_disagreements(
    study: &AgreementStudy,
    opts: &EvalOptions,
) -> Result<Vec<Disagreement>, AgreementError> {
    let (_, a, _, b) = study.paired()?;
    let mut rows = Vec::new();
    for (sa, sb) in a.sentences.iter().zip(&b.sentences) {
        for (ta, tb) in sa.tokens.iter().zip(&sb.tokens) {
            if opts.ignore_punct && tb.is_punct() {
                continue;
            }
            let label_differs =
                opts.label(ta.deprel.as_deref()) != opts.label(tb.deprel.as_deref());
            if ta.head != tb.head || label_differs {
                rows.push(Disagreement {
                    sentence_id: sa.sent_id.clone(),
                    token_id: ta.id,
                    form: ta.form.clone(),
                    a_head: ta.head,
                    a_deprel: ta.deprel.clone(),
                    b_head: tb.head,
                    b_deprel: tb.deprel.clone(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn disagreements_csv(rows: &[Disagreement]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sentence_id",
        "token_id",
        "form",
        "a_head",
        "a_deprel",
        "b_head",
        "b_deprel",
    ])
    .expect("in-memory write");
    let opt = |h: Option<usize>| h.map_or("_".to_string(), |h| h.to_string());
    for r in rows {
        w.write_record([
            r.sentence_id.clone(),
            r.token_id.to_string(),
            r.form.clone(),
            opt(r.a_head),
            r.a_deprel.clone().unwrap_or_else(|| "_".into()),
            opt(r.b_head),
            r.b_deprel.clone().unwrap_or_else(|| "_".into()),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
