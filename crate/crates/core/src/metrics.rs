//! Attachment scores, Cohen's kappa over dependency labels and label
//! confusion matrices between two annotations of the same sentences.
//!
//! Sentences are paired by position. Inside a pair, words are matched with
//! [`conllu::align`], so all scores are precision/recall/F1 over aligned
//! words; with identical tokenization they reduce to plain accuracy.
//! Multiword-token lines and empty nodes are never scored.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{self, Sentence, Token, Treebank};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("sentence count mismatch: {system} system vs {gold} gold")]
    SentenceCount { system: usize, gold: usize },
    #[error("nothing to score: treebanks are empty")]
    Empty,
}

/// Comparison switches, recorded in every report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Drop words whose gold UPOS is PUNCT from every count.
    #[serde(default)]
    pub ignore_punct: bool,
    /// Compare `nmod:poss` as `nmod`.
    #[serde(default)]
    pub strip_subtypes: bool,
}

impl EvalOptions {
    /// Label used for comparisons: lowercased, optionally without subtype.
    /// A missing label becomes `_`.
    pub fn label(&self, deprel: Option<&str>) -> String {
        let d = deprel.unwrap_or("_");
        let d = if self.strip_subtypes {
            d.split(':').next().unwrap_or(d)
        } else {
            d
        };
        d.to_lowercase()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttachmentScore {
    pub matched: usize,
    pub head_correct: usize,
    pub head_and_label_correct: usize,
    pub system_total: usize,
    pub gold_total: usize,
    pub uas_p: f64,
    pub uas_r: f64,
    pub uas_f1: f64,
    pub las_p: f64,
    pub las_r: f64,
    pub las_f1: f64,
    pub options: EvalOptions,
}

impl AttachmentScore {
    fn from_counts(
        matched: usize,
        head_correct: usize,
        head_and_label_correct: usize,
        system_total: usize,
        gold_total: usize,
        options: EvalOptions,
    ) -> Self {
        let (uas_p, uas_r, uas_f1) = prf(head_correct, system_total, gold_total);
        let (las_p, las_r, las_f1) = prf(head_and_label_correct, system_total, gold_total);
        AttachmentScore {
            matched,
            head_correct,
            head_and_label_correct,
            system_total,
            gold_total,
            uas_p,
            uas_r,
            uas_f1,
            las_p,
            las_r,
            las_f1,
            options,
        }
    }
}

impl fmt::Display for AttachmentScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Metric     | Precision |    Recall |  F1 Score")?;
        writeln!(f, "-----------+-----------+-----------+-----------")?;
        writeln!(
            f,
            "UAS        | {:9.2} | {:9.2} | {:9.2}",
            100.0 * self.uas_p,
            100.0 * self.uas_r,
            100.0 * self.uas_f1
        )?;
        writeln!(
            f,
            "LAS        | {:9.2} | {:9.2} | {:9.2}",
            100.0 * self.las_p,
            100.0 * self.las_r,
            100.0 * self.las_f1
        )?;
        write!(
            f,
            "words: {} system, {} gold, {} aligned; ignore_punct={} strip_subtypes={}",
            self.system_total,
            self.gold_total,
            self.matched,
            self.options.ignore_punct,
            self.options.strip_subtypes
        )
    }
}

/// Precision, recall and F1 for `correct` out of `system` and `gold` totals.
fn prf(correct: usize, system: usize, gold: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (
        ratio(correct, system),
        ratio(correct, gold),
        ratio(2 * correct, system + gold),
    )
}

/// Cohen's kappa over the labels of aligned words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    /// `None` when both annotators used one and the same label throughout
    /// (expected agreement 1, kappa undefined).
    pub kappa: Option<f64>,
    pub item_count: usize,
    pub options: EvalOptions,
}

impl KappaResult {
    pub fn is_degenerate(&self) -> bool {
        self.kappa.is_none()
    }
}

impl fmt::Display for KappaResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kappa {
            Some(k) => write!(f, "kappa = {k:.4}")?,
            None => write!(f, "kappa undefined (degenerate: expected agreement is 1)")?,
        }
        write!(
            f,
            " (p_o = {:.4}, p_e = {:.4}, items = {}, ignore_punct={} strip_subtypes={})",
            self.observed_agreement,
            self.expected_agreement,
            self.item_count,
            self.options.ignore_punct,
            self.options.strip_subtypes
        )
    }
}

pub const OTHER_LABEL: &str = "OTHER";

/// `counts[g][p]`: aligned words with gold label `labels[g]` and system
/// label `labels[p]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, gold: &str, system: &str) -> u64 {
        let g = self.labels.iter().position(|l| l == gold);
        let p = self.labels.iter().position(|l| l == system);
        match (g, p) {
            (Some(g), Some(p)) => self.counts[g][p],
            _ => 0,
        }
    }

    pub fn transpose(&self) -> ConfusionMatrix {
        let n = self.labels.len();
        ConfusionMatrix {
            labels: self.labels.clone(),
            counts: (0..n)
                .map(|i| (0..n).map(|j| self.counts[j][i]).collect())
                .collect(),
        }
    }

    /// CSV with system labels across the header row and gold labels down
    /// the first column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("gold\\system").chain(self.labels.iter().map(String::as_str));
        w.write_record(header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 labels")
    }
}

/// One scoreable aligned word pair.
struct ScoredPair<'a> {
    system: &'a Token,
    gold: &'a Token,
    head_correct: bool,
}

/// Walks paired sentences, yielding scoreable aligned pairs and totals.
struct Paired<'a> {
    pairs: Vec<ScoredPair<'a>>,
    system_total: usize,
    gold_total: usize,
}

fn pair_up<'a>(
    system: &'a Treebank,
    gold: &'a Treebank,
    opts: &EvalOptions,
) -> Result<Paired<'a>, MetricsError> {
    if system.len() != gold.len() {
        return Err(MetricsError::SentenceCount {
            system: system.len(),
            gold: gold.len(),
        });
    }
    if system.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut out = Paired {
        pairs: Vec::new(),
        system_total: 0,
        gold_total: 0,
    };
    for (i, (s, g)) in system.sentences.iter().zip(&gold.sentences).enumerate() {
        if s.sent_id != g.sent_id {
            tracing::warn!(
                index = i,
                system = %s.sent_id,
                gold = %g.sent_id,
                "sent_id mismatch between paired sentences"
            );
        }
        pair_sentence(s, g, opts, &mut out);
    }
    Ok(out)
}

fn pair_sentence<'a>(s: &'a Sentence, g: &'a Sentence, opts: &EvalOptions, out: &mut Paired<'a>) {
    let alignment = conllu::align(s, g);
    let to_gold = alignment.system_to_gold(s.len());
    let mut system_aligned = vec![false; s.len() + 1];
    for &(si, _) in &alignment.pairs {
        system_aligned[si] = true;
    }

    for gt in &g.tokens {
        if !(opts.ignore_punct && gt.is_punct()) {
            out.gold_total += 1;
        }
    }
    for st in &s.tokens {
        if !system_aligned[st.id] && !(opts.ignore_punct && st.is_punct()) {
            out.system_total += 1;
        }
    }
    for &(si, gi) in &alignment.pairs {
        let (st, gt) = (&s.tokens[si - 1], &g.tokens[gi - 1]);
        if opts.ignore_punct && gt.is_punct() {
            continue;
        }
        out.system_total += 1;
        let head_correct = match (st.head, gt.head) {
            (Some(sh), Some(gh)) => sh <= s.len() && to_gold[sh] == Some(gh),
            _ => false,
        };
        out.pairs.push(ScoredPair {
            system: st,
            gold: gt,
            head_correct,
        });
    }
}

pub fn attachment_scores(
    system: &Treebank,
    gold: &Treebank,
    opts: &EvalOptions,
) -> Result<AttachmentScore, MetricsError> {
    let paired = pair_up(system, gold, opts)?;
    let mut head_correct = 0;
    let mut both_correct = 0;
    for p in &paired.pairs {
        if p.head_correct {
            head_correct += 1;
            if opts.label(p.system.deprel.as_deref()) == opts.label(p.gold.deprel.as_deref()) {
                both_correct += 1;
            }
        }
    }
    Ok(AttachmentScore::from_counts(
        paired.pairs.len(),
        head_correct,
        both_correct,
        paired.system_total,
        paired.gold_total,
        *opts,
    ))
}

/// Kappa between the labels of `a` and `b` over aligned words.
///
/// Returns [`MetricsError::Empty`] when no aligned pair remains.
pub fn cohen_kappa(
    a: &Treebank,
    b: &Treebank,
    opts: &EvalOptions,
) -> Result<KappaResult, MetricsError> {
    let paired = pair_up(a, b, opts)?;
    let n = paired.pairs.len() as u128;
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let mut agree: u128 = 0;
    let mut marg: BTreeMap<String, (u128, u128)> = BTreeMap::new();
    for p in &paired.pairs {
        let la = opts.label(p.system.deprel.as_deref());
        let lb = opts.label(p.gold.deprel.as_deref());
        if la == lb {
            agree += 1;
        }
        marg.entry(la).or_default().0 += 1;
        marg.entry(lb).or_default().1 += 1;
    }
    let chance: u128 = marg.values().map(|(ca, cb)| ca * cb).sum();
    let nn = n * n;
    // kappa = (n*agree - chance) / (n^2 - chance), in exact integers
    let kappa = if chance == nn {
        None
    } else {
        let num = (n * agree) as i128 - chance as i128;
        Some(num as f64 / (nn - chance) as f64)
    };
    Ok(KappaResult {
        observed_agreement: agree as f64 / n as f64,
        expected_agreement: chance as f64 / nn as f64,
        kappa,
        item_count: n as usize,
        options: *opts,
    })
}

/// Gold-by-system label counts over every aligned pair, regardless of head
/// correctness. With `top_k`, labels outside the `k` most frequent gold
/// labels are merged into [`OTHER_LABEL`].
pub fn confusion_matrix(
    system: &Treebank,
    gold: &Treebank,
    opts: &EvalOptions,
    top_k: Option<usize>,
) -> Result<ConfusionMatrix, MetricsError> {
    let paired = pair_up(system, gold, opts)?;
    let items: Vec<(String, String)> = paired
        .pairs
        .iter()
        .map(|p| {
            (
                opts.label(p.gold.deprel.as_deref()),
                opts.label(p.system.deprel.as_deref()),
            )
        })
        .collect();

    let mut labels: Vec<String> = items
        .iter()
        .flat_map(|(g, s)| [g.clone(), s.clone()])
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let bucket: Box<dyn Fn(&str) -> String> = match top_k {
        Some(k) => {
            let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
            for (g, _) in &items {
                *freq.entry(g.as_str()).or_default() += 1;
            }
            let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            let mut keep: Vec<String> = ranked.iter().take(k).map(|(l, _)| l.to_string()).collect();
            keep.sort();
            let kept: std::collections::BTreeSet<String> = keep.iter().cloned().collect();
            let needs_other = labels.iter().any(|l| !kept.contains(l));
            labels = keep;
            if needs_other {
                labels.push(OTHER_LABEL.to_string());
            }
            Box::new(move |l: &str| {
                if kept.contains(l) {
                    l.to_string()
                } else {
                    OTHER_LABEL.to_string()
                }
            })
        }
        None => Box::new(|l: &str| l.to_string()),
    };

    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for (g, s) in &items {
        let gi = index[bucket(g).as_str()];
        let si = index[bucket(s).as_str()];
        counts[gi][si] += 1;
    }
    Ok(ConfusionMatrix { labels, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::Token;

    fn tb(heads: &[usize], labels: &[&str]) -> Treebank {
        let tokens = heads
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&h, &l))| {
                let mut t = Token::new(i + 1, format!("w{i}"));
                t.head = Some(h);
                t.deprel = Some(l.to_string());
                t
            })
            .collect();
        Treebank::new(vec![Sentence {
            sent_id: "s".into(),
            tokens,
            ..Default::default()
        }])
    }

    #[test]
    fn three_token_hand_example() {
        let gold = tb(&[2, 0, 2], &["nsubj", "root", "obj"]);
        let sys = tb(&[2, 0, 1], &["obj", "root", "obj"]);
        let s = attachment_scores(&sys, &gold, &EvalOptions::default()).unwrap();
        assert_eq!(
            (s.head_correct, s.head_and_label_correct, s.matched),
            (2, 1, 3)
        );
        assert_eq!(s.uas_f1, 2.0 / 3.0);
        assert_eq!(s.las_f1, 1.0 / 3.0);
        assert_eq!(s.uas_p, s.uas_r);

        let cm = confusion_matrix(&sys, &gold, &EvalOptions::default(), None).unwrap();
        assert_eq!(cm.get("nsubj", "obj"), 1);
        assert_eq!(cm.get("root", "root"), 1);
        assert_eq!(cm.get("obj", "obj"), 1);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn kappa_five_token_example() {
        let a = tb(&[2, 0, 2, 0, 2], &["nsubj", "obj", "obj", "root", "punct"]);
        let b = tb(&[2, 0, 2, 0, 2], &["nsubj", "obl", "obj", "root", "punct"]);
        let k = cohen_kappa(&a, &b, &EvalOptions::default()).unwrap();
        assert_eq!(k.observed_agreement, 0.8);
        assert_eq!(k.expected_agreement, 0.2);
        assert_eq!(k.kappa, Some(0.75));
        assert_eq!(k.item_count, 5);
    }

    #[test]
    fn degenerate_kappa() {
        let a = tb(&[0, 1], &["dep", "dep"]);
        let k = cohen_kappa(&a, &a, &EvalOptions::default()).unwrap();
        assert!(k.is_degenerate());
        assert_eq!(k.observed_agreement, 1.0);
    }

    #[test]
    fn errors() {
        let a = tb(&[0], &["root"]);
        let empty = Treebank::default();
        assert_eq!(
            attachment_scores(&a, &empty, &EvalOptions::default()).unwrap_err(),
            MetricsError::SentenceCount { system: 1, gold: 0 }
        );
        assert_eq!(
            attachment_scores(&empty, &empty, &EvalOptions::default()).unwrap_err(),
            MetricsError::Empty
        );
    }

    #[test]
    fn subtypes_and_case() {
        let a = tb(&[2, 0], &["nmod:poss", "root"]);
        let b = tb(&[2, 0], &["NMOD", "root"]);
        let strict = attachment_scores(&a, &b, &EvalOptions::default()).unwrap();
        assert_eq!(strict.head_and_label_correct, 1);
        let coarse = EvalOptions {
            strip_subtypes: true,
            ..Default::default()
        };
        assert_eq!(
            attachment_scores(&a, &b, &coarse)
                .unwrap()
                .head_and_label_correct,
            2
        );
    }

    #[test]
    fn punctuation_can_be_ignored() {
        let mut gold = tb(&[0, 1], &["root", "punct"]);
        gold.sentences[0].tokens[1].upos = "PUNCT".into();
        let sys = tb(&[0, 1], &["root", "obj"]);
        let with = attachment_scores(&sys, &gold, &EvalOptions::default()).unwrap();
        assert_eq!(with.las_f1, 0.5);
        let opts = EvalOptions {
            ignore_punct: true,
            ..Default::default()
        };
        let without = attachment_scores(&sys, &gold, &opts).unwrap();
        assert_eq!((without.system_total, without.gold_total), (1, 1));
        assert_eq!(without.las_f1, 1.0);
    }

    #[test]
    fn top_k_merges_rare_labels() {
        let gold = tb(&[0, 1, 1, 1], &["root", "obj", "obj", "nsubj"]);
        let sys = tb(&[0, 1, 1, 1], &["root", "obj", "amod", "nsubj"]);
        let cm = confusion_matrix(&sys, &gold, &EvalOptions::default(), Some(1)).unwrap();
        assert_eq!(cm.labels, vec!["obj", OTHER_LABEL]);
        assert_eq!(cm.get("obj", "obj"), 1);
        assert_eq!(cm.get("obj", OTHER_LABEL), 1);
        assert_eq!(cm.get(OTHER_LABEL, OTHER_LABEL), 2);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn csv_layout() {
        let gold = tb(&[2, 0], &["nsubj", "root"]);
        let sys = tb(&[2, 0], &["obj", "root"]);
        let cm = confusion_matrix(&sys, &gold, &EvalOptions::default(), None).unwrap();
        assert_eq!(
            cm.to_csv(),
            "gold\\system,nsubj,obj,root\nnsubj,0,1,0\nobj,0,0,0\nroot,0,0,1\n"
        );
    }
}
