//! Random inputs and brute-force reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use iterbank::conllu::{Sentence, Token, Treebank};
use iterbank::metrics::EvalOptions;
use iterbank::refparser::EdgeScoreTable;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const LABELS: [&str; 7] = ["nsubj", "obj", "obl", "nmod", "nmod:poss", "amod", "punct"];
pub const UPOS: [&str; 5] = ["NOUN", "VERB", "ADJ", "PUNCT", "PROPN"];
const SYLLABLES: [&str; 8] = ["ka", "lem", "a", "ev", "de", "ş", "ın", "ğa"];

/// A random single-root tree: `heads[i]` is the head of word `i + 1`.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![0; n];
    for (k, &w) in order.iter().enumerate() {
        heads[w - 1] = if k == 0 {
            0
        } else {
            order[rng.random_range(0..k)]
        };
    }
    heads
}

pub fn random_form(rng: &mut impl Rng) -> String {
    let parts = rng.random_range(1..=3);
    (0..parts)
        .map(|_| *SYLLABLES.choose(rng).unwrap())
        .collect()
}

/// A valid annotated sentence of `n` words.
pub fn random_sentence(rng: &mut impl Rng, sent_id: &str, n: usize) -> Sentence {
    let heads = random_tree(rng, n);
    let mut tokens = Vec::with_capacity(n);
    for (i, &h) in heads.iter().enumerate() {
        let mut t = Token::new(i + 1, random_form(rng));
        t.lemma = t.form.clone();
        t.upos = UPOS.choose(rng).unwrap().to_string();
        t.head = Some(h);
        t.deprel = Some(if h == 0 {
            "root".to_string()
        } else {
            LABELS.choose(rng).unwrap().to_string()
        });
        tokens.push(t);
    }
    let text = tokens
        .iter()
        .map(|t| t.form.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Sentence {
        sent_id: sent_id.to_string(),
        text,
        tokens,
        ..Sentence::default()
    }
}

pub fn random_treebank(rng: &mut impl Rng, max_sentences: usize, max_tokens: usize) -> Treebank {
    let k = rng.random_range(1..=max_sentences);
    Treebank::new(
        (0..k)
            .map(|i| {
                let n = rng.random_range(1..=max_tokens);
                random_sentence(rng, &format!("s{i}"), n)
            })
            .collect(),
    )
}

/// A noisy copy of `gold`: heads, labels and tags change at random, and with
/// `retokenize` words are merged or split without changing the characters
/// of the sentence.
pub fn perturb(rng: &mut impl Rng, gold: &Treebank, retokenize: bool) -> Treebank {
    let mut out = gold.clone();
    for s in &mut out.sentences {
        if retokenize && rng.random_bool(0.5) {
            let mut forms: Vec<String> = s.tokens.iter().map(|t| t.form.clone()).collect();
            for _ in 0..rng.random_range(1..=2) {
                let i = rng.random_range(0..forms.len());
                let chars: Vec<char> = forms[i].chars().collect();
                if chars.len() >= 2 && rng.random_bool(0.5) {
                    let cut = rng.random_range(1..chars.len());
                    let right: String = chars[cut..].iter().collect();
                    forms[i] = chars[..cut].iter().collect();
                    forms.insert(i + 1, right);
                } else if i + 1 < forms.len() {
                    let next = forms.remove(i + 1);
                    forms[i].push_str(&next);
                }
            }
            let mut tokens = Vec::with_capacity(forms.len());
            for (i, f) in forms.into_iter().enumerate() {
                let mut t = Token::new(i + 1, f);
                t.upos = UPOS.choose(rng).unwrap().to_string();
                tokens.push(t);
            }
            s.tokens = tokens;
        }
        let n = s.tokens.len();
        for t in &mut s.tokens {
            if t.head.is_none() || rng.random_bool(0.3) {
                t.head = Some(rng.random_range(0..=n));
            }
            if t.deprel.is_none() || rng.random_bool(0.3) {
                let mut all = LABELS.to_vec();
                all.push("root");
                all.push("NSUBJ");
                t.deprel = Some(all.choose(rng).unwrap().to_string());
            }
            if rng.random_bool(0.1) {
                t.upos = UPOS.choose(rng).unwrap().to_string();
            }
        }
    }
    out
}

/// Random finite edge scores, ties included.
pub fn random_table(rng: &mut impl Rng, n: usize, labels: usize) -> EdgeScoreTable {
    let names = (0..labels).map(|l| format!("l{l}")).collect();
    let mut t = EdgeScoreTable::new(n, names);
    for h in 0..=n {
        for d in 1..=n {
            for l in 0..labels {
                let v = if rng.random_bool(0.1) {
                    rng.random_range(-2..=2) as f64
                } else {
                    rng.random_range(-10.0..10.0)
                };
                t.set(h, d, l, v);
            }
        }
    }
    t
}

// ---------------------------------------------------------------------------
// metrics reference

pub fn norm_label(opts: &EvalOptions, d: Option<&str>) -> String {
    let d = d.unwrap_or("_").to_lowercase();
    if opts.strip_subtypes {
        match d.find(':') {
            Some(i) => d[..i].to_string(),
            None => d,
        }
    } else {
        d
    }
}

/// Words whose character spans coincide. Only meaningful when both
/// sentences spell the same characters.
pub fn span_pairs(s: &Sentence, g: &Sentence) -> Vec<(usize, usize)> {
    let spans = |x: &Sentence| {
        let mut pos = 0;
        x.tokens
            .iter()
            .map(|t| {
                let len = t.form.chars().count();
                pos += len;
                (pos - len, pos)
            })
            .collect::<Vec<_>>()
    };
    let (ss, gs) = (spans(s), spans(g));
    let mut out = Vec::new();
    for (i, a) in ss.iter().enumerate() {
        for (j, b) in gs.iter().enumerate() {
            if a == b {
                out.push((i + 1, j + 1));
            }
        }
    }
    out
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct NaiveCounts {
    pub matched: usize,
    pub head_correct: usize,
    pub both_correct: usize,
    pub system_total: usize,
    pub gold_total: usize,
    /// (gold label, system label) per scored pair.
    pub label_pairs: Vec<(String, String)>,
}

pub fn naive_counts(system: &Treebank, gold: &Treebank, opts: &EvalOptions) -> NaiveCounts {
    let mut c = NaiveCounts::default();
    for (s, g) in system.sentences.iter().zip(&gold.sentences) {
        let pairs = span_pairs(s, g);
        let gold_of = |sid: usize| pairs.iter().find(|p| p.0 == sid).map(|p| p.1);
        for gt in &g.tokens {
            if !(opts.ignore_punct && gt.upos == "PUNCT") {
                c.gold_total += 1;
            }
        }
        for st in &s.tokens {
            let counted_as = match gold_of(st.id) {
                Some(gid) => &g.tokens[gid - 1],
                None => st,
            };
            if !(opts.ignore_punct && counted_as.upos == "PUNCT") {
                c.system_total += 1;
            }
        }
        for &(si, gi) in &pairs {
            let (st, gt) = (&s.tokens[si - 1], &g.tokens[gi - 1]);
            if opts.ignore_punct && gt.upos == "PUNCT" {
                continue;
            }
            c.matched += 1;
            let head_ok = match (st.head, gt.head) {
                (Some(0), Some(0)) => true,
                (Some(sh), Some(gh)) if sh > 0 => gold_of(sh) == Some(gh),
                _ => false,
            };
            let ls = norm_label(opts, st.deprel.as_deref());
            let lg = norm_label(opts, gt.deprel.as_deref());
            if head_ok {
                c.head_correct += 1;
                if ls == lg {
                    c.both_correct += 1;
                }
            }
            c.label_pairs.push((lg, ls));
        }
    }
    c
}

/// `(p_o, p_e, kappa)` straight from the textbook formula.
pub fn naive_kappa(
    a: &Treebank,
    b: &Treebank,
    opts: &EvalOptions,
) -> (f64, f64, Option<f64>, usize) {
    // pairs are (b label, a label) because `a` plays the system side
    let c = naive_counts(a, b, opts);
    let n = c.label_pairs.len() as f64;
    let agree = c.label_pairs.iter().filter(|(x, y)| x == y).count() as f64;
    let mut ma: BTreeMap<&str, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&str, f64> = BTreeMap::new();
    for (lb, la) in &c.label_pairs {
        *ma.entry(la).or_default() += 1.0;
        *mb.entry(lb).or_default() += 1.0;
    }
    let po = agree / n;
    let pe: f64 = ma
        .iter()
        .map(|(l, ca)| (ca / n) * (mb.get(l).copied().unwrap_or(0.0) / n))
        .sum();
    let kappa = if ma.len() == 1 && ma.keys().eq(mb.keys()) {
        None
    } else {
        Some((po - pe) / (1.0 - pe))
    };
    (po, pe, kappa, c.label_pairs.len())
}

/// Confusion cells keyed by (gold, system) after the top-k merge, and the
/// expected label order.
pub fn naive_confusion(
    system: &Treebank,
    gold: &Treebank,
    opts: &EvalOptions,
    top_k: Option<usize>,
) -> (Vec<String>, BTreeMap<(String, String), u64>) {
    let c = naive_counts(system, gold, opts);
    let mut labels: BTreeSet<String> = BTreeSet::new();
    for (g, s) in &c.label_pairs {
        labels.insert(g.clone());
        labels.insert(s.clone());
    }
    let mut keep: Option<BTreeSet<String>> = None;
    if let Some(k) = top_k {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for (g, _) in &c.label_pairs {
            *freq.entry(g.clone()).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        // most frequent first, alphabetical among equals
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        keep = Some(ranked.into_iter().take(k).map(|(l, _)| l).collect());
    }
    let bucket = |l: &str| match &keep {
        Some(kept) if !kept.contains(l) => "OTHER".to_string(),
        _ => l.to_string(),
    };
    let mut order: Vec<String> = match &keep {
        Some(kept) => kept.iter().cloned().collect(),
        None => labels.iter().cloned().collect(),
    };
    if let Some(kept) = &keep {
        if labels.iter().any(|l| !kept.contains(l)) {
            order.push("OTHER".into());
        }
    }
    let mut cells = BTreeMap::new();
    for (g, s) in &c.label_pairs {
        *cells.entry((bucket(g), bucket(s))).or_insert(0) += 1;
    }
    (order, cells)
}

// ---------------------------------------------------------------------------
// decoder reference

/// Best tree score by trying every head assignment. Ties between labels do
/// not matter for the score.
pub fn exhaustive_best(table: &EdgeScoreTable, single_root: bool) -> f64 {
    let n = table.len();
    let labels = table.labels().len();
    let edge = |h: usize, d: usize| {
        (0..labels)
            .map(|l| table.get(h, d, l))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut heads = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        if is_tree(&heads, single_root) {
            let score: f64 = heads.iter().enumerate().map(|(i, &h)| edge(h, i + 1)).sum();
            best = best.max(score);
        }
        // odometer over (n + 1)^n assignments
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            heads[i] += 1;
            if heads[i] <= n {
                break;
            }
            heads[i] = 0;
            i += 1;
        }
    }
}

/// True when every word reaches 0 without repeating itself.
pub fn is_tree(heads: &[usize], single_root: bool) -> bool {
    let n = heads.len();
    if single_root && heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    for (i, &h) in heads.iter().enumerate() {
        if h == i + 1 {
            return false;
        }
    }
    for start in 1..=n {
        let mut cur = start;
        let mut steps = 0;
        while cur != 0 {
            cur = heads[cur - 1];
            steps += 1;
            if steps > n {
                return false;
            }
        }
    }
    true
}
