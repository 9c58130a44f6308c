//! Hashed first-order edge features.
//!
//! Every feature is a 64-bit hash of a template id and its atoms (word form,
//! lemma, UPOS, neighbouring UPOS, direction, distance bucket). Each fires
//! once unlabelled and once conjoined with the candidate label; both are
//! folded into a fixed 2^22 weight space.

use std::collections::BTreeSet;

use crate::conllu::Sentence;

pub const HASH_BITS: u32 = 22;
pub const WEIGHT_SPACE: usize = 1 << HASH_BITS;
/// Bumped whenever templates or hashing change; stored in model files.
pub const TEMPLATE_VERSION: &str = "edge-fo-v1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[inline]
fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[inline]
fn combine(a: u64, b: u64) -> u64 {
    mix(a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b)
}

/// Hash of a label, used to conjoin features with it.
pub(crate) fn label_key(label: &str) -> u64 {
    fnv1a(label.as_bytes()) | 1
}

/// Salt for the unlabelled copy of every feature.
const UNLABELLED: u64 = 0x5151_5151_5151_5150;

#[inline]
pub(crate) fn slot(feature: u64, label: u64) -> usize {
    (mix(feature ^ label) >> (64 - HASH_BITS)) as usize
}

#[inline]
pub(crate) fn unlabelled_slot(feature: u64) -> usize {
    slot(feature, UNLABELLED)
}

fn atom(kind: &str, value: &str) -> u64 {
    combine(fnv1a(kind.as_bytes()), fnv1a(value.as_bytes()))
}

/// Per-position atoms for one sentence. Position 0 is the root.
#[derive(Debug)]
pub(crate) struct SentenceAtoms {
    form: Vec<Option<u64>>,
    lemma: Vec<Option<u64>>,
    upos: Vec<u64>,
    prev_upos: Vec<u64>,
    next_upos: Vec<u64>,
}

impl SentenceAtoms {
    /// Form and lemma atoms are only set for words in `vocab`; unknown
    /// words fall back to UPOS, direction and distance features.
    pub fn new(s: &Sentence, vocab: &BTreeSet<String>) -> Self {
        let n = s.len();
        let mut form = Vec::with_capacity(n + 1);
        let mut lemma = Vec::with_capacity(n + 1);
        let mut upos = Vec::with_capacity(n + 1);
        form.push(Some(atom("f", "<root>")));
        lemma.push(Some(atom("l", "<root>")));
        upos.push(atom("p", "<root>"));
        for t in &s.tokens {
            let lower = t.form.to_lowercase();
            if vocab.contains(&lower) {
                form.push(Some(atom("f", &lower)));
                lemma.push(Some(atom("l", &t.lemma.to_lowercase())));
            } else {
                form.push(None);
                lemma.push(None);
            }
            upos.push(atom("p", &t.upos));
        }
        let bos = atom("p", "<s>");
        let eos = atom("p", "</s>");
        let prev_upos = (0..=n)
            .map(|i| if i <= 1 { bos } else { upos[i - 1] })
            .collect();
        let next_upos = (0..=n)
            .map(|i| if i == 0 || i == n { eos } else { upos[i + 1] })
            .collect();
        SentenceAtoms {
            form,
            lemma,
            upos,
            prev_upos,
            next_upos,
        }
    }

    pub fn len(&self) -> usize {
        self.upos.len() - 1
    }

    /// Writes the features of edge `head -> dep` into `out` (cleared first).
    pub fn edge_features(&self, head: usize, dep: usize, out: &mut Vec<u64>) {
        out.clear();
        let (dir, dist) = if head == 0 {
            (2u64, dep)
        } else if head < dep {
            (0, dep - head)
        } else {
            (1, head - dep)
        };
        let bucket: u64 = match dist {
            0..=4 => dist as u64,
            5..=6 => 5,
            7..=10 => 6,
            _ => 7,
        };
        let dd = combine(dir + 1, bucket + 11);
        let hp = self.upos[head];
        let dp = self.upos[dep];
        let hf = self.form[head];
        let df = self.form[dep];
        let hl = self.lemma[head];
        let dl = self.lemma[dep];
        let t = |id: u64, parts: &[u64]| {
            parts
                .iter()
                .fold(id.wrapping_mul(0x2545_f491_4f6c_dd1d), |acc, &p| {
                    combine(acc, p)
                })
        };

        out.push(t(1, &[dd]));
        out.push(t(2, &[hp, dp, dd]));
        out.push(t(3, &[hp, dp]));
        out.push(t(4, &[hp, dd]));
        out.push(t(5, &[dp, dd]));
        out.push(t(6, &[hp, self.next_upos[head], self.prev_upos[dep], dp]));
        out.push(t(7, &[self.prev_upos[head], hp, self.prev_upos[dep], dp]));
        out.push(t(8, &[hp, self.next_upos[head], dp, self.next_upos[dep]]));
        out.push(t(9, &[self.prev_upos[head], hp, dp, self.next_upos[dep]]));
        out.push(t(10, &[hp, dp, self.next_upos[dep], dd]));
        out.push(t(11, &[self.prev_upos[head], hp, dp, dd]));
        if let Some(hf) = hf {
            out.push(t(20, &[hf, hp]));
            out.push(t(21, &[hf, dd]));
            out.push(t(22, &[hf, dp]));
            out.push(t(23, &[hf, dp, dd]));
        }
        if let Some(df) = df {
            out.push(t(30, &[df, dp]));
            out.push(t(31, &[df, dd]));
            out.push(t(32, &[hp, df]));
            out.push(t(33, &[hp, df, dd]));
        }
        if let (Some(hf), Some(df)) = (hf, df) {
            out.push(t(40, &[hf, df]));
        }
        if let Some(hl) = hl {
            out.push(t(50, &[hl, dp]));
        }
        if let Some(dl) = dl {
            out.push(t(51, &[hp, dl]));
        }
    }
}

/// Known-word set of a corpus, lowercased.
pub(crate) fn vocabulary<'a>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
) -> BTreeSet<String> {
    sentences
        .into_iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.form.to_lowercase()))
        .collect()
}
