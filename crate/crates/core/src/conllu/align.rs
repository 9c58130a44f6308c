use serde::{Deserialize, Serialize};

use super::types::Sentence;

/// One-to-one matching between the words of a system and a gold sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    /// `(system id, gold id)` pairs in increasing order.
    pub pairs: Vec<(usize, usize)>,
    pub system_only: usize,
    pub gold_only: usize,
}

impl TokenAlignment {
    /// `map[system id] = Some(gold id)` for matched words; index 0 maps the
    /// artificial root to itself.
    pub fn system_to_gold(&self, system_len: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; system_len + 1];
        map[0] = Some(0);
        for &(s, g) in &self.pairs {
            map[s] = Some(g);
        }
        map
    }
}

/// Aligns the words of `system` with those of `gold`.
///
/// Identical FORM sequences give the identity matching. Otherwise the
/// concatenated characters of both sides are aligned by a longest common
/// subsequence and two words match when their character spans map onto
/// each other exactly.
pub fn align(system: &Sentence, gold: &Sentence) -> TokenAlignment {
    let identical = system.len() == gold.len() && system.forms().eq(gold.forms());
    if identical {
        return TokenAlignment {
            pairs: (1..=system.len()).map(|i| (i, i)).collect(),
            system_only: 0,
            gold_only: 0,
        };
    }

    let sys: Vec<&str> = system.forms().collect();
    let gld: Vec<&str> = gold.forms().collect();
    // Both tie-breaking directions are tried and the better one kept, so the
    // number of pairs does not depend on argument order.
    let a = span_pairs(&sys, &gld, false);
    let b = span_pairs(&sys, &gld, true);
    let pairs = if b.len() > a.len() { b } else { a };
    TokenAlignment {
        system_only: sys.len() - pairs.len(),
        gold_only: gld.len() - pairs.len(),
        pairs,
    }
}

fn span_pairs(sys: &[&str], gold: &[&str], prefer_gold_skip: bool) -> Vec<(usize, usize)> {
    let s_chars = flatten(sys);
    let g_chars = flatten(gold);
    let char_map = lcs_map(&s_chars, &g_chars, prefer_gold_skip);

    let s_spans = spans(sys);
    let g_spans = spans(gold);
    let g_start: std::collections::HashMap<usize, usize> = g_spans
        .iter()
        .enumerate()
        .filter(|(_, &(start, end))| start < end)
        .map(|(i, &(start, _))| (start, i))
        .collect();

    let mut pairs = Vec::new();
    for (si, &(start, end)) in s_spans.iter().enumerate() {
        if start == end {
            continue;
        }
        let Some(gs) = char_map[start] else { continue };
        let Some(&gi) = g_start.get(&gs) else {
            continue;
        };
        let (g0, g1) = g_spans[gi];
        if g1 - g0 != end - start {
            continue;
        }
        let exact = (start..end)
            .zip(g0..g1)
            .all(|(sc, gc)| char_map[sc] == Some(gc));
        if exact {
            pairs.push((si + 1, gi + 1));
        }
    }
    pairs
}

fn flatten(forms: &[&str]) -> Vec<char> {
    forms.iter().flat_map(|f| f.chars()).collect()
}

fn spans(forms: &[&str]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(forms.len());
    let mut pos = 0;
    for f in forms {
        let len = f.chars().count();
        out.push((pos, pos + len));
        pos += len;
    }
    out
}

/// Character-level LCS; returns for each `a` position the matched `b`
/// position.
fn lcs_map(a: &[char], b: &[char], prefer_b_skip: bool) -> Vec<Option<usize>> {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    // suffix table: dp[i][j] = LCS of a[i..] and b[j..]
    let mut dp = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i * width + j] = if a[i] == b[j] {
                dp[(i + 1) * width + j + 1] + 1
            } else {
                dp[(i + 1) * width + j].max(dp[i * width + j + 1])
            };
        }
    }
    let mut map = vec![None; n];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            map[i] = Some(j);
            i += 1;
            j += 1;
            continue;
        }
        let skip_a = dp[(i + 1) * width + j];
        let skip_b = dp[i * width + j + 1];
        let take_b = if skip_a == skip_b {
            prefer_b_skip
        } else {
            skip_b > skip_a
        };
        if take_b {
            j += 1;
        } else {
            i += 1;
        }
    }
    map
}
