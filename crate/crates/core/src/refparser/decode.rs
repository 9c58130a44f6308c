//! Maximum spanning arborescence decoding over first-order edge scores.

use serde::{Deserialize, Serialize};

/// Scores for every labelled edge `head -> dependent` of one sentence.
///
/// Heads range over `0..=n` (0 is the artificial root), dependents over
/// `1..=n`. Entries with `head == dependent` exist but are never read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScoreTable {
    n: usize,
    labels: Vec<String>,
    scores: Vec<f64>,
}

impl EdgeScoreTable {
    /// A zero-filled table for `n` words.
    pub fn new(n: usize, labels: Vec<String>) -> Self {
        assert!(!labels.is_empty(), "score table needs at least one label");
        let size = (n + 1) * (n + 1) * labels.len();
        EdgeScoreTable {
            n,
            labels,
            scores: vec![0.0; size],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    fn idx(&self, head: usize, dep: usize, label: usize) -> usize {
        (head * (self.n + 1) + dep) * self.labels.len() + label
    }

    #[inline]
    pub fn get(&self, head: usize, dep: usize, label: usize) -> f64 {
        self.scores[self.idx(head, dep, label)]
    }

    #[inline]
    pub fn set(&mut self, head: usize, dep: usize, label: usize, score: f64) {
        let i = self.idx(head, dep, label);
        self.scores[i] = score;
    }

    pub fn is_finite(&self) -> bool {
        self.scores.iter().all(|s| s.is_finite())
    }

    /// Best label for an edge: highest score, ties to the lexicographically
    /// smaller label.
    pub fn best_label(&self, head: usize, dep: usize) -> (usize, f64) {
        let mut best = 0;
        let mut best_score = self.get(head, dep, 0);
        for l in 1..self.labels.len() {
            let s = self.get(head, dep, l);
            if s > best_score || (s == best_score && self.labels[l] < self.labels[best]) {
                best = l;
                best_score = s;
            }
        }
        (best, best_score)
    }

    /// Total score of a tree given as 1-based heads per word (`heads[i]` is
    /// the head of word `i + 1`) and label indices.
    pub fn tree_score(&self, heads: &[usize], labels: &[usize]) -> f64 {
        heads
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&h, &l))| self.get(h, i + 1, l))
            .sum()
    }
}

/// A decoded tree: `heads[i]` and `labels[i]` belong to word `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedTree {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
}

impl DecodedTree {
    pub fn deprels<'a>(&'a self, table: &'a EdgeScoreTable) -> impl Iterator<Item = &'a str> {
        self.labels.iter().map(|&l| table.labels[l].as_str())
    }
}

/// Highest-scoring dependency tree with exactly one word attached to the
/// root.
pub fn decode(table: &EdgeScoreTable) -> DecodedTree {
    decode_with(table, true)
}

/// Highest-scoring spanning arborescence rooted at 0; with `single_root`
/// the root gets exactly one child.
///
/// Each edge takes its best label first, then Chu-Liu/Edmonds runs over the
/// resulting unlabeled scores. If the unconstrained tree has several root
/// children, every root edge is penalized by more than the spread of any two
/// trees' scores and the graph is decoded again; that optimum is the best
/// single-root tree.
pub fn decode_with(table: &EdgeScoreTable, single_root: bool) -> DecodedTree {
    let n = table.n;
    if n == 0 {
        return DecodedTree {
            heads: Vec::new(),
            labels: Vec::new(),
        };
    }
    let mut weights = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    let mut best_labels = vec![vec![0usize; n + 1]; n + 1];
    for h in 0..=n {
        for d in 1..=n {
            if h != d {
                let (l, s) = table.best_label(h, d);
                weights[h][d] = s;
                best_labels[h][d] = l;
            }
        }
    }

    let mut heads = chu_liu_edmonds(&weights);
    if single_root && root_children(&heads) > 1 {
        let (lo, hi) = weights
            .iter()
            .flatten()
            .filter(|w| w.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| {
                (lo.min(w), hi.max(w))
            });
        let penalty = 1.0 + n as f64 * (hi - lo);
        let mut penalized = weights.clone();
        for d in 1..=n {
            penalized[0][d] -= penalty;
        }
        heads = chu_liu_edmonds(&penalized);
        if root_children(&heads) > 1 {
            heads = best_single_root_by_search(&weights);
        }
    }

    let labels = (1..=n).map(|d| best_labels[heads[d]][d]).collect();
    DecodedTree {
        heads: heads[1..].to_vec(),
        labels,
    }
}

fn root_children(heads: &[usize]) -> usize {
    heads[1..].iter().filter(|&&h| h == 0).count()
}

/// Fallback: try each possible root child separately.
fn best_single_root_by_search(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len() - 1;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..=n {
        let mut w = weights.to_vec();
        for d in 1..=n {
            if d != r {
                w[0][d] = f64::NEG_INFINITY;
            }
        }
        let heads = chu_liu_edmonds(&w);
        let score: f64 = (1..=n).map(|d| weights[heads[d]][d]).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, heads));
        }
    }
    best.expect("at least one word").1
}

/// Chu-Liu/Edmonds on a dense `weights[head][dep]` matrix rooted at node 0.
/// `NEG_INFINITY` marks a missing edge. Returns `heads` with `heads[0] = 0`.
pub(crate) fn chu_liu_edmonds(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    let mut head = vec![0usize; n];
    for d in 1..n {
        let mut best = None;
        let mut best_w = f64::NEG_INFINITY;
        for (h, row) in weights.iter().enumerate() {
            if h != d && row[d] > best_w {
                best_w = row[d];
                best = Some(h);
            }
        }
        head[d] = best.expect("every node needs at least one incoming edge");
    }

    let Some(cycle) = find_cycle(&head) else {
        return head;
    };

    // Contract the cycle into a single node placed last.
    let mut in_cycle = vec![false; n];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    let mut map = vec![usize::MAX; n];
    let mut unmap = Vec::with_capacity(n - cycle.len() + 1);
    for v in 0..n {
        if !in_cycle[v] {
            map[v] = unmap.len();
            unmap.push(v);
        }
    }
    let c = unmap.len();
    let m = c + 1;

    let mut contracted = vec![vec![f64::NEG_INFINITY; m]; m];
    // entering[u'] = cycle node entered by the best edge from u'
    let mut entering = vec![usize::MAX; m];
    // leaving[v'] = cycle node the best edge into v' comes from
    let mut leaving = vec![usize::MAX; m];
    for u in 0..n {
        for v in 1..n {
            let w = weights[u][v];
            if u == v || !w.is_finite() {
                continue;
            }
            match (in_cycle[u], in_cycle[v]) {
                (false, false) => contracted[map[u]][map[v]] = w,
                (false, true) => {
                    let adjusted = w - weights[head[v]][v];
                    if adjusted > contracted[map[u]][c] {
                        contracted[map[u]][c] = adjusted;
                        entering[map[u]] = v;
                    }
                }
                (true, false) => {
                    if w > contracted[c][map[v]] {
                        contracted[c][map[v]] = w;
                        leaving[map[v]] = u;
                    }
                }
                (true, true) => {}
            }
        }
    }

    let sub = chu_liu_edmonds(&contracted);

    let mut result = head.clone();
    for v in 1..n {
        if in_cycle[v] {
            continue;
        }
        let h = sub[map[v]];
        result[v] = if h == c { leaving[map[v]] } else { unmap[h] };
    }
    let from = sub[c];
    let entered = entering[from];
    result[entered] = unmap[from];
    result
}

/// Any cycle in a head assignment, as the list of its nodes.
fn find_cycle(head: &[usize]) -> Option<Vec<usize>> {
    let n = head.len();
    // 0 = unvisited, 1 = on current walk, 2 = done
    let mut state = vec![0u8; n];
    state[0] = 2;
    for start in 1..n {
        let mut walk = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            walk.push(v);
            v = head[v];
        }
        if state[v] == 1 {
            let pos = walk.iter().position(|&x| x == v).expect("on walk");
            return Some(walk[pos..].to_vec());
        }
        for w in walk {
            state[w] = 2;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize, edges: &[(usize, usize, f64)], default: f64) -> EdgeScoreTable {
        let mut t = EdgeScoreTable::new(n, vec!["dep".into()]);
        for h in 0..=n {
            for d in 1..=n {
                t.set(h, d, 0, default);
            }
        }
        for &(h, d, s) in edges {
            t.set(h, d, 0, s);
        }
        t
    }

    #[test]
    fn two_words() {
        let t = table(2, &[(0, 1, 5.0), (1, 2, 3.0)], -1.0);
        assert_eq!(decode(&t).heads, vec![0, 1]);
    }

    #[test]
    fn contracts_a_cycle() {
        // 1 <-> 2 strongly prefer each other; root edge to 2 is better
        let t = table(
            3,
            &[
                (2, 1, 10.0),
                (1, 2, 10.0),
                (0, 1, 1.0),
                (0, 2, 4.0),
                (2, 3, 2.0),
            ],
            -5.0,
        );
        let tree = decode(&t);
        assert_eq!(tree.heads, vec![2, 0, 2]);
    }

    #[test]
    fn single_root_is_enforced() {
        let t = table(3, &[(0, 1, 5.0), (0, 2, 5.0), (0, 3, 5.0)], 0.0);
        let unconstrained = decode_with(&t, false);
        assert_eq!(unconstrained.heads, vec![0, 0, 0]);
        let tree = decode(&t);
        assert_eq!(tree.heads.iter().filter(|&&h| h == 0).count(), 1);
        assert_eq!(t.tree_score(&tree.heads, &tree.labels), 5.0);
    }

    #[test]
    fn label_ties_prefer_smaller_label() {
        let mut t = EdgeScoreTable::new(1, vec!["obj".into(), "nsubj".into(), "root".into()]);
        t.set(0, 1, 0, 2.0);
        t.set(0, 1, 1, 2.0);
        let tree = decode(&t);
        assert_eq!(tree.deprels(&t).collect::<Vec<_>>(), vec!["nsubj"]);
    }

    #[test]
    fn empty_sentence() {
        let t = EdgeScoreTable::new(0, vec!["dep".into()]);
        assert!(decode(&t).heads.is_empty());
    }
}
