//! Input generators shared by the benchmarks.

use iterbank::conllu::{self, Treebank};
use iterbank::refparser::EdgeScoreTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS: &str = include_str!("../../core/testdata/synthetic-tr-300.conllu");

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn corpus() -> Treebank {
    conllu::parse(CORPUS).expect("bundled corpus parses")
}

/// Dense table over `n` words with uniform scores.
pub fn random_table(rng: &mut impl Rng, n: usize, labels: usize) -> EdgeScoreTable {
    let names = (0..labels).map(|l| format!("l{l}")).collect();
    let mut t = EdgeScoreTable::new(n, names);
    for h in 0..=n {
        for d in 1..=n {
            for l in 0..labels {
                t.set(h, d, l, rng.random_range(-10.0..10.0));
            }
        }
    }
    t
}

/// Copy of `gold` with a fraction of heads and labels reassigned.
pub fn noisy_copy(rng: &mut impl Rng, gold: &Treebank, rate: f64) -> Treebank {
    let mut out = gold.clone();
    for s in &mut out.sentences {
        let n = s.tokens.len();
        for t in &mut s.tokens {
            if rng.random_bool(rate) {
                t.head = Some(rng.random_range(0..=n));
            }
            if rng.random_bool(rate) {
                t.deprel = Some("dep".into());
            }
        }
    }
    out
}
