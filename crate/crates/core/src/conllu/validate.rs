use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::Sentence;

/// A broken sentence or token invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    IdSequence { expected: usize, found: usize },
    EmptyForm,
    FormWhitespace,
    SelfLoop,
    HeadOutOfRange { head: usize },
    MissingHead,
    MissingDeprel,
    RootDeprelNotAtRoot,
    RootWithoutRootDeprel,
    NoRoot,
    MultipleRoots,
    Cycle { members: Vec<usize> },
    Unreachable,
    BadMultiwordRange { start: usize, end: usize },
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::IdSequence { expected, found } => {
                write!(f, "id sequence broken: expected {expected}, found {found}")
            }
            Rule::EmptyForm => f.write_str("empty form"),
            Rule::FormWhitespace => f.write_str("form contains tab or newline"),
            Rule::SelfLoop => f.write_str("self-loop"),
            Rule::HeadOutOfRange { head } => write!(f, "head {head} does not exist"),
            Rule::MissingHead => f.write_str("missing head"),
            Rule::MissingDeprel => f.write_str("missing deprel"),
            Rule::RootDeprelNotAtRoot => f.write_str("deprel root requires head 0"),
            Rule::RootWithoutRootDeprel => f.write_str("head 0 requires deprel root"),
            Rule::NoRoot => f.write_str("no root"),
            Rule::MultipleRoots => f.write_str("multiple roots"),
            Rule::Cycle { members } => {
                f.write_str("cycle: ")?;
                for (i, m) in members.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{m}")?;
                }
                Ok(())
            }
            Rule::Unreachable => f.write_str("not reachable from root"),
            Rule::BadMultiwordRange { start, end } => {
                write!(f, "invalid multiword range {start}-{end}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending token, when the rule is about a single token.
    pub token: Option<usize>,
    #[serde(flatten)]
    pub rule: Rule,
}

impl Violation {
    fn at(token: usize, rule: Rule) -> Self {
        Violation {
            token: Some(token),
            rule,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.token {
            Some(t) => write!(f, "token {t}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// A violation located in a treebank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceViolation {
    pub sentence: usize,
    pub sent_id: String,
    #[serde(flatten)]
    pub violation: Violation,
}

impl fmt::Display for SentenceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.sent_id, self.violation)
    }
}

/// Checks every sentence and token invariant. An empty result means the
/// sentence is a well-formed, fully annotated dependency tree.
pub fn validate(s: &Sentence) -> Vec<Violation> {
    let mut out = surface_violations(s);
    tree_violations(s, &mut out);
    out
}

/// Like [`validate`], but a sentence with no HEAD/DEPREL annotation at all
/// only has its surface invariants (ids, forms, ranges) checked.
pub fn validate_unannotated(s: &Sentence) -> Vec<Violation> {
    let unannotated = s
        .tokens
        .iter()
        .all(|t| t.head.is_none() && t.deprel.is_none());
    if unannotated {
        surface_violations(s)
    } else {
        validate(s)
    }
}

fn surface_violations(s: &Sentence) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, t) in s.tokens.iter().enumerate() {
        if t.id != i + 1 {
            out.push(Violation::at(
                t.id,
                Rule::IdSequence {
                    expected: i + 1,
                    found: t.id,
                },
            ));
        }
        if t.form.is_empty() {
            out.push(Violation::at(t.id, Rule::EmptyForm));
        } else if t.form.contains(['\t', '\n', '\r']) {
            out.push(Violation::at(t.id, Rule::FormWhitespace));
        }
    }
    let n = s.tokens.len();
    for m in &s.mwts {
        if m.start >= m.end || m.end > n {
            out.push(Violation {
                token: Some(m.start),
                rule: Rule::BadMultiwordRange {
                    start: m.start,
                    end: m.end,
                },
            });
        }
    }
    out
}

fn tree_violations(s: &Sentence, out: &mut Vec<Violation>) {
    let n = s.tokens.len();
    // heads[i] for token id i+1; None when missing or unusable
    let mut heads: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut roots = Vec::new();

    for t in &s.tokens {
        let mut usable = None;
        match t.head {
            None => out.push(Violation::at(t.id, Rule::MissingHead)),
            Some(h) if h == t.id => out.push(Violation::at(t.id, Rule::SelfLoop)),
            Some(h) if h > n => out.push(Violation::at(t.id, Rule::HeadOutOfRange { head: h })),
            Some(h) => usable = Some(h),
        }
        match (&t.deprel, t.head) {
            (None, _) => out.push(Violation::at(t.id, Rule::MissingDeprel)),
            (Some(d), Some(h)) if d == "root" && h != 0 => {
                out.push(Violation::at(t.id, Rule::RootDeprelNotAtRoot))
            }
            (Some(d), Some(0)) if d != "root" => {
                out.push(Violation::at(t.id, Rule::RootWithoutRootDeprel))
            }
            _ => {}
        }
        if usable == Some(0) {
            roots.push(t.id);
        }
        heads.push(usable);
    }

    // Tree checks need a usable head everywhere and consistent ids.
    if heads.iter().any(Option::is_none) || s.tokens.iter().enumerate().any(|(i, t)| t.id != i + 1)
    {
        return;
    }

    match roots.len() {
        0 => out.push(Violation {
            token: None,
            rule: Rule::NoRoot,
        }),
        1 => {}
        _ => {
            for &r in &roots[1..] {
                out.push(Violation::at(r, Rule::MultipleRoots));
            }
        }
    }

    // 0 = unvisited, 1 = on current path, 2 = reaches root, 3 = trapped in or below a cycle
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    let mut on_cycle = vec![false; n + 1];
    for start in 1..=n {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = heads[cur - 1].expect("checked above");
        }
        let outcome = if state[cur] == 1 {
            let pos = path.iter().position(|&p| p == cur).expect("on path");
            let mut members: Vec<usize> = path[pos..].to_vec();
            members.sort_unstable();
            for &m in &members {
                on_cycle[m] = true;
            }
            out.push(Violation {
                token: Some(members[0]),
                rule: Rule::Cycle { members },
            });
            3
        } else {
            state[cur]
        };
        for p in path {
            state[p] = outcome;
        }
    }
    for id in 1..=n {
        if state[id] == 3 && !on_cycle[id] {
            out.push(Violation::at(id, Rule::Unreachable));
        }
    }
}
