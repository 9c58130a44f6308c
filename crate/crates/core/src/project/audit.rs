//! Correction edits and their append-only log.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::conllu::{Sentence, Treebank};

/// One correction to a word. Absent fields are left unchanged.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEdit {
    pub token_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deprel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upos: Option<String>,
}

impl TokenEdit {
    pub fn is_empty(&self) -> bool {
        self.head.is_none() && self.deprel.is_none() && self.upos.is_none()
    }
}

/// Values of the edited fields before an edit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorValues {
    pub head: Option<usize>,
    pub deprel: Option<String>,
    pub upos: String,
}

/// One line of `audit.log`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub annotator: String,
    pub sentence_id: String,
    pub edit: TokenEdit,
    pub prior: PriorValues,
}

/// Applies `edit` to `s`, returning the values it replaced.
pub(crate) fn apply(s: &mut Sentence, edit: &TokenEdit) -> Option<PriorValues> {
    let tok = s.token_mut(edit.token_id)?;
    let prior = PriorValues {
        head: tok.head,
        deprel: tok.deprel.clone(),
        upos: tok.upos.clone(),
    };
    if let Some(h) = edit.head {
        tok.head = Some(h);
    }
    if let Some(d) = &edit.deprel {
        tok.deprel = Some(d.clone());
    }
    if let Some(u) = &edit.upos {
        tok.upos = u.clone();
    }
    Some(prior)
}

/// Edits turning the words of `from` into those of `to`, one per word that
/// differs in HEAD, DEPREL or UPOS. Both sentences must have the same words.
pub fn edits_towards(from: &Sentence, to: &Sentence) -> Vec<TokenEdit> {
    from.tokens
        .iter()
        .zip(&to.tokens)
        .map(|(a, b)| TokenEdit {
            token_id: a.id,
            head: b.head.filter(|_| a.head != b.head),
            deprel: b.deprel.clone().filter(|_| a.deprel != b.deprel),
            upos: (a.upos != b.upos).then(|| b.upos.clone()),
        })
        .filter(|e| !e.is_empty())
        .collect()
}

/// Parses an audit log. A final line without its newline is the remains of
/// an interrupted append and is skipped, as is any unparseable final line.
pub fn read_log(text: &str) -> Result<Vec<AuditRecord>, serde_json::Error> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let lines: Vec<&str> = complete.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// The draft working copy: `pseudo` with every logged edit applied in order.
pub fn replay(pseudo: &Treebank, log: &[AuditRecord]) -> Treebank {
    let mut draft = pseudo.clone();
    for r in log {
        if let Some(s) = draft.find_mut(&r.sentence_id) {
            apply(s, &r.edit);
        }
    }
    draft
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seq: u64) -> AuditRecord {
        AuditRecord {
            seq,
            at: DateTime::from_timestamp(0, 0).unwrap(),
            annotator: "a".into(),
            sentence_id: "s".into(),
            edit: TokenEdit {
                token_id: 1,
                head: Some(2),
                ..Default::default()
            },
            prior: PriorValues::default(),
        }
    }

    #[test]
    fn truncated_tail_is_ignored() {
        let a = serde_json::to_string(&record(1)).unwrap();
        let b = serde_json::to_string(&record(2)).unwrap();
        let text = format!("{a}\n{}", &b[..10]);
        assert_eq!(read_log(&text).unwrap(), vec![record(1)]);
        let text = format!("{a}\n{b}\n");
        assert_eq!(read_log(&text).unwrap().len(), 2);
        assert!(read_log("").unwrap().is_empty());
    }

    #[test]
    fn edits_towards_reaches_the_target() {
        let tb = crate::conllu::parse(
            "# sent_id = s\n1\ta\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n2\tb\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n",
        )
        .unwrap();
        let mut other = tb.sentences[0].clone();
        other.tokens[0].head = Some(0);
        other.tokens[0].deprel = Some("root".into());
        other.tokens[1].head = Some(1);
        other.tokens[1].deprel = Some("obj".into());
        other.tokens[1].upos = "NOUN".into();
        let edits = edits_towards(&tb.sentences[0], &other);
        assert_eq!(edits.len(), 2);
        let mut s = tb.sentences[0].clone();
        for e in &edits {
            apply(&mut s, e);
        }
        assert_eq!(s, other);
        assert!(edits_towards(&s, &other).is_empty());
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let a = serde_json::to_string(&record(1)).unwrap();
        assert!(read_log(&format!("garbage\n{a}\n")).is_err());
    }
}
