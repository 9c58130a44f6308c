use std::fmt;

use serde::{Deserialize, Serialize};

/// MISC key that carries a token's second-script form unless configured
/// otherwise.
pub const DEFAULT_ORIG_KEY: &str = "Orig";

/// An ordered `key=value|key=value` list as used by the FEATS and MISC
/// columns. Items without `=` are kept with a `None` value.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes(pub Vec<(String, Option<String>)>);

impl Attributes {
    pub fn parse(field: &str) -> Self {
        if field == "_" || field.is_empty() {
            return Attributes::default();
        }
        Attributes(
            field
                .split('|')
                .map(|item| match item.split_once('=') {
                    Some((k, v)) => (k.to_string(), Some(v.to_string())),
                    None => (item.to_string(), None),
                })
                .collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.as_deref())
    }

    /// Sets `key`, replacing an existing entry in place or appending.
    pub fn set(&mut self, key: &str, value: &str) {
        match self.0.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = Some(value.to_string()),
            None => self.0.push((key.to_string(), Some(value.to_string()))),
        }
    }

    pub fn remove(&mut self, key: &str) {
        self.0.retain(|(k, _)| k != key);
    }
}

impl fmt::Display for Attributes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("_");
        }
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            f.write_str(k)?;
            if let Some(v) = v {
                write!(f, "={v}")?;
            }
        }
        Ok(())
    }
}

/// One syntactic word line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: Attributes,
    /// `None` when the HEAD column is `_` (not yet annotated).
    pub head: Option<usize>,
    /// `None` when the DEPREL column is `_`.
    pub deprel: Option<String>,
    /// Enhanced dependencies, carried opaquely.
    pub deps: String,
    pub misc: Attributes,
}

impl Token {
    /// A token with only the form set and all other columns empty.
    pub fn new(id: usize, form: impl Into<String>) -> Self {
        Token {
            id,
            form: form.into(),
            lemma: "_".into(),
            upos: "_".into(),
            xpos: "_".into(),
            feats: Attributes::default(),
            head: None,
            deprel: None,
            deps: "_".into(),
            misc: Attributes::default(),
        }
    }

    /// Second-script form stored under `key` in MISC.
    pub fn orig_form(&self, key: &str) -> Option<&str> {
        self.misc.get(key)
    }

    pub fn is_punct(&self) -> bool {
        self.upos == "PUNCT"
    }

    pub(crate) fn write_line(&self, out: &mut String) {
        use std::fmt::Write;
        let head = match self.head {
            Some(h) => h.to_string(),
            None => "_".to_string(),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            or_underscore(&self.form),
            or_underscore(&self.lemma),
            or_underscore(&self.upos),
            or_underscore(&self.xpos),
            self.feats,
            head,
            self.deprel.as_deref().map(or_underscore).unwrap_or("_"),
            or_underscore(&self.deps),
            self.misc,
        );
    }
}

fn or_underscore(s: &str) -> &str {
    if s.is_empty() {
        "_"
    } else {
        s
    }
}

/// A surface token spanning several syntactic words (`start-end` line).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiwordRange {
    pub start: usize,
    pub end: usize,
    pub form: String,
    pub misc: Attributes,
}

/// An empty node line (`major.minor`), kept verbatim and never scored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyNode {
    /// Word id the node follows (`major`); 0 places it before the first word.
    pub after: usize,
    pub minor: usize,
    pub line: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// Empty when the sentence has no `sent_id` comment.
    pub sent_id: String,
    pub text: String,
    /// Second-script rendering of the whole sentence.
    pub text_orig: Option<String>,
    /// All other comment lines, verbatim and in order.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub mwts: Vec<MultiwordRange>,
    pub empty_nodes: Vec<EmptyNode>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&Token> {
        self.tokens.get(id.checked_sub(1)?).filter(|t| t.id == id)
    }

    pub fn token_mut(&mut self, id: usize) -> Option<&mut Token> {
        self.tokens
            .get_mut(id.checked_sub(1)?)
            .filter(|t| t.id == id)
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    /// True when every word has both HEAD and DEPREL filled in.
    pub fn is_annotated(&self) -> bool {
        self.tokens
            .iter()
            .all(|t| t.head.is_some() && t.deprel.is_some())
    }

    /// Clears HEAD and DEPREL on every word.
    pub fn strip_annotation(&mut self) {
        for t in &mut self.tokens {
            t.head = None;
            t.deprel = None;
        }
    }

    pub(crate) fn write_to(&self, out: &mut String) {
        if !self.sent_id.is_empty() {
            out.push_str("# sent_id = ");
            out.push_str(&self.sent_id);
            out.push('\n');
        }
        if !self.text.is_empty() {
            out.push_str("# text = ");
            out.push_str(&self.text);
            out.push('\n');
        }
        if let Some(orig) = &self.text_orig {
            out.push_str("# text_orig = ");
            out.push_str(orig);
            out.push('\n');
        }
        for c in &self.comments {
            out.push_str(c);
            out.push('\n');
        }
        for node in self.empty_nodes.iter().filter(|e| e.after == 0) {
            out.push_str(&node.line);
            out.push('\n');
        }
        for token in &self.tokens {
            for mwt in self.mwts.iter().filter(|m| m.start == token.id) {
                use std::fmt::Write;
                let _ = writeln!(
                    out,
                    "{}-{}\t{}\t_\t_\t_\t_\t_\t_\t_\t{}",
                    mwt.start,
                    mwt.end,
                    or_underscore(&mwt.form),
                    mwt.misc
                );
            }
            token.write_line(out);
            for node in self.empty_nodes.iter().filter(|e| e.after == token.id) {
                out.push_str(&node.line);
                out.push('\n');
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Treebank { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn find(&self, sent_id: &str) -> Option<&Sentence> {
        self.sentences.iter().find(|s| s.sent_id == sent_id)
    }

    pub fn find_mut(&mut self, sent_id: &str) -> Option<&mut Sentence> {
        self.sentences.iter_mut().find(|s| s.sent_id == sent_id)
    }

    /// Number of syntactic words across all sentences.
    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// `sent_id` values that occur more than once (empty ids ignored).
    pub fn duplicate_ids(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut dups = std::collections::BTreeSet::new();
        for s in &self.sentences {
            if !s.sent_id.is_empty() && !seen.insert(s.sent_id.as_str()) {
                dups.insert(s.sent_id.clone());
            }
        }
        dups.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attributes_keep_order_and_bare_items() {
        let a = Attributes::parse("SpaceAfter=No|Orig=حرب|Typo");
        assert_eq!(a.get("Orig"), Some("حرب"));
        assert_eq!(a.get("Typo"), None);
        assert_eq!(a.to_string(), "SpaceAfter=No|Orig=حرب|Typo");
        assert_eq!(Attributes::parse("_").to_string(), "_");
    }

    #[test]
    fn attributes_set_replaces_in_place() {
        let mut a = Attributes::parse("A=1|B=2");
        a.set("A", "3");
        a.set("C", "4");
        assert_eq!(a.to_string(), "A=3|B=2|C=4");
        a.remove("B");
        assert_eq!(a.to_string(), "A=3|C=4");
    }
}
