use std::path::Path;

use thiserror::Error;

use super::types::{Attributes, EmptyNode, MultiwordRange, Sentence, Token, Treebank};
use super::validate::{validate_unannotated, SentenceViolation, Violation};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: expected 10 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: invalid id {value:?}")]
    BadId { line: usize, value: String },
    #[error("line {line}: invalid head {value:?}")]
    BadHead { line: usize, value: String },
    #[error("line {line}: sentence has comments but no word lines")]
    NoTokens { line: usize },
    #[error("sentence {sentence} ({sent_id:?}): {violation}")]
    Structure {
        /// 0-based sentence position in the input.
        sentence: usize,
        sent_id: String,
        violation: Violation,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Result of a lenient parse: the treebank plus every structural violation
/// found, in input order.
#[derive(Debug, Clone, Default)]
pub struct Lenient {
    pub treebank: Treebank,
    pub violations: Vec<SentenceViolation>,
}

/// Parses CoNLL-U text, failing on the first structural violation.
///
/// Unannotated sentences (every HEAD and DEPREL `_`) are accepted; partially
/// annotated ones are not.
pub fn parse(input: &str) -> Result<Treebank, ParseError> {
    let lenient = parse_lenient(input)?;
    if let Some(v) = lenient.violations.into_iter().next() {
        return Err(ParseError::Structure {
            sentence: v.sentence,
            sent_id: v.sent_id,
            violation: v.violation,
        });
    }
    Ok(lenient.treebank)
}

/// Parses CoNLL-U text, recording structural violations instead of failing.
/// Line-level syntax errors are still fatal.
pub fn parse_lenient(input: &str) -> Result<Lenient, ParseError> {
    let mut out = Lenient::default();
    let mut current = Sentence::default();
    let mut has_content = false;
    let mut last_line = 0;

    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if has_content {
                finish(&mut out, std::mem::take(&mut current), line_no)?;
                has_content = false;
            }
            continue;
        }
        has_content = true;
        if line.starts_with('#') {
            read_comment(&mut current, line);
            continue;
        }
        read_word_line(&mut current, line, line_no)?;
    }
    if has_content {
        finish(&mut out, current, last_line + 1)?;
    }
    Ok(out)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Treebank, ParseError> {
    parse(&read_to_string(path.as_ref())?)
}

pub fn read_file_lenient(path: impl AsRef<Path>) -> Result<Lenient, ParseError> {
    parse_lenient(&read_to_string(path.as_ref())?)
}

fn read_to_string(path: &Path) -> Result<String, ParseError> {
    std::fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn finish(out: &mut Lenient, sentence: Sentence, line: usize) -> Result<(), ParseError> {
    if sentence.tokens.is_empty() {
        return Err(ParseError::NoTokens { line });
    }
    let index = out.treebank.sentences.len();
    for violation in validate_unannotated(&sentence) {
        out.violations.push(SentenceViolation {
            sentence: index,
            sent_id: sentence.sent_id.clone(),
            violation,
        });
    }
    out.treebank.sentences.push(sentence);
    Ok(())
}

fn read_comment(s: &mut Sentence, line: &str) {
    let body = line[1..].trim_start();
    if let Some((key, value)) = body.split_once('=') {
        let value = value.trim().to_string();
        match key.trim() {
            "sent_id" if s.sent_id.is_empty() => {
                s.sent_id = value;
                return;
            }
            "text" if s.text.is_empty() => {
                s.text = value;
                return;
            }
            "text_orig" if s.text_orig.is_none() => {
                s.text_orig = Some(value);
                return;
            }
            _ => {}
        }
    }
    s.comments.push(line.trim_end().to_string());
}

fn read_word_line(s: &mut Sentence, line: &str, line_no: usize) -> Result<(), ParseError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 10 {
        return Err(ParseError::FieldCount {
            line: line_no,
            found: fields.len(),
        });
    }
    let id = fields[0];
    let bad_id = || ParseError::BadId {
        line: line_no,
        value: id.to_string(),
    };

    if let Some((a, b)) = id.split_once('-') {
        let start = parse_positive(a).ok_or_else(bad_id)?;
        let end = parse_positive(b).ok_or_else(bad_id)?;
        s.mwts.push(MultiwordRange {
            start,
            end,
            form: fields[1].to_string(),
            misc: Attributes::parse(fields[9]),
        });
        return Ok(());
    }
    if let Some((a, b)) = id.split_once('.') {
        let after = a.parse::<usize>().map_err(|_| bad_id())?;
        let minor = parse_positive(b).ok_or_else(bad_id)?;
        s.empty_nodes.push(EmptyNode {
            after,
            minor,
            line: line.to_string(),
        });
        return Ok(());
    }

    let id = parse_positive(id).ok_or_else(bad_id)?;
    let head = match fields[6] {
        "_" => None,
        h => Some(h.parse::<usize>().map_err(|_| ParseError::BadHead {
            line: line_no,
            value: h.to_string(),
        })?),
    };
    s.tokens.push(Token {
        id,
        form: fields[1].to_string(),
        lemma: fields[2].to_string(),
        upos: fields[3].to_string(),
        xpos: fields[4].to_string(),
        feats: Attributes::parse(fields[5]),
        head,
        deprel: match fields[7] {
            "_" => None,
            d => Some(d.to_string()),
        },
        deps: fields[8].to_string(),
        misc: Attributes::parse(fields[9]),
    });
    Ok(())
}

fn parse_positive(s: &str) -> Option<usize> {
    s.parse::<usize>().ok().filter(|&n| n >= 1)
}
