//! CoNLL-U treebank data: reading, canonical writing, structural validation
//! and token alignment between two tokenizations of the same text.
//!
//! Sentences can carry a second-script rendering in two places: the
//! sentence-level `# text_orig = …` comment and a per-token MISC key
//! (`Orig` by default).

mod align;
mod parse;
mod types;
mod validate;

pub use align::{align, TokenAlignment};
pub use parse::{parse, parse_lenient, read_file, read_file_lenient, Lenient, ParseError};
pub use types::{
    Attributes, EmptyNode, MultiwordRange, Sentence, Token, Treebank, DEFAULT_ORIG_KEY,
};
pub use validate::{validate, validate_unannotated, Rule, SentenceViolation, Violation};

/// Serializes a treebank in canonical CoNLL-U form.
///
/// Comments come first (`sent_id`, `text`, `text_orig`, then the remaining
/// comment lines in their original order), empty fields are written as `_`
/// and every sentence is followed by exactly one blank line.
pub fn serialize(tb: &Treebank) -> String {
    let mut out = String::new();
    for sentence in &tb.sentences {
        sentence.write_to(&mut out);
        out.push('\n');
    }
    out
}

/// Writes `tb` to `path` in canonical form.
pub fn write_file(path: impl AsRef<std::path::Path>, tb: &Treebank) -> std::io::Result<()> {
    std::fs::write(path, serialize(tb))
}
