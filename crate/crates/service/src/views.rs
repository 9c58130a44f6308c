use iterbank::conllu::{validate, Sentence, Violation};
use iterbank::project::BatchState;
use serde::{Deserialize, Serialize};

/// A word as the correction UI sees it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenView {
    pub id: usize,
    pub form: String,
    /// Second-script form from MISC.
    pub orig: Option<String>,
    pub lemma: String,
    pub upos: String,
    pub head: Option<usize>,
    pub deprel: Option<String>,
    /// HEAD, DEPREL or UPOS differ from the pseudo-annotation.
    pub changed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceView {
    pub batch: usize,
    pub state: BatchState,
    pub editable: bool,
    pub sent_id: String,
    pub text: String,
    pub text_orig: Option<String>,
    pub tokens: Vec<TokenView>,
    pub violations: Vec<Violation>,
}

pub fn sentence_view(
    batch: usize,
    state: BatchState,
    working: &Sentence,
    pseudo: Option<&Sentence>,
    orig_key: &str,
) -> SentenceView {
    let tokens = working
        .tokens
        .iter()
        .map(|t| {
            let changed = pseudo
                .and_then(|p| p.token(t.id))
                .is_some_and(|p| p.head != t.head || p.deprel != t.deprel || p.upos != t.upos);
            TokenView {
                id: t.id,
                form: t.form.clone(),
                orig: t.orig_form(orig_key).map(String::from),
                lemma: t.lemma.clone(),
                upos: t.upos.clone(),
                head: t.head,
                deprel: t.deprel.clone(),
                changed,
            }
        })
        .collect();
    SentenceView {
        batch,
        state,
        editable: state.is_editable(),
        sent_id: working.sent_id.clone(),
        text: working.text.clone(),
        text_orig: working.text_orig.clone(),
        tokens,
        violations: validate(working),
    }
}
