// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::KnowledgeTriple;
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

const SUBJECT: &str = "{subject}";
const RELATION: &str = "{relation}";
const OBJECT: &str = "{object}";

/// A sentence pattern with `{subject}`, `{relation}` and `{object}` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTemplate {
    pub id: String,
    pub pattern: String,
}

impl SentenceTemplate {
    pub fn new(id: &str, pattern: &str) -> Result<Self> {
        for slot in [SUBJECT, RELATION, OBJECT] {
            let n = pattern.matches(slot).count();
            if n != 1 {
                return Err(Error::Config(format!("template {id:?}: slot {slot} appears {n} times")));
            }
        }
        if pattern.find(SUBJECT) > pattern.find(OBJECT) {
            return Err(Error::Config(format!("template {id:?}: subject must precede object")));
        }
        if !pattern.trim_end().ends_with(OBJECT) {
            return Err(Error::Config(format!("template {id:?}: object must end the sentence")));
        }
        Ok(Self { id: id.to_string(), pattern: pattern.to_string() })
    }

    /// `{subject}'s {relation} is {object}`
    pub fn primary() -> Self {
        Self::new("primary", "{subject}'s {relation} is {object}").expect("valid built-in")
    }

    /// `The name of the {relation} of {subject} is {object}`
    pub fn secondary() -> Self {
        Self::new("secondary", "The name of the {relation} of {subject} is {object}").expect("valid built-in")
    }

    pub fn builtins() -> Vec<Self> {
        vec![Self::primary(), Self::secondary()]
    }

    pub fn builtin(id: &str) -> Option<Self> {
        Self::builtins().into_iter().find(|t| t.id == id)
    }

    /// Literal words of the pattern, excluding slots.
    pub fn words(&self) -> Vec<String> {
        let stripped = self.pattern.replace(SUBJECT, " ").replace(RELATION, " ").replace(OBJECT, " ");
        stripped.split_whitespace().map(str::to_string).collect()
    }
}

/// Deterministic slot substitution.
pub fn render_sentence(triple: &KnowledgeTriple, template: &SentenceTemplate) -> String {
    template
        .pattern
        .replace(SUBJECT, &triple.subject)
        .replace(RELATION, &triple.relation)
        .replace(OBJECT, &triple.object)
}

/// A rendered sentence as token ids (no `<bos>`), with the token ranges of
/// the subject and object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub ids: Vec<TokenId>,
    pub subject: Range<usize>,
    pub object: Range<usize>,
}

impl TokenizedSentence {
    pub fn render(tok: &Tokenizer, triple: &KnowledgeTriple, template: &SentenceTemplate) -> Result<Self> {
        let text = render_sentence(triple, template);
        let ids = tok.encode_ids(&text)?;
        let count_before = |slot: &str| -> Result<usize> {
            let cut = template.pattern.find(slot).expect("validated slot");
            let head = &template.pattern[..cut];
            let head = head.replace(SUBJECT, &triple.subject).replace(RELATION, &triple.relation);
            Ok(tok.encode_ids(&head)?.len())
        };
        let s0 = count_before(SUBJECT)?;
        let s_len = tok.encode_ids(&triple.subject)?.len();
        let o0 = count_before(OBJECT)?;
        let o_len = tok.encode_ids(&triple.object)?.len();
        if s_len == 0 || o_len == 0 || o0 + o_len != ids.len() {
            return Err(Error::Config(format!("cannot locate subject/object spans in {text:?}")));
        }
        Ok(Self { ids, subject: s0..s0 + s_len, object: o0..o0 + o_len })
    }

    /// Index of the subject's last token within `ids`.
    pub fn subject_last(&self) -> usize {
        self.subject.end - 1
    }

    /// The sentence truncated before the object.
    pub fn prompt(&self) -> &[TokenId] {
        &self.ids[..self.object.start]
    }

    pub fn object_ids(&self) -> &[TokenId] {
        &self.ids[self.object.clone()]
    }
}
