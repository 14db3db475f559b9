//! Lexicon-driven tone and vocabulary checks plus sentence length.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::annotation::{Annotation, AnnotationKind, AnnotationSet};
use super::text::{sentences, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueKind {
    Tone,
    Vocabulary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub issue_kind: IssueKind,
    pub suggestion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("could not parse lexicon: {0}")]
    Parse(String),
    #[error("lexicon phrase `{0}` has no words")]
    EmptyPhrase(String),
    #[error("max_sentence_words must be positive")]
    BadThreshold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFile {
    max_sentence_words: usize,
    entries: HashMap<String, LexiconEntry>,
}

/// Phrase lookup keyed by normalized token sequences.
#[derive(Debug, Clone)]
pub struct AcademicLexicon {
    entries: HashMap<Vec<String>, (String, LexiconEntry)>,
    longest: usize,
    pub max_sentence_words: usize,
}

impl AcademicLexicon {
    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = serde_json::from_str(text).map_err(|e| LexiconError::Parse(e.to_string()))?;
        Self::new(file.entries, file.max_sentence_words)
    }

    pub fn default_lexicon() -> Self {
        Self::from_json(include_str!("../../data/lexicon.json")).expect("bundled lexicon is valid")
    }

    /// Phrases are matched case-insensitively on whole words.
    pub fn new(
        phrases: impl IntoIterator<Item = (String, LexiconEntry)>,
        max_sentence_words: usize,
    ) -> Result<Self, LexiconError> {
        if max_sentence_words == 0 {
            return Err(LexiconError::BadThreshold);
        }
        let mut entries = HashMap::new();
        let mut longest = 0;
        for (phrase, entry) in phrases {
            let key: Vec<String> = tokenize(&phrase).into_iter().map(|t| t.norm).collect();
            if key.is_empty() {
                return Err(LexiconError::EmptyPhrase(phrase));
            }
            longest = longest.max(key.len());
            entries.insert(key, (phrase, entry));
        }
        Ok(Self {
            entries,
            longest,
            max_sentence_words,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, phrase: &str) -> Option<&LexiconEntry> {
        let key: Vec<String> = tokenize(phrase).into_iter().map(|t| t.norm).collect();
        self.entries.get(&key).map(|(_, e)| e)
    }
}

/// Longest-match phrase scan plus one complexity annotation per sentence
/// longer than the lexicon's word limit.
pub fn analyze_academic(text: &str, lexicon: &AcademicLexicon) -> AnnotationSet {
    let tokens = tokenize(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let max = lexicon.longest.min(tokens.len() - i);
        let hit = (1..=max).rev().find_map(|len| {
            let key: Vec<String> = tokens[i..i + len].iter().map(|t| t.norm.clone()).collect();
            lexicon.entries.get(&key).map(|e| (len, e))
        });
        match hit {
            Some((len, (phrase, entry))) => {
                out.push(Annotation {
                    span: (tokens[i].start, tokens[i + len - 1].end),
                    kind: match entry.issue_kind {
                        IssueKind::Tone => AnnotationKind::Tone,
                        IssueKind::Vocabulary => AnnotationKind::Vocabulary,
                    },
                    label: format!("informal or vague wording: \"{phrase}\""),
                    suggestion: Some(entry.suggestion.clone()),
                    source_ref: None,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    for (start, end) in sentences(text) {
        let words = tokens.iter().filter(|t| t.start >= start && t.end <= end).count();
        if words > lexicon.max_sentence_words {
            out.push(Annotation {
                span: (start, end),
                kind: AnnotationKind::Complexity,
                label: format!("sentence has {words} words (limit {})", lexicon.max_sentence_words),
                suggestion: Some("Split this sentence into shorter ones.".into()),
                source_ref: None,
            });
        }
    }
    AnnotationSet::new(text, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_flagged_with_suggestion() {
        let lex = AcademicLexicon::default_lexicon();
        let set = analyze_academic("We don't think so.", &lex);
        assert_eq!(set.annotations.len(), 1);
        let a = &set.annotations[0];
        assert_eq!(a.kind, AnnotationKind::Tone);
        assert_eq!(a.span, (3, 8));
        assert_eq!(a.suggestion.as_deref(), Some("do not"));
    }

    #[test]
    fn longest_phrase_wins() {
        let lex = AcademicLexicon::default_lexicon();
        let set = analyze_academic("There were a lot of results.", &lex);
        assert_eq!(set.annotations.len(), 1);
        assert_eq!(set.annotations[0].span, (11, 19));
    }

    #[test]
    fn case_insensitive_lookup() {
        let lex = AcademicLexicon::default_lexicon();
        assert!(lex.lookup("DON'T").is_some());
        assert!(lex.lookup("Don’t").is_some());
        assert!(lex.len() >= 190);
    }
}
