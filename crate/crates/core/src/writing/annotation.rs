use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Spelling,
    Grammar,
    Tone,
    Complexity,
    Vocabulary,
    Originality,
    Cognition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub source_id: String,
    pub source_span: (usize, usize),
}

/// One highlighted range. Spans are half-open char offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub span: (usize, usize),
    pub kind: AnnotationKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ref: Option<SourceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub text_hash: String,
    pub annotations: Vec<Annotation>,
    /// Provider results that were dropped as invalid.
    #[serde(default)]
    pub provider_errors: u32,
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl AnnotationSet {
    pub fn empty(text: &str) -> Self {
        Self {
            text_hash: text_hash(text),
            annotations: Vec::new(),
            provider_errors: 0,
        }
    }

    /// Sorts by position and merges overlapping annotations of the same kind;
    /// the earlier annotation's label and references win.
    pub fn new(text: &str, mut annotations: Vec<Annotation>) -> Self {
        annotations.sort_by(|a, b| (a.kind, a.span).cmp(&(b.kind, b.span)));
        let mut merged: Vec<Annotation> = Vec::with_capacity(annotations.len());
        for a in annotations {
            match merged.last_mut() {
                Some(last) if last.kind == a.kind && a.span.0 < last.span.1 => {
                    last.span.1 = last.span.1.max(a.span.1);
                }
                _ => merged.push(a),
            }
        }
        merged.sort_by(|a, b| (a.span, a.kind).cmp(&(b.span, b.kind)));
        Self {
            text_hash: text_hash(text),
            annotations: merged,
            provider_errors: 0,
        }
    }

    /// Combines sets computed over the same text.
    pub fn merge(sets: impl IntoIterator<Item = AnnotationSet>, text: &str) -> Self {
        let mut all = Vec::new();
        let mut errors = 0;
        for s in sets {
            all.extend(s.annotations);
            errors += s.provider_errors;
        }
        let mut out = Self::new(text, all);
        out.provider_errors = errors;
        out
    }

    /// Checks span bounds, per-kind disjointness and originality references.
    pub fn validate(&self, text: &str) -> Result<(), String> {
        let len = text.chars().count();
        if self.text_hash != text_hash(text) {
            return Err("text hash does not match".into());
        }
        for a in &self.annotations {
            if a.span.0 >= a.span.1 || a.span.1 > len {
                return Err(format!("span {:?} invalid for text of {len} chars", a.span));
            }
            if a.kind == AnnotationKind::Originality && a.source_ref.is_none() {
                return Err("originality annotation without source reference".into());
            }
        }
        let mut by_kind = self.annotations.clone();
        by_kind.sort_by(|a, b| (a.kind, a.span).cmp(&(b.kind, b.span)));
        for w in by_kind.windows(2) {
            if w[0].kind == w[1].kind && w[1].span.0 < w[0].span.1 {
                return Err(format!("overlapping {:?} annotations", w[0].kind));
            }
        }
        Ok(())
    }

    pub fn of_kind(&self, kind: AnnotationKind) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.kind == kind)
    }
}
