//! Analyzers that delegate judgement to a language model.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::annotation::{text_hash, Annotation, AnnotationKind, AnnotationSet};
use super::text::{sentences, slice_chars};
use crate::agents::{Gateway, Message, ProviderError, ProviderParams, ProviderRequest};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WritingError {
    #[error("model gateway unavailable: {0}")]
    GatewayUnavailable(String),
    #[error("model reply could not be interpreted")]
    UnparseableReply { raw: String },
    #[error("invalid rubric: {0}")]
    InvalidRubric(String),
}

impl From<ProviderError> for WritingError {
    fn from(e: ProviderError) -> Self {
        WritingError::GatewayUnavailable(e.to_string())
    }
}

const BASIC_PROMPT: &str = "You check student essays for spelling and grammar errors. \
Reply with JSON only: {\"issues\": [{\"kind\": \"spelling\" or \"grammar\", \"start\": <char offset>, \
\"end\": <char offset, exclusive>, \"label\": <short description>, \"suggestion\": <replacement>}]}. \
Offsets count Unicode characters from 0.";

const COGNITION_PROMPT: &str = "You classify each numbered sentence of a student essay by the cognitive \
level it shows, using one of: Remember, Understand, Apply, Analyze, Evaluate, Create. \
Reply with JSON only: {\"levels\": [<one level per sentence, in order>]}.";

const GRADING_PROMPT: &str = "You grade a student submission against a rubric. For every criterion award \
points between 0 and its maximum and add a one-sentence comment. Reply with JSON only: \
{\"criteria\": [{\"name\": <criterion name>, \"points\": <number>, \"comment\": <text>}], \
\"feedback\": <short overall feedback>}.";

fn params() -> ProviderParams {
    ProviderParams {
        temperature: 0.0,
        max_output_tokens: 1024,
    }
}

/// Parses the outermost JSON object in a reply, tolerating prose or code
/// fences around it.
pub fn extract_json(reply: &str) -> Option<Value> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&reply[start..=end]).ok()
}

/// Spelling and grammar issues proposed by the model. Issues with invalid
/// spans or kinds are dropped and counted in `provider_errors`.
pub fn analyze_basic(text: &str, gateway: &Gateway, model_ref: &str) -> Result<AnnotationSet, WritingError> {
    if text.trim().is_empty() {
        return Ok(AnnotationSet::empty(text));
    }
    let req = ProviderRequest::new(model_ref, BASIC_PROMPT, vec![Message::user(text)], params());
    let reply = gateway.complete(&req)?;
    let doc = extract_json(&reply.text).ok_or_else(|| WritingError::UnparseableReply { raw: reply.text.clone() })?;
    let issues = doc
        .get("issues")
        .and_then(Value::as_array)
        .ok_or_else(|| WritingError::UnparseableReply { raw: reply.text.clone() })?;
    let len = text.chars().count();
    let mut errors = 0;
    let mut out = Vec::new();
    for issue in issues {
        let kind = match issue.get("kind").and_then(Value::as_str) {
            Some("spelling") => AnnotationKind::Spelling,
            Some("grammar") => AnnotationKind::Grammar,
            _ => {
                errors += 1;
                continue;
            }
        };
        let (Some(start), Some(end)) = (
            issue.get("start").and_then(Value::as_u64),
            issue.get("end").and_then(Value::as_u64),
        ) else {
            errors += 1;
            continue;
        };
        let (start, end) = (start as usize, end as usize);
        if start >= end || end > len {
            errors += 1;
            continue;
        }
        out.push(Annotation {
            span: (start, end),
            kind,
            label: issue
                .get("label")
                .and_then(Value::as_str)
                .unwrap_or(match kind {
                    AnnotationKind::Spelling => "spelling",
                    _ => "grammar",
                })
                .to_owned(),
            suggestion: issue.get("suggestion").and_then(Value::as_str).map(str::to_owned),
            source_ref: None,
        });
    }
    let mut set = AnnotationSet::new(text, out);
    set.provider_errors = errors;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BloomLevel {
    Remember,
    Understand,
    Apply,
    Analyze,
    Evaluate,
    Create,
}

impl BloomLevel {
    pub const ALL: [BloomLevel; 6] = [
        BloomLevel::Remember,
        BloomLevel::Understand,
        BloomLevel::Apply,
        BloomLevel::Analyze,
        BloomLevel::Evaluate,
        BloomLevel::Create,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BloomLevel::Remember => "Remember",
            BloomLevel::Understand => "Understand",
            BloomLevel::Apply => "Apply",
            BloomLevel::Analyze => "Analyze",
            BloomLevel::Evaluate => "Evaluate",
            BloomLevel::Create => "Create",
        }
    }

    /// Accepts level names case-insensitively, with British spelling and
    /// gerund forms ("analysing", "remembering").
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_lowercase();
        let s = s.replace("analys", "analyz");
        Self::ALL.into_iter().find(|l| {
            let n = l.name().to_lowercase();
            let stem = n.trim_end_matches('e');
            s == n || s.starts_with(stem) && s.len() <= n.len() + 3
        })
    }
}

/// One Bloom level per sentence from a single batched request. Entries the
/// model leaves unlabeled or mislabels are skipped and counted.
pub fn classify_cognition(text: &str, gateway: &Gateway, model_ref: &str) -> Result<AnnotationSet, WritingError> {
    let spans = sentences(text);
    if spans.is_empty() {
        return Ok(AnnotationSet::empty(text));
    }
    let numbered: String = spans
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| format!("{}. {}\n", i + 1, slice_chars(text, s, e)))
        .collect();
    let req = ProviderRequest::new(model_ref, COGNITION_PROMPT, vec![Message::user(numbered)], params());
    let reply = gateway.complete(&req)?;
    let levels = extract_json(&reply.text)
        .and_then(|d| d.get("levels").and_then(Value::as_array).cloned())
        .ok_or_else(|| WritingError::UnparseableReply { raw: reply.text.clone() })?;
    let mut errors = (levels.len() as i64 - spans.len() as i64).unsigned_abs() as u32;
    let mut out = Vec::new();
    for (&(s, e), level) in spans.iter().zip(levels.iter()) {
        match level.as_str().and_then(BloomLevel::parse) {
            Some(l) => out.push(Annotation {
                span: (s, e),
                kind: AnnotationKind::Cognition,
                label: l.name().to_owned(),
                suggestion: None,
                source_ref: None,
            }),
            None => errors += 1,
        }
    }
    let mut set = AnnotationSet::new(text, out);
    set.provider_errors = errors;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub description: String,
    pub max_points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub rubric_id: String,
    pub criteria: Vec<Criterion>,
}

impl Rubric {
    pub fn validate(&self) -> Result<(), WritingError> {
        if self.criteria.is_empty() {
            return Err(WritingError::InvalidRubric("no criteria".into()));
        }
        let mut names = HashSet::new();
        for c in &self.criteria {
            if c.max_points == 0 {
                return Err(WritingError::InvalidRubric(format!("criterion `{}` has no points", c.name)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(WritingError::InvalidRubric(format!("criterion `{}` is duplicated", c.name)));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u32 {
        self.criteria.iter().map(|c| c.max_points).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionGrade {
    pub name: String,
    pub points: f64,
    pub max_points: u32,
    pub comment: String,
    /// The model's award fell outside `[0, max_points]` and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeProvenance {
    pub model_ref: String,
    pub prompt: Vec<Message>,
    /// Every raw reply received, including rejected attempts.
    pub raw_replies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    pub rubric_id: String,
    pub text_hash: String,
    pub per_criterion: Vec<CriterionGrade>,
    pub total_points: f64,
    pub max_total: u32,
    pub feedback_text: String,
    pub provenance: GradeProvenance,
}

pub const EMPTY_SUBMISSION_FEEDBACK: &str = "no submission content";

fn parse_grade(reply: &str, rubric: &Rubric) -> Option<(Vec<CriterionGrade>, String)> {
    let doc = extract_json(reply)?;
    let items = doc.get("criteria")?.as_array()?;
    let mut out = Vec::with_capacity(rubric.criteria.len());
    for c in &rubric.criteria {
        let item = items.iter().find(|i| i.get("name").and_then(Value::as_str) == Some(c.name.as_str()))?;
        let raw = item.get("points")?.as_f64()?;
        if !raw.is_finite() {
            return None;
        }
        let points = raw.clamp(0.0, c.max_points as f64);
        out.push(CriterionGrade {
            name: c.name.clone(),
            points,
            max_points: c.max_points,
            comment: item.get("comment").and_then(Value::as_str).unwrap_or("").to_owned(),
            clamped: points != raw,
        });
    }
    let feedback = doc.get("feedback").and_then(Value::as_str).unwrap_or("").to_owned();
    Some((out, feedback))
}

/// Rubric grading by the model. An unparseable reply is retried once.
pub fn grade_submission(text: &str, rubric: &Rubric, gateway: &Gateway, model_ref: &str) -> Result<Grade, WritingError> {
    rubric.validate()?;
    let mut grade = Grade {
        rubric_id: rubric.rubric_id.clone(),
        text_hash: text_hash(text),
        per_criterion: rubric
            .criteria
            .iter()
            .map(|c| CriterionGrade {
                name: c.name.clone(),
                points: 0.0,
                max_points: c.max_points,
                comment: String::new(),
                clamped: false,
            })
            .collect(),
        total_points: 0.0,
        max_total: rubric.total(),
        feedback_text: EMPTY_SUBMISSION_FEEDBACK.into(),
        provenance: GradeProvenance {
            model_ref: model_ref.to_owned(),
            prompt: Vec::new(),
            raw_replies: Vec::new(),
        },
    };
    if text.trim().is_empty() {
        return Ok(grade);
    }
    let rubric_text: String = rubric
        .criteria
        .iter()
        .map(|c| format!("- {} (max {} points): {}\n", c.name, c.max_points, c.description))
        .collect();
    let req = ProviderRequest::new(
        model_ref,
        GRADING_PROMPT,
        vec![Message::user(format!("Rubric:\n{rubric_text}\nSubmission:\n{text}"))],
        params(),
    );
    grade.provenance.prompt = req.messages.clone();
    for _ in 0..2 {
        let reply = gateway.complete(&req)?;
        grade.provenance.raw_replies.push(reply.text.clone());
        if let Some((per, feedback)) = parse_grade(&reply.text, rubric) {
            grade.total_points = per.iter().map(|c| c.points).sum();
            grade.per_criterion = per;
            grade.feedback_text = feedback;
            return Ok(grade);
        }
    }
    Err(WritingError::UnparseableReply {
        raw: grade.provenance.raw_replies.pop().unwrap_or_default(),
    })
}
