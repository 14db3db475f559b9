//! Essay analytics. All offsets are Unicode scalar-value indices.

mod academic;
mod annotation;
mod llm;
mod originality;
pub mod text;

pub use academic::{analyze_academic, AcademicLexicon, IssueKind, LexiconEntry, LexiconError};
pub use annotation::{text_hash, Annotation, AnnotationKind, AnnotationSet, SourceRef};
pub use llm::{
    analyze_basic, classify_cognition, extract_json, grade_submission, BloomLevel, Criterion, CriterionGrade, Grade,
    GradeProvenance, Rubric, WritingError, EMPTY_SUBMISSION_FEEDBACK,
};
pub use originality::{analyze_originality, MIN_RUN};
