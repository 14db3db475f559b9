// Writing analytics: rule-based academic style, source overlap and
// model-backed rubric grading of a submission.
//
//     cargo run -p regulearn --example writing_feedback

use std::sync::Arc;

use regulearn::agents::{Gateway, ProviderLimits, ScriptedProvider};
use regulearn::clock::SystemClock;
use regulearn::engine::{AnalysisKind, AnalyzeRequest, Engine, EngineConfig, NewSession, Source};
use regulearn::writing::{analyze_academic, analyze_originality, AcademicLexicon, Criterion, Rubric};
use serde_json::json;

const SOURCE: &str = "Adaptive tutoring systems adjust the difficulty of each exercise to the \
                      demonstrated skill of the learner and report progress to the teacher.";

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let essay = "We don't think schools are ready. Adaptive tutoring systems adjust the difficulty \
                 of each exercise to the demonstrated skill of the learner, which is a big deal.";

    let style = analyze_academic(essay, &AcademicLexicon::default_lexicon());
    for a in &style.annotations {
        let excerpt: String = essay.chars().skip(a.span.0).take(a.span.1 - a.span.0).collect();
        println!("{:?} {:?} \"{excerpt}\" -> {:?}", a.kind, a.span, a.suggestion);
    }
    let overlap = analyze_originality(essay, &[("reading-1".into(), SOURCE.into())]);
    for a in &overlap.annotations {
        println!("overlap {:?} with {:?}", a.span, a.source_ref);
    }

    // The same analyzers through the engine, plus grading by a model.
    let gateway = Arc::new(Gateway::new());
    gateway.register(
        "writing",
        Arc::new(ScriptedProvider::with_replies([json!({
            "criteria": [{"name": "argument", "points": 3, "comment": "State your claim earlier."}],
            "feedback": "A clear topic; cite the reading instead of copying it."
        })
        .to_string()])),
        ProviderLimits::default(),
    );
    let engine = Engine::open_with_gateway(EngineConfig::default(), Arc::new(SystemClock), gateway)?;
    engine.create_session(NewSession {
        session_id: Some("s".into()),
        learner_id: "learner-1".into(),
        experiment_id: "pilot".into(),
        group: "PwC".into(),
    })?;
    engine.put_source_set("readings", vec![Source { source_id: "reading-1".into(), text: SOURCE.into() }])?;
    let report = engine.analyze(&AnalyzeRequest {
        session_id: "s".into(),
        text: essay.into(),
        kinds: vec![AnalysisKind::Academic, AnalysisKind::Originality],
        source_set_id: Some("readings".into()),
        lexicon_id: None,
    })?;
    println!("\nengine report: {}", serde_json::to_string(&report)?);

    engine.put_rubric(Rubric {
        rubric_id: "essay".into(),
        criteria: vec![Criterion {
            name: "argument".into(),
            description: "A clear, supported claim".into(),
            max_points: 5,
        }],
    })?;
    let graded = engine.submit("s", essay, Some("essay"))?;
    println!("grade: {}/{}: {}", graded.grade.total_points, graded.grade.max_total, graded.grade.feedback_text);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
