//! Verbatim overlap between an essay and source texts.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use super::annotation::{Annotation, AnnotationKind, AnnotationSet, SourceRef};
use super::text::{tokenize, Token};

/// Shortest copied run that is flagged, in tokens.
pub const MIN_RUN: usize = 8;

const BASE: u64 = 0x100_0000_01b3;

fn token_hash(t: &str) -> u64 {
    let mut h = DefaultHasher::new();
    t.hash(&mut h);
    h.finish()
}

/// Rolling hashes of every `w`-token window.
fn window_hashes(tokens: &[u64], w: usize) -> Vec<u64> {
    if tokens.len() < w {
        return Vec::new();
    }
    let top = (1..w).fold(1u64, |p, _| p.wrapping_mul(BASE));
    let mut h = tokens[..w].iter().fold(0u64, |h, &t| h.wrapping_mul(BASE).wrapping_add(t));
    let mut out = Vec::with_capacity(tokens.len() - w + 1);
    out.push(h);
    for i in w..tokens.len() {
        h = h
            .wrapping_sub(tokens[i - w].wrapping_mul(top))
            .wrapping_mul(BASE)
            .wrapping_add(tokens[i]);
        out.push(h);
    }
    out
}

/// A copied stretch of the essay, in token indices, with the first matching
/// source diagonal.
struct Run {
    start: usize,
    end: usize,
    source: usize,
    source_start: usize,
    source_len: usize,
}

fn runs_against(essay: &[Token], essay_hashes: &[u64], source: &[Token], source_idx: usize) -> Vec<Run> {
    let src_ids: Vec<u64> = source.iter().map(|t| token_hash(&t.norm)).collect();
    let mut index: HashMap<u64, Vec<usize>> = HashMap::new();
    for (j, h) in window_hashes(&src_ids, MIN_RUN).into_iter().enumerate() {
        index.entry(h).or_default().push(j);
    }
    let same = |i: usize, j: usize| (0..MIN_RUN).all(|k| essay[i + k].norm == source[j + k].norm);
    let mut runs: Vec<Run> = Vec::new();
    for (i, h) in essay_hashes.iter().enumerate() {
        let Some(cands) = index.get(h) else { continue };
        let Some(&j) = cands.iter().find(|&&j| same(i, j)) else { continue };
        match runs.last_mut() {
            Some(r) if i < r.end => r.end = r.end.max(i + MIN_RUN),
            _ => {
                let mut len = MIN_RUN;
                while i + len < essay.len() && j + len < source.len() && essay[i + len].norm == source[j + len].norm {
                    len += 1;
                }
                runs.push(Run {
                    start: i,
                    end: i + MIN_RUN,
                    source: source_idx,
                    source_start: j,
                    source_len: len,
                });
            }
        }
    }
    runs
}

/// Flags every stretch of the essay covered by a run of at least
/// [`MIN_RUN`] tokens that also appears verbatim in a source. Runs from
/// different sources that overlap are merged; the reference points at the
/// source whose run starts first.
pub fn analyze_originality(text: &str, sources: &[(String, String)]) -> AnnotationSet {
    let essay = tokenize(text);
    if essay.len() < MIN_RUN || sources.is_empty() {
        return AnnotationSet::empty(text);
    }
    let essay_ids: Vec<u64> = essay.iter().map(|t| token_hash(&t.norm)).collect();
    let essay_hashes = window_hashes(&essay_ids, MIN_RUN);
    let source_tokens: Vec<Vec<Token>> = sources.iter().map(|(_, s)| tokenize(s)).collect();

    let mut runs: Vec<Run> = source_tokens
        .iter()
        .enumerate()
        .flat_map(|(si, toks)| runs_against(&essay, &essay_hashes, toks, si))
        .collect();
    runs.sort_by_key(|r| (r.start, r.source));

    let mut merged: Vec<Run> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(m) if r.start < m.end => m.end = m.end.max(r.end),
            _ => merged.push(r),
        }
    }

    let annotations = merged
        .into_iter()
        .map(|r| {
            let src = &source_tokens[r.source];
            Annotation {
                span: (essay[r.start].start, essay[r.end - 1].end),
                kind: AnnotationKind::Originality,
                label: format!("{} consecutive words match a source", r.end - r.start),
                suggestion: Some("Paraphrase or quote and cite the source.".into()),
                source_ref: Some(SourceRef {
                    source_id: sources[r.source].0.clone(),
                    source_span: (src[r.source_start].start, src[r.source_start + r.source_len - 1].end),
                }),
            }
        })
        .collect();
    AnnotationSet::new(text, annotations)
}
