//! Brute-force originality oracle and planted-essay generators.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regulearn::writing::analyze_originality;


/// Word tokens with char offsets: whitespace-split, outer punctuation trimmed.
pub fn words(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in text.split(' ') {
        let n = piece.chars().count();
        let lead = piece.chars().take_while(|c| !c.is_alphanumeric()).count();
        let trail = piece.chars().rev().take_while(|c| !c.is_alphanumeric()).count();
        if lead < n {
            let core: String = piece.chars().skip(lead).take(n - lead - trail).collect();
            out.push((core.to_lowercase(), offset + lead, offset + n - trail));
        }
        offset += n + 1;
    }
    out
}

/// Slides every 8-word window of the essay over every source position and
/// unions overlapping hits into maximal char spans.
pub fn oracle_spans(essay: &str, sources: &[String]) -> Vec<(usize, usize)> {
    const W: usize = 8;
    let e = words(essay);
    let mut hit = vec![false; e.len()];
    for src in sources {
        let s = words(src);
        for i in 0..e.len().saturating_sub(W - 1) {
            if (0..s.len().saturating_sub(W - 1)).any(|j| (0..W).all(|k| e[i + k].0 == s[j + k].0)) {
                hit[i] = true;
            }
        }
    }
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut last_end_word = 0;
    for i in 0..hit.len() {
        if !hit[i] {
            continue;
        }
        match spans.last_mut() {
            Some(span) if i < last_end_word => {
                span.1 = e[i + W - 1].2;
                last_end_word = i + W;
            }
            _ => {
                spans.push((e[i].1, e[i + W - 1].2));
                last_end_word = i + W;
            }
        }
    }
    spans
}

pub fn filler(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|_| format!("{prefix}{}", rng.gen_range(0..400))).collect()
}

pub fn punctuate(words: &[String], rng: &mut ChaCha8Rng) -> String {
    words
        .iter()
        .map(|w| match rng.gen_range(0..12) {
            0 => format!("{w},"),
            1 => format!("{w}."),
            2 => {
                let mut c = w.chars();
                let f = c.next().unwrap().to_uppercase().collect::<String>();
                f + c.as_str()
            }
            _ => w.clone(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// An essay with one run of `k` words copied from a random source.
pub fn planted(rng: &mut ChaCha8Rng, k: usize) -> (String, Vec<String>) {
    let sources: Vec<Vec<String>> = (0..3).map(|_| filler(rng, "src", 120)).collect();
    let from = rng.gen_range(0..3);
    let at = rng.gen_range(0..120 - k);
    let n = rng.gen_range(10..60);
    let mut essay = filler(rng, "ess", n);
    let insert = rng.gen_range(0..=essay.len());
    let run = sources[from][at..at + k].to_vec();
    essay.splice(insert..insert, run);
    let sources = sources.iter().map(|s| punctuate(s, rng)).collect();
    (punctuate(&essay, rng), sources)
}

pub fn engine_spans(essay: &str, sources: &[String]) -> Vec<(usize, usize)> {
    let named: Vec<(String, String)> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("s{i}"), s.clone()))
        .collect();
    analyze_originality(essay, &named)
        .annotations
        .iter()
        .map(|a| a.span)
        .collect()
}

/// Runs `n` planted essays (k = 5..12) against the oracle. Panics on any
/// span mismatch or threshold violation; returns the number of true positives.
pub fn threshold_sweep(seed: u64, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for n in 0..n {
        let k = 5 + n % 8;
        let (essay, sources) = planted(&mut rng, k);
        let want = oracle_spans(&essay, &sources);
        let got = engine_spans(&essay, &sources);
        assert_eq!(got, want, "essay {n} with k={k}");
        // Run-level expectation; filler vocabularies are disjoint.
        assert_eq!(!got.is_empty(), k >= 8, "essay {n} with k={k}");
        for span in &got {
            if want.contains(span) { tp += 1 } else { fp += 1 }
        }
        fneg += want.iter().filter(|s| !got.contains(s)).count();
    }
    assert_eq!((fp, fneg), (0, 0));
    assert!(tp > 0);
    tp
}

/// Times one 10k-word essay against three 5k-word sources.
pub fn ten_thousand_word_run() -> Duration {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sources: Vec<(String, String)> = (0..3)
        .map(|i| (format!("s{i}"), filler(&mut rng, "src", 5_000).join(" ")))
        .collect();
    let mut essay = filler(&mut rng, "src", 10_000);
    // A few long copied stretches.
    for _ in 0..5 {
        let s: Vec<&str> = sources[rng.gen_range(0..3)].1.split(' ').collect();
        let at = rng.gen_range(0..4_900);
        let to = rng.gen_range(0..9_900);
        for k in 0..40 {
            essay[to + k % 100] = s[at + k].to_owned();
        }
    }
    let text = essay.join(" ");
    let start = Instant::now();
    let set = analyze_originality(&text, &sources);
    let took = start.elapsed();
    assert!(!set.annotations.is_empty());
    took
}
