//! Tokens and sentences with Unicode scalar-value offsets.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Case-folded word with leading/trailing punctuation removed.
    pub norm: String,
    /// Char offsets of the stripped word in the original text.
    pub start: usize,
    pub end: usize,
}

fn normalize_char(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{02BC}' => '\'',
        _ => c,
    }
}

/// Splits on Unicode whitespace, strips leading and trailing
/// non-alphanumerics and lowercases. Pieces with no alphanumerics are dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let mut s = i;
        let mut e = j;
        while s < e && !chars[s].is_alphanumeric() {
            s += 1;
        }
        while e > s && !chars[e - 1].is_alphanumeric() {
            e -= 1;
        }
        if s < e {
            let norm = chars[s..e]
                .iter()
                .map(|&c| normalize_char(c))
                .flat_map(char::to_lowercase)
                .collect();
            out.push(Token { norm, start: s, end: e });
        }
        i = j;
    }
    out
}

const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "etc", "vs", "cf", "al", "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "fig", "no", "vol",
    "approx", "ca", "ed", "eds", "pp", "p", "ch", "sec", "dept", "inc", "ltd", "jan", "feb", "mar", "apr", "jun",
    "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{201D}' | '\u{2019}' | '\u{00BB}')
}

/// Sentence char spans. A sentence ends at `.`, `!` or `?` (plus any closing
/// quotes or brackets) followed by whitespace or the end of text. A period
/// after a known abbreviation or a single capital initial does not end a
/// sentence. Spans are trimmed and together cover every non-whitespace char.
pub fn sentences(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if start.is_none() {
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            start = Some(i);
        }
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while end < n && (matches!(chars[end], '.' | '!' | '?') || is_closer(chars[end])) {
                end += 1;
            }
            let boundary = end == n || chars[end].is_whitespace();
            if boundary && !(c == '.' && abbreviation_before(&chars, start.unwrap_or(0), i)) {
                out.push((start.take().unwrap_or(0), end));
            }
            i = end;
            continue;
        }
        i += 1;
    }
    if let Some(s) = start {
        let mut e = n;
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if e > s {
            out.push((s, e));
        }
    }
    out
}

fn abbreviation_before(chars: &[char], sentence_start: usize, dot: usize) -> bool {
    let mut s = dot;
    while s > sentence_start && !chars[s - 1].is_whitespace() {
        s -= 1;
    }
    let word: String = chars[s..dot]
        .iter()
        .skip_while(|c| !c.is_alphanumeric())
        .collect();
    if word.chars().count() == 1 && word.chars().all(char::is_uppercase) {
        return true;
    }
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

/// Substring by char offsets.
pub fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}
