//! Tokenization and lexical similarity shared by recall and plan merging.

use std::collections::HashMap;

/// Lowercased alphanumeric runs; `_`, `-` and punctuation separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Multiset Jaccard overlap `Σ min / Σ max` in `[0, 1]`.
///
/// Identical token multisets score 1; two empty inputs score 0.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokenize(a), tokenize(b));
    let (ca, cb) = (counts(&ta), counts(&tb));
    let mut inter = 0usize;
    let mut union = 0usize;
    for (tok, &na) in &ca {
        let nb = cb.get(tok).copied().unwrap_or(0);
        inter += na.min(nb);
        union += na.max(nb);
    }
    for (tok, &nb) in &cb {
        if !ca.contains_key(tok) {
            union += nb;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// First `max_chars` characters of `s`, with an ellipsis when cut.
pub fn truncate_chars(s: &str, max_chars: usize) -> String {
    match s.char_indices().nth(max_chars) {
        Some((idx, _)) => format!("{}...", &s[..idx]),
        None => s.to_string(),
    }
}
