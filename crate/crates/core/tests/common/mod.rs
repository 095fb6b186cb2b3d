//! Oracles shared by integration tests.

use std::collections::HashSet;

use mmd_core::domain::tokenize;
use mmd_core::retrieval::{CorpusDoc, BM25_B, BM25_K1};

/// Scores every document independently with the textbook formula.
pub fn naive_bm25(docs: &[CorpusDoc], query: &str) -> Vec<(String, f64)> {
    let bodies: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.body)).collect();
    let n = docs.len() as f64;
    let avgdl = bodies.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<String> = tokenize(query).into_iter().collect::<HashSet<_>>().into_iter().collect();
    terms.sort();
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .zip(&bodies)
        .map(|(d, body)| {
            let mut s = 0.0;
            for t in &terms {
                let tf = body.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = bodies.iter().filter(|b| b.contains(t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                s += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * body.len() as f64 / avgdl));
            }
            (d.doc_id.clone(), s)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

