//! Naive full-scan tip retrieval.

use empo_core::memory::Tip;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Tips with cosine strictly above 0.5, best score first, older first on
/// ties, at most ten.
pub fn oracle_retrieve(entries: &[Tip<f64>], key: &[f64]) -> Vec<Tip<f64>> {
    let mut hits: Vec<Tip<f64>> = Vec::new();
    for e in entries {
        if cosine(&e.key, key) > 0.5 {
            hits.push(e.clone());
        }
    }
    for i in 1..hits.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (&hits[j - 1], &hits[j]);
            let out_of_order = a.score < b.score || (a.score == b.score && a.seq > b.seq);
            if !out_of_order {
                break;
            }
            hits.swap(j - 1, j);
            j -= 1;
        }
    }
    hits.truncate(10);
    hits
}
