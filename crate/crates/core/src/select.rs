//! Top-M selection, the primitive every index policy reduces to.

use std::cmp::Ordering;

use rand::seq::index::sample;

use crate::rng::RngStream;

fn key(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

fn desc(a: f64, b: f64) -> Ordering {
    key(b).partial_cmp(&key(a)).expect("keys are never NaN")
}

/// Indices of the `m` largest scores, sorted ascending.
///
/// Ties at the selection boundary are broken uniformly at random over the
/// tied set. NaN scores rank below everything, including `-inf`'s peers.
///
/// # Panics
/// If `m > scores.len()`.
pub fn top_m_by_score(scores: &[f64], m: usize, rng: &mut RngStream) -> Vec<usize> {
    let n = scores.len();
    assert!(m <= n, "cannot select {m} of {n} scores");
    if m == 0 {
        return Vec::new();
    }
    if m == n {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.select_nth_unstable_by(m - 1, |&a, &b| desc(scores[a], scores[b]));
    let threshold = key(scores[order[m - 1]]);

    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut tied: Vec<usize> = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        match key(s).partial_cmp(&threshold).expect("keys are never NaN") {
            Ordering::Greater => chosen.push(i),
            Ordering::Equal => tied.push(i),
            Ordering::Less => {}
        }
    }
    let need = m - chosen.len();
    if need == tied.len() {
        chosen.extend_from_slice(&tied);
    } else {
        chosen.extend(sample(rng, tied.len(), need).into_iter().map(|k| tied[k]));
    }
    chosen.sort_unstable();
    chosen
}
