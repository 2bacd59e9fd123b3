//! Recommendation evaluation over item embeddings.
//!
//! Per user: the last ten purchases are positives, ten items sampled from
//! outside the history are negatives, and the user embedding is the mean
//! of the remaining purchases. Candidates are ranked by cosine similarity
//! (ties broken by item id, ascending) and precision@K is averaged over
//! users.

use std::collections::{HashMap, HashSet};

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::derive_seed;

pub const HELD_OUT: usize = 10;
pub const NEGATIVES: usize = 10;

const STREAM_NEGATIVES: u64 = 21;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserHistory {
    pub user: String,
    /// Item ids in purchase order.
    pub items: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecommendReport {
    pub users: usize,
    /// (K, mean precision@K) pairs in the requested order.
    pub precision_at: Vec<(usize, f64)>,
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// `items` supplies the deterministic candidate universe (id, embedding);
/// ordering matters for reproducible negative sampling.
pub fn recommend_eval(
    items: &[(String, Array1<f64>)],
    histories: &[UserHistory],
    ks: &[usize],
    seed: u64,
) -> Result<RecommendReport> {
    let index: HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let mut per_k_totals = vec![0.0; ks.len()];

    for (user_pos, history) in histories.iter().enumerate() {
        if history.items.len() <= HELD_OUT {
            return Err(Error::InsufficientHistory {
                user: history.user.clone(),
                len: history.items.len(),
                required: HELD_OUT,
            });
        }
        for id in &history.items {
            if !index.contains_key(id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "history of `{}` references unknown item `{id}`",
                    history.user
                )));
            }
        }
        let split = history.items.len() - HELD_OUT;
        let (observed, positives) = history.items.split_at(split);

        let dim = items[0].1.len();
        let mut user_embedding = Array1::zeros(dim);
        for id in observed {
            user_embedding += &items[index[id.as_str()]].1;
        }
        user_embedding /= observed.len() as f64;

        let history_set: HashSet<&str> = history.items.iter().map(String::as_str).collect();
        let candidates_outside: Vec<usize> = (0..items.len())
            .filter(|&i| !history_set.contains(items[i].0.as_str()))
            .collect();
        if candidates_outside.len() < NEGATIVES {
            return Err(Error::InsufficientHistory {
                user: history.user.clone(),
                len: candidates_outside.len(),
                required: NEGATIVES,
            });
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_NEGATIVES, user_pos as u64]));
        let chosen =
            rand::seq::index::sample(&mut rng, candidates_outside.len(), NEGATIVES).into_vec();
        let negatives: Vec<usize> = chosen.into_iter().map(|i| candidates_outside[i]).collect();

        // Score positives and negatives together.
        let mut scored: Vec<(f64, &str, bool)> = Vec::with_capacity(HELD_OUT + NEGATIVES);
        for id in positives {
            let i = index[id.as_str()];
            scored.push((cosine(&items[i].1, &user_embedding), items[i].0.as_str(), true));
        }
        for &i in &negatives {
            scored.push((cosine(&items[i].1, &user_embedding), items[i].0.as_str(), false));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));

        for (slot, &k) in ks.iter().enumerate() {
            let k = k.min(scored.len());
            let hits = scored[..k].iter().filter(|(_, _, pos)| *pos).count();
            per_k_totals[slot] += hits as f64 / k as f64;
        }
    }

    let users = histories.len();
    Ok(RecommendReport {
        users,
        precision_at: ks
            .iter()
            .zip(per_k_totals)
            .map(|(&k, total)| (k, total / users.max(1) as f64))
            .collect(),
    })
}

pub fn read_histories_jsonl(text: &str) -> Result<Vec<UserHistory>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let history: UserHistory = serde_json::from_str(trimmed).map_err(|e| {
            Error::MalformedRecord {
                line: lineno + 1,
                column: e.column(),
                reason: format!("bad history row: {e}"),
            }
        })?;
        out.push(history);
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, axis: usize) -> Array1<f64> {
        let mut v = Array1::zeros(dim);
        v[axis] = 1.0;
        v
    }

    // Positives aligned with the user mean, negatives orthogonal: perfect
    // precision for K up to the number of positives.
    #[test]
    fn aligned_positives_score_perfectly() {
        let dim = 4;
        let mut items = Vec::new();
        // 15 observed + 10 positives on axis 0.
        for i in 0..25 {
            items.push((format!("p{i:02}"), unit(dim, 0)));
        }
        // Pool of orthogonal items for negatives.
        for i in 0..12 {
            items.push((format!("z{i:02}"), unit(dim, 1)));
        }
        let history = UserHistory {
            user: "u0".into(),
            items: (0..25).map(|i| format!("p{i:02}")).collect(),
        };
        let report =
            recommend_eval(&items, &[history], &[1, 3, 5, 8, 10], 7).unwrap();
        for (k, precision) in report.precision_at {
            assert_eq!(precision, 1.0, "precision@{k}");
        }
    }

    // All candidates tied: ranking falls back to item id, and with ids
    // interleaved positive/negative the top half alternates evenly.
    #[test]
    fn ties_resolve_by_item_id() {
        let dim = 3;
        let mut items = Vec::new();
        for i in 0..11 {
            items.push((format!("h{i:02}"), unit(dim, 0)));
        }
        // Positives at even ids, the negative pool at odd ids; every
        // candidate has the same embedding, so every score ties.
        for i in 0..10 {
            items.push((format!("t{:02}", 2 * i), unit(dim, 0)));
            items.push((format!("t{:02}", 2 * i + 1), unit(dim, 0)));
        }
        let mut history_items: Vec<String> = (0..11).map(|i| format!("h{i:02}")).collect();
        history_items.extend((0..10).map(|i| format!("t{:02}", 2 * i)));
        let history = UserHistory {
            user: "u0".into(),
            items: history_items,
        };
        let report = recommend_eval(&items, &[history], &[2, 10], 3).unwrap();
        for (_, precision) in report.precision_at {
            assert_eq!(precision, 0.5);
        }
    }

    #[test]
    fn short_history_is_rejected() {
        let items = vec![("a".to_string(), unit(2, 0)); 1];
        let history = UserHistory {
            user: "u0".into(),
            items: vec!["a".to_string(); 10],
        };
        assert!(matches!(
            recommend_eval(&items, &[history], &[1], 0),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn negative_sampling_is_seed_deterministic() {
        let dim = 3;
        let mut items: Vec<(String, Array1<f64>)> = (0..30)
            .map(|i| (format!("i{i:02}"), unit(dim, i % dim)))
            .collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));
        let history = UserHistory {
            user: "u0".into(),
            items: (0..15).map(|i| format!("i{i:02}")).collect(),
        };
        let a = recommend_eval(&items, &[history.clone()], &[5], 9).unwrap();
        let b = recommend_eval(&items, &[history], &[5], 9).unwrap();
        assert_eq!(a.precision_at, b.precision_at);
    }
}
