//! Cross-validated grid search over the aggregation parameters.
//!
//! For `n <= 3` the grid is `a, w_2, w_3` in `{0.0, 0.1, .., 1.0}` with
//! `w_1 = 1`. For `n = 4` the best 3-sentence point is refined: `w_4` spans
//! the full grid while `a, w_2, w_3` move at most one step from their
//! 3-sentence values. Candidates are ranked by mean AP on the training folds.
//! Ties go to the largest `a` (closest to the retrieval ranking), then to the
//! lexicographically smallest `(w_2, w_3, w_4)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::{average_precision, Qrels};
use crate::rerank::{rank_features, AggregationParams, RerankError, TopicFeatures};

const STEPS: usize = 10;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid folds: {0}")]
    Folds(String),
    #[error("no features for topic {0}")]
    MissingTopic(String),
    #[error("no topic with relevant documents among {0}")]
    NothingToEvaluate(String),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

/// Disjoint topic sets; at least two.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct FoldSpec {
    folds: Vec<BTreeSet<String>>,
}

impl TryFrom<Vec<Vec<String>>> for FoldSpec {
    type Error = TuneError;

    fn try_from(folds: Vec<Vec<String>>) -> Result<Self, Self::Error> {
        FoldSpec::new(folds)
    }
}

impl From<FoldSpec> for Vec<Vec<String>> {
    fn from(spec: FoldSpec) -> Self {
        spec.folds
            .into_iter()
            .map(|f| f.into_iter().collect())
            .collect()
    }
}

impl FoldSpec {
    pub fn new<F, T>(folds: F) -> Result<Self, TuneError>
    where
        F: IntoIterator<Item = T>,
        T: IntoIterator,
        T::Item: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (i, fold) in folds.into_iter().enumerate() {
            let mut set = BTreeSet::new();
            for topic in fold {
                let topic = topic.into();
                if !seen.insert(topic.clone()) {
                    return Err(TuneError::Folds(format!("topic {topic} appears twice")));
                }
                set.insert(topic);
            }
            if set.is_empty() {
                return Err(TuneError::Folds(format!("fold {i} is empty")));
            }
            out.push(set);
        }
        if out.len() < 2 {
            return Err(TuneError::Folds("need at least 2 folds".into()));
        }
        Ok(FoldSpec { folds: out })
    }

    /// `k` folds of consecutive topics, sizes differing by at most one.
    pub fn contiguous(topics: &[String], k: usize) -> Result<Self, TuneError> {
        if k < 2 || topics.len() < k {
            return Err(TuneError::Folds(format!("cannot split {} topics into {k} folds", topics.len())));
        }
        let base = topics.len() / k;
        let extra = topics.len() % k;
        let mut start = 0;
        let mut folds = Vec::with_capacity(k);
        for i in 0..k {
            let size = base + usize::from(i < extra);
            folds.push(topics[start..start + size].to_vec());
            start += size;
        }
        FoldSpec::new(folds)
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn fold(&self, i: usize) -> &BTreeSet<String> {
        &self.folds[i]
    }

    pub fn all_topics(&self) -> BTreeSet<String> {
        self.folds.iter().flatten().cloned().collect()
    }

    /// Union of every fold except `held_out`.
    pub fn training(&self, held_out: usize) -> BTreeSet<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != held_out)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

fn step(i: usize) -> f64 {
    i as f64 / STEPS as f64
}

/// Grid index of a value that lies on the grid.
fn grid_index(v: f64) -> Option<usize> {
    let i = (v * STEPS as f64).round();
    (i >= 0.0 && i <= STEPS as f64 && step(i as usize) == v).then_some(i as usize)
}

fn neighbors(i: usize) -> Vec<usize> {
    (i.saturating_sub(1)..=(i + 1).min(STEPS)).collect()
}

/// Exhaustive grid for 1, 2 or 3 sentences, in lexicographic
/// `(a, w_2, w_3)` order.
pub fn make_grid(n: usize) -> Result<Vec<AggregationParams>, TuneError> {
    if !(1..=3).contains(&n) {
        return Err(TuneError::Argument(format!(
            "make_grid takes n in 1..=3 (got {n}); use extend_grid_4s for n = 4"
        )));
    }
    let axis: Vec<usize> = (0..=STEPS).collect();
    let free: Vec<&[usize]> = std::iter::repeat_n(axis.as_slice(), n).collect();
    Ok(cartesian(&free)
        .into_iter()
        .map(|idx| {
            let mut w = vec![1.0];
            w.extend(idx[1..].iter().map(|&i| step(i)));
            AggregationParams::new(step(idx[0]), w).expect("grid points are valid")
        })
        .collect())
}

/// Four-sentence candidates around the best three-sentence point.
pub fn extend_grid_4s(best3: &AggregationParams) -> Result<Vec<AggregationParams>, TuneError> {
    if best3.n() != 3 {
        return Err(TuneError::Argument(format!("expected n = 3 parameters, got n = {}", best3.n())));
    }
    let centre: Vec<usize> = best3
        .sort_key()
        .into_iter()
        .map(|v| grid_index(v).ok_or_else(|| TuneError::Argument(format!("{v} is not on the 0.1 grid"))))
        .collect::<Result<_, _>>()?;
    let a = neighbors(centre[0]);
    let w2 = neighbors(centre[1]);
    let w3 = neighbors(centre[2]);
    let w4: Vec<usize> = (0..=STEPS).collect();
    Ok(cartesian(&[&a, &w2, &w3, &w4])
        .into_iter()
        .map(|idx| {
            AggregationParams::new(step(idx[0]), vec![1.0, step(idx[1]), step(idx[2]), step(idx[3])])
                .expect("grid points are valid")
        })
        .collect())
}

fn cartesian(axes: &[&[usize]]) -> Vec<Vec<usize>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

/// Mean AP over the given topics after reranking each from its features.
/// Topics without any relevant judgment do not count towards the mean.
pub fn evaluate_params(
    params: &AggregationParams,
    topics: &BTreeSet<String>,
    features: &BTreeMap<String, TopicFeatures>,
    qrels: &Qrels,
    depth: usize,
) -> Result<f64, TuneError> {
    if topics.is_empty() {
        return Err(TuneError::Argument("no topics to evaluate".into()));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for topic in topics {
        let feats = features
            .get(topic)
            .ok_or_else(|| TuneError::MissingTopic(topic.clone()))?;
        let relevant = qrels.relevant(topic);
        if relevant.is_empty() {
            continue;
        }
        let ranked = rank_features(feats, params);
        let ids: Vec<&str> = ranked.iter().map(|d| d.doc_id.as_str()).collect();
        total += average_precision(&ids, &relevant, depth);
        counted += 1;
    }
    if counted == 0 {
        return Err(TuneError::NothingToEvaluate(
            topics.iter().cloned().collect::<Vec<_>>().join(","),
        ));
    }
    Ok(total / counted as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: usize,
    pub best_params: AggregationParams,
    pub training_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub n: usize,
    pub per_fold: Vec<FoldResult>,
}

/// Preference order: higher AP, then larger `a`, then smaller sentence
/// weights.
pub fn preference(x: (f64, &AggregationParams), y: (f64, &AggregationParams)) -> Ordering {
    y.0.total_cmp(&x.0)
        .then_with(|| y.1.a().total_cmp(&x.1.a()))
        .then_with(|| {
            x.1.weights()
                .iter()
                .zip(y.1.weights())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn best_of(
    grid: &[AggregationParams],
    topics: &BTreeSet<String>,
    features: &BTreeMap<String, TopicFeatures>,
    qrels: &Qrels,
    depth: usize,
) -> Result<(AggregationParams, f64), TuneError> {
    let scored: Vec<f64> = grid
        .par_iter()
        .map(|p| evaluate_params(p, topics, features, qrels, depth))
        .collect::<Result<_, _>>()?;
    let (ap, params) = scored
        .iter()
        .copied()
        .zip(grid)
        .min_by(|x, y| preference((x.0, x.1), (y.0, y.1)))
        .ok_or_else(|| TuneError::Argument("empty grid".into()))?;
    Ok((params.clone(), ap))
}

/// For every held-out fold, selects the parameters with the best mean AP on
/// the remaining folds.
pub fn grid_search(
    folds: &FoldSpec,
    n: usize,
    features: &BTreeMap<String, TopicFeatures>,
    qrels: &Qrels,
    depth: usize,
) -> Result<TuneResult, TuneError> {
    if !(1..=4).contains(&n) {
        return Err(TuneError::Argument(format!("n must be in 1..=4, got {n}")));
    }
    let base_grid = make_grid(n.min(3))?;
    let mut per_fold = Vec::with_capacity(folds.len());
    for held_out in 0..folds.len() {
        let training = folds.training(held_out);
        let (mut best, mut ap) = best_of(&base_grid, &training, features, qrels, depth)?;
        if n == 4 {
            (best, ap) = best_of(&extend_grid_4s(&best)?, &training, features, qrels, depth)?;
        }
        per_fold.push(FoldResult {
            held_out,
            best_params: best,
            training_ap: ap,
        });
    }
    Ok(TuneResult { n, per_fold })
}
