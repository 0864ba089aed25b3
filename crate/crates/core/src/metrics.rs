//! Recall@K and NDCG@K for rankings with a single relevant item, plus
//! aggregation over users and over repeated runs.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("ranking is not a permutation of 0..{0}")]
    NotAPermutation(usize),
    #[error("target index {target} out of range for {n} candidates")]
    TargetOutOfRange { target: usize, n: usize },
    #[error("cannot aggregate an empty set of scores")]
    Empty,
}

/// Which ranking a score was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    /// Unmentioned candidates appended in candidate order; every K ≥ n
    /// collapses to K = n.
    #[default]
    Completed,
    /// Only the parsed prefix counts; an unparsed target scores zero at
    /// every K.
    Strict,
}

impl ScoringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMode::Completed => "completed",
            ScoringMode::Strict => "strict",
        }
    }
}

impl std::str::FromStr for ScoringMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "completed" => Ok(Self::Completed),
            "strict" => Ok(Self::Strict),
            other => Err(format!("unknown scoring mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    /// 1-based position of the target, absent when it was never ranked.
    pub target_rank: Option<usize>,
    pub recall_at: IndexMap<usize, f64>,
    pub ndcg_at: IndexMap<usize, f64>,
}

/// Scores a known target rank (1-based) against each K.
pub fn score_rank(target_rank: Option<usize>, ks: &[usize]) -> InstanceScore {
    let mut recall_at = IndexMap::with_capacity(ks.len());
    let mut ndcg_at = IndexMap::with_capacity(ks.len());
    for &k in ks {
        let (r, n) = match target_rank {
            Some(r) if r <= k => (1.0, 1.0 / ((r + 1) as f64).log2()),
            _ => (0.0, 0.0),
        };
        recall_at.insert(k, r);
        ndcg_at.insert(k, n);
    }
    InstanceScore {
        target_rank,
        recall_at,
        ndcg_at,
    }
}

/// Scores a full ranking. `ranking` must be a permutation of `0..n`.
pub fn score_instance(
    ranking: &[usize],
    target_index: usize,
    ks: &[usize],
) -> Result<InstanceScore, MetricsError> {
    let n = ranking.len();
    if target_index >= n {
        return Err(MetricsError::TargetOutOfRange {
            target: target_index,
            n,
        });
    }
    let mut seen = vec![false; n];
    for &i in ranking {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(MetricsError::NotAPermutation(n));
        }
    }
    let pos = ranking
        .iter()
        .position(|&i| i == target_index)
        .expect("permutation contains target");
    Ok(score_rank(Some(pos + 1), ks))
}

/// Strict-mode score over a partial ranking: only the parsed prefix is
/// considered.
pub fn score_partial(parsed: &[usize], target_index: usize, ks: &[usize]) -> InstanceScore {
    let rank = parsed
        .iter()
        .position(|&i| i == target_index)
        .map(|p| p + 1);
    score_rank(rank, ks)
}

/// Mean over users, per K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeans {
    pub users: usize,
    pub recall_at: IndexMap<usize, f64>,
    pub ndcg_at: IndexMap<usize, f64>,
}

pub fn aggregate_users(scores: &[InstanceScore], ks: &[usize]) -> Result<RunMeans, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let u = scores.len() as f64;
    let mean = |pick: fn(&InstanceScore) -> &IndexMap<usize, f64>, k: usize| {
        scores
            .iter()
            .map(|s| pick(s).get(&k).copied().unwrap_or(0.0))
            .sum::<f64>()
            / u
    };
    Ok(RunMeans {
        users: scores.len(),
        recall_at: ks.iter().map(|&k| (k, mean(|s| &s.recall_at, k))).collect(),
        ndcg_at: ks.iter().map(|&k| (k, mean(|s| &s.ndcg_at, k))).collect(),
    })
}

/// Unweighted mean and sample standard deviation; std is 0 for one run.
pub fn aggregate_runs(run_means: &[f64]) -> Option<(f64, f64)> {
    if run_means.is_empty() {
        return None;
    }
    let first = run_means[0];
    if run_means.iter().all(|&x| x == first) {
        return Some((first, 0.0));
    }
    let n = run_means.len() as f64;
    let mean = run_means.iter().sum::<f64>() / n;
    let var = run_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
