//! Interaction logs, item catalogs, user sampling and leave-last-out
//! evaluation instances.
//!
//! Everything here is a pure function of its inputs. Randomness comes from
//! ChaCha streams seeded by the caller's seed mixed with the user id, so an
//! instance does not depend on which other users were sampled alongside it.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::parser::normalize_title;

/// Number of redraws allowed when a negative collides with a title already
/// in the candidate set (after normalization).
const MAX_RESAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate item_id {0:?} in catalog")]
    DuplicateItem(String),
    #[error("interactions reference unknown item ids: {}", .0.join(", "))]
    UnknownItems(Vec<String>),
    #[error("cannot sample {requested} users from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("n_candidates must be at least 2, got {0}")]
    TooFewCandidates(usize),
    #[error("user {0:?} has fewer than two interactions")]
    SequenceTooShort(String),
    #[error("catalog too small to supply {needed} negatives for user {user:?}")]
    NotEnoughNegatives { user: String, needed: usize },
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub title: String,
    /// Filesystem path, http(s) URL or data URI. Items without an image can
    /// only be used by text-only strategies.
    #[serde(rename = "image")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// Catalog keyed by item id, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    items: IndexMap<String, Item>,
}

impl Catalog {
    pub fn from_items(items: impl IntoIterator<Item = Item>) -> Result<Self, CorpusError> {
        let mut map = IndexMap::new();
        for item in items {
            if map.contains_key(&item.item_id) {
                return Err(CorpusError::DuplicateItem(item.item_id));
            }
            map.insert(item.item_id.clone(), item);
        }
        Ok(Self { items: map })
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.items.get(item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.items.values()
    }
}

/// One history position: the item and its (title, image) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub item_id: String,
    pub title: String,
    pub image_ref: Option<String>,
}

impl From<&Item> for SequenceEntry {
    fn from(item: &Item) -> Self {
        Self {
            item_id: item.item_id.clone(),
            title: item.title.clone(),
            image_ref: item.image_ref.clone(),
        }
    }
}

/// A user's interactions in chronological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    pub entries: Vec<SequenceEntry>,
}

/// Leave-last-out instance: history, shuffled candidate titles, and where
/// the target landed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub user_id: String,
    pub history: Vec<SequenceEntry>,
    pub candidates: Vec<String>,
    pub target_index: usize,
    pub rng_seed: u64,
}

impl EvalInstance {
    pub fn target_title(&self) -> &str {
        &self.candidates[self.target_index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Fraction in `[0, 1]`.
    pub sparsity: f64,
}

impl DatasetStats {
    /// Sparsity as a percentage rounded to two decimals.
    pub fn sparsity_pct(&self) -> f64 {
        (self.sparsity * 10_000.0).round() / 100.0
    }

    pub fn to_csv(&self) -> String {
        format!(
            "users,items,interactions,sparsity_pct\n{},{},{},{:.2}\n",
            self.users,
            self.items,
            self.interactions,
            self.sparsity_pct()
        )
    }
}

/// Result of [`load_corpus`].
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sequences: Vec<UserSequence>,
    pub catalog: Catalog,
    /// Users dropped for having fewer than two interactions.
    pub dropped_users: usize,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads a catalog. Relative local image paths resolve against the
/// catalog file's directory; URLs and data URIs are kept as written.
pub fn load_catalog(path: &Path) -> Result<Catalog, CorpusError> {
    let mut items: Vec<Item> = read_jsonl(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for (idx, item) in items.iter_mut().enumerate() {
        if let Some(r) = item.image_ref.as_mut() {
            let is_url =
                r.starts_with("data:") || r.starts_with("http://") || r.starts_with("https://");
            if !is_url && !r.is_empty() && Path::new(r.as_str()).is_relative() {
                *r = base.join(r.as_str()).to_string_lossy().into_owned();
            }
        }
        if item.title.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("item {:?} has an empty title", item.item_id),
            });
        }
    }
    Catalog::from_items(items)
}

pub fn load_corpus(interactions_path: &Path, catalog_path: &Path) -> Result<Corpus, CorpusError> {
    let catalog = load_catalog(catalog_path)?;
    let interactions: Vec<Interaction> = read_jsonl(interactions_path)?;
    let (sequences, dropped_users) = group_interactions(&interactions, &catalog)?;
    if dropped_users > 0 {
        log::info!("dropped {dropped_users} users with fewer than two interactions");
    }
    Ok(Corpus {
        sequences,
        catalog,
        dropped_users,
    })
}

/// Groups interactions into per-user sequences sorted by timestamp, ties
/// broken by input order. Users keep the order of their first appearance.
/// Returns the sequences and the number of users dropped for `m < 2`.
pub fn group_interactions(
    interactions: &[Interaction],
    catalog: &Catalog,
) -> Result<(Vec<UserSequence>, usize), CorpusError> {
    let mut unknown: Vec<String> = Vec::new();
    let mut seen_unknown = HashSet::new();
    for it in interactions {
        if catalog.get(&it.item_id).is_none() && seen_unknown.insert(it.item_id.as_str()) {
            unknown.push(it.item_id.clone());
        }
    }
    if !unknown.is_empty() {
        return Err(CorpusError::UnknownItems(unknown));
    }

    let mut by_user: IndexMap<&str, Vec<(i64, usize, &str)>> = IndexMap::new();
    for (pos, it) in interactions.iter().enumerate() {
        by_user.entry(it.user_id.as_str()).or_default().push((
            it.timestamp,
            pos,
            it.item_id.as_str(),
        ));
    }

    let mut dropped = 0;
    let mut sequences = Vec::with_capacity(by_user.len());
    for (user, mut events) in by_user {
        if events.len() < 2 {
            dropped += 1;
            continue;
        }
        events.sort_by_key(|&(ts, pos, _)| (ts, pos));
        let entries = events
            .into_iter()
            .map(|(_, _, id)| SequenceEntry::from(catalog.get(id).expect("checked above")))
            .collect();
        sequences.push(UserSequence {
            user_id: user.to_string(),
            entries,
        });
    }
    Ok((sequences, dropped))
}

/// Uniform sample of `count` users without replacement. The output is in
/// sampled order and each sequence is cloned unchanged.
pub fn sample_users(
    sequences: &[UserSequence],
    count: usize,
    seed: u64,
) -> Result<Vec<UserSequence>, CorpusError> {
    if count > sequences.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: count,
            available: sequences.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sequences
        .choose_multiple(&mut rng, count)
        .cloned()
        .collect())
}

fn user_seed(seed: u64, user_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(user_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Leave-last-out instances with `n_candidates - 1` uniform negatives per
/// user, drawn from catalog items outside the user's sequence.
pub fn build_eval_instances(
    sequences: &[UserSequence],
    catalog: &Catalog,
    n_candidates: usize,
    seed: u64,
) -> Result<Vec<EvalInstance>, CorpusError> {
    if n_candidates < 2 {
        return Err(CorpusError::TooFewCandidates(n_candidates));
    }
    let pool: Vec<&Item> = catalog.iter().collect();
    sequences
        .iter()
        .map(|seq| build_instance(seq, &pool, n_candidates, seed))
        .collect()
}

fn build_instance(
    seq: &UserSequence,
    pool: &[&Item],
    n_candidates: usize,
    seed: u64,
) -> Result<EvalInstance, CorpusError> {
    let (target, history) = match seq.entries.split_last() {
        Some((t, h)) if !h.is_empty() => (t, h),
        _ => return Err(CorpusError::SequenceTooShort(seq.user_id.clone())),
    };
    let rng_seed = user_seed(seed, &seq.user_id);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let own_ids: HashSet<&str> = seq.entries.iter().map(|e| e.item_id.as_str()).collect();
    let mut taken_titles: HashSet<String> =
        history.iter().map(|e| normalize_title(&e.title)).collect();
    taken_titles.insert(normalize_title(&target.title));

    let eligible: Vec<&Item> = pool
        .iter()
        .copied()
        .filter(|it| !own_ids.contains(it.item_id.as_str()))
        .collect();
    let needed = n_candidates - 1;
    let not_enough = || CorpusError::NotEnoughNegatives {
        user: seq.user_id.clone(),
        needed,
    };
    if eligible.len() < needed {
        return Err(not_enough());
    }

    // Draw without replacement from a shuffled order; a title collision
    // skips to the next draw, bounded per slot.
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.shuffle(&mut rng);
    let mut draws = order.into_iter();
    let mut negatives = Vec::with_capacity(needed);
    while negatives.len() < needed {
        let mut attempts = 0;
        loop {
            let Some(idx) = draws.next() else {
                return Err(not_enough());
            };
            let item = eligible[idx];
            if taken_titles.insert(normalize_title(&item.title)) {
                negatives.push(item.title.clone());
                break;
            }
            attempts += 1;
            if attempts >= MAX_RESAMPLE_ATTEMPTS {
                return Err(not_enough());
            }
        }
    }

    let mut candidates = negatives;
    candidates.push(target.title.clone());
    candidates.shuffle(&mut rng);
    let target_index = candidates
        .iter()
        .position(|c| *c == target.title)
        .expect("target inserted");

    Ok(EvalInstance {
        user_id: seq.user_id.clone(),
        history: history.to_vec(),
        candidates,
        target_index,
        rng_seed,
    })
}

/// Counts over the given sequences. Items are the distinct item ids the
/// sequences reference; the catalog is not consulted.
pub fn compute_stats(sequences: &[UserSequence]) -> DatasetStats {
    let users = sequences.len();
    let interactions: usize = sequences.iter().map(|s| s.entries.len()).sum();
    let items = sequences
        .iter()
        .flat_map(|s| s.entries.iter().map(|e| e.item_id.as_str()))
        .collect::<HashSet<_>>()
        .len();
    let cells = users as f64 * items as f64;
    let sparsity = if cells == 0.0 {
        0.0
    } else {
        1.0 - interactions as f64 / cells
    };
    DatasetStats {
        users,
        items,
        interactions,
        sparsity,
    }
}
