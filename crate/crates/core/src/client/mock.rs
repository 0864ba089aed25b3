//! Deterministic in-process backends.
//!
//! Every mock answer is a function of the behavior parameters and the
//! request's cache key, so replays are exact regardless of call order.

use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{request_key, ChatRequest, ClientError, RankingHint};
use crate::parser::CandidateSet;
use crate::prompting::Purpose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedFormat {
    /// Titles embedded in running prose.
    Prose,
    /// A JSON array of titles inside a code fence.
    JsonArray,
    /// Numbered titles wrapped in quotes, bold markers and stray punctuation.
    Punctuated,
    /// One of the above, chosen per request.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Target first, remaining candidates in candidate order.
    Oracle,
    /// Uniformly random permutation.
    UniformRandom { seed: u64 },
    /// Random permutation where each line is replaced by an invented product
    /// with probability `rate`.
    Hallucinate { rate: f64, seed: u64 },
    /// Random permutation in an adversarial output format.
    Malformed { format: MalformedFormat, seed: u64 },
}

pub(super) struct MockTransport {
    behavior: MockBehavior,
    jitter_us: u64,
}

fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn numbered<S: AsRef<str>>(titles: &[S]) -> String {
    titles
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

const ADJECTIVES: &[&str] = &[
    "Quantum",
    "Nebula",
    "Zephyr",
    "Obsidian",
    "Vortex",
    "Lunar",
    "Crimson",
    "Arctic",
    "Galactic",
    "Prismatic",
    "Turbo",
    "Mystic",
];
const NOUNS: &[&str] = &[
    "Flux Capacitor",
    "Hover Skates",
    "Gravity Boots",
    "Plasma Whisk",
    "Echo Helmet",
    "Chrono Compass",
    "Ion Toaster",
    "Sonic Umbrella",
    "Photon Kettle",
    "Warp Hammock",
];

/// An invented product name that the parser cannot match to any candidate.
fn invented_product(rng: &mut ChaCha8Rng, candidates: &CandidateSet) -> String {
    loop {
        let name = format!(
            "{} {} Model Z{}",
            ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
            NOUNS[rng.random_range(0..NOUNS.len())],
            rng.random_range(100..1000)
        );
        if candidates.match_fragment(&name).is_none() {
            return name;
        }
    }
}

fn render_malformed(format: MalformedFormat, titles: &[&str], rng: &mut ChaCha8Rng) -> String {
    let format = match format {
        MalformedFormat::Mixed => [
            MalformedFormat::Prose,
            MalformedFormat::JsonArray,
            MalformedFormat::Punctuated,
        ][rng.random_range(0..3)],
        f => f,
    };
    match format {
        MalformedFormat::Prose => {
            let mut s = String::from(
                "Based on your purchase history, here is how I would order the options. ",
            );
            for (i, t) in titles.iter().enumerate() {
                let sentence = match i {
                    0 => format!("You would most likely buy the {t} next."),
                    _ if i + 1 == titles.len() => format!(" Least likely is the {t}."),
                    _ => format!(" After that comes the {t}."),
                };
                s.push_str(&sentence);
            }
            s.push_str("\nLet me know if you would like more details.");
            s
        }
        MalformedFormat::JsonArray => format!(
            "Here is the ranking as JSON:\n```json\n{}\n```",
            serde_json::to_string(titles).expect("strings serialize")
        ),
        MalformedFormat::Punctuated => {
            let mut lines = vec!["Ranking:".to_string()];
            for (i, t) in titles.iter().enumerate() {
                let line = match i % 3 {
                    0 => format!("{}. \"{t}\"!!", i + 1),
                    1 => format!("{}) **{t}**.", i + 1),
                    _ => format!("- Rank {}: {t} ;)", i + 1),
                };
                lines.push(line);
            }
            lines.join("\n")
        }
        MalformedFormat::Mixed => unreachable!("resolved above"),
    }
}

impl MockTransport {
    pub(super) fn new(behavior: MockBehavior, jitter_us: u64) -> Self {
        Self {
            behavior,
            jitter_us,
        }
    }

    pub(super) fn answer(&self, req: &ChatRequest) -> Result<String, ClientError> {
        let key = request_key(req)?;
        if self.jitter_us > 0 {
            let mut rng = rng_for(0x6a17, &key);
            std::thread::sleep(Duration::from_micros(rng.random_range(0..=self.jitter_us)));
        }
        match req.prompt.purpose {
            Purpose::Summary => Ok(format!(
                "The image shows a product photographed on a plain background (ref {}).",
                &key[..12]
            )),
            Purpose::Ranking => {
                let hint = req.hint.as_ref().ok_or(ClientError::MissingHint)?;
                Ok(self.rank(hint, &key))
            }
        }
    }

    fn rank(&self, hint: &RankingHint, key: &str) -> String {
        let n = hint.candidates.len();
        let shuffled = |seed: u64| {
            let mut rng = rng_for(seed, key);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            (order, rng)
        };
        match &self.behavior {
            MockBehavior::Oracle => {
                let mut titles = vec![hint.candidates[hint.target_index].as_str()];
                titles.extend(
                    hint.candidates
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != hint.target_index)
                        .map(|(_, c)| c.as_str()),
                );
                numbered(&titles)
            }
            MockBehavior::UniformRandom { seed } => {
                let (order, _) = shuffled(*seed);
                let titles: Vec<&str> =
                    order.iter().map(|&i| hint.candidates[i].as_str()).collect();
                numbered(&titles)
            }
            MockBehavior::Hallucinate { rate, seed } => {
                let (order, mut rng) = shuffled(*seed);
                let set = CandidateSet::new(&hint.candidates);
                let titles: Vec<String> = order
                    .iter()
                    .map(|&i| {
                        if rng.random::<f64>() < *rate {
                            invented_product(&mut rng, &set)
                        } else {
                            hint.candidates[i].clone()
                        }
                    })
                    .collect();
                numbered(&titles)
            }
            MockBehavior::Malformed { format, seed } => {
                let (order, mut rng) = shuffled(*seed);
                let titles: Vec<&str> =
                    order.iter().map(|&i| hint.candidates[i].as_str()).collect();
                render_malformed(*format, &titles, &mut rng)
            }
        }
    }
}
