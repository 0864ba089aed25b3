//! Recovers an ordered ranking over a known candidate set from free-form
//! model output.
//!
//! Output is split into fragments (lines, inline enumerations, semicolon
//! lists, JSON array elements). Each fragment is matched against the
//! candidates in three tiers: exact normalized match, unique containment,
//! then token-set Jaccard with a margin over the runner-up. Fragments that
//! mention several candidates (prose such as "A first, then C") are resolved
//! into their individual mentions in reading order.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

static ENUM_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)^\s*(?:
            (?:rank(?:ed)?|top|no\.?|number|item|\#)\s*\#?\d+\s*[:.)\-]?
          | \(\d+\)
          | \[\d+\]
          | \d+\s*[.):\]](?:\s+|$)
          | [-*•·‣▪–—>]+\s+
        )\s*",
    )
    .expect("valid regex")
});

/// Start of an inline enumeration item: "1) " or "2. " preceded by
/// whitespace (or line start).
static INLINE_ENUM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|\s)(\d{1,2})[.)]\s+").expect("valid regex"));

static QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""((?:[^"\\]|\\.)*)""#).expect("valid regex"));

/// Lowercase, NFKC, punctuation to spaces, whitespace collapsed, leading
/// enumeration markers stripped.
pub fn normalize_title(s: &str) -> String {
    let nfkc: String = s.nfkc().collect();
    let mut rest = nfkc.as_str();
    // Markers can stack, e.g. "- 3. Foo".
    while let Some(m) = ENUM_MARKER.find(rest) {
        if m.end() == 0 {
            break;
        }
        rest = &rest[m.end()..];
    }
    let mut out = String::with_capacity(rest.len());
    let mut pending_space = false;
    for ch in rest.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            // Apostrophes join ("women's" -> "womens") rather than split.
            if ch == '\'' || ch == '\u{2019}' {
                continue;
            }
            pending_space = true;
        }
    }
    out
}

fn tokens(s: &str) -> HashSet<&str> {
    s.split(' ').filter(|t| !t.is_empty()).collect()
}

fn jaccard(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = (a.len() + b.len()) as f64 - inter;
    inter / union
}

/// Token-boundary containment on normalized strings.
fn contains_phrase(haystack: &str, needle: &str) -> bool {
    find_phrase(haystack, needle, 0).is_some()
}

fn find_phrase(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let mut start = from;
    while let Some(off) = haystack[start..].find(needle) {
        let pos = start + off;
        let end = pos + needle.len();
        let left_ok = pos == 0 || haystack.as_bytes()[pos - 1] == b' ';
        let right_ok = end == haystack.len() || haystack.as_bytes()[end] == b' ';
        if left_ok && right_ok {
            return Some(pos);
        }
        start = pos + haystack[pos..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Matching thresholds. Defaults keep the fuzzy tier conservative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub jaccard_threshold: f64,
    pub jaccard_margin: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.6,
            jaccard_margin: 0.1,
        }
    }
}

/// Candidate titles with their normalized forms precomputed.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    normalized: Vec<String>,
    config: MatchConfig,
}

impl CandidateSet {
    pub fn new<S: AsRef<str>>(candidates: &[S]) -> Self {
        Self::with_config(candidates, MatchConfig::default())
    }

    pub fn with_config<S: AsRef<str>>(candidates: &[S], config: MatchConfig) -> Self {
        Self {
            normalized: candidates
                .iter()
                .map(|c| normalize_title(c.as_ref()))
                .collect(),
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Matches a single fragment to at most one candidate.
    pub fn match_fragment(&self, fragment: &str) -> Option<usize> {
        let norm = normalize_title(fragment);
        self.match_normalized(&norm)
    }

    fn match_normalized(&self, norm: &str) -> Option<usize> {
        if norm.is_empty() {
            return None;
        }
        if let Some(i) = self.normalized.iter().position(|c| c == norm) {
            return Some(i);
        }

        // Fragment contains a candidate. A fragment of one token may not
        // claim a longer candidate by reverse containment; single words like
        // "set" would otherwise match any title containing them.
        let norm_tokens = norm.split(' ').count();
        let containing: Vec<usize> = self
            .normalized
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                contains_phrase(norm, c) || (norm_tokens >= 2 && contains_phrase(c, norm))
            })
            .map(|(i, _)| i)
            .collect();
        if containing.len() == 1 {
            return Some(containing[0]);
        }

        let frag_tokens = tokens(norm);
        let mut best: Option<(usize, f64)> = None;
        let mut runner_up = 0.0_f64;
        for (i, c) in self.normalized.iter().enumerate() {
            let score = jaccard(&frag_tokens, &tokens(c));
            match best {
                Some((_, b)) if score <= b => runner_up = runner_up.max(score),
                Some((_, b)) => {
                    runner_up = runner_up.max(b);
                    best = Some((i, score));
                }
                None => best = Some((i, score)),
            }
        }
        let (idx, score) = best?;
        (score >= self.config.jaccard_threshold
            && score - runner_up >= self.config.jaccard_margin - 1e-12)
            .then_some(idx)
    }

    /// All candidate mentions inside a normalized fragment, in reading
    /// order. Overlapping mentions resolve to the longest match.
    fn mentions(&self, norm: &str) -> Vec<usize> {
        let mut spans: Vec<(usize, usize, usize)> = Vec::new();
        for (i, c) in self.normalized.iter().enumerate() {
            let mut from = 0;
            while let Some(pos) = find_phrase(norm, c, from) {
                spans.push((pos, pos + c.len(), i));
                from = pos + c.len();
            }
        }
        spans.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut out = Vec::new();
        let mut covered = 0;
        for (start, end, idx) in spans {
            if start < covered {
                continue;
            }
            out.push(idx);
            covered = end;
        }
        out
    }
}

/// Convenience wrapper over [`CandidateSet::match_fragment`].
pub fn match_candidate<S: AsRef<str>>(fragment: &str, candidates: &[S]) -> Option<usize> {
    CandidateSet::new(candidates).match_fragment(fragment)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRanking {
    /// Distinct 0-based candidate indices in first-mention order.
    pub indices: Vec<usize>,
    pub matched_count: usize,
    /// Item-like fragments that matched no candidate.
    pub hallucinated_count: usize,
    pub residual_text_lines: Vec<String>,
}

struct Fragment<'a> {
    text: &'a str,
    /// Enumerated, bulleted, quoted or otherwise presented as a list item.
    item_like: bool,
}

fn split_inline_enumeration(line: &str) -> Option<Vec<&str>> {
    let starts: Vec<(usize, usize, u32)> = INLINE_ENUM
        .captures_iter(line)
        .map(|c| {
            let m = c.get(0).expect("match");
            let n = c[1].parse().unwrap_or(0);
            (m.start(), m.end(), n)
        })
        .collect();
    // Require an ascending run starting at 1 so that "size 2. ..." in prose
    // is not taken for a list.
    if starts.len() < 2 {
        return None;
    }
    let first = starts[0].2;
    if first > 1 || starts.iter().zip(first..).any(|(s, want)| s.2 != want) {
        return None;
    }
    let mut out = Vec::new();
    if !line[..starts[0].0].trim().is_empty() {
        out.push(&line[..starts[0].0]);
    }
    for (k, &(_, body_start, _)) in starts.iter().enumerate() {
        let end = starts.get(k + 1).map_or(line.len(), |s| s.0);
        out.push(&line[body_start..end]);
    }
    Some(out)
}

fn json_elements(line: &str) -> Option<Vec<&str>> {
    let open = line.find('[')?;
    let close = line.rfind(']')?;
    if close <= open {
        return None;
    }
    let inner = &line[open + 1..close];
    let elems: Vec<&str> = QUOTED
        .captures_iter(inner)
        .map(|c| c.get(1).expect("group").as_str())
        .collect();
    (!elems.is_empty()).then_some(elems)
}

fn fragments(text: &str) -> Vec<Fragment<'_>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(elems) = json_elements(trimmed) {
            out.extend(elems.into_iter().map(|text| Fragment {
                text,
                item_like: true,
            }));
            continue;
        }
        if trimmed.matches(['[', '{', ']', '}']).count() == trimmed.len() {
            continue;
        }
        if let Some(parts) = split_inline_enumeration(trimmed) {
            let lead_is_prose = !INLINE_ENUM.is_match(parts[0])
                && !trimmed.starts_with(|c: char| c.is_ascii_digit());
            for (k, p) in parts.into_iter().enumerate() {
                out.push(Fragment {
                    text: p,
                    item_like: !(k == 0 && lead_is_prose),
                });
            }
            continue;
        }
        let enumerated = ENUM_MARKER.find(trimmed).is_some_and(|m| m.end() > 0);
        if trimmed.contains(';') {
            let parts: Vec<&str> = trimmed
                .split(';')
                .filter(|p| !p.trim().is_empty())
                .collect();
            if parts.len() >= 2 {
                out.extend(parts.into_iter().map(|text| Fragment {
                    text,
                    item_like: true,
                }));
                continue;
            }
        }
        let quoted = {
            let t = trimmed.trim_end_matches([',', '.']);
            t.len() >= 2 && t.starts_with('"') && t.ends_with('"')
        };
        out.push(Fragment {
            text: trimmed,
            item_like: enumerated || quoted,
        });
    }
    out
}

/// Parses a ranking. Never fails: output with no recognisable candidate
/// yields empty `indices`.
pub fn parse_ranking(text: &str, candidates: &CandidateSet) -> ParsedRanking {
    let mut parsed = ParsedRanking::default();
    let mut seen = vec![false; candidates.len()];
    let mut push = |idx: usize, parsed: &mut ParsedRanking| {
        parsed.matched_count += 1;
        if !seen[idx] {
            seen[idx] = true;
            parsed.indices.push(idx);
        }
    };
    for frag in fragments(text) {
        let norm = normalize_title(frag.text);
        if norm.is_empty() {
            continue;
        }
        let mentions = candidates.mentions(&norm);
        if mentions.len() >= 2 {
            for idx in mentions {
                push(idx, &mut parsed);
            }
            continue;
        }
        match candidates.match_normalized(&norm) {
            Some(idx) => push(idx, &mut parsed),
            None if frag.item_like => parsed.hallucinated_count += 1,
            None => parsed
                .residual_text_lines
                .push(frag.text.trim().to_string()),
        }
    }
    parsed
}

/// A permutation of `0..n`: parsed indices first, then every unmentioned
/// candidate in candidate order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedRanking {
    pub order: Vec<usize>,
    /// Number of leading positions that came from the model output.
    pub boundary: usize,
}

pub fn complete_ranking(parsed: &ParsedRanking, n: usize) -> CompletedRanking {
    let mut present = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for &i in &parsed.indices {
        if i < n && !present[i] {
            present[i] = true;
            order.push(i);
        }
    }
    let boundary = order.len();
    order.extend((0..n).filter(|&i| !present[i]));
    CompletedRanking { order, boundary }
}

/// One regression case from the fixture corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureCase {
    pub candidates: Vec<String>,
    pub text: String,
    pub expected_indices: Vec<usize>,
    #[serde(default)]
    pub format: Option<String>,
}

pub fn load_fixtures(jsonl: &str) -> Result<Vec<FixtureCase>, serde_json::Error> {
    jsonl
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// The shipped fixture corpus.
pub const FIXTURE_CORPUS: &str = include_str!("../fixtures/parser_cases.jsonl");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_title("2. \"The LEGO Set!!\""), "the lego set");
        assert_eq!(normalize_title("   Yoga   Mat—6mm "), "yoga mat 6mm");
        assert_eq!(normalize_title(""), "");
        assert_eq!(normalize_title("(2) Foo"), "foo");
        assert_eq!(normalize_title("Rank 4: Foo Bar"), "foo bar");
        assert_eq!(normalize_title("- 3. Foo"), "foo");
        assert_eq!(normalize_title("3.5mm Audio Cable"), "3 5mm audio cable");
        assert_eq!(normalize_title("3 Pack Socks"), "3 pack socks");
        assert_eq!(normalize_title("Ｆｕｌｌｗｉｄｔｈ"), "fullwidth");
    }

    fn cands() -> Vec<&'static str> {
        vec![
            "Yoga Mat 6mm",
            "Stainless Steel Water Bottle",
            "Resistance Bands Set",
            "Foam Roller",
            "The LEGO Castle",
        ]
    }

    #[test]
    fn tier_one_exact() {
        assert_eq!(match_candidate("the lego CASTLE", &cands()), Some(4));
    }

    #[test]
    fn tier_two_containment() {
        assert_eq!(
            match_candidate("I recommend the Yoga Mat 6mm because it is thick", &cands()),
            Some(0)
        );
        assert_eq!(match_candidate("Steel Water Bottle", &cands()), Some(1));
    }

    #[test]
    fn single_token_does_not_claim_by_reverse_containment() {
        assert_eq!(match_candidate("roller", &cands()), None);
    }

    #[test]
    fn tier_three_jaccard() {
        // {resistance, bands, set, pro} vs {resistance, bands, set}: 3/4.
        assert_eq!(
            match_candidate("Resistance Bands Pro Set", &cands()),
            Some(2)
        );
    }

    #[test]
    fn low_overlap_fragment_is_unmatched() {
        // Brute-force check that the fixture really sits under the threshold.
        let frag = "Mat cleaning spray";
        let f = normalize_title(frag);
        let ft = tokens(&f);
        let best = cands()
            .iter()
            .map(|c| {
                let n = normalize_title(c);
                jaccard(&ft, &tokens(&n))
            })
            .fold(0.0, f64::max);
        assert!(best < 0.6, "fixture must stay below threshold, got {best}");
        assert_eq!(match_candidate(frag, &cands()), None);
    }

    #[test]
    fn ambiguous_containment_falls_through() {
        let c = ["Red Kite", "Blue Kite", "Kite String"];
        // Contains two candidates; Jaccard cannot separate them either.
        assert_eq!(match_candidate("Red Kite Blue Kite", &c), None);
    }

    #[test]
    fn direct_enumeration() {
        let c = CandidateSet::new(&["A", "B", "C"]);
        let p = parse_ranking("1. B\n2. A\n3. C", &c);
        assert_eq!(p.indices, [1, 0, 2]);
        assert_eq!(p.hallucinated_count, 0);
    }

    #[test]
    fn duplicates_collapse() {
        let c = CandidateSet::new(&["A", "B", "C"]);
        let p = parse_ranking("Best: A. Then A again, then C.", &c);
        assert_eq!(p.indices, [0, 2]);
    }

    #[test]
    fn hallucinations_counted() {
        let c = CandidateSet::new(&["Garden Hose", "Trail Running Shoes", "Camping Lantern"]);
        let text = "Here is my ranking:\n1. Quantum Flux Capacitor\n2. Zebra Pattern Umbrella\n3. Solar Powered Toaster\n4. Trail Running Shoes";
        let p = parse_ranking(text, &c);
        assert_eq!(p.indices, [1]);
        assert_eq!(p.hallucinated_count, 3);
        assert_eq!(p.residual_text_lines, ["Here is my ranking:"]);
    }

    #[test]
    fn inline_and_semicolon_lists() {
        let c = CandidateSet::new(&["Red Kite", "Blue Tent", "Green Sleeping Bag"]);
        let p = parse_ranking(
            "My ranking: 1) Blue Tent 2) Green Sleeping Bag 3) Red Kite",
            &c,
        );
        assert_eq!(p.indices, [1, 2, 0]);
        let p = parse_ranking("Green Sleeping Bag; Red Kite; Blue Tent", &c);
        assert_eq!(p.indices, [2, 0, 1]);
    }

    #[test]
    fn json_array() {
        let c = CandidateSet::new(&["Red Kite", "Blue Tent", "Green Sleeping Bag"]);
        let p = parse_ranking(
            "```json\n[\"Blue Tent\", \"Red Kite\", \"Green Sleeping Bag\"]\n```",
            &c,
        );
        assert_eq!(p.indices, [1, 0, 2]);
    }

    #[test]
    fn completion_examples() {
        let p = |v: Vec<usize>| ParsedRanking {
            indices: v,
            ..Default::default()
        };
        assert_eq!(
            complete_ranking(&p(vec![2, 0]), 4),
            CompletedRanking {
                order: vec![2, 0, 1, 3],
                boundary: 2
            }
        );
        assert_eq!(
            complete_ranking(&p(vec![]), 3),
            CompletedRanking {
                order: vec![0, 1, 2],
                boundary: 0
            }
        );
        assert_eq!(
            complete_ranking(&p(vec![1, 2, 0]), 3),
            CompletedRanking {
                order: vec![1, 2, 0],
                boundary: 3
            }
        );
    }

    #[test]
    fn fixture_corpus_loads() {
        let cases = load_fixtures(FIXTURE_CORPUS).unwrap();
        assert!(cases.len() >= 40);
    }
}
