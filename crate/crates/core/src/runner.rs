//! Experiment orchestration: corpus preparation, summary phase, ranking
//! phase, scoring and aggregation.
//!
//! Requests are issued in parallel up to the backend's in-flight limit, but
//! every collection that feeds a report is keyed and ordered, so artifacts
//! do not depend on completion order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::client::{
    request_key, with_cache, Backend, CacheStore, ChatRequest, ClientError, Completer, Decoding,
    RankingHint,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::corpus::{
    build_eval_instances, compute_stats, load_corpus, sample_users, Catalog, CorpusError,
    DatasetStats, EvalInstance, SequenceEntry, UserSequence,
};
use crate::exec;
use crate::metrics::{
    aggregate_runs, aggregate_users, score_instance, score_partial, InstanceScore, ScoringMode,
};
use crate::parser::{complete_ranking, parse_ranking, CandidateSet};
use crate::prompting::{
    HistoryEntryView, RenderedPrompt, Renderer, StrategyId, SummaryKind, TemplateCatalog,
};
use crate::report::{AggregateCell, ExclusionRow, ExperimentReport, Metric, ParseRow};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config stage: {0}")]
    Config(#[from] ConfigError),
    #[error("corpus stage: {0}")]
    Corpus(#[from] CorpusError),
    #[error("backend setup: {0}")]
    Backend(#[from] ClientError),
    #[error("{stage} stage: {path}: {source}")]
    Io {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage} stage: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

fn io_err<'a>(stage: &'static str, path: &'a Path) -> impl FnOnce(std::io::Error) -> RunError + 'a {
    move |source| RunError::Io {
        stage,
        path: path.to_path_buf(),
        source,
    }
}

/// Corpus-derived inputs shared by every phase.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub stats: DatasetStats,
    pub dropped_users: usize,
    pub sequences: Vec<UserSequence>,
    pub catalog: Catalog,
    /// Instances per run. With fixed negatives every run holds the same
    /// instances.
    pub runs: Vec<Vec<EvalInstance>>,
}

impl Prepared {
    pub fn instances(&self, run: usize) -> &[EvalInstance] {
        &self.runs[run]
    }
}

fn run_negative_seed(sample_seed: u64, run_seed: u64) -> u64 {
    sample_seed ^ run_seed.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Why an instance produced no score for a (strategy, run).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// Request failed after retries.
    Transport,
    /// A required visual or title summary is missing.
    Summary,
    /// The prompt could not be rendered for this history.
    Render,
    /// No recorded output (e.g. a partial `rank` run).
    Missing,
}

impl FailureKind {
    fn as_str(self) -> &'static str {
        match self {
            FailureKind::Transport => "transport",
            FailureKind::Summary => "summary",
            FailureKind::Render => "render",
            FailureKind::Missing => "missing",
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "transport" => FailureKind::Transport,
            "summary" => FailureKind::Summary,
            "render" => FailureKind::Render,
            _ => FailureKind::Missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawOutcome {
    Text(String),
    Failed { kind: FailureKind, reason: String },
}

/// Raw ranking outputs keyed by (strategy, run, instance position).
pub type RawOutputs = BTreeMap<(StrategyId, usize, usize), RawOutcome>;

/// Item-level summaries produced by the summary phase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummaryStore {
    visual: BTreeMap<(SummaryKind, String), String>,
    title: BTreeMap<String, String>,
    /// (kind, item id) → reason; `None` kind is the title summary.
    failed: BTreeMap<(Option<SummaryKind>, String), String>,
    /// Distinct requests issued (after deduplication).
    pub requests: usize,
}

impl SummaryStore {
    pub fn visual(&self, kind: SummaryKind, item_id: &str) -> Option<&str> {
        self.visual
            .get(&(kind, item_id.to_string()))
            .map(String::as_str)
    }

    pub fn title(&self, item_id: &str) -> Option<&str> {
        self.title.get(item_id).map(String::as_str)
    }

    pub fn failures(&self) -> usize {
        self.failed.len()
    }

    /// Every stored summary as (item id, kind label, text), sorted.
    pub fn entries(&self) -> Vec<(String, &'static str, String)> {
        let mut out: Vec<_> = self
            .visual
            .iter()
            .map(|((k, id), t)| {
                let label = match k {
                    SummaryKind::Plain => "visual",
                    SummaryKind::TitleConditioned => "visual_title_conditioned",
                };
                (id.clone(), label, t.clone())
            })
            .chain(
                self.title
                    .iter()
                    .map(|(id, t)| (id.clone(), "title", t.clone())),
            )
            .collect();
        out.sort();
        out
    }

    fn view(&self, entry: &SequenceEntry, strategy: StrategyId) -> HistoryEntryView {
        HistoryEntryView {
            title: entry.title.clone(),
            image_ref: entry.image_ref.clone(),
            visual_summary: strategy
                .visual_summary_kind()
                .and_then(|k| self.visual(k, &entry.item_id))
                .map(str::to_string),
            title_summary: strategy
                .needs_title_summary()
                .then(|| self.title(&entry.item_id))
                .flatten()
                .map(str::to_string),
        }
    }

    fn missing_for(&self, entries: &[SequenceEntry], strategy: StrategyId) -> Option<String> {
        for e in entries {
            if let Some(kind) = strategy.visual_summary_kind() {
                if self.visual(kind, &e.item_id).is_none() {
                    return Some(format!("no visual summary for item {}", e.item_id));
                }
            }
            if strategy.needs_title_summary() && self.title(&e.item_id).is_none() {
                return Some(format!("no title summary for item {}", e.item_id));
            }
        }
        None
    }
}

/// Per-instance score with its provenance; one line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub user_id: String,
    pub run: usize,
    pub strategy: StrategyId,
    pub target_rank: Option<usize>,
    pub recall: IndexMap<usize, f64>,
    pub ndcg: IndexMap<usize, f64>,
    /// Candidates recovered from the output before completion.
    pub parsed: usize,
    pub hallucinated: usize,
}

/// Files written by a full run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub report_csv: PathBuf,
    pub report_md: PathBuf,
    pub stats_csv: PathBuf,
    pub scores_jsonl: PathBuf,
    pub raw_dir: PathBuf,
    pub config_resolved: PathBuf,
}

/// Filesystem-safe form of a user id.
pub fn sanitize_id(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

pub struct Experiment {
    config: ExperimentConfig,
    completer: Box<dyn Completer>,
    renderer: Renderer<'static>,
}

impl Experiment {
    /// Builds the configured backend, wrapped in the response cache when
    /// `cache_dir` is set.
    pub fn new(config: ExperimentConfig) -> Result<Self, RunError> {
        let backend = Backend::from_spec(&config.backend)?;
        let completer: Box<dyn Completer> = match &config.cache_dir {
            Some(dir) => {
                let store = CacheStore::open(dir).map_err(io_err("cache", dir))?;
                Box::new(with_cache(backend, store))
            }
            None => Box::new(backend),
        };
        Self::with_completer(config, completer)
    }

    /// Uses the given completer instead of building one from the config.
    pub fn with_completer(
        config: ExperimentConfig,
        completer: Box<dyn Completer>,
    ) -> Result<Self, RunError> {
        let config = config.resolve()?;
        let renderer =
            Renderer::new(TemplateCatalog::shipped()).with_history_cap(config.history_cap);
        Ok(Self {
            config,
            completer,
            renderer,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn prepare(&self) -> Result<Prepared, RunError> {
        let c = &self.config;
        let corpus = load_corpus(&c.dataset.interactions, &c.dataset.catalog)?;
        let sequences = sample_users(&corpus.sequences, c.sample.users, c.sample.seed)?;
        let stats = compute_stats(&sequences);
        let base =
            build_eval_instances(&sequences, &corpus.catalog, c.n_candidates, c.sample.seed)?;
        let runs = if c.resample_negatives_per_run {
            c.run_seeds
                .iter()
                .map(|&rs| {
                    build_eval_instances(
                        &sequences,
                        &corpus.catalog,
                        c.n_candidates,
                        run_negative_seed(c.sample.seed, rs),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            vec![base; c.runs]
        };
        Ok(Prepared {
            stats,
            dropped_users: corpus.dropped_users,
            sequences,
            catalog: corpus.catalog,
            runs,
        })
    }

    fn summary_decoding(&self) -> Decoding {
        Decoding {
            temperature: 0.0,
            max_tokens: self.config.decoding.summary_max_tokens,
            seed: None,
        }
    }

    fn ranking_decoding(&self, run: usize) -> Decoding {
        let d = &self.config.decoding;
        Decoding {
            temperature: d.temperature,
            max_tokens: d.max_tokens,
            seed: d.send_seed.then(|| self.config.run_seeds[run]),
        }
    }

    /// Requests one summary per distinct (prompt, image content) across all
    /// history entries that ranking prompts will show. A no-op when no
    /// strategy needs summaries.
    pub fn run_summary_phase(&self, prepared: &Prepared) -> SummaryStore {
        let mut store = SummaryStore::default();
        let kinds: BTreeSet<SummaryKind> = self
            .config
            .strategies
            .iter()
            .filter_map(|s| s.visual_summary_kind())
            .collect();
        let need_title = self
            .config
            .strategies
            .iter()
            .any(|s| s.needs_title_summary());
        if kinds.is_empty() && !need_title {
            return store;
        }

        let mut items: BTreeMap<&str, &SequenceEntry> = BTreeMap::new();
        for run in &prepared.runs {
            for inst in run {
                for e in self.renderer.history_window(&inst.history) {
                    items.entry(e.item_id.as_str()).or_insert(e);
                }
            }
        }

        type Target = (Option<SummaryKind>, String);
        let mut groups: BTreeMap<String, (ChatRequest, Vec<Target>)> = BTreeMap::new();
        let mut add = |prompt: Result<RenderedPrompt, String>,
                       target: Target,
                       store: &mut SummaryStore| {
            let prompt = match prompt {
                Ok(p) => p,
                Err(reason) => {
                    store.failed.insert(target, reason);
                    return;
                }
            };
            let req = ChatRequest::new(self.config.model.clone(), prompt, self.summary_decoding());
            match request_key(&req) {
                Ok(key) => groups
                    .entry(key)
                    .or_insert_with(|| (req, Vec::new()))
                    .1
                    .push(target),
                Err(e) => {
                    store.failed.insert(target, e.to_string());
                }
            }
        };
        for (&id, entry) in &items {
            let view = HistoryEntryView {
                title: entry.title.clone(),
                image_ref: entry.image_ref.clone(),
                ..Default::default()
            };
            for &kind in &kinds {
                let p = self
                    .renderer
                    .render_summary_prompt(&view, kind)
                    .map_err(|e| e.to_string());
                add(p, (Some(kind), id.to_string()), &mut store);
            }
            if need_title {
                let p = self
                    .renderer
                    .render_title_summary_prompt(&view)
                    .map_err(|e| e.to_string());
                add(p, (None, id.to_string()), &mut store);
            }
        }

        let jobs: Vec<(ChatRequest, Vec<Target>)> = groups.into_values().collect();
        store.requests = jobs.len();
        let results = exec::map_blocking(
            self.config.execution,
            self.completer.max_inflight(),
            &jobs,
            |(req, _)| self.completer.complete(req),
        );
        for ((_, targets), result) in jobs.into_iter().zip(results) {
            match result {
                Ok(r) => {
                    for (kind, id) in targets {
                        match kind {
                            Some(k) => store.visual.insert((k, id), r.text.clone()),
                            None => store.title.insert(id, r.text.clone()),
                        };
                    }
                }
                Err(e) => {
                    log::warn!("summary request failed: {e}");
                    for t in targets {
                        store.failed.insert(t, e.to_string());
                    }
                }
            }
        }
        if store.failures() > 0 {
            log::warn!("{} summaries unavailable", store.failures());
        }
        store
    }

    /// Ranking requests for one run, every configured strategy.
    pub fn run_ranking_phase(
        &self,
        prepared: &Prepared,
        summaries: &SummaryStore,
        run: usize,
    ) -> RawOutputs {
        let instances = prepared.instances(run);
        let jobs: Vec<(StrategyId, usize)> = self
            .config
            .strategies
            .iter()
            .flat_map(|&s| (0..instances.len()).map(move |i| (s, i)))
            .collect();
        let decoding = self.ranking_decoding(run);
        let outcomes = exec::map_blocking(
            self.config.execution,
            self.completer.max_inflight(),
            &jobs,
            |&(strategy, idx)| self.rank_one(&instances[idx], strategy, summaries, decoding),
        );
        jobs.into_iter()
            .zip(outcomes)
            .map(|((s, i), o)| ((s, run, i), o))
            .collect()
    }

    fn rank_one(
        &self,
        inst: &EvalInstance,
        strategy: StrategyId,
        summaries: &SummaryStore,
        decoding: Decoding,
    ) -> RawOutcome {
        let window = self.renderer.history_window(&inst.history);
        if let Some(reason) = summaries.missing_for(window, strategy) {
            return RawOutcome::Failed {
                kind: FailureKind::Summary,
                reason,
            };
        }
        let views: Vec<HistoryEntryView> =
            window.iter().map(|e| summaries.view(e, strategy)).collect();
        let prompt = match self
            .renderer
            .render_ranking_prompt(strategy, &views, &inst.candidates)
        {
            Ok(p) => p,
            Err(e) => {
                return RawOutcome::Failed {
                    kind: FailureKind::Render,
                    reason: e.to_string(),
                }
            }
        };
        let req =
            ChatRequest::new(self.config.model.clone(), prompt, decoding).with_hint(RankingHint {
                candidates: inst.candidates.clone(),
                target_index: inst.target_index,
            });
        match self.completer.complete(&req) {
            Ok(r) => RawOutcome::Text(r.text),
            Err(e) => RawOutcome::Failed {
                kind: if e.is_image_error() {
                    FailureKind::Render
                } else {
                    FailureKind::Transport
                },
                reason: e.to_string(),
            },
        }
    }

    /// Parses and scores every successful output, in key order.
    pub fn score(&self, prepared: &Prepared, outputs: &RawOutputs) -> Vec<ScoreRecord> {
        let keyed: Vec<(&(StrategyId, usize, usize), &str)> = outputs
            .iter()
            .filter_map(|(k, o)| match o {
                RawOutcome::Text(t) => Some((k, t.as_str())),
                RawOutcome::Failed { .. } => None,
            })
            .collect();
        let ks = &self.config.k;
        let mode = self.config.scoring_mode;
        exec::map(
            self.config.execution,
            &keyed,
            |&(&(strategy, run, idx), text)| {
                let inst = &prepared.instances(run)[idx];
                let set = CandidateSet::new(&inst.candidates);
                let parsed = parse_ranking(text, &set);
                let score: InstanceScore = match mode {
                    ScoringMode::Completed => {
                        let full = complete_ranking(&parsed, inst.candidates.len());
                        score_instance(&full.order, inst.target_index, ks)
                            .expect("completed ranking is a permutation")
                    }
                    ScoringMode::Strict => score_partial(&parsed.indices, inst.target_index, ks),
                };
                ScoreRecord {
                    user_id: inst.user_id.clone(),
                    run,
                    strategy,
                    target_rank: score.target_rank,
                    recall: score.recall_at,
                    ndcg: score.ndcg_at,
                    parsed: parsed.indices.len(),
                    hallucinated: parsed.hallucinated_count,
                }
            },
        )
    }

    /// Builds the report from collected outputs and scores.
    pub fn aggregate(
        &self,
        prepared: &Prepared,
        summaries: &SummaryStore,
        outputs: &RawOutputs,
        scores: &[ScoreRecord],
    ) -> ExperimentReport {
        let c = &self.config;
        let mut by_cell: BTreeMap<(StrategyId, usize), Vec<InstanceScore>> = BTreeMap::new();
        for s in scores {
            by_cell
                .entry((s.strategy, s.run))
                .or_default()
                .push(InstanceScore {
                    target_rank: s.target_rank,
                    recall_at: s.recall.clone(),
                    ndcg_at: s.ndcg.clone(),
                });
        }

        let mut exclusions = Vec::new();
        for &strategy in &c.strategies {
            for run in 0..c.runs {
                let mut row = ExclusionRow::new(strategy, run, prepared.instances(run).len());
                for idx in 0..prepared.instances(run).len() {
                    match outputs.get(&(strategy, run, idx)) {
                        Some(RawOutcome::Text(_)) => row.scored += 1,
                        Some(RawOutcome::Failed { kind, .. }) => row.bump(*kind),
                        None => row.bump(FailureKind::Missing),
                    }
                }
                exclusions.push(row);
            }
        }

        let mut grid = Vec::new();
        for &strategy in &c.strategies {
            let per_run: Vec<(usize, Option<crate::metrics::RunMeans>)> = (0..c.runs)
                .map(|run| {
                    let means = by_cell
                        .get(&(strategy, run))
                        .and_then(|s| aggregate_users(s, &c.k).ok());
                    (run, means)
                })
                .collect();
            let users_per_run: Vec<usize> = per_run
                .iter()
                .map(|(_, m)| m.as_ref().map_or(0, |m| m.users))
                .collect();
            for metric in [Metric::Recall, Metric::Ndcg] {
                for &k in &c.k {
                    let run_means: Vec<f64> = per_run
                        .iter()
                        .filter_map(|(_, m)| m.as_ref())
                        .map(|m| match metric {
                            Metric::Recall => m.recall_at[&k],
                            Metric::Ndcg => m.ndcg_at[&k],
                        })
                        .collect();
                    let agg = aggregate_runs(&run_means);
                    grid.push(AggregateCell {
                        dataset: c.dataset.name.clone(),
                        model_id: c.model.clone(),
                        strategy,
                        k,
                        metric,
                        run_means,
                        mean: agg.map(|a| a.0),
                        std: agg.map(|a| a.1),
                        users_per_run: users_per_run.clone(),
                    });
                }
            }
        }

        let parse_stats = c
            .strategies
            .iter()
            .map(|&strategy| {
                let mine: Vec<&ScoreRecord> =
                    scores.iter().filter(|s| s.strategy == strategy).collect();
                let outputs = mine.len();
                ParseRow {
                    strategy,
                    outputs,
                    full_parses: mine.iter().filter(|s| s.parsed == c.n_candidates).count(),
                    target_unparsed: mine
                        .iter()
                        .filter(|s| !s.target_rank.is_some_and(|r| r <= s.parsed))
                        .count(),
                    hallucinated: mine.iter().map(|s| s.hallucinated).sum(),
                }
            })
            .collect();

        ExperimentReport {
            dataset: c.dataset.name.clone(),
            model_id: c.model.clone(),
            stats: prepared.stats,
            dropped_users: prepared.dropped_users,
            n_candidates: c.n_candidates,
            k: c.k.clone(),
            runs: c.runs,
            strategies: c.strategies.clone(),
            scoring_mode: c.scoring_mode,
            template_version: self.renderer.template_version().to_string(),
            grid,
            exclusions,
            parse_stats,
            summary_requests: summaries.requests,
            summary_failures: summaries.failures(),
            config_toml: c.to_toml(),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn ensure_output_dir(&self) -> Result<(), RunError> {
        let dir = &self.config.output_dir;
        std::fs::create_dir_all(dir).map_err(io_err("output", dir))
    }

    pub fn write_resolved_config(&self) -> Result<PathBuf, RunError> {
        self.ensure_output_dir()?;
        let path = self.out("config.resolved");
        std::fs::write(&path, self.config.to_toml()).map_err(io_err("output", &path))?;
        Ok(path)
    }

    pub fn write_stats(&self, stats: &DatasetStats) -> Result<PathBuf, RunError> {
        self.ensure_output_dir()?;
        let path = self.out("stats.csv");
        std::fs::write(&path, stats.to_csv()).map_err(io_err("output", &path))?;
        Ok(path)
    }

    pub fn write_summaries(&self, store: &SummaryStore) -> Result<PathBuf, RunError> {
        self.ensure_output_dir()?;
        let path = self.out("summaries.jsonl");
        let mut body = String::new();
        for (item_id, kind, text) in store.entries() {
            let line = serde_json::json!({"item_id": item_id, "kind": kind, "text": text});
            body.push_str(&line.to_string());
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(io_err("summary", &path))?;
        Ok(path)
    }

    /// Writes `raw/{strategy}/{run}/{user}.txt` for outputs and `.failed`
    /// files (first line the failure kind) for failures. The raw directory
    /// is replaced.
    pub fn write_raw(
        &self,
        prepared: &Prepared,
        outputs: &RawOutputs,
    ) -> Result<PathBuf, RunError> {
        let raw = self.out("raw");
        if raw.exists() {
            std::fs::remove_dir_all(&raw).map_err(io_err("ranking", &raw))?;
        }
        for (&(strategy, run, idx), outcome) in outputs {
            let dir = raw.join(strategy.as_str()).join(run.to_string());
            std::fs::create_dir_all(&dir).map_err(io_err("ranking", &dir))?;
            let user = sanitize_id(&prepared.instances(run)[idx].user_id);
            let (path, body) = match outcome {
                RawOutcome::Text(t) => (dir.join(format!("{user}.txt")), t.clone()),
                RawOutcome::Failed { kind, reason } => (
                    dir.join(format!("{user}.failed")),
                    format!("{}\n{reason}\n", kind.as_str()),
                ),
            };
            std::fs::write(&path, body).map_err(io_err("ranking", &path))?;
        }
        Ok(raw)
    }

    /// Reads outputs written by [`Experiment::write_raw`]. Absent files are
    /// recorded as [`FailureKind::Missing`].
    pub fn load_raw(&self, prepared: &Prepared) -> Result<RawOutputs, RunError> {
        let raw = self.out("raw");
        let mut outputs = RawOutputs::new();
        for &strategy in &self.config.strategies {
            for run in 0..self.config.runs {
                let dir = raw.join(strategy.as_str()).join(run.to_string());
                for (idx, inst) in prepared.instances(run).iter().enumerate() {
                    let user = sanitize_id(&inst.user_id);
                    let txt = dir.join(format!("{user}.txt"));
                    let failed = dir.join(format!("{user}.failed"));
                    let outcome = if txt.exists() {
                        RawOutcome::Text(
                            std::fs::read_to_string(&txt).map_err(io_err("report", &txt))?,
                        )
                    } else if failed.exists() {
                        let body =
                            std::fs::read_to_string(&failed).map_err(io_err("report", &failed))?;
                        let (kind, reason) = body.split_once('\n').unwrap_or((&body, ""));
                        RawOutcome::Failed {
                            kind: FailureKind::parse(kind.trim()),
                            reason: reason.trim().to_string(),
                        }
                    } else {
                        RawOutcome::Failed {
                            kind: FailureKind::Missing,
                            reason: format!("no output at {}", txt.display()),
                        }
                    };
                    outputs.insert((strategy, run, idx), outcome);
                }
            }
        }
        Ok(outputs)
    }

    pub fn write_scores(&self, scores: &[ScoreRecord]) -> Result<PathBuf, RunError> {
        self.ensure_output_dir()?;
        let path = self.out("scores.jsonl");
        let mut body = String::new();
        for s in scores {
            body.push_str(&serde_json::to_string(s).expect("score serializes"));
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(io_err("scoring", &path))?;
        Ok(path)
    }

    /// All runs' ranking phases.
    pub fn run_all_rankings(&self, prepared: &Prepared, summaries: &SummaryStore) -> RawOutputs {
        let mut outputs = RawOutputs::new();
        for run in 0..self.config.runs {
            log::info!("ranking phase, run {}/{}", run + 1, self.config.runs);
            outputs.extend(self.run_ranking_phase(prepared, summaries, run));
        }
        outputs
    }

    /// Full pipeline with every artifact written to the output directory.
    pub fn run(&self) -> Result<(ExperimentReport, RunArtifacts), RunError> {
        let config_resolved = self.write_resolved_config()?;
        let prepared = self.prepare()?;
        let stats_csv = self.write_stats(&prepared.stats)?;
        let summaries = self.run_summary_phase(&prepared);
        if self.config.has_summary_phase() {
            self.write_summaries(&summaries)?;
        }
        let outputs = self.run_all_rankings(&prepared, &summaries);
        let raw_dir = self.write_raw(&prepared, &outputs)?;
        let scores = self.score(&prepared, &outputs);
        let scores_jsonl = self.write_scores(&scores)?;
        let report = self.aggregate(&prepared, &summaries, &outputs, &scores);
        let (report_csv, report_md) = crate::report::emit_report(&report, &self.config.output_dir)
            .map_err(|e| RunError::Io {
                stage: "report",
                path: self.config.output_dir.clone(),
                source: e,
            })?;
        Ok((
            report,
            RunArtifacts {
                report_csv,
                report_md,
                stats_csv,
                scores_jsonl,
                raw_dir,
                config_resolved,
            },
        ))
    }
}

/// Builds the experiment from its config and runs the full pipeline.
pub fn run_experiment(
    config: ExperimentConfig,
) -> Result<(ExperimentReport, RunArtifacts), RunError> {
    Experiment::new(config)?.run()
}
