mod common;

use std::collections::BTreeSet;
use std::sync::Mutex;

use common::{config, dataset};
use vstrank::client::{
    Backend, BackendSpec, ChatRequest, ClientError, Completer, CompletionResult, MockBehavior,
};
use vstrank::metrics::ScoringMode;
use vstrank::prompting::{Purpose, StrategyId};
use vstrank::report::Metric;
use vstrank::runner::{Experiment, Prepared, RawOutcome};

const ORACLE: &str = "kind = \"mock\"\nbehavior = { type = \"oracle\" }";

/// Records every request's purpose, image count and text.
struct Recorder {
    inner: Backend,
    log: Mutex<Vec<(Purpose, usize, String)>>,
}

impl Recorder {
    fn new(behavior: MockBehavior) -> Self {
        Recorder {
            inner: Backend::from_spec(&BackendSpec::mock(behavior)).unwrap(),
            log: Mutex::new(Vec::new()),
        }
    }

    fn count(&self, purpose: Purpose) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.0 == purpose)
            .count()
    }
}

impl Completer for &'static Recorder {
    fn complete(&self, req: &ChatRequest) -> Result<CompletionResult, ClientError> {
        self.log.lock().unwrap().push((
            req.prompt.purpose,
            req.prompt.image_count(),
            req.prompt.text(),
        ));
        self.inner.complete(req)
    }

    fn max_inflight(&self) -> usize {
        4
    }
}

fn recorder(behavior: MockBehavior) -> &'static Recorder {
    Box::leak(Box::new(Recorder::new(behavior)))
}

/// Items shown in any ranking prompt: the last 15 history entries of each
/// instance.
fn windowed_items(p: &Prepared) -> BTreeSet<String> {
    p.runs
        .iter()
        .flatten()
        .flat_map(|inst| {
            let start = inst.history.len().saturating_sub(15);
            inst.history[start..].iter().map(|e| e.item_id.clone())
        })
        .collect()
}

fn experiment(
    dir: &std::path::Path,
    strategies: &[&str],
    users: usize,
    runs: usize,
    rec: &'static Recorder,
) -> Experiment {
    let files = dataset(dir, users, 250, 9);
    let cfg = config(&files, &dir.join("out"), strategies, users, runs, ORACLE);
    Experiment::with_completer(cfg, Box::new(rec)).unwrap()
}

#[test]
fn one_summary_request_per_distinct_item() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Oracle);
    let exp = experiment(dir.path(), &["VST", "VST_SummaryOnly"], 30, 2, rec);
    let prepared = exp.prepare().unwrap();
    let store = exp.run_summary_phase(&prepared);
    let expected = windowed_items(&prepared).len();
    assert_eq!(store.requests, expected);
    assert_eq!(rec.count(Purpose::Summary), expected);
    assert_eq!(store.failures(), 0);
    assert_eq!(store.entries().len(), expected);
}

#[test]
fn no_summary_phase_without_vst_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Oracle);
    let exp = experiment(
        dir.path(),
        &["TitleOnly", "MM", "MM_ICL", "MM_CoT"],
        20,
        1,
        rec,
    );
    let (report, _) = exp.run().unwrap();
    assert_eq!(report.summary_requests, 0);
    assert_eq!(rec.count(Purpose::Summary), 0);
    assert_eq!(rec.count(Purpose::Ranking), 80);
    assert!(!dir.path().join("out/summaries.jsonl").exists());
}

#[test]
fn plain_and_title_conditioned_summaries_are_separate() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Oracle);
    let exp = experiment(dir.path(), &["VST", "TitleBased_VST"], 15, 1, rec);
    let prepared = exp.prepare().unwrap();
    let store = exp.run_summary_phase(&prepared);
    let items = windowed_items(&prepared);
    assert_eq!(store.requests, 2 * items.len());
    let id = items.iter().next().unwrap();
    let plain = store
        .visual(vstrank::prompting::SummaryKind::Plain, id)
        .unwrap();
    let titled = store
        .visual(vstrank::prompting::SummaryKind::TitleConditioned, id)
        .unwrap();
    assert_ne!(plain, titled);
}

#[test]
fn title_summaries_are_requested_for_title_sum_vst() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Oracle);
    let exp = experiment(dir.path(), &["TitleSum_VST"], 10, 1, rec);
    let prepared = exp.prepare().unwrap();
    let store = exp.run_summary_phase(&prepared);
    let items = windowed_items(&prepared);
    assert_eq!(store.requests, 2 * items.len());
    assert!(items.iter().all(|id| store.title(id).is_some()));
    let title_prompts = rec
        .log
        .lock()
        .unwrap()
        .iter()
        .filter(|r| r.1 == 0 && r.0 == Purpose::Summary)
        .count();
    assert_eq!(title_prompts, items.len());
}

#[test]
fn ranking_prompts_carry_images_only_for_multimodal_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Oracle);
    let exp = experiment(dir.path(), &["MM", "VST"], 10, 1, rec);
    let prepared = exp.prepare().unwrap();
    let summaries = exp.run_summary_phase(&prepared);
    rec.log.lock().unwrap().clear();
    exp.run_ranking_phase(&prepared, &summaries, 0);
    let log = rec.log.lock().unwrap();
    let with_images = log.iter().filter(|r| r.1 > 0).count();
    assert_eq!(with_images, 10);
    let expected_images: usize = prepared
        .instances(0)
        .iter()
        .map(|i| i.history.len().min(15))
        .sum();
    assert_eq!(log.iter().map(|r| r.1).sum::<usize>(), expected_images);
    assert!(log
        .iter()
        .filter(|r| r.1 == 0)
        .all(|r| r.2.contains("Description: The image shows")));
}

#[test]
fn report_rebuilds_from_raw_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Hallucinate { rate: 0.3, seed: 2 });
    let exp = experiment(dir.path(), &["TitleOnly", "VST"], 20, 2, rec);
    let (report, files) = exp.run().unwrap();
    let written = std::fs::read_to_string(&files.scores_jsonl).unwrap();

    let prepared = exp.prepare().unwrap();
    let outputs = exp.load_raw(&prepared).unwrap();
    assert_eq!(outputs.len(), 2 * 2 * 20);
    let scores = exp.score(&prepared, &outputs);
    let again: String = scores
        .iter()
        .map(|s| serde_json::to_string(s).unwrap() + "\n")
        .collect();
    assert_eq!(written, again);
    let rebuilt = exp.aggregate(&prepared, &Default::default(), &outputs, &scores);
    assert_eq!(report.to_csv(), rebuilt.to_csv());
}

#[test]
fn missing_image_excludes_only_affected_instances() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Oracle);
    let exp = experiment(dir.path(), &["TitleOnly", "MM", "VST"], 25, 1, rec);
    let prepared = exp.prepare().unwrap();
    let victim = prepared.instances(0)[0].history.last().unwrap().clone();
    std::fs::remove_file(victim.image_ref.as_ref().unwrap()).unwrap();
    let affected = prepared
        .instances(0)
        .iter()
        .filter(|i| {
            let start = i.history.len().saturating_sub(15);
            i.history[start..]
                .iter()
                .any(|e| e.item_id == victim.item_id)
        })
        .count();

    let (report, _) = exp.run().unwrap();
    let row = |s: StrategyId| {
        report
            .exclusions
            .iter()
            .find(|r| r.strategy == s && r.run == 0)
            .unwrap()
            .clone()
    };
    assert_eq!(row(StrategyId::TitleOnly).excluded(), 0);
    assert_eq!(row(StrategyId::Mm).render, affected);
    assert_eq!(row(StrategyId::Vst).summary, affected);
    assert_eq!(report.summary_failures, 1);
    let raw = dir.path().join("out/raw/MM/0");
    let failed = std::fs::read_dir(raw)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "failed")
        .count();
    assert_eq!(failed, affected);
}

#[test]
fn strict_scoring_never_exceeds_completed() {
    let dir = tempfile::tempdir().unwrap();
    let files = dataset(dir.path(), 40, 250, 5);
    let backend = "kind = \"mock\"\nbehavior = { type = \"hallucinate\", rate = 0.5, seed = 3 }";
    let mut reports = Vec::new();
    for mode in [ScoringMode::Completed, ScoringMode::Strict] {
        let mut cfg = config(
            &files,
            &dir.path().join("out"),
            &["TitleOnly"],
            40,
            1,
            backend,
        );
        cfg.scoring_mode = mode;
        reports.push(Experiment::new(cfg).unwrap().run().unwrap().0);
    }
    for k in [5, 10] {
        for metric in [Metric::Recall, Metric::Ndcg] {
            let c = reports[0]
                .cell(StrategyId::TitleOnly, metric, k)
                .unwrap()
                .mean
                .unwrap();
            let s = reports[1]
                .cell(StrategyId::TitleOnly, metric, k)
                .unwrap()
                .mean
                .unwrap();
            assert!(s <= c + 1e-12, "{metric:?}@{k}: strict {s} > completed {c}");
        }
    }
    let c10 = reports[0]
        .cell(StrategyId::TitleOnly, Metric::Recall, 10)
        .unwrap();
    assert_eq!(c10.mean, Some(1.0));
}

#[test]
fn failed_outcomes_are_not_scored() {
    let dir = tempfile::tempdir().unwrap();
    let rec = recorder(MockBehavior::Oracle);
    let exp = experiment(dir.path(), &["TitleOnly"], 8, 1, rec);
    let prepared = exp.prepare().unwrap();
    let mut outputs = exp.run_all_rankings(&prepared, &Default::default());
    let key = *outputs.keys().next().unwrap();
    outputs.insert(
        key,
        RawOutcome::Failed {
            kind: vstrank::runner::FailureKind::Transport,
            reason: "scripted".into(),
        },
    );
    let scores = exp.score(&prepared, &outputs);
    assert_eq!(scores.len(), 7);
    let report = exp.aggregate(&prepared, &Default::default(), &outputs, &scores);
    assert_eq!(report.exclusions[0].transport, 1);
    assert_eq!(
        report
            .cell(StrategyId::TitleOnly, Metric::Recall, 5)
            .unwrap()
            .users_per_run,
        vec![7]
    );
}
