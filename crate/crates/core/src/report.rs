//! Experiment reports: the aggregate grid, exclusion accounting and their
//! CSV / Markdown renderings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::DatasetStats;
use crate::metrics::ScoringMode;
use crate::prompting::StrategyId;
use crate::runner::FailureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Metric::Recall => "R",
            Metric::Ndcg => "N",
        }
    }
}

/// One (strategy, K, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub dataset: String,
    pub model_id: String,
    pub strategy: StrategyId,
    pub k: usize,
    pub metric: Metric,
    /// One mean over users per run that scored at least one user.
    pub run_means: Vec<f64>,
    /// Absent when no run scored any user.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub users_per_run: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRow {
    pub strategy: StrategyId,
    pub run: usize,
    pub users: usize,
    pub scored: usize,
    pub transport: usize,
    pub summary: usize,
    pub render: usize,
    pub missing: usize,
}

impl ExclusionRow {
    pub fn new(strategy: StrategyId, run: usize, users: usize) -> Self {
        Self {
            strategy,
            run,
            users,
            scored: 0,
            transport: 0,
            summary: 0,
            render: 0,
            missing: 0,
        }
    }

    pub fn excluded(&self) -> usize {
        self.transport + self.summary + self.render + self.missing
    }

    pub(crate) fn bump(&mut self, kind: FailureKind) {
        match kind {
            FailureKind::Transport => self.transport += 1,
            FailureKind::Summary => self.summary += 1,
            FailureKind::Render => self.render += 1,
            FailureKind::Missing => self.missing += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRow {
    pub strategy: StrategyId,
    pub outputs: usize,
    /// Outputs from which every candidate was recovered.
    pub full_parses: usize,
    /// Outputs whose parsed prefix does not contain the target.
    pub target_unparsed: usize,
    pub hallucinated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub model_id: String,
    pub stats: DatasetStats,
    pub dropped_users: usize,
    pub n_candidates: usize,
    pub k: Vec<usize>,
    pub runs: usize,
    pub strategies: Vec<StrategyId>,
    pub scoring_mode: ScoringMode,
    pub template_version: String,
    pub grid: Vec<AggregateCell>,
    pub exclusions: Vec<ExclusionRow>,
    pub parse_stats: Vec<ParseRow>,
    pub summary_requests: usize,
    pub summary_failures: usize,
    pub config_toml: String,
}

fn display_name(s: StrategyId) -> &'static str {
    match s {
        StrategyId::TitleOnly => "Title-only",
        StrategyId::Mm => "MM",
        StrategyId::MmIcl => "MM-ICL",
        StrategyId::MmCot => "MM-CoT",
        StrategyId::Vst => "VST",
        StrategyId::VstSummaryOnly => "title-VST",
        StrategyId::TitleSumVst => "titleSum-VST",
        StrategyId::TitleBasedVst => "title-based VST",
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

impl ExperimentReport {
    pub fn cell(&self, strategy: StrategyId, metric: Metric, k: usize) -> Option<&AggregateCell> {
        self.grid
            .iter()
            .find(|c| c.strategy == strategy && c.metric == metric && c.k == k)
    }

    pub fn total_excluded(&self) -> usize {
        self.exclusions.iter().map(ExclusionRow::excluded).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("dataset,model,strategy,metric,k,mean,std,runs,run_means,users_per_run\n");
        for c in &self.grid {
            let run_means: Vec<String> = c.run_means.iter().map(|m| format!("{m:.6}")).collect();
            let users: Vec<String> = c.users_per_run.iter().map(usize::to_string).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(&c.dataset),
                csv_field(&c.model_id),
                c.strategy,
                c.metric.as_str(),
                c.k,
                fmt_opt(c.mean, 6),
                fmt_opt(c.std, 6),
                c.run_means.len(),
                run_means.join(";"),
                users.join(";"),
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# {} / {}\n", self.dataset, self.model_id);

        md.push_str("## Dataset statistics\n\n");
        md.push_str("| Dataset | #Users | #Items | #Interactions | Sparsity |\n");
        md.push_str("|---|---:|---:|---:|---:|\n");
        let s = &self.stats;
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {:.2}% |\n",
            self.dataset,
            s.users,
            s.items,
            s.interactions,
            s.sparsity_pct()
        );

        let header = |md: &mut String| {
            md.push_str("| Dataset | Metric |");
            for &st in &self.strategies {
                let _ = write!(md, " {} |", display_name(st));
            }
            md.push_str("\n|---|---|");
            for _ in &self.strategies {
                md.push_str("---:|");
            }
            md.push('\n');
        };
        let table = |md: &mut String, pick: fn(&AggregateCell) -> Option<f64>| {
            header(md);
            for metric in [Metric::Recall, Metric::Ndcg] {
                for &k in &self.k {
                    let _ = write!(md, "| {} | {}@{} |", self.dataset, metric.short(), k);
                    for &st in &self.strategies {
                        let v = self.cell(st, metric, k).and_then(pick);
                        let _ = write!(md, " {} |", fmt_opt(v, 4));
                    }
                    md.push('\n');
                }
            }
            md.push('\n');
        };

        let _ = writeln!(
            md,
            "## Results (mean over {} run{})\n",
            self.runs,
            if self.runs == 1 { "" } else { "s" }
        );
        table(&mut md, |c| c.mean);
        md.push_str("## Standard deviation across runs\n\n");
        table(&mut md, |c| c.std);

        md.push_str("## Exclusions\n\n");
        md.push_str(
            "| Strategy | Run | Users | Scored | Transport | Summary | Render | Missing |\n",
        );
        md.push_str("|---|---:|---:|---:|---:|---:|---:|---:|\n");
        for r in &self.exclusions {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                display_name(r.strategy),
                r.run,
                r.users,
                r.scored,
                r.transport,
                r.summary,
                r.render,
                r.missing
            );
        }
        md.push('\n');

        md.push_str("## Parse diagnostics\n\n");
        md.push_str(
            "| Strategy | Outputs | Full parses | Target not parsed | Hallucinated lines |\n",
        );
        md.push_str("|---|---:|---:|---:|---:|\n");
        for p in &self.parse_stats {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                display_name(p.strategy),
                p.outputs,
                p.full_parses,
                p.target_unparsed,
                p.hallucinated
            );
        }
        md.push('\n');

        md.push_str("---\n\n");
        let _ = writeln!(md, "- scoring mode: {}", self.scoring_mode.as_str());
        if self.scoring_mode == ScoringMode::Completed {
            let collapsed: Vec<String> = self
                .k
                .iter()
                .filter(|&&k| k >= self.n_candidates)
                .map(|k| format!("@{k}"))
                .collect();
            if !collapsed.is_empty() {
                let _ = writeln!(
                    md,
                    "- rankings are completed over the {} candidates, so {} equal @{}",
                    self.n_candidates,
                    collapsed.join(", "),
                    self.n_candidates
                );
            }
        } else {
            md.push_str("- only parsed positions count; an unparsed target scores 0 at every K\n");
        }
        let _ = writeln!(md, "- template version: {}", self.template_version);
        let _ = writeln!(md, "- candidates per user: {}", self.n_candidates);
        let _ = writeln!(
            md,
            "- summary requests: {} ({} unavailable)",
            self.summary_requests, self.summary_failures
        );
        let total: usize = self.exclusions.iter().map(|r| r.users).sum();
        let _ = writeln!(
            md,
            "- excluded instances: {} of {} (strategy x run x user)",
            self.total_excluded(),
            total
        );
        let _ = writeln!(
            md,
            "- users dropped at load (fewer than 2 interactions): {}",
            self.dropped_users
        );
        md
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `report.csv` and `report.md` into `out_dir`.
pub fn emit_report(
    report: &ExperimentReport,
    out_dir: &Path,
) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("report.csv");
    let md = out_dir.join("report.md");
    std::fs::write(&csv, report.to_csv())?;
    std::fs::write(&md, report.to_markdown())?;
    Ok((csv, md))
}
