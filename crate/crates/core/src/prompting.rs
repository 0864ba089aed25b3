//! Prompt rendering for every ranking strategy and for the summary phase.
//!
//! A prompt is an ordered list of text and image parts. Image parts carry
//! references only; encoding them for the wire is the client's job.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("item {0:?} has no image")]
    MissingImage(String),
    #[error("strategy has no summary phase: {0}")]
    NoSummaryPhase(StrategyId),
    #[error("title is empty")]
    EmptyTitle,
    #[error("history is empty")]
    EmptyHistory,
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("{strategy} needs a {what} for history item {title:?}")]
    MissingSummary {
        strategy: StrategyId,
        what: &'static str,
        title: String,
    },
    #[error("ICL needs a demonstration successor (history of at least 2 entries)")]
    IclNeedsSuccessor,
    #[error("template catalog: {0}")]
    Template(String),
}

/// Prompting strategy for one experiment leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyId {
    TitleOnly,
    #[serde(rename = "MM")]
    Mm,
    #[serde(rename = "MM_ICL")]
    MmIcl,
    #[serde(rename = "MM_CoT")]
    MmCot,
    #[serde(rename = "VST")]
    Vst,
    #[serde(rename = "VST_SummaryOnly")]
    VstSummaryOnly,
    #[serde(rename = "TitleSum_VST")]
    TitleSumVst,
    #[serde(rename = "TitleBased_VST")]
    TitleBasedVst,
}

impl StrategyId {
    pub const ALL: [StrategyId; 8] = [
        StrategyId::TitleOnly,
        StrategyId::Mm,
        StrategyId::MmIcl,
        StrategyId::MmCot,
        StrategyId::Vst,
        StrategyId::VstSummaryOnly,
        StrategyId::TitleSumVst,
        StrategyId::TitleBasedVst,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::TitleOnly => "TitleOnly",
            StrategyId::Mm => "MM",
            StrategyId::MmIcl => "MM_ICL",
            StrategyId::MmCot => "MM_CoT",
            StrategyId::Vst => "VST",
            StrategyId::VstSummaryOnly => "VST_SummaryOnly",
            StrategyId::TitleSumVst => "TitleSum_VST",
            StrategyId::TitleBasedVst => "TitleBased_VST",
        }
    }

    /// Strategies that replace images with generated summaries.
    pub fn is_vst_family(self) -> bool {
        self.visual_summary_kind().is_some()
    }

    pub fn uses_images(self) -> bool {
        matches!(self, StrategyId::Mm | StrategyId::MmIcl | StrategyId::MmCot)
    }

    /// Which visual summary the ranking prompt consumes, if any.
    pub fn visual_summary_kind(self) -> Option<SummaryKind> {
        match self {
            StrategyId::Vst | StrategyId::VstSummaryOnly | StrategyId::TitleSumVst => {
                Some(SummaryKind::Plain)
            }
            StrategyId::TitleBasedVst => Some(SummaryKind::TitleConditioned),
            _ => None,
        }
    }

    pub fn needs_title_summary(self) -> bool {
        self == StrategyId::TitleSumVst
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyId::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Kind of visual summary requested for an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    Plain,
    TitleConditioned,
}

/// History entry as seen by the renderer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntryView {
    pub title: String,
    pub image_ref: Option<String>,
    pub visual_summary: Option<String>,
    pub title_summary: Option<String>,
}

impl HistoryEntryView {
    pub fn titled(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Part {
    Text(String),
    Image(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Summary,
    Ranking,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub parts: Vec<Part>,
    pub purpose: Purpose,
}

impl RenderedPrompt {
    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, Part::Image(_)))
            .count()
    }

    /// All text parts joined with newlines.
    pub fn text(&self) -> String {
        let texts: Vec<&str> = self
            .parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }
}

#[derive(Debug, Clone, Deserialize)]
struct SummaryTemplates {
    plain: String,
    title_conditioned: String,
    title: String,
}

#[derive(Debug, Clone, Deserialize)]
struct HistoryTemplates {
    header_titles: String,
    header_images: String,
    header_summaries: String,
    header_summary_only: String,
    header_title_summaries: String,
    entry_title: String,
    entry_image: String,
    entry_summary: String,
    entry_summary_only: String,
    entry_title_summary: String,
    icl_demonstration: String,
}

#[derive(Debug, Clone, Deserialize)]
struct CandidateTemplates {
    header: String,
    line: String,
    instruction: String,
    chain_of_thought: String,
}

/// Parsed template catalog.
#[derive(Debug, Clone, Deserialize)]
pub struct TemplateCatalog {
    pub version: String,
    summary: SummaryTemplates,
    history: HistoryTemplates,
    candidates: CandidateTemplates,
}

/// Raw text of the shipped catalog.
pub const TEMPLATE_SOURCE: &str = include_str!("../templates/prompts.toml");

static SHIPPED: LazyLock<TemplateCatalog> =
    LazyLock::new(|| TemplateCatalog::parse(TEMPLATE_SOURCE).expect("shipped templates parse"));

impl TemplateCatalog {
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        toml::from_str(source).map_err(|e| PromptError::Template(e.to_string()))
    }

    pub fn shipped() -> &'static TemplateCatalog {
        &SHIPPED
    }
}

/// Single-pass `{name}` substitution. Unknown placeholders are left as is.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Accumulates text lines, flushing them into a single text part whenever an
/// image is inserted.
#[derive(Default)]
struct PartsBuilder {
    parts: Vec<Part>,
    lines: Vec<String>,
}

impl PartsBuilder {
    fn line(&mut self, s: String) {
        self.lines.push(s);
    }

    fn image(&mut self, r: &str) {
        self.flush();
        self.parts.push(Part::Image(r.to_string()));
    }

    fn flush(&mut self) {
        if !self.lines.is_empty() {
            self.parts.push(Part::Text(self.lines.join("\n")));
            self.lines.clear();
        }
    }

    fn finish(mut self) -> Vec<Part> {
        self.flush();
        self.parts
    }
}

/// Default number of most recent history entries kept in a ranking prompt.
pub const DEFAULT_HISTORY_CAP: usize = 15;

/// Renders prompts from a template catalog.
#[derive(Debug, Clone)]
pub struct Renderer<'t> {
    templates: &'t TemplateCatalog,
    history_cap: Option<usize>,
}

impl Default for Renderer<'static> {
    fn default() -> Self {
        Renderer::new(TemplateCatalog::shipped())
    }
}

impl<'t> Renderer<'t> {
    pub fn new(templates: &'t TemplateCatalog) -> Self {
        Self {
            templates,
            history_cap: Some(DEFAULT_HISTORY_CAP),
        }
    }

    /// Keep only the `cap` most recent history entries; `None` keeps all.
    pub fn with_history_cap(mut self, cap: Option<usize>) -> Self {
        self.history_cap = cap.map(|c| c.max(1));
        self
    }

    pub fn template_version(&self) -> &str {
        &self.templates.version
    }

    /// The window of history a ranking prompt will actually use.
    pub fn history_window<'h, T>(&self, history: &'h [T]) -> &'h [T] {
        match self.history_cap {
            Some(cap) if history.len() > cap => &history[history.len() - cap..],
            _ => history,
        }
    }

    pub fn render_summary_prompt(
        &self,
        entry: &HistoryEntryView,
        kind: SummaryKind,
    ) -> Result<RenderedPrompt, PromptError> {
        let image = entry
            .image_ref
            .as_deref()
            .ok_or_else(|| PromptError::MissingImage(entry.title.clone()))?;
        let text = match kind {
            SummaryKind::Plain => self.templates.summary.plain.clone(),
            SummaryKind::TitleConditioned => fill(
                &self.templates.summary.title_conditioned,
                &[("title", &entry.title)],
            ),
        };
        Ok(RenderedPrompt {
            parts: vec![Part::Image(image.to_string()), Part::Text(text)],
            purpose: Purpose::Summary,
        })
    }

    /// Summary prompt for the summary phase of `strategy`.
    pub fn render_strategy_summary_prompt(
        &self,
        entry: &HistoryEntryView,
        strategy: StrategyId,
    ) -> Result<RenderedPrompt, PromptError> {
        let kind = strategy
            .visual_summary_kind()
            .ok_or(PromptError::NoSummaryPhase(strategy))?;
        self.render_summary_prompt(entry, kind)
    }

    pub fn render_title_summary_prompt(
        &self,
        entry: &HistoryEntryView,
    ) -> Result<RenderedPrompt, PromptError> {
        if entry.title.trim().is_empty() {
            return Err(PromptError::EmptyTitle);
        }
        Ok(RenderedPrompt {
            parts: vec![Part::Text(fill(
                &self.templates.summary.title,
                &[("title", &entry.title)],
            ))],
            purpose: Purpose::Summary,
        })
    }

    pub fn render_ranking_prompt<S: AsRef<str>>(
        &self,
        strategy: StrategyId,
        history: &[HistoryEntryView],
        candidates: &[S],
    ) -> Result<RenderedPrompt, PromptError> {
        if history.is_empty() {
            return Err(PromptError::EmptyHistory);
        }
        if candidates.len() < 2 {
            return Err(PromptError::TooFewCandidates(candidates.len()));
        }
        let history = self.history_window(history);
        let h = &self.templates.history;
        let mut b = PartsBuilder::default();

        let summary = |e: &HistoryEntryView, what: &'static str| -> Result<String, PromptError> {
            let field = if what == "title summary" {
                &e.title_summary
            } else {
                &e.visual_summary
            };
            field.clone().ok_or_else(|| PromptError::MissingSummary {
                strategy,
                what,
                title: e.title.clone(),
            })
        };

        match strategy {
            StrategyId::TitleOnly => {
                b.line(h.header_titles.clone());
                for (i, e) in history.iter().enumerate() {
                    let idx = (i + 1).to_string();
                    b.line(fill(
                        &h.entry_title,
                        &[("index", &idx), ("title", &e.title)],
                    ));
                }
            }
            StrategyId::Mm | StrategyId::MmCot => {
                b.line(h.header_images.clone());
                self.mm_entries(&mut b, history);
            }
            StrategyId::MmIcl => {
                let (successor, prefix) = match history.split_last() {
                    Some((s, p)) if !p.is_empty() => (s, p),
                    _ => return Err(PromptError::IclNeedsSuccessor),
                };
                b.line(h.header_images.clone());
                self.mm_entries(&mut b, prefix);
                b.line(fill(&h.icl_demonstration, &[("title", &successor.title)]));
            }
            StrategyId::Vst | StrategyId::TitleBasedVst => {
                b.line(h.header_summaries.clone());
                for (i, e) in history.iter().enumerate() {
                    let idx = (i + 1).to_string();
                    let s = summary(e, "visual summary")?;
                    b.line(fill(
                        &h.entry_summary,
                        &[("index", &idx), ("title", &e.title), ("visual_summary", &s)],
                    ));
                }
            }
            StrategyId::VstSummaryOnly => {
                b.line(h.header_summary_only.clone());
                for (i, e) in history.iter().enumerate() {
                    let idx = (i + 1).to_string();
                    let s = summary(e, "visual summary")?;
                    b.line(fill(
                        &h.entry_summary_only,
                        &[("index", &idx), ("visual_summary", &s)],
                    ));
                }
            }
            StrategyId::TitleSumVst => {
                b.line(h.header_title_summaries.clone());
                for (i, e) in history.iter().enumerate() {
                    let idx = (i + 1).to_string();
                    let ts = summary(e, "title summary")?;
                    let vs = summary(e, "visual summary")?;
                    b.line(fill(
                        &h.entry_title_summary,
                        &[
                            ("index", &idx),
                            ("title", &e.title),
                            ("title_summary", &ts),
                            ("visual_summary", &vs),
                        ],
                    ));
                }
            }
        }

        let c = &self.templates.candidates;
        let n = candidates.len().to_string();
        b.line(fill(&c.header, &[("n", &n)]));
        for (i, title) in candidates.iter().enumerate() {
            let idx = (i + 1).to_string();
            b.line(fill(&c.line, &[("index", &idx), ("title", title.as_ref())]));
        }
        b.line(fill(&c.instruction, &[("n", &n)]));
        if strategy == StrategyId::MmCot {
            b.line(c.chain_of_thought.clone());
        }

        Ok(RenderedPrompt {
            parts: b.finish(),
            purpose: Purpose::Ranking,
        })
    }

    fn mm_entries(&self, b: &mut PartsBuilder, entries: &[HistoryEntryView]) {
        let h = &self.templates.history;
        for (i, e) in entries.iter().enumerate() {
            let idx = (i + 1).to_string();
            match &e.image_ref {
                Some(img) => {
                    b.line(fill(
                        &h.entry_image,
                        &[("index", &idx), ("title", &e.title)],
                    ));
                    b.image(img);
                }
                None => b.line(fill(
                    &h.entry_title,
                    &[("index", &idx), ("title", &e.title)],
                )),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(title: &str, image: Option<&str>, summary: Option<&str>) -> HistoryEntryView {
        HistoryEntryView {
            title: title.into(),
            image_ref: image.map(Into::into),
            visual_summary: summary.map(Into::into),
            title_summary: Some(format!("about {title}")),
        }
    }

    fn history() -> Vec<HistoryEntryView> {
        vec![
            entry("Tent", Some("tent.jpg"), Some("a green tent")),
            entry("Lantern", Some("lantern.jpg"), Some("a lantern")),
            entry("Stove", Some("stove.jpg"), Some("a camping stove")),
        ]
    }

    const CANDS: [&str; 3] = ["Kayak", "Sleeping Bag", "Paddle"];

    #[test]
    fn plain_summary_prompt() {
        let r = Renderer::default();
        let p = r
            .render_strategy_summary_prompt(&entry("X", Some("p.jpg"), None), StrategyId::Vst)
            .unwrap();
        assert_eq!(
            p.parts,
            [
                Part::Image("p.jpg".into()),
                Part::Text("What's in this image?".into())
            ]
        );
        assert_eq!(p.purpose, Purpose::Summary);
    }

    #[test]
    fn title_conditioned_summary_prompt() {
        let r = Renderer::default();
        let p = r
            .render_strategy_summary_prompt(
                &entry("Lego Castle", Some("c.png"), None),
                StrategyId::TitleBasedVst,
            )
            .unwrap();
        assert!(p
            .text()
            .contains("This is an image related to Lego Castle."));
        assert!(p
            .text()
            .ends_with("Please provide a detailed description of the given image."));
    }

    #[test]
    fn summary_prompt_errors() {
        let r = Renderer::default();
        let e = r
            .render_strategy_summary_prompt(&entry("X", Some("p.jpg"), None), StrategyId::Mm)
            .unwrap_err();
        assert!(e.to_string().contains("strategy has no summary phase"));
        let e = r
            .render_summary_prompt(&entry("Blender", None, None), SummaryKind::Plain)
            .unwrap_err();
        assert!(e.to_string().contains("Blender"));
    }

    #[test]
    fn title_summary_prompt() {
        let r = Renderer::default();
        let e = HistoryEntryView::titled("Yoga Mat 6mm");
        let p = r.render_title_summary_prompt(&e).unwrap();
        assert_eq!(p.parts.len(), 1);
        let t = p.text();
        assert!(t.contains("Yoga Mat 6mm"));
        assert!(t.contains("What information can you get from the title?"));
        assert_eq!(p, r.render_title_summary_prompt(&e).unwrap());
        assert_eq!(
            r.render_title_summary_prompt(&HistoryEntryView::titled(" ")),
            Err(PromptError::EmptyTitle)
        );
    }

    #[test]
    fn vst_prompt_is_text_only() {
        let r = Renderer::default();
        let p = r
            .render_ranking_prompt(StrategyId::Vst, &history(), &CANDS)
            .unwrap();
        assert_eq!(p.image_count(), 0);
        let t = p.text();
        assert!(t.starts_with("Here is a chronological list of my purchase history"));
        let a = t.find("1. Title: Tent. Description: a green tent").unwrap();
        let b = t.find("2. Title: Lantern. Description: a lantern").unwrap();
        let c = t
            .find("3. Title: Stove. Description: a camping stove")
            .unwrap();
        assert!(a < b && b < c);
        assert!(
            t.ends_with("You cannot generate products that are not in the given candidate list.")
        );
        assert!(t.contains("There are 3 candidate products"));
        assert!(t.contains("Please rank these 3 candidate products"));
    }

    #[test]
    fn mm_interleaves_images() {
        let r = Renderer::default();
        let h = vec![
            entry("Tent", Some("tent.jpg"), None),
            entry("Rope", None, None),
            entry("Stove", Some("stove.jpg"), None),
        ];
        let p = r.render_ranking_prompt(StrategyId::Mm, &h, &CANDS).unwrap();
        assert_eq!(p.image_count(), 2);
        assert!(matches!(&p.parts[0], Part::Text(t) if t.ends_with("1. Title: Tent. Image:")));
        assert_eq!(p.parts[1], Part::Image("tent.jpg".into()));
        assert!(
            matches!(&p.parts[2], Part::Text(t) if t.contains("2. Title: Rope") && t.ends_with("3. Title: Stove. Image:"))
        );
        assert_eq!(p.parts[3], Part::Image("stove.jpg".into()));
    }

    #[test]
    fn cot_suffix_is_last() {
        let r = Renderer::default();
        let p = r
            .render_ranking_prompt(StrategyId::MmCot, &history(), &CANDS)
            .unwrap();
        match p.parts.last() {
            Some(Part::Text(t)) => assert!(t.ends_with("Please think step by step.")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn icl_demonstration() {
        let r = Renderer::default();
        let p = r
            .render_ranking_prompt(StrategyId::MmIcl, &history(), &CANDS)
            .unwrap();
        assert_eq!(p.image_count(), 2);
        let t = p.text();
        assert!(t.contains(
            "Then if I ask you to recommend a new product, you should recommend Stove. Now I've just purchased Stove, I want to buy a new product."
        ));
        assert!(!t.contains("3. Title: Stove"));
        let e = r
            .render_ranking_prompt(StrategyId::MmIcl, &history()[..1], &CANDS)
            .unwrap_err();
        assert_eq!(e, PromptError::IclNeedsSuccessor);
    }

    #[test]
    fn vst_requires_summaries() {
        let r = Renderer::default();
        let mut h = history();
        h[1].visual_summary = None;
        for s in [
            StrategyId::Vst,
            StrategyId::VstSummaryOnly,
            StrategyId::TitleSumVst,
            StrategyId::TitleBasedVst,
        ] {
            assert!(matches!(
                r.render_ranking_prompt(s, &h, &CANDS),
                Err(PromptError::MissingSummary { .. })
            ));
        }
        h[1].visual_summary = Some("x".into());
        h[0].title_summary = None;
        assert!(r
            .render_ranking_prompt(StrategyId::TitleSumVst, &h, &CANDS)
            .is_err());
        assert!(r.render_ranking_prompt(StrategyId::Vst, &h, &CANDS).is_ok());
    }

    #[test]
    fn summary_only_omits_titles() {
        let r = Renderer::default();
        let p = r
            .render_ranking_prompt(StrategyId::VstSummaryOnly, &history(), &CANDS)
            .unwrap();
        let t = p.text();
        assert!(t.contains("1. Description: a green tent"));
        assert!(!t.contains("Title: Tent"));
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let r = Renderer::default().with_history_cap(Some(2));
        let p = r
            .render_ranking_prompt(StrategyId::TitleOnly, &history(), &CANDS)
            .unwrap();
        let t = p.text();
        assert!(!t.contains("Tent"));
        assert!(t.contains("1. Title: Lantern"));
        assert!(t.contains("2. Title: Stove"));
    }

    #[test]
    fn braces_in_titles_pass_through() {
        let r = Renderer::default();
        let h = vec![HistoryEntryView::titled("Mug {n} {title}")];
        let p = r
            .render_ranking_prompt(StrategyId::TitleOnly, &h, &["{index} Cup", "Plate"])
            .unwrap();
        let t = p.text();
        assert!(t.contains("1. Title: Mug {n} {title}"));
        assert!(t.contains("1. {index} Cup"));
    }

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("{a}-{b}", &[("a", "{b}"), ("b", "x")]), "{b}-x");
        assert_eq!(fill("{missing} {", &[]), "{missing} {");
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in StrategyId::ALL {
            assert_eq!(s.as_str().parse::<StrategyId>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
    }
}
