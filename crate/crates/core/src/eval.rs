//! Accuracy and parse statistics.
//!
//! Reports serialize to CSV with the columns `metric,group,value`. The first
//! row is always `schema_version,,<CSV_SCHEMA_VERSION>`; `group` is empty for
//! corpus-level metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::cmst::{RuleSet, ROOT_TAG};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::tree::{ce_depth, DepTree};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "metric,group,value";

/// Length limit of the short-sentence slice.
pub const SHORT_LEN: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceScore {
    pub index: usize,
    pub len: usize,
    pub scored: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub max_len: usize,
    /// Accuracy over sentences of length at most `max_len`.
    pub dda_all: f64,
    /// Accuracy over sentences of length at most `min(max_len, 15)`.
    pub dda_le15: f64,
    pub tokens_scored: usize,
    pub tokens_scored_le15: usize,
    /// Sentences within `max_len`, in corpus order.
    pub sentences: Vec<SentenceScore>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_aligned<P: AsRef<[usize]>>(c: &Corpus, pred: &[P]) -> Result<()> {
    if c.len() != pred.len() {
        return Err(Error::contract(format!("{} trees for {} sentences", pred.len(), c.len())));
    }
    for (i, (s, t)) in c.sentences.iter().zip(pred).enumerate() {
        let len = t.as_ref().len();
        if s.len() != len {
            return Err(Error::contract(format!(
                "sentence {} has {} tokens but its tree has {len}",
                i + 1,
                s.len()
            )));
        }
    }
    Ok(())
}

/// Directed dependency accuracy against the gold heads of `gold`.
/// Sentence length counts every token; with `exclude_punct`, punctuation
/// tokens are not scored. Predictions are head arrays and need not be
/// projective.
pub fn directed_accuracy<P: AsRef<[usize]>>(
    gold: &Corpus,
    pred: &[P],
    max_len: usize,
    exclude_punct: bool,
) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    let mut sentences = Vec::new();
    for (i, (s, t)) in gold.sentences.iter().zip(pred).enumerate() {
        if s.len() > max_len {
            continue;
        }
        let mut score = SentenceScore {
            index: i,
            len: s.len(),
            scored: 0,
            correct: 0,
        };
        for (j, tok) in s.tokens.iter().enumerate() {
            let g = tok.gold_head.ok_or(Error::MissingGold(i + 1))?;
            if exclude_punct && tok.is_punct {
                continue;
            }
            score.scored += 1;
            score.correct += usize::from(t.as_ref()[j] == g);
        }
        sentences.push(score);
    }
    let sum = |short: bool| {
        sentences
            .iter()
            .filter(|s| !short || s.len <= SHORT_LEN)
            .fold((0, 0), |(c, n), s| (c + s.correct, n + s.scored))
    };
    let (correct, scored) = sum(false);
    let (correct15, scored15) = sum(true);
    Ok(EvalReport {
        max_len,
        dda_all: ratio(correct, scored),
        dda_le15: ratio(correct15, scored15),
        tokens_scored: scored,
        tokens_scored_le15: scored15,
        sentences,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = csv_preamble();
        row(&mut out, "dda_all", "", self.dda_all);
        row(&mut out, "dda_le15", "", self.dda_le15);
        row(&mut out, "tokens_scored", "", self.tokens_scored);
        row(&mut out, "tokens_scored_le15", "", self.tokens_scored_le15);
        row(&mut out, "sentences", "", self.sentences.len());
        row(&mut out, "max_len", "", self.max_len);
        out
    }

    pub fn to_table(&self) -> String {
        table(&[
            ("dda_all".into(), format!("{:.4}", self.dda_all)),
            ("dda_le15".into(), format!("{:.4}", self.dda_le15)),
            ("tokens_scored".into(), self.tokens_scored.to_string()),
            ("tokens_scored_le15".into(), self.tokens_scored_le15.to_string()),
            ("sentences".into(), self.sentences.len().to_string()),
            ("max_len".into(), self.max_len.to_string()),
        ])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuleCount {
    pub satisfied: usize,
    pub arcs: usize,
}

impl RuleCount {
    pub fn fraction(&self) -> f64 {
        ratio(self.satisfied, self.arcs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSatisfaction {
    pub overall: RuleCount,
    /// Keyed by head tag; root arcs are grouped under `ROOT`.
    pub by_head_tag: BTreeMap<String, RuleCount>,
}

/// Share of predicted arcs whose `(head tag, dependent tag)` pair is a rule.
/// Root arcs count with `ROOT` as the head tag.
pub fn rule_satisfaction(pred: &[DepTree], c: &Corpus, r: &RuleSet) -> Result<RuleSatisfaction> {
    check_aligned(c, pred)?;
    let mut overall = RuleCount::default();
    let mut by_head_tag: BTreeMap<String, RuleCount> = BTreeMap::new();
    for (s, t) in c.sentences.iter().zip(pred) {
        for (h, d) in t.arcs() {
            let head = if h == 0 { ROOT_TAG } else { s.tokens[h - 1].upos.as_str() };
            let ok = r.contains(head, &s.tokens[d - 1].upos);
            let g = by_head_tag.entry(head.to_string()).or_default();
            for rc in [&mut overall, g] {
                rc.arcs += 1;
                rc.satisfied += usize::from(ok);
            }
        }
    }
    Ok(RuleSatisfaction { overall, by_head_tag })
}

/// Mean `|head - dependent|` over non-root arcs.
pub fn avg_dep_length(pred: &[DepTree]) -> Result<f64> {
    let (total, arcs) = pred
        .iter()
        .flat_map(|t| t.arcs())
        .filter(|&(h, _)| h != 0)
        .fold((0usize, 0usize), |(s, k), (h, d)| (s + h.abs_diff(d), k + 1));
    if arcs == 0 {
        return Err(Error::Data("no non-root arcs to measure".into()));
    }
    Ok(total as f64 / arcs as f64)
}

pub fn ce_depth_histogram(pred: &[DepTree]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for t in pred {
        *hist.entry(ce_depth(t)).or_insert(0) += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub rules: RuleSatisfaction,
    /// `None` when there are no non-root arcs.
    pub avg_dep_length: Option<f64>,
    pub ce_depth_histogram: BTreeMap<usize, usize>,
}

pub fn analyze(pred: &[DepTree], c: &Corpus, r: &RuleSet) -> Result<AnalysisReport> {
    Ok(AnalysisReport {
        rules: rule_satisfaction(pred, c, r)?,
        avg_dep_length: avg_dep_length(pred).ok(),
        ce_depth_histogram: ce_depth_histogram(pred),
    })
}

impl AnalysisReport {
    pub fn to_csv(&self) -> String {
        let mut out = csv_preamble();
        row(&mut out, "rule_satisfaction", "", self.rules.overall.fraction());
        row(&mut out, "rule_arcs", "", self.rules.overall.arcs);
        for (tag, rc) in &self.rules.by_head_tag {
            row(&mut out, "rule_satisfaction", tag, rc.fraction());
            row(&mut out, "rule_arcs", tag, rc.arcs);
        }
        if let Some(l) = self.avg_dep_length {
            row(&mut out, "avg_dep_length", "", l);
        }
        for (d, k) in &self.ce_depth_histogram {
            row(&mut out, "ce_depth", &d.to_string(), k);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut rows = vec![(
            "rule_satisfaction".to_string(),
            format!("{:.4} ({} arcs)", self.rules.overall.fraction(), self.rules.overall.arcs),
        )];
        for (tag, rc) in &self.rules.by_head_tag {
            rows.push((format!("  head {tag}"), format!("{:.4} ({} arcs)", rc.fraction(), rc.arcs)));
        }
        rows.push((
            "avg_dep_length".into(),
            self.avg_dep_length.map_or("n/a".into(), |l| format!("{l:.4}")),
        ));
        for (d, k) in &self.ce_depth_histogram {
            rows.push((format!("ce_depth {d}"), k.to_string()));
        }
        table(&rows)
    }
}

fn csv_preamble() -> String {
    format!("{CSV_HEADER}\nschema_version,,{CSV_SCHEMA_VERSION}\n")
}

fn row(out: &mut String, metric: &str, group: &str, value: impl std::fmt::Display) {
    writeln!(out, "{metric},{group},{value}").expect("writing to a string");
}

fn table(rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
}
