use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::config::RunConfig;
use crate::analysis::{CommonTokenStats, DeltaBin, OutdatedTokenRecord, ProbMode, ProbabilityReport};
use crate::decode::DecodeTrace;
use crate::metrics::{CaseScores, Property};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Serialize)]
pub struct StepSummary {
    pub t: usize,
    pub chosen_edit: TokenId,
    pub chosen_orig: Option<TokenId>,
    pub p_edit_chosen: f64,
    pub delta_chosen: f64,
    pub score_chosen: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub answer: Vec<TokenId>,
    pub outdated: Vec<TokenId>,
    pub alpha: f64,
    pub constrain_out: bool,
    pub constrain_edit: bool,
    pub max_len_reached: bool,
    pub steps: Vec<StepSummary>,
}

impl From<&DecodeTrace> for TraceSummary {
    fn from(trace: &DecodeTrace) -> Self {
        TraceSummary {
            answer: trace.answer.ids().to_vec(),
            outdated: trace.outdated.ids().to_vec(),
            alpha: trace.alpha,
            constrain_out: trace.constraints.outdated,
            constrain_edit: trace.constraints.edit_target,
            max_len_reached: trace.max_len_reached,
            steps: trace
                .steps
                .iter()
                .map(|s| {
                    let v = s.chosen_edit as usize;
                    StepSummary {
                        t: s.t,
                        chosen_edit: s.chosen_edit,
                        chosen_orig: s.chosen_orig,
                        p_edit_chosen: s.p_edit.probs()[v],
                        delta_chosen: s.delta[v],
                        score_chosen: s.score.scores()[v],
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum TraceRecord {
    Summary(TraceSummary),
    Full(Box<DecodeTrace>),
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRecord {
    pub property: Property,
    pub prompt: String,
    pub answer: String,
    /// The original model's greedy answer to the same probe.
    pub original_answer: String,
    pub golden: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepwise_jsd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceRecord>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CaseAnalysis {
    /// Mean constrained delta at the portability golden tokens, percent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub portability_delta_pct: Option<f64>,
    pub golden_prob: Vec<ProbabilityReport>,
    pub outdated_tokens: Vec<OutdatedTokenRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case_id: String,
    pub scores: Vec<CaseScores>,
    pub probes: Vec<ProbeRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<CaseAnalysis>,
}

impl CaseResult {
    pub fn score(&self, property: Property) -> Option<&CaseScores> {
        self.scores.iter().find(|s| s.property == property)
    }

    pub fn probe(&self, property: Property) -> Option<&ProbeRecord> {
        self.probes.iter().find(|p| p.property == property)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedCase {
    pub case_id: String,
    pub error: String,
}

/// Means over the cases that have the property; F1/EM/OE/TE in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyAggregate {
    pub property: Property,
    pub cases: usize,
    pub f1: f64,
    pub em: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub te: Option<f64>,
    /// Mean stepwise symmetrized KL, nats.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jsd: Option<f64>,
    /// The same value times 100.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jsd_x100: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Warnings {
    pub empty_predictions: usize,
    pub max_len_reached: usize,
    pub skipped_cases: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GoldenProbRow {
    pub property: Property,
    pub mode: ProbMode,
    pub cases: usize,
    pub golden_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outdated_prob: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunAnalysis {
    pub delta_histogram: Vec<DeltaBin>,
    pub golden_prob: Vec<GoldenProbRow>,
    pub common_tokens: CommonTokenStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Seconds since the epoch. The only field that differs between identical runs.
    pub generated_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: RunConfig,
    pub vocab_hash: String,
    /// The run stopped early because the backend became unavailable.
    pub partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub aggregate: Vec<PropertyAggregate>,
    pub warnings: Warnings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<RunAnalysis>,
    pub cases: Vec<CaseResult>,
    pub skipped: Vec<SkippedCase>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Recomputes the per-property means from per-case entries.
pub fn aggregate(cases: &[CaseResult]) -> Vec<PropertyAggregate> {
    Property::ALL
        .iter()
        .filter_map(|&property| {
            let scores: Vec<&CaseScores> = cases.iter().filter_map(|c| c.score(property)).collect();
            if scores.is_empty() {
                return None;
            }
            let pct = |f: &dyn Fn(&CaseScores) -> Option<f64>| mean(&scores.iter().filter_map(|s| f(s)).collect::<Vec<_>>()).map(|m| 100.0 * m);
            let jsds: Vec<f64> = cases.iter().filter_map(|c| c.probe(property)?.stepwise_jsd).collect();
            let jsd = mean(&jsds);
            Some(PropertyAggregate {
                property,
                cases: scores.len(),
                f1: pct(&|s| Some(s.f1)).unwrap_or(0.0),
                em: pct(&|s| Some(s.em)).unwrap_or(0.0),
                oe: pct(&|s| s.oe),
                te: pct(&|s| s.te),
                jsd,
                jsd_x100: jsd.map(|j| 100.0 * j),
            })
        })
        .collect()
}

pub fn golden_prob_rows(cases: &[CaseResult]) -> Vec<GoldenProbRow> {
    let mut groups: BTreeMap<(Property, ProbMode), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for a in cases.iter().filter_map(|c| c.analysis.as_ref()) {
        for r in &a.golden_prob {
            let g = groups.entry((r.property, r.mode)).or_default();
            g.0.push(r.golden_prob);
            if let Some(o) = r.outdated_prob {
                g.1.push(o);
            }
        }
    }
    groups
        .into_iter()
        .map(|((property, mode), (golden, outdated))| GoldenProbRow {
            property,
            mode,
            cases: golden.len(),
            golden_prob: mean(&golden).unwrap_or(0.0),
            outdated_prob: mean(&outdated),
        })
        .collect()
}

impl EvalReport {
    pub fn aggregate_for(&self, property: Property) -> Option<&PropertyAggregate> {
        self.aggregate.iter().find(|a| a.property == property)
    }

    pub fn skipped_fraction(&self) -> f64 {
        let total = self.cases.len() + self.skipped.len();
        if total == 0 {
            0.0
        } else {
            self.skipped.len() as f64 / total as f64
        }
    }

    /// Pretty JSON without the timestamp, for reproducibility checks.
    pub fn to_comparable_json(&self) -> serde_json::Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("generated_unix");
        }
        serde_json::to_string_pretty(&value)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Aligned-column summary of one or more reports.
pub fn render_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<12} {:>5} {:>8} {:>8} {:>8} {:>8} {:>10}",
        "run", "property", "cases", "F1", "EM", "OE", "TE", "JSDx100"
    );
    for r in reports {
        let label = r.label.clone().unwrap_or_else(|| r.config.mode.as_str().to_string());
        for a in &r.aggregate {
            let _ = writeln!(
                out,
                "{:<14} {:<12} {:>5} {:>8.2} {:>8.2} {:>8} {:>8} {:>10}",
                label,
                a.property.as_str(),
                a.cases,
                a.f1,
                a.em,
                cell(a.oe),
                cell(a.te),
                cell(a.jsd_x100)
            );
        }
        let w = &r.warnings;
        if w.empty_predictions + w.skipped_cases + w.max_len_reached > 0 || r.partial {
            let _ = writeln!(
                out,
                "{:<14} warnings: {} empty predictions, {} hit max_new, {} skipped cases{}",
                label,
                w.empty_predictions,
                w.max_len_reached,
                w.skipped_cases,
                if r.partial { ", PARTIAL" } else { "" }
            );
        }
    }
    out
}
