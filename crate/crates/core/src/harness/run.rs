use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, Mode, RunConfig, TraceLevel};
use super::report::{
    aggregate, golden_prob_rows, CaseAnalysis, CaseResult, EvalReport, ProbeRecord, RunAnalysis, SkippedCase,
    TraceRecord, TraceSummary, Warnings,
};
use crate::analysis::{
    case_mean_delta_on_golden, common_token_stats, delta_histogram, golden_probability, stepwise_jsd, AnalysisError,
    ProbMode, Probe,
};
use crate::backend::{greedy_run, BackendError};
use crate::decode::{disco_decode_from, Constraints, DecodeError, ModelPair, PartialSets, TokenSets};
use crate::edit_context::{build_edited_prompt, retrieve_demos, EditCase, LexicalCosine};
use crate::metrics::{golden_for, score_case, MetricsError, ProbeAnswer, Property};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// Why one case could not be evaluated.
#[derive(Debug, Error)]
enum CaseError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("not evaluated after the backend became unavailable")]
    Aborted,
}

impl From<BackendError> for CaseError {
    fn from(e: BackendError) -> Self {
        CaseError::Decode(e.into())
    }
}

impl CaseError {
    fn stops_run(&self) -> bool {
        match self {
            CaseError::Decode(e) => e.is_unavailable(),
            CaseError::Analysis(AnalysisError::Decode(e)) => e.is_unavailable(),
            CaseError::Aborted => true,
            _ => false,
        }
    }
}

struct ProbeOutcome {
    answer: ProbeAnswer,
    record: ProbeRecord,
    max_len_reached: bool,
}

fn eval_probe(
    config: &RunConfig,
    models: ModelPair<'_>,
    case: &EditCase,
    demos: &[&EditCase],
    property: Property,
    analysis: &mut Option<CaseAnalysis>,
) -> Result<Option<ProbeOutcome>, CaseError> {
    let prompt = property.prompt(case);
    let Some(edited_text) = build_edited_prompt(case, demos, prompt, config.include_paraphrase) else {
        return Ok(None);
    };
    let params = config.decode_params();
    let raw = models.original.tokenize(prompt)?;
    let original = greedy_run(models.original, &raw, params.max_new)?;
    let original_text = models.original.detokenize(&original.tokens)?;
    let golden_text = golden_for(case, property, &original_text).to_string();
    let golden = models.edited.tokenize(&golden_text)?;
    let partial = PartialSets {
        v_edit: models.edited.tokenize(&case.edit_target)?.ids().to_vec(),
        v_golden: golden.ids().to_vec(),
    };
    let edited = edited_text.tokenize(models.edited)?;

    let (text, tokens, sets, stepwise, trace, max_len_reached) = match config.mode {
        Mode::Raw => {
            let sets = TokenSets::new(original.tokens.ids(), &partial.v_edit, &partial.v_golden);
            let reached = !original.hit_eos;
            (original_text.clone(), original.tokens.ids().to_vec(), sets, None, None, reached)
        }
        Mode::EditedPlain | Mode::Disco => {
            let trace = disco_decode_from(models, original.clone(), &edited, &partial, params)?;
            let jsd = stepwise_jsd(&trace, config.eps)?;
            let text = models.edited.detokenize(&trace.answer)?;
            let record = match config.trace_level {
                TraceLevel::None => None,
                TraceLevel::Summary => Some(TraceRecord::Summary(TraceSummary::from(&trace))),
                TraceLevel::Full => Some(TraceRecord::Full(Box::new(trace.clone()))),
            };
            (text, trace.answer.ids().to_vec(), trace.sets, Some(jsd), record, trace.max_len_reached)
        }
    };

    if let Some(out) = analysis.as_mut() {
        let probe = Probe {
            models,
            raw: &raw,
            edited: &edited,
            sets: &sets,
            alpha: config.alpha,
            constraints: config.constraints(),
        };
        match property {
            Property::Portability => {
                out.portability_delta_pct = Some(case_mean_delta_on_golden(&probe, golden.ids())?);
                for mode in [ProbMode::EditedPlain, ProbMode::Disco] {
                    out.golden_prob.push(golden_probability(&probe, property, golden.ids(), original.tokens.ids(), mode)?);
                }
                out.outdated_tokens = probe.outdated_token_records(original.tokens.ids())?;
            }
            Property::Locality if !golden.is_empty() => {
                for mode in [ProbMode::EditedPlain, ProbMode::Disco] {
                    out.golden_prob.push(golden_probability(&probe, property, golden.ids(), &[], mode)?);
                }
            }
            _ => {}
        }
    }

    Ok(Some(ProbeOutcome {
        answer: ProbeAnswer { text: text.clone(), tokens, original_text: original_text.clone(), sets },
        record: ProbeRecord {
            property,
            prompt: prompt.to_string(),
            answer: text,
            original_answer: original_text,
            golden: golden_text,
            stepwise_jsd: stepwise,
            trace,
        },
        max_len_reached,
    }))
}

fn eval_case(
    config: &RunConfig,
    models: ModelPair<'_>,
    case: &EditCase,
    pool: &[EditCase],
) -> Result<(CaseResult, usize), CaseError> {
    let demos = retrieve_demos(case, pool, config.k_demos, &LexicalCosine);
    let mut analysis = config.analysis.then(CaseAnalysis::default);
    let mut answers = BTreeMap::new();
    let mut probes = Vec::new();
    let mut max_len = 0;
    for property in Property::ALL {
        if let Some(outcome) = eval_probe(config, models, case, &demos, property, &mut analysis)? {
            answers.insert(property, outcome.answer);
            probes.push(outcome.record);
            max_len += usize::from(outcome.max_len_reached);
        }
    }
    let scores = score_case(case, &answers)?;
    Ok((CaseResult { case_id: case.case_id.clone(), scores, probes, analysis }, max_len))
}

fn run_analysis(cases: &[CaseResult]) -> RunAnalysis {
    let pairs: Vec<(f64, f64)> = cases
        .iter()
        .filter_map(|c| {
            let delta = c.analysis.as_ref()?.portability_delta_pct?;
            let oe = c.score(Property::Portability)?.oe?;
            Some((delta, oe))
        })
        .collect();
    let records: Vec<_> = cases.iter().filter_map(|c| c.analysis.as_ref()).flat_map(|a| a.outdated_tokens.clone()).collect();
    RunAnalysis {
        delta_histogram: delta_histogram(&pairs),
        golden_prob: golden_prob_rows(cases),
        common_tokens: common_token_stats(&records),
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Evaluates every case under `config`.
///
/// Cases run on up to `config.jobs` threads; the report lists them in
/// dataset order. A case whose decode fails is skipped and recorded. If the
/// backend becomes unavailable the run stops and the report is marked
/// partial, keeping the cases that precede the failure.
pub fn run(
    config: &RunConfig,
    models: ModelPair<'_>,
    cases: &[EditCase],
    label: Option<String>,
) -> Result<EvalReport, RunError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let stop = AtomicBool::new(false);
    let outcomes: Vec<Result<(CaseResult, usize), CaseError>> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                if stop.load(Ordering::SeqCst) {
                    return Err(CaseError::Aborted);
                }
                let result = eval_case(config, models, case, cases);
                if matches!(&result, Err(e) if e.stops_run()) {
                    stop.store(true, Ordering::SeqCst);
                }
                result
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut skipped = Vec::new();
    let mut warnings = Warnings::default();
    let mut abort_reason = None;
    for (case, outcome) in cases.iter().zip(outcomes) {
        match outcome {
            Ok((result, max_len)) => {
                warnings.max_len_reached += max_len;
                warnings.empty_predictions += result.scores.iter().filter(|s| s.empty_prediction).count();
                results.push(result);
            }
            Err(e) if e.stops_run() => {
                log::error!("case {}: {e}; stopping", case.case_id);
                abort_reason = Some(format!("case {}: {e}", case.case_id));
                break;
            }
            Err(e) => {
                log::warn!("case {} skipped: {e}", case.case_id);
                skipped.push(SkippedCase { case_id: case.case_id.clone(), error: e.to_string() });
            }
        }
    }
    warnings.skipped_cases = skipped.len();

    Ok(EvalReport {
        generated_unix: now_unix(),
        label,
        config: config.clone(),
        vocab_hash: models.edited.vocab().id.to_hex(),
        partial: abort_reason.is_some(),
        abort_reason,
        aggregate: aggregate(&results),
        warnings,
        analysis: config.analysis.then(|| run_analysis(&results)),
        cases: results,
        skipped,
    })
}

fn alpha_label(alpha: f64) -> String {
    format!("alpha={alpha}")
}

/// One DISCO run per alpha, in the given order.
pub fn sweep_alpha(
    config: &RunConfig,
    models: ModelPair<'_>,
    cases: &[EditCase],
    alphas: &[f64],
) -> Result<Vec<EvalReport>, RunError> {
    if alphas.is_empty() {
        return Err(ConfigError::EmptyAlphas.into());
    }
    let mut reports = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = RunConfig { mode: Mode::Disco, alpha, ..config.clone() };
        let report = run(&cfg, models, cases, Some(alpha_label(alpha)))?;
        let stop = report.partial;
        reports.push(report);
        if stop {
            break;
        }
    }
    Ok(reports)
}

/// The four constraint configurations, labelled ID.1 to ID.4.
pub fn ablate(config: &RunConfig, models: ModelPair<'_>, cases: &[EditCase]) -> Result<Vec<EvalReport>, RunError> {
    let mut reports = Vec::with_capacity(Constraints::ABLATION_GRID.len());
    for (label, c) in Constraints::ABLATION_GRID {
        let cfg = RunConfig {
            mode: Mode::Disco,
            constrain_out: c.outdated,
            constrain_edit: c.edit_target,
            ..config.clone()
        };
        let report = run(&cfg, models, cases, Some(label.to_string()))?;
        let stop = report.partial;
        reports.push(report);
        if stop {
            break;
        }
    }
    Ok(reports)
}
