//! MTTR instrumentation: extracts response-phase timings from execution
//! traces, compares them against a configurable manual-response baseline,
//! and summarizes step latencies against the expected band.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ExecutionTrace, StepRecord, TraceStatus};
use crate::ndr::{Alert, SIG_DDOS, SIG_FDI};
use crate::time::SimTime;

/// Step-id prefixes that mark each response phase in the shipped playbooks.
pub const CONTAINMENT_STEP_PREFIXES: [&str; 2] = ["isolate-", "rate-limit-"];
pub const ERADICATION_STEP_PREFIXES: [&str; 1] = ["verify-"];
pub const RECOVERY_STEP_PREFIXES: [&str; 2] = ["restore-", "activate-standby"];

/// Expected virtual latency band for automated (non-firmware) steps.
pub const STEP_LATENCY_BAND_S: (f64, f64) = (5.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MttrRecord {
    pub scenario_id: String,
    pub attack_kind: String,
    pub alert_id: String,
    pub detection_time: SimTime,
    pub containment_time: SimTime,
    pub eradication_time: SimTime,
    pub recovery_time: SimTime,
    /// Virtual seconds from detection to full recovery.
    pub mttr_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub manual_response_duration_s: u64,
    pub description: String,
}

impl Default for BaselineModel {
    fn default() -> Self {
        BaselineModel::from_hours(2.0)
    }
}

impl BaselineModel {
    pub fn from_hours(hours: f64) -> Self {
        BaselineModel {
            manual_response_duration_s: (hours * 3600.0).round() as u64,
            description: format!("assumed manual response of {hours:.1} h"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace `{0}` did not succeed; no MTTR can be computed")]
    TraceFailed(String),
    #[error("trace `{trace}` is missing a {phase} step")]
    MissingPhaseStep { trace: String, phase: String },
    #[error("no MTTR records to evaluate")]
    NoRecords,
    #[error("baseline duration must be positive")]
    BadBaseline,
}

pub fn attack_kind_of(signature_id: &str) -> String {
    match signature_id {
        SIG_FDI => "fdi".to_string(),
        SIG_DDOS => "ddos".to_string(),
        other => other.to_ascii_lowercase(),
    }
}

fn ends_matching<'t>(
    trace: &'t ExecutionTrace,
    prefixes: &'t [&str],
) -> impl Iterator<Item = SimTime> + 't {
    trace
        .records
        .iter()
        .filter(move |r| {
            r.status == crate::engine::StepStatus::Succeeded
                && prefixes.iter().any(|p| r.step_id.starts_with(p))
        })
        .map(|r| r.end_time)
}

/// Extracts phase times from a successful trace. Containment ends with the
/// first isolation or rate-limit step; eradication with the verification
/// step (falling back to containment when the response has nothing to
/// eradicate, as in pure rate-limit mitigations); recovery with the restore
/// or standby-activation step (falling back to eradication).
pub fn compute_mttr(
    scenario_id: &str,
    trace: &ExecutionTrace,
    alert: &Alert,
) -> Result<MttrRecord, MetricsError> {
    if trace.status != TraceStatus::Succeeded {
        return Err(MetricsError::TraceFailed(trace.playbook_id.clone()));
    }
    let containment = ends_matching(trace, &CONTAINMENT_STEP_PREFIXES)
        .min()
        .ok_or_else(|| MetricsError::MissingPhaseStep {
            trace: trace.playbook_id.clone(),
            phase: "containment".to_string(),
        })?;
    let eradication = ends_matching(trace, &ERADICATION_STEP_PREFIXES)
        .max()
        .unwrap_or(containment)
        .max(containment);
    let recovery = ends_matching(trace, &RECOVERY_STEP_PREFIXES)
        .max()
        .unwrap_or(eradication)
        .max(eradication);

    let detection = alert.detection_time;
    Ok(MttrRecord {
        scenario_id: scenario_id.to_string(),
        attack_kind: attack_kind_of(&alert.signature_id),
        alert_id: alert.alert_id.clone(),
        detection_time: detection,
        containment_time: containment,
        eradication_time: eradication,
        recovery_time: recovery,
        mttr_s: recovery.since(detection).as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub attack_kind: String,
    pub record_count: usize,
    pub mean_mttr_s: f64,
    pub baseline_s: u64,
    pub baseline_description: String,
    pub reduction_pct: f64,
}

impl ReductionReport {
    pub fn render(&self) -> String {
        format!(
            "{}: mean MTTR {:.1}s over {} run(s) vs {} ({}s) -> {:.1}% reduction",
            self.attack_kind,
            self.mean_mttr_s,
            self.record_count,
            self.baseline_description,
            self.baseline_s,
            self.reduction_pct
        )
    }
}

/// Per-kind MTTR reduction against the manual baseline. Every figure names
/// its baseline assumption; the percentages are meaningless without it.
pub fn compare_baseline(
    records: &[MttrRecord],
    baseline: &BaselineModel,
) -> Result<Vec<ReductionReport>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    if baseline.manual_response_duration_s == 0 {
        return Err(MetricsError::BadBaseline);
    }
    let mut by_kind: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_kind.entry(&r.attack_kind).or_default().push(r.mttr_s);
    }
    Ok(by_kind
        .into_iter()
        .map(|(kind, mttrs)| {
            let mean = mttrs.iter().sum::<f64>() / mttrs.len() as f64;
            let baseline_s = baseline.manual_response_duration_s;
            ReductionReport {
                attack_kind: kind.to_string(),
                record_count: mttrs.len(),
                mean_mttr_s: mean,
                baseline_s,
                baseline_description: baseline.description.clone(),
                reduction_pct: 100.0 * (1.0 - mean / baseline_s as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub count: usize,
    pub mean_mttr_s: f64,
    pub min_mttr_s: f64,
    pub max_mttr_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLatency {
    pub scenario_id: String,
    pub step_id: String,
    pub duration_s: f64,
    /// Steps with domain-determined durations (firmware phases) are exempt
    /// from the automated-step latency band.
    pub band_exempt: bool,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub per_kind: BTreeMap<String, KindStats>,
    pub band_s: (f64, f64),
    pub steps: Vec<StepLatency>,
    pub banded_steps: usize,
    pub banded_in_band: usize,
    pub exempt_steps: usize,
}

fn step_is_band_exempt(record: &StepRecord) -> bool {
    record
        .outputs
        .get("commands")
        .and_then(|v| v.as_array())
        .is_some_and(|cmds| {
            cmds.iter()
                .any(|c| c.get("fixed_latency").and_then(|f| f.as_bool()) == Some(true))
        })
}

/// Per-kind MTTR statistics plus the action-step latency distribution with
/// a band-compliance flag per automated step.
pub fn summarize(
    records: &[MttrRecord],
    traces: &[(String, &ExecutionTrace)],
) -> EvaluationSummary {
    let mut per_kind: BTreeMap<String, KindStats> = BTreeMap::new();
    for r in records {
        let stats = per_kind.entry(r.attack_kind.clone()).or_insert(KindStats {
            count: 0,
            mean_mttr_s: 0.0,
            min_mttr_s: f64::INFINITY,
            max_mttr_s: 0.0,
        });
        stats.count += 1;
        stats.mean_mttr_s += r.mttr_s;
        stats.min_mttr_s = stats.min_mttr_s.min(r.mttr_s);
        stats.max_mttr_s = stats.max_mttr_s.max(r.mttr_s);
    }
    for stats in per_kind.values_mut() {
        stats.mean_mttr_s /= stats.count as f64;
    }

    let (lo, hi) = STEP_LATENCY_BAND_S;
    let mut steps = Vec::new();
    for (scenario_id, trace) in traces {
        for rec in trace.records.iter().filter(|r| r.kind == "action") {
            let duration_s = rec.end_time.since(rec.start_time).as_secs_f64();
            let band_exempt = step_is_band_exempt(rec);
            steps.push(StepLatency {
                scenario_id: scenario_id.clone(),
                step_id: rec.step_id.clone(),
                duration_s,
                band_exempt,
                within_band: (lo..=hi).contains(&duration_s),
            });
        }
    }
    let banded_steps = steps.iter().filter(|s| !s.band_exempt).count();
    let banded_in_band = steps
        .iter()
        .filter(|s| !s.band_exempt && s.within_band)
        .count();
    let exempt_steps = steps.len() - banded_steps;
    EvaluationSummary {
        per_kind,
        band_s: STEP_LATENCY_BAND_S,
        banded_steps,
        banded_in_band,
        exempt_steps,
        steps,
    }
}

pub fn render_table(summary: &EvaluationSummary, reductions: &[ReductionReport]) -> String {
    let mut out = String::new();
    out.push_str("attack kind | runs | mean mttr (s) | min (s) | max (s)\n");
    out.push_str("----------- | ---- | ------------- | ------- | -------\n");
    for (kind, s) in &summary.per_kind {
        out.push_str(&format!(
            "{:<11} | {:>4} | {:>13.1} | {:>7.1} | {:>7.1}\n",
            kind, s.count, s.mean_mttr_s, s.min_mttr_s, s.max_mttr_s
        ));
    }
    out.push_str(&format!(
        "\nautomated steps in {:.0}-{:.0}s band: {}/{} (exempt: {})\n",
        summary.band_s.0,
        summary.band_s.1,
        summary.banded_in_band,
        summary.banded_steps,
        summary.exempt_steps
    ));
    if !reductions.is_empty() {
        out.push('\n');
        for r in reductions {
            out.push_str(&r.render());
            out.push('\n');
        }
    }
    out
}
