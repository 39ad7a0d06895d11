//! NIS2-phased incident reports: the 24-hour early warning, the 72-hour
//! notification with indicators of compromise, the one-month final report
//! with the complete mitigation timeline, plus one consolidated artifact
//! that bundles all three for timely dissemination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::case::IncidentCase;
use crate::engine::ExecutionTrace;
use crate::ndr::Alert;
use crate::time::{Calendar, SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportPhase {
    EarlyWarning,
    Notification,
    Final,
}

impl ReportPhase {
    /// Submission deadline relative to detection. One month is rendered as
    /// 30 days on the virtual clock.
    pub fn deadline_offset(&self) -> SimDuration {
        match self {
            ReportPhase::EarlyWarning => SimDuration::from_secs(24 * 3600),
            ReportPhase::Notification => SimDuration::from_secs(72 * 3600),
            ReportPhase::Final => SimDuration::from_secs(30 * 24 * 3600),
        }
    }

    pub fn file_stem(&self) -> &'static str {
        match self {
            ReportPhase::EarlyWarning => "early_warning",
            ReportPhase::Notification => "notification",
            ReportPhase::Final => "final",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            ReportPhase::EarlyWarning => "Early warning (24h)",
            ReportPhase::Notification => "Incident notification (72h)",
            ReportPhase::Final => "Final report (1 month)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationEntry {
    pub step_id: String,
    pub kind: String,
    pub status: String,
    pub started: String,
    pub ended: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    pub phase: ReportPhase,
    pub case_id: String,
    pub alert_id: String,
    pub signature_id: String,
    pub incident_summary: String,
    pub severity: u8,
    pub impact_assessment: String,
    pub indicators_of_compromise: Vec<String>,
    pub mitigation_actions: Vec<MitigationEntry>,
    pub detection_time: String,
    pub generated_at: String,
    pub deadline: String,
    /// Seconds of headroom before the deadline; negative means late.
    pub deadline_margin_s: i64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("final report requires the completed execution trace")]
    MissingTrace,
}

fn impact_for(alert: &Alert) -> String {
    match alert.signature_id.as_str() {
        crate::ndr::SIG_DDOS => {
            "Metering message floods overload smart meter processing; sustained loss degrades \
             the measurement exchange service and downstream demand forecasting."
                .to_string()
        }
        _ => {
            "Falsified consumption measurements corrupt billing and historical data used for \
             day-ahead demand forecasting."
                .to_string()
        }
    }
}

fn iocs_for(alert: &Alert) -> Vec<String> {
    let mut iocs: Vec<String> = alert
        .offender_ips
        .iter()
        .map(|ip| format!("offending-source:{ip}"))
        .collect();
    iocs.push(format!("signature:{}", alert.signature_id));
    iocs
}

fn timeline_of(trace: &ExecutionTrace, calendar: &Calendar) -> Vec<MitigationEntry> {
    trace
        .records
        .iter()
        .map(|r| MitigationEntry {
            step_id: r.step_id.clone(),
            kind: r.kind.clone(),
            status: format!("{:?}", r.status).to_lowercase(),
            started: calendar.rfc3339(r.start_time),
            ended: calendar.rfc3339(r.end_time),
            duration_s: r.end_time.since(r.start_time).as_secs_f64(),
        })
        .collect()
}

/// Builds one phase report. The final phase requires the completed trace;
/// the notification phase always carries indicators of compromise.
pub fn generate_report(
    phase: ReportPhase,
    case: &IncidentCase,
    alert: &Alert,
    trace: Option<&ExecutionTrace>,
    calendar: &Calendar,
    now: SimTime,
) -> Result<IncidentReport, ReportError> {
    if phase == ReportPhase::Final && trace.is_none() {
        return Err(ReportError::MissingTrace);
    }

    let detection = alert.detection_time;
    let deadline = detection + phase.deadline_offset();
    let margin_s = (deadline.as_millis() as i64 - now.as_millis() as i64) / 1000;

    let indicators_of_compromise = match phase {
        ReportPhase::EarlyWarning => Vec::new(),
        _ => iocs_for(alert),
    };
    let mitigation_actions = match (phase, trace) {
        (ReportPhase::Final, Some(t)) => timeline_of(t, calendar),
        _ => Vec::new(),
    };

    Ok(IncidentReport {
        phase,
        case_id: case.case_id.clone(),
        alert_id: alert.alert_id.clone(),
        signature_id: alert.signature_id.clone(),
        incident_summary: alert.summary.clone(),
        severity: alert.severity,
        impact_assessment: impact_for(alert),
        indicators_of_compromise,
        mitigation_actions,
        detection_time: calendar.rfc3339(detection),
        generated_at: calendar.rfc3339(now),
        deadline: calendar.rfc3339(deadline),
        deadline_margin_s: margin_s,
    })
}

pub fn render_text(report: &IncidentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\n", report.phase.title()));
    out.push_str(&format!("case: {}\n", report.case_id));
    out.push_str(&format!(
        "alert: {} ({})\n",
        report.alert_id, report.signature_id
    ));
    out.push_str(&format!("detected: {}\n", report.detection_time));
    out.push_str(&format!(
        "generated: {} (deadline {}, margin {}s)\n",
        report.generated_at, report.deadline, report.deadline_margin_s
    ));
    out.push_str(&format!("severity: {}/10\n", report.severity));
    out.push_str(&format!("summary: {}\n", report.incident_summary));
    out.push_str(&format!("impact: {}\n", report.impact_assessment));
    if !report.indicators_of_compromise.is_empty() {
        out.push_str("indicators of compromise:\n");
        for ioc in &report.indicators_of_compromise {
            out.push_str(&format!("  - {ioc}\n"));
        }
    }
    if !report.mitigation_actions.is_empty() {
        out.push_str("mitigation timeline:\n");
        for entry in &report.mitigation_actions {
            out.push_str(&format!(
                "  {} [{}] {} .. {} ({}s) {}\n",
                entry.step_id,
                entry.kind,
                entry.started,
                entry.ended,
                entry.duration_s,
                entry.status
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedReport {
    pub case_id: String,
    pub alert_id: String,
    pub signature_id: String,
    pub detection_time: String,
    pub generated_at: String,
    pub phases: Vec<IncidentReport>,
}

/// Bundles all three phase reports into one comprehensive artifact.
pub fn generate_consolidated(
    case: &IncidentCase,
    alert: &Alert,
    trace: &ExecutionTrace,
    calendar: &Calendar,
    now: SimTime,
) -> Result<ConsolidatedReport, ReportError> {
    let phases = vec![
        generate_report(ReportPhase::EarlyWarning, case, alert, Some(trace), calendar, now)?,
        generate_report(ReportPhase::Notification, case, alert, Some(trace), calendar, now)?,
        generate_report(ReportPhase::Final, case, alert, Some(trace), calendar, now)?,
    ];
    Ok(ConsolidatedReport {
        case_id: case.case_id.clone(),
        alert_id: alert.alert_id.clone(),
        signature_id: alert.signature_id.clone(),
        detection_time: calendar.rfc3339(alert.detection_time),
        generated_at: calendar.rfc3339(now),
        phases,
    })
}

pub fn render_consolidated_text(report: &ConsolidatedReport) -> String {
    let mut out = format!(
        "Consolidated incident report\ncase: {}\nalert: {} ({})\ndetected: {}\ngenerated: {}\n\n",
        report.case_id,
        report.alert_id,
        report.signature_id,
        report.detection_time,
        report.generated_at
    );
    for phase in &report.phases {
        out.push_str(&render_text(phase));
        out.push('\n');
    }
    out
}
