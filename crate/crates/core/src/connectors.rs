//! Concrete connector implementations: the SDN switch, case management,
//! notification, reporting, and AMI management (firmware, standby Headend)
//! endpoints the shipped playbooks call. Everything third-party is mocked
//! behind these interfaces; the playbook JSON stays identical whether a
//! connector is a mock or a real service.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use crate::engine::{
    Connector, ConnectorRegistry, ConnectorRequest, ConnectorResponse, ManualTaskSink,
};
use crate::ndr::Alert;
use crate::response::{
    activate_standby_headend, generate_report, reinstall_firmware, render_text, CaseStore,
    FirmwareDurations, NotificationKind, Notifier, ReportPhase,
};
use crate::scenario::ConnectorEndpoints;
use crate::sdn::{CleanProbe, HostInspection, SdnService};
use crate::sim::meter::MeterState;
use crate::sim::world::AmiWorld;
use crate::time::{Calendar, SimTime};

pub type SharedWorld = Arc<Mutex<AmiWorld>>;
pub type SharedCases = Arc<Mutex<CaseStore>>;
pub type SharedNotifier = Arc<Mutex<Notifier>>;
pub type SharedAlerts = Arc<Mutex<BTreeMap<String, Alert>>>;

/// Everything the connectors need a handle on.
#[derive(Clone)]
pub struct ConnectorStores {
    pub world: SharedWorld,
    pub sdn: Arc<SdnService>,
    pub cases: SharedCases,
    pub notifier: SharedNotifier,
    pub alerts: SharedAlerts,
    pub calendar: Calendar,
    pub firmware: FirmwareDurations,
    /// Run directory for report artifacts; None skips writing files.
    pub out_dir: Option<PathBuf>,
}

/// Builds the registry the playbook engine dispatches through, one connector
/// per configured endpoint prefix.
pub fn build_registry(stores: &ConnectorStores, endpoints: &ConnectorEndpoints) -> ConnectorRegistry {
    let mut registry = ConnectorRegistry::new();
    registry.register(
        &endpoints.sdn,
        Box::new(SdnConnector {
            prefix: endpoints.sdn.clone(),
            sdn: Arc::clone(&stores.sdn),
            world: Arc::clone(&stores.world),
        }),
    );
    registry.register(
        &endpoints.cases,
        Box::new(CaseConnector {
            prefix: endpoints.cases.clone(),
            cases: Arc::clone(&stores.cases),
        }),
    );
    registry.register(
        &endpoints.notify,
        Box::new(NotifyConnector {
            notifier: Arc::clone(&stores.notifier),
        }),
    );
    registry.register(
        &endpoints.reports,
        Box::new(ReportConnector {
            cases: Arc::clone(&stores.cases),
            alerts: Arc::clone(&stores.alerts),
            calendar: stores.calendar,
            out_dir: stores.out_dir.clone(),
        }),
    );
    registry.register(
        &endpoints.ami,
        Box::new(AmiConnector {
            prefix: endpoints.ami.clone(),
            world: Arc::clone(&stores.world),
            firmware: stores.firmware,
        }),
    );
    registry.set_manual_sink(Box::new(CaseTaskSink {
        cases: Arc::clone(&stores.cases),
    }));
    registry
}

fn path_of<'r>(url: &'r str, prefix: &str) -> &'r str {
    url.strip_prefix(prefix).unwrap_or(url)
}

fn body_json(req: &ConnectorRequest) -> Result<Value, ConnectorResponse> {
    if req.body.trim().is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_str(&req.body)
        .map_err(|e| ConnectorResponse::error(400, format!("body is not valid JSON: {e}")))
}

fn parse_ip(v: &Value, field: &str) -> Result<Ipv4Addr, ConnectorResponse> {
    v[field]
        .as_str()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ConnectorResponse::error(400, format!("`{field}` must be an ipv4 address")))
}

/// Routes playbook commands to the mock SDN switch. Shares the exact route
/// table with the HTTP endpoint, auth included, and keeps the emulated meter
/// lifecycle in step with segment moves.
struct SdnConnector {
    prefix: String,
    sdn: Arc<SdnService>,
    world: SharedWorld,
}

impl Connector for SdnConnector {
    fn handle(&mut self, req: &ConnectorRequest) -> ConnectorResponse {
        let path = path_of(&req.url, &self.prefix);
        let auth = req.headers.get("Authorization").map(String::as_str);
        let answer = self
            .sdn
            .route(&req.method, path, auth, &req.body, req.dispatched_at);

        let mut response = ConnectorResponse {
            status: answer.status,
            body: answer.body.clone(),
            exports: BTreeMap::new(),
            latency_override: None,
        };
        if !response.is_success() {
            return response;
        }

        match path {
            "/vlan/create" => {
                if let Some(vlan_id) = answer.body["vlan_id"].as_u64() {
                    response = response.with_export("__sandbox_vlan_id__", vlan_id.to_string());
                }
            }
            "/host/isolate" => {
                // Containment of a compromised meter sandboxes it.
                if let Some(host) = answer.body["host"].as_str().and_then(|s| s.parse().ok()) {
                    let mut world = self.world.lock().expect("world lock");
                    if let Some(meter) = world.meter_by_ip_mut(host) {
                        if meter.state == MeterState::Compromised {
                            let _ = meter.transition(MeterState::Sandboxed);
                        }
                    }
                }
            }
            _ => {}
        }
        response
    }
}

/// Case management endpoint: open and update incident cases.
struct CaseConnector {
    prefix: String,
    cases: SharedCases,
}

impl Connector for CaseConnector {
    fn handle(&mut self, req: &ConnectorRequest) -> ConnectorResponse {
        let body = match body_json(req) {
            Ok(b) => b,
            Err(e) => return e,
        };
        match path_of(&req.url, &self.prefix) {
            "/cases/open" => self.open(&body, req.dispatched_at),
            "/cases/update" => self.update(&body, req.dispatched_at),
            other => ConnectorResponse::error(404, format!("no case route `{other}`")),
        }
    }
}

impl CaseConnector {
    fn open(&self, body: &Value, at: SimTime) -> ConnectorResponse {
        let Some(alert_id) = body["alert_id"].as_str() else {
            return ConnectorResponse::error(400, "alert_id is required");
        };
        let title = body["title"].as_str().unwrap_or("AMI incident");
        let victim_ip = match parse_ip(body, "victim_ip") {
            Ok(ip) => ip,
            Err(e) => return e,
        };
        let offender_ips: Vec<Ipv4Addr> = body["offender_ips"]
            .as_str()
            .map(|s| {
                s.split(',')
                    .filter_map(|p| p.trim().parse().ok())
                    .collect()
            })
            .unwrap_or_default();
        let trace_ref = body["trace_ref"].as_str().map(String::from);

        let mut cases = self.cases.lock().expect("case lock");
        match cases.open_case(alert_id, title, victim_ip, offender_ips, trace_ref, at) {
            Ok(case) => {
                let case_id = case.case_id.clone();
                ConnectorResponse::ok(json!({ "case": case }))
                    .with_export(crate::engine::BINDING_CASE_ID, case_id)
            }
            Err(e) => ConnectorResponse::error(422, e.to_string()),
        }
    }

    fn update(&self, body: &Value, at: SimTime) -> ConnectorResponse {
        let Some(case_id) = body["case_id"].as_str() else {
            return ConnectorResponse::error(400, "case_id is required");
        };
        let complete: Vec<String> = body["complete_tasks"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|v| v.as_str())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        let resolve = body["resolve"].as_bool().unwrap_or(false);

        let mut cases = self.cases.lock().expect("case lock");
        match cases.update_case(case_id, &complete, resolve, at) {
            Ok(case) => ConnectorResponse::ok(json!({ "case": case })),
            Err(e) => ConnectorResponse::error(422, e.to_string()),
        }
    }
}

/// Manual playbook commands become human tasks on the open case.
struct CaseTaskSink {
    cases: SharedCases,
}

impl ManualTaskSink for CaseTaskSink {
    fn append_task(
        &mut self,
        case_id: Option<&str>,
        instruction: &str,
        at: SimTime,
    ) -> ConnectorResponse {
        let mut cases = self.cases.lock().expect("case lock");
        match case_id {
            Some(id) => match cases.add_task(id, instruction, at) {
                Ok(()) => ConnectorResponse::ok(json!({ "task": instruction, "case_id": id })),
                Err(e) => ConnectorResponse::error(422, e.to_string()),
            },
            None => ConnectorResponse::ok(json!({
                "task": instruction,
                "note": "no case bound; task acknowledged without assignment",
            })),
        }
    }
}

/// Notification endpoint: posts to the configured messaging channel sink.
struct NotifyConnector {
    notifier: SharedNotifier,
}

impl Connector for NotifyConnector {
    fn handle(&mut self, req: &ConnectorRequest) -> ConnectorResponse {
        let body = match body_json(req) {
            Ok(b) => b,
            Err(e) => return e,
        };
        let kind = match body["kind"].as_str() {
            Some("triggered") => NotificationKind::Triggered,
            Some("resolved") => NotificationKind::Resolved,
            other => {
                return ConnectorResponse::error(
                    400,
                    format!("kind must be triggered|resolved, got {other:?}"),
                )
            }
        };
        let Some(channel) = body["channel"].as_str() else {
            return ConnectorResponse::error(400, "channel is required");
        };
        let pivots: Vec<String> = body["pivots"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|v| v.as_str())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();

        let mut notifier = self.notifier.lock().expect("notifier lock");
        match notifier.notify(
            kind,
            channel,
            body["case_id"].as_str().unwrap_or(""),
            body["playbook_id"].as_str().unwrap_or(""),
            body["body"].as_str().unwrap_or(""),
            pivots,
            req.dispatched_at,
        ) {
            Ok(n) => ConnectorResponse::ok(json!({ "notification": n })),
            Err(e) => ConnectorResponse::error(422, e.to_string()),
        }
    }
}

/// Report generation endpoint used by the playbook's export step for the
/// early-warning and notification phases (the final and consolidated
/// reports need the completed trace and are produced after execution).
struct ReportConnector {
    cases: SharedCases,
    alerts: SharedAlerts,
    calendar: Calendar,
    out_dir: Option<PathBuf>,
}

impl Connector for ReportConnector {
    fn handle(&mut self, req: &ConnectorRequest) -> ConnectorResponse {
        let body = match body_json(req) {
            Ok(b) => b,
            Err(e) => return e,
        };
        let Some(case_id) = body["case_id"].as_str() else {
            return ConnectorResponse::error(400, "case_id is required");
        };
        let Some(alert_id) = body["alert_id"].as_str() else {
            return ConnectorResponse::error(400, "alert_id is required");
        };
        let phases: Vec<ReportPhase> = body["phases"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|v| match v.as_str() {
                        Some("early_warning") => Some(ReportPhase::EarlyWarning),
                        Some("notification") => Some(ReportPhase::Notification),
                        Some("final") => Some(ReportPhase::Final),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_else(|| vec![ReportPhase::EarlyWarning, ReportPhase::Notification]);

        let cases = self.cases.lock().expect("case lock");
        let Some(case) = cases.get(case_id) else {
            return ConnectorResponse::error(404, format!("unknown case `{case_id}`"));
        };
        let alerts = self.alerts.lock().expect("alert lock");
        let Some(alert) = alerts.get(alert_id) else {
            return ConnectorResponse::error(404, format!("unknown alert `{alert_id}`"));
        };

        let mut written = Vec::new();
        for phase in phases {
            let report = match generate_report(
                phase,
                case,
                alert,
                None,
                &self.calendar,
                req.dispatched_at,
            ) {
                Ok(r) => r,
                Err(e) => return ConnectorResponse::error(422, e.to_string()),
            };
            if let Some(dir) = &self.out_dir {
                match write_report_files(dir, case_id, phase.file_stem(), &report) {
                    Ok(paths) => written.extend(paths),
                    Err(e) => return ConnectorResponse::error(500, e.to_string()),
                }
                match write_phase_report_text(dir, case_id, &report) {
                    Ok(path) => written.push(path),
                    Err(e) => return ConnectorResponse::error(500, e.to_string()),
                }
            }
        }
        ConnectorResponse::ok(json!({ "written": written }))
    }
}

pub fn write_report_files(
    out_dir: &std::path::Path,
    case_id: &str,
    stem: &str,
    report: &impl serde::Serialize,
) -> std::io::Result<Vec<String>> {
    let dir = out_dir.join("reports").join(case_id);
    std::fs::create_dir_all(&dir)?;
    let json_path = dir.join(format!("{stem}.json"));
    let mut doc = serde_json::to_string_pretty(report).expect("report serializes");
    doc.push('\n');
    std::fs::write(&json_path, doc)?;
    Ok(vec![json_path.display().to_string()])
}

pub fn write_report_text(
    out_dir: &std::path::Path,
    case_id: &str,
    stem: &str,
    text: &str,
) -> std::io::Result<String> {
    let dir = out_dir.join("reports").join(case_id);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{stem}.txt"));
    std::fs::write(&path, text)?;
    Ok(path.display().to_string())
}

/// AMI management endpoint: firmware reinstallation and standby Headend
/// activation against the emulated inventory.
struct AmiConnector {
    prefix: String,
    world: SharedWorld,
    firmware: FirmwareDurations,
}

impl Connector for AmiConnector {
    fn handle(&mut self, req: &ConnectorRequest) -> ConnectorResponse {
        let body = match body_json(req) {
            Ok(b) => b,
            Err(e) => return e,
        };
        match path_of(&req.url, &self.prefix) {
            "/firmware/reinstall" => {
                let host = match parse_ip(&body, "host") {
                    Ok(ip) => ip,
                    Err(e) => return e,
                };
                let Some(target_version) = body["target_version"].as_str() else {
                    return ConnectorResponse::error(400, "target_version is required");
                };
                let mut world = self.world.lock().expect("world lock");
                let Some(meter_id) = world.meter_by_ip(host).map(|m| m.meter_id.clone()) else {
                    return ConnectorResponse::error(404, format!("no meter at {host}"));
                };
                match reinstall_firmware(
                    &mut world,
                    &meter_id,
                    target_version,
                    self.firmware,
                    req.dispatched_at,
                ) {
                    Ok(job) => {
                        let total = self.firmware.total();
                        ConnectorResponse::ok(json!({ "firmware_job": job }))
                            .with_latency(total)
                    }
                    Err(e) => ConnectorResponse::error(422, e.to_string()),
                }
            }
            "/headend/standby/activate" => {
                let mut world = self.world.lock().expect("world lock");
                match activate_standby_headend(&mut world) {
                    Ok(ip) => ConnectorResponse::ok(json!({ "active_headend": ip.to_string() })),
                    Err(e) => ConnectorResponse::error(422, e.to_string()),
                }
            }
            other => ConnectorResponse::error(404, format!("no ami route `{other}`")),
        }
    }
}

/// Sandbox cleanliness probe over the emulated inventory: the firmware
/// version must match the clean target, and the sandbox poll must observe
/// untampered output, which holds exactly when the implant is gone (the
/// meter is back to the operational state).
pub struct WorldProbe {
    pub world: SharedWorld,
    pub clean_version: String,
}

impl CleanProbe for WorldProbe {
    fn inspect(&self, host: Ipv4Addr) -> Option<HostInspection> {
        let world = self.world.lock().expect("world lock");
        let meter = world.meter_by_ip(host)?;
        Some(HostInspection {
            firmware_matches_target: meter.firmware_version == self.clean_version,
            reading_nominal: meter.state == MeterState::Operational,
        })
    }
}

/// Text rendering written for phase reports alongside the JSON documents.
pub fn write_phase_report_text(
    out_dir: &std::path::Path,
    case_id: &str,
    report: &crate::response::IncidentReport,
) -> std::io::Result<String> {
    write_report_text(out_dir, case_id, report.phase.file_stem(), &render_text(report))
}
