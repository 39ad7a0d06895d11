//! Network detection and response: dissects the message stream into
//! protocol logs, runs the FDI and DDoS detectors over it, and emits CEF
//! alerts to the configured sinks.

mod alert;
mod detect;
mod dissect;
mod profile;

pub use alert::{
    emit_cef, parse_cef, Alert, CefAlert, CefParseError, DeviceClass, CEF_PRODUCT, CEF_VENDOR,
    CEF_VERSION, SIG_DDOS, SIG_FDI,
};
pub use detect::{DdosDetector, FdiDetector, RateBaselines};
pub use dissect::{dissect, ProtocolLogRecord};
pub use profile::{
    build_profiles, CatalogEntry, ClusterKey, ClusterProfile, DetectorConfig, MeterCatalog,
    ProfileError, ProfileSet,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::sim::message::DlmsMessage;
use crate::time::Calendar;

/// Everything the detectors learned during training, persisted alongside the
/// capture so a replay reproduces the live run's alerts exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub calendar: Calendar,
    pub config: DetectorConfig,
    pub catalog: MeterCatalog,
    pub headend_ip: Ipv4Addr,
    pub profiles: Vec<(ClusterKey, ClusterProfile)>,
    pub rate_baselines: RateBaselines,
    /// Clusters omitted during training for insufficient samples.
    pub omitted_clusters: Vec<(ClusterKey, u64)>,
}

impl DetectorState {
    pub fn profile_map(&self) -> BTreeMap<ClusterKey, ClusterProfile> {
        self.profiles.iter().cloned().collect()
    }
}

/// The NDR pipeline stage: protocol dissection, detection, alert emission.
pub struct Ndr {
    fdi: FdiDetector,
    ddos: DdosDetector,
    calendar: Calendar,
    /// Sink for line-delimited protocol log records.
    log_sink: Option<Box<dyn Write + Send>>,
    /// Sink for CEF alert lines.
    cef_sink: Option<Box<dyn Write + Send>>,
    alert_seq: u32,
    pending_alerts: Vec<Alert>,
    pub malformed_lines: u64,
    pub records_processed: u64,
}

impl Ndr {
    pub fn new(state: &DetectorState) -> Self {
        Ndr {
            fdi: FdiDetector::new(
                state.profile_map(),
                state.catalog.clone(),
                state.calendar,
                state.config.clone(),
                state.headend_ip,
            ),
            ddos: DdosDetector::new(
                state.rate_baselines.clone(),
                state.config.clone(),
                state.headend_ip,
            ),
            calendar: state.calendar,
            log_sink: None,
            cef_sink: None,
            alert_seq: 0,
            pending_alerts: Vec::new(),
            malformed_lines: 0,
            records_processed: 0,
        }
    }

    pub fn with_log_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.log_sink = Some(sink);
        self
    }

    pub fn with_cef_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.cef_sink = Some(sink);
        self
    }

    /// Dissects and processes one delivered message.
    pub fn on_message(&mut self, msg: &DlmsMessage) {
        let rec = dissect(msg);
        self.on_record(rec);
    }

    /// Replay entry point: one JSON line from a capture file. Malformed
    /// lines are counted and skipped.
    pub fn on_capture_line(&mut self, line: &str) {
        match DlmsMessage::from_json_line(line) {
            Ok(msg) => self.on_message(&msg),
            Err(_) => self.malformed_lines += 1,
        }
    }

    fn on_record(&mut self, rec: ProtocolLogRecord) {
        self.records_processed += 1;
        if let Some(sink) = &mut self.log_sink {
            let line = serde_json::to_string(&rec).expect("record serializes");
            let _ = writeln!(sink, "{line}");
        }
        let fdi_alert = self.fdi.on_record(&rec);
        let ddos_alert = self.ddos.on_record(&rec);
        for alert in fdi_alert.into_iter().chain(ddos_alert) {
            self.finalize_alert(alert);
        }
    }

    /// Flushes pending detector state at end of stream.
    pub fn finish(&mut self) {
        let fdi_alert = self.fdi.finish();
        let ddos_alert = self.ddos.finish();
        for alert in fdi_alert.into_iter().chain(ddos_alert) {
            self.finalize_alert(alert);
        }
        if let Some(sink) = &mut self.log_sink {
            let _ = sink.flush();
        }
        if let Some(sink) = &mut self.cef_sink {
            let _ = sink.flush();
        }
    }

    fn finalize_alert(&mut self, mut alert: Alert) {
        self.alert_seq += 1;
        alert.alert_id = format!("ALERT-{:04}", self.alert_seq);
        if let Some(sink) = &mut self.cef_sink {
            let line = emit_cef(&alert, &self.calendar);
            let _ = writeln!(sink, "{line}");
            let _ = sink.flush();
        }
        self.pending_alerts.push(alert);
    }

    /// Drains alerts raised since the last call.
    pub fn take_alerts(&mut self) -> Vec<Alert> {
        std::mem::take(&mut self.pending_alerts)
    }

    pub fn coverage_gaps(&self) -> &std::collections::BTreeSet<ClusterKey> {
        &self.fdi.coverage_gaps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::message::{MsgType, Payload};
    use crate::sim::meter::{LocationClass, Measurement, Quantity};
    use crate::time::SimTime;

    fn state() -> DetectorState {
        let catalog = MeterCatalog {
            meters: [(
                "meter-07".to_string(),
                CatalogEntry {
                    ip: Ipv4Addr::new(10, 0, 0, 7),
                    location_class: LocationClass::Household,
                    area_m2: 120.0,
                },
            )]
            .into_iter()
            .collect(),
        };
        let config = DetectorConfig::default();
        let calendar = Calendar::default();
        let key = config.cluster_key(catalog.get("meter-07").unwrap(), SimTime::ZERO, &calendar);
        DetectorState {
            calendar,
            config,
            catalog,
            headend_ip: Ipv4Addr::new(10, 0, 0, 2),
            profiles: vec![(
                key,
                ClusterProfile {
                    mean: 2000.0,
                    std: 100.0,
                    sample_count: 100,
                },
            )],
            rate_baselines: RateBaselines {
                per_source: [(Ipv4Addr::new(10, 0, 0, 7), 12.0)].into_iter().collect(),
            },
            omitted_clusters: Vec::new(),
        }
    }

    fn read_resp(value: f64, t: u64) -> DlmsMessage {
        DlmsMessage {
            msg_type: MsgType::ReadResp,
            session_id: format!("sess-{t}"),
            src_ip: Ipv4Addr::new(10, 0, 0, 7),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            timestamp: SimTime::from_secs(t),
            meter_id: "meter-07".to_string(),
            payload: Some(Payload::Measurement(Measurement {
                meter_id: "meter-07".to_string(),
                quantity: Quantity::ApparentPower,
                value,
                unit: "VA".to_string(),
                timestamp: SimTime::from_secs(t),
            })),
        }
    }

    #[test]
    fn sustained_deviation_produces_numbered_alert_and_cef_line() {
        let mut ndr = Ndr::new(&state());
        for i in 0..4u64 {
            ndr.on_message(&read_resp(-5000.0, 300 * (i + 1)));
        }
        ndr.finish();
        let alerts = ndr.take_alerts();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].alert_id, "ALERT-0001");
        assert_eq!(alerts[0].signature_id, SIG_FDI);
    }

    #[test]
    fn malformed_capture_lines_are_counted_and_skipped() {
        let mut ndr = Ndr::new(&state());
        ndr.on_capture_line("{truncated");
        ndr.on_capture_line(&read_resp(2000.0, 300).to_json_line());
        assert_eq!(ndr.malformed_lines, 1);
        assert_eq!(ndr.records_processed, 1);
    }

    #[test]
    fn detector_state_round_trips_through_json() {
        let s = state();
        let text = serde_json::to_string_pretty(&s).unwrap();
        let back: DetectorState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
