//! Mock SDN switch: the flow-entry REST API plus VLAN segment state that
//! the emulated network consults for reachability.
//!
//! One `route` implementation backs both the in-process connector used by
//! playbook execution and the HTTP endpoint used in serve mode, so both
//! surfaces behave identically, auth included.

mod http;
mod state;

pub use http::SdnHttpServer;
pub use state::{
    Admission, FlowAction, FlowEntry, FlowMatch, IsolationEvent, SegmentKind, TopologyError,
    TopologySnapshot, TopologyState, VlanSegment, ACTION_OUTPUT, ACTION_RATE_LIMIT, ETH_TYPE_IPV4,
    FIRST_DYNAMIC_VLAN_ID, MAX_VLAN_ID, OPERATIONAL_VLAN_ID,
};

use std::net::Ipv4Addr;
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::time::SimTime;

/// Default switch datapath id used when requests do not carry one.
pub const DEFAULT_DPID: u64 = 2876467493016320;

/// Outcome of the sandbox cleanliness check for one host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostInspection {
    pub firmware_matches_target: bool,
    pub reading_nominal: bool,
}

impl HostInspection {
    pub fn clean(&self) -> bool {
        self.firmware_matches_target && self.reading_nominal
    }
}

/// Inspects an isolated host inside the sandbox segment. The testbed wires
/// this to the emulated inventory; tests use stubs.
pub trait CleanProbe: Send + Sync {
    /// Returns None when the probe knows nothing about the host.
    fn inspect(&self, host: Ipv4Addr) -> Option<HostInspection>;
}

/// Probe that knows no hosts; verify requests all fail with 404.
pub struct NullProbe;

impl CleanProbe for NullProbe {
    fn inspect(&self, _host: Ipv4Addr) -> Option<HostInspection> {
        None
    }
}

/// Response of one routed request.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpAnswer {
    pub status: u16,
    pub body: Value,
}

impl HttpAnswer {
    fn ok(body: Value) -> Self {
        HttpAnswer { status: 200, body }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        HttpAnswer {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub struct SdnService {
    state: Mutex<TopologyState>,
    auth_token: String,
    dpid: u64,
    probe: Box<dyn CleanProbe>,
}

impl SdnService {
    pub fn new(
        hosts: impl IntoIterator<Item = Ipv4Addr>,
        auth_token: &str,
        probe: Box<dyn CleanProbe>,
    ) -> Self {
        SdnService {
            state: Mutex::new(TopologyState::new(hosts)),
            auth_token: auth_token.to_string(),
            dpid: DEFAULT_DPID,
            probe,
        }
    }

    /// Network-policy hook for the simulator.
    pub fn admit(&self, src: Ipv4Addr, dst: Ipv4Addr, now: SimTime) -> Admission {
        self.state.lock().expect("sdn state lock").admit(src, dst, now)
    }

    pub fn reachable(&self, a: Ipv4Addr, b: Ipv4Addr) -> bool {
        self.state.lock().expect("sdn state lock").reachable(a, b)
    }

    pub fn segment_of(&self, host: Ipv4Addr) -> Option<u16> {
        self.state.lock().expect("sdn state lock").segment_of(host)
    }

    pub fn is_verified(&self, host: Ipv4Addr) -> bool {
        self.state.lock().expect("sdn state lock").is_verified(host)
    }

    pub fn snapshot(&self) -> TopologySnapshot {
        self.state.lock().expect("sdn state lock").snapshot()
    }

    fn authorized(&self, auth_header: Option<&str>) -> bool {
        auth_header == Some(format!("Basic {}", self.auth_token).as_str())
    }

    /// Routes one request. Mutating endpoints require the Basic credential;
    /// `GET /topology` is open.
    pub fn route(
        &self,
        method: &str,
        path: &str,
        auth_header: Option<&str>,
        body: &str,
        now: SimTime,
    ) -> HttpAnswer {
        match (method, path) {
            ("GET", "/topology") => {
                HttpAnswer::ok(serde_json::to_value(self.snapshot()).expect("snapshot serializes"))
            }
            ("POST", _) if !self.authorized(auth_header) => {
                HttpAnswer::error(401, "missing or invalid credential")
            }
            ("POST", "/stats/flowentry/add") => self.handle_flow_add(body),
            ("POST", "/flows/rate_limit") => self.handle_rate_limit(body),
            ("POST", "/vlan/create") => self.handle_vlan_create(body),
            ("POST", "/host/isolate") => self.handle_isolate(body, now),
            ("POST", "/host/restore") => self.handle_restore(body, now),
            ("POST", "/host/verify") => self.handle_verify(body),
            _ => HttpAnswer::error(404, format!("no route for {method} {path}")),
        }
    }

    fn handle_flow_add(&self, body: &str) -> HttpAnswer {
        let Ok(v) = serde_json::from_str::<Value>(body) else {
            return HttpAnswer::error(400, "body is not valid JSON");
        };
        // All five top-level fields of the flow-update call are required.
        for field in ["dpid", "priority", "actions", "match", "table_id"] {
            if v.get(field).is_none() {
                return HttpAnswer::error(400, format!("missing field `{field}`"));
            }
        }
        let Some(dpid) = v["dpid"].as_u64() else {
            return HttpAnswer::error(400, "dpid must be an unsigned integer");
        };
        let Some(priority) = v["priority"].as_i64() else {
            return HttpAnswer::error(400, "priority must be an integer");
        };
        let Some(table_id) = v["table_id"].as_u64() else {
            return HttpAnswer::error(400, "table_id must be an unsigned integer");
        };
        let Some(ipv4_src) = v["match"]["ipv4_src"].as_str() else {
            return HttpAnswer::error(400, "match.ipv4_src is required");
        };
        let Ok(ipv4_src) = ipv4_src.parse::<Ipv4Addr>() else {
            return HttpAnswer::error(400, format!("malformed ip `{ipv4_src}`"));
        };
        let Some(eth_type) = v["match"]["eth_type"].as_u64() else {
            return HttpAnswer::error(400, "match.eth_type is required");
        };
        if eth_type != u64::from(ETH_TYPE_IPV4) {
            return HttpAnswer::error(400, "eth_type must be 2048 for ipv4 matches");
        }
        let actions: Vec<FlowAction> = match serde_json::from_value(v["actions"].clone()) {
            Ok(a) => a,
            Err(e) => return HttpAnswer::error(400, format!("bad actions: {e}")),
        };

        let entry_number = self.state.lock().expect("sdn state lock").add_flow_entry(
            dpid,
            priority,
            actions,
            FlowMatch {
                ipv4_src,
                eth_type: ETH_TYPE_IPV4,
            },
            table_id as u32,
        );
        HttpAnswer::ok(json!({ "entry_number": entry_number }))
    }

    /// Installs one rate-limit flow per source. Exists because the playbook
    /// subset has no loops: a single command must be able to cover every
    /// offending source of a flood.
    fn handle_rate_limit(&self, body: &str) -> HttpAnswer {
        let Ok(v) = serde_json::from_str::<Value>(body) else {
            return HttpAnswer::error(400, "body is not valid JSON");
        };
        let sources: Vec<String> = match &v["sources"] {
            Value::String(s) => s
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            Value::Array(a) => a
                .iter()
                .filter_map(|x| x.as_str())
                .map(String::from)
                .collect(),
            _ => return HttpAnswer::error(400, "sources must be a string or array"),
        };
        if sources.is_empty() {
            return HttpAnswer::error(400, "sources must be non-empty");
        }
        let Some(limit) = v["limit_per_min"].as_u64() else {
            return HttpAnswer::error(400, "limit_per_min is required");
        };
        let priority = v["priority"].as_i64().unwrap_or(20);

        let mut parsed = Vec::with_capacity(sources.len());
        for s in &sources {
            match s.parse::<Ipv4Addr>() {
                Ok(ip) => parsed.push(ip),
                Err(_) => return HttpAnswer::error(400, format!("malformed ip `{s}`")),
            }
        }

        let mut state = self.state.lock().expect("sdn state lock");
        let entry_numbers: Vec<u64> = parsed
            .into_iter()
            .map(|src| {
                state.add_flow_entry(
                    self.dpid,
                    priority,
                    vec![FlowAction {
                        action_type: ACTION_RATE_LIMIT.to_string(),
                        port: None,
                        limit_per_min: Some(limit as u32),
                    }],
                    FlowMatch {
                        ipv4_src: src,
                        eth_type: ETH_TYPE_IPV4,
                    },
                    100,
                )
            })
            .collect();
        HttpAnswer::ok(json!({ "entry_numbers": entry_numbers }))
    }

    fn handle_vlan_create(&self, body: &str) -> HttpAnswer {
        let Ok(v) = serde_json::from_str::<Value>(body) else {
            return HttpAnswer::error(400, "body is not valid JSON");
        };
        let Some(name) = v["name"].as_str() else {
            return HttpAnswer::error(400, "name is required");
        };
        let kind = match v["kind"].as_str() {
            Some("sandbox") | None => SegmentKind::Sandbox,
            Some("operational") => SegmentKind::Operational,
            Some(other) => return HttpAnswer::error(400, format!("unknown segment kind `{other}`")),
        };
        match self.state.lock().expect("sdn state lock").create_vlan(name, kind) {
            Ok(vlan_id) => HttpAnswer::ok(json!({ "vlan_id": vlan_id })),
            Err(e) => topology_error(e),
        }
    }

    fn handle_isolate(&self, body: &str, now: SimTime) -> HttpAnswer {
        let Some((host, v)) = parse_host(body) else {
            return HttpAnswer::error(400, "host is required and must be an ipv4 address");
        };
        let Some(vlan_id) = v["vlan_id"].as_u64() else {
            return HttpAnswer::error(400, "vlan_id is required");
        };
        match self
            .state
            .lock()
            .expect("sdn state lock")
            .isolate_host(host, vlan_id as u16, now)
        {
            Ok(()) => HttpAnswer::ok(json!({ "host": host.to_string(), "vlan_id": vlan_id })),
            Err(e) => topology_error(e),
        }
    }

    fn handle_restore(&self, body: &str, now: SimTime) -> HttpAnswer {
        let Some((host, _)) = parse_host(body) else {
            return HttpAnswer::error(400, "host is required and must be an ipv4 address");
        };
        match self.state.lock().expect("sdn state lock").restore_host(host, now) {
            Ok(segment) => HttpAnswer::ok(json!({ "host": host.to_string(), "vlan_id": segment })),
            Err(e) => topology_error(e),
        }
    }

    fn handle_verify(&self, body: &str) -> HttpAnswer {
        let Some((host, _)) = parse_host(body) else {
            return HttpAnswer::error(400, "host is required and must be an ipv4 address");
        };
        {
            let state = self.state.lock().expect("sdn state lock");
            match state.segment_of(host) {
                None => return topology_error(TopologyError::UnknownHost(host)),
                Some(seg) => {
                    if state.segments()[&seg].kind != SegmentKind::Sandbox {
                        return topology_error(TopologyError::NotIsolated(host));
                    }
                }
            }
        }
        let Some(inspection) = self.probe.inspect(host) else {
            return HttpAnswer::error(404, format!("no verification probe for host {host}"));
        };
        let clean = inspection.clean();
        if let Err(e) = self
            .state
            .lock()
            .expect("sdn state lock")
            .set_verification(host, clean)
        {
            return topology_error(e);
        }
        HttpAnswer::ok(json!({
            "host": host.to_string(),
            "verified": clean,
            "firmware_matches_target": inspection.firmware_matches_target,
            "reading_nominal": inspection.reading_nominal,
        }))
    }
}

fn parse_host(body: &str) -> Option<(Ipv4Addr, Value)> {
    let v = serde_json::from_str::<Value>(body).ok()?;
    let host = v["host"].as_str()?.parse::<Ipv4Addr>().ok()?;
    Some((host, v))
}

fn topology_error(e: TopologyError) -> HttpAnswer {
    let status = match e {
        TopologyError::UnknownHost(_) | TopologyError::UnknownVlan(_) => 404,
        TopologyError::DuplicateVlanName(_)
        | TopologyError::VlanSpaceExhausted
        | TopologyError::NotIsolated(_)
        | TopologyError::NotVerifiedClean(_) => 409,
    };
    HttpAnswer::error(status, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TEST_TOKEN: &str = "user:ORWoIJZrgrb9S4jYUy0";

    struct StubProbe {
        result: Option<HostInspection>,
    }

    impl CleanProbe for StubProbe {
        fn inspect(&self, _host: Ipv4Addr) -> Option<HostInspection> {
            self.result
        }
    }

    fn service() -> SdnService {
        SdnService::new(
            [Ipv4Addr::new(10, 0, 0, 2), Ipv4Addr::new(10, 0, 0, 7)],
            TEST_TOKEN,
            Box::new(StubProbe {
                result: Some(HostInspection {
                    firmware_matches_target: true,
                    reading_nominal: true,
                }),
            }),
        )
    }

    fn auth() -> String {
        format!("Basic {TEST_TOKEN}")
    }

    const LISTING_BODY: &str = r#"{
    "dpid": 2876467493016320,
    "priority": 15,
    "actions": [{
            "type": "OUTPUT",
            "port": 8
    }],
    "match": {
        "ipv4_src": "10.0.0.1",
        "eth_type": 2048
    },
    "table_id": 100
}"#;

    #[test]
    fn flow_add_records_exact_fields() {
        let svc = service();
        let ans = svc.route(
            "POST",
            "/stats/flowentry/add",
            Some(&auth()),
            LISTING_BODY,
            SimTime::ZERO,
        );
        assert_eq!(ans.status, 200);
        assert_eq!(ans.body["entry_number"], 1);

        let snap = svc.snapshot();
        let entry = &snap.flow_table[0];
        assert_eq!(entry.dpid, 2876467493016320);
        assert_eq!(entry.priority, 15);
        assert_eq!(entry.actions.len(), 1);
        assert_eq!(entry.actions[0].action_type, "OUTPUT");
        assert_eq!(entry.actions[0].port, Some(8));
        assert_eq!(entry.flow_match.ipv4_src, Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(entry.flow_match.eth_type, 2048);
        assert_eq!(entry.table_id, 100);
    }

    #[test]
    fn flow_add_is_idempotent_for_identical_bodies() {
        let svc = service();
        let first = svc.route("POST", "/stats/flowentry/add", Some(&auth()), LISTING_BODY, SimTime::ZERO);
        let again = svc.route("POST", "/stats/flowentry/add", Some(&auth()), LISTING_BODY, SimTime::ZERO);
        assert_eq!(first.body["entry_number"], again.body["entry_number"]);
        assert_eq!(svc.snapshot().flow_table.len(), 1);
    }

    #[test]
    fn flow_add_without_match_is_400() {
        let svc = service();
        let ans = svc.route(
            "POST",
            "/stats/flowentry/add",
            Some(&auth()),
            r#"{"dpid": 1, "priority": 1, "actions": [], "table_id": 100}"#,
            SimTime::ZERO,
        );
        assert_eq!(ans.status, 400);
        assert!(ans.body["error"].as_str().unwrap().contains("match"));
    }

    #[test]
    fn mutating_requests_require_credential() {
        let svc = service();
        let ans = svc.route("POST", "/stats/flowentry/add", None, LISTING_BODY, SimTime::ZERO);
        assert_eq!(ans.status, 401);
        let ans = svc.route(
            "POST",
            "/vlan/create",
            Some("Basic wrong"),
            r#"{"name": "x"}"#,
            SimTime::ZERO,
        );
        assert_eq!(ans.status, 401);
        // Reads stay open.
        let ans = svc.route("GET", "/topology", None, "", SimTime::ZERO);
        assert_eq!(ans.status, 200);
    }

    #[test]
    fn isolate_verify_restore_flow() {
        let svc = service();
        let vlan = svc.route(
            "POST",
            "/vlan/create",
            Some(&auth()),
            r#"{"name": "sandbox-1", "kind": "sandbox"}"#,
            SimTime::ZERO,
        );
        assert_eq!(vlan.status, 200);
        let vlan_id = vlan.body["vlan_id"].as_u64().unwrap();

        let ans = svc.route(
            "POST",
            "/host/isolate",
            Some(&auth()),
            &format!(r#"{{"host": "10.0.0.7", "vlan_id": {vlan_id}}}"#),
            SimTime::from_secs(1),
        );
        assert_eq!(ans.status, 200);
        assert!(!svc.reachable(Ipv4Addr::new(10, 0, 0, 7), Ipv4Addr::new(10, 0, 0, 2)));

        // Restore before verification is refused.
        let ans = svc.route(
            "POST",
            "/host/restore",
            Some(&auth()),
            r#"{"host": "10.0.0.7"}"#,
            SimTime::from_secs(2),
        );
        assert_eq!(ans.status, 409);
        assert!(ans.body["error"].as_str().unwrap().contains("not verified clean"));

        let ans = svc.route(
            "POST",
            "/host/verify",
            Some(&auth()),
            r#"{"host": "10.0.0.7"}"#,
            SimTime::from_secs(3),
        );
        assert_eq!(ans.status, 200);
        assert_eq!(ans.body["verified"], true);

        let ans = svc.route(
            "POST",
            "/host/restore",
            Some(&auth()),
            r#"{"host": "10.0.0.7"}"#,
            SimTime::from_secs(4),
        );
        assert_eq!(ans.status, 200);
        assert!(svc.reachable(Ipv4Addr::new(10, 0, 0, 7), Ipv4Addr::new(10, 0, 0, 2)));
    }

    #[test]
    fn verify_reports_dirty_hosts() {
        let svc = SdnService::new(
            [Ipv4Addr::new(10, 0, 0, 7)],
            TEST_TOKEN,
            Box::new(StubProbe {
                result: Some(HostInspection {
                    firmware_matches_target: false,
                    reading_nominal: true,
                }),
            }),
        );
        svc.route(
            "POST",
            "/vlan/create",
            Some(&auth()),
            r#"{"name": "sandbox-1"}"#,
            SimTime::ZERO,
        );
        svc.route(
            "POST",
            "/host/isolate",
            Some(&auth()),
            r#"{"host": "10.0.0.7", "vlan_id": 100}"#,
            SimTime::ZERO,
        );
        let ans = svc.route(
            "POST",
            "/host/verify",
            Some(&auth()),
            r#"{"host": "10.0.0.7"}"#,
            SimTime::ZERO,
        );
        assert_eq!(ans.status, 200);
        assert_eq!(ans.body["verified"], false);
        assert!(!svc.is_verified(Ipv4Addr::new(10, 0, 0, 7)));
    }

    #[test]
    fn rate_limit_endpoint_installs_one_entry_per_source() {
        let svc = service();
        let ans = svc.route(
            "POST",
            "/flows/rate_limit",
            Some(&auth()),
            r#"{"sources": "10.0.0.7, 10.0.0.8", "limit_per_min": 12, "priority": 20}"#,
            SimTime::ZERO,
        );
        assert_eq!(ans.status, 200);
        assert_eq!(ans.body["entry_numbers"].as_array().unwrap().len(), 2);
        let snap = svc.snapshot();
        assert_eq!(snap.flow_table.len(), 2);
        assert!(snap
            .flow_table
            .iter()
            .all(|e| e.actions[0].action_type == ACTION_RATE_LIMIT
                && e.actions[0].limit_per_min == Some(12)));
    }
}
