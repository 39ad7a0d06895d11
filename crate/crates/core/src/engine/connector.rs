//! Connector plumbing: http-api commands are routed to the connector owning
//! the longest matching URL prefix; manual commands go to the manual task
//! sink. Connectors are the only way playbook steps touch the world.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::time::{SimDuration, SimTime};

/// One dispatched command after variable substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorRequest {
    pub method: String,
    pub url: String,
    pub headers: BTreeMap<String, String>,
    pub body: String,
    pub dispatched_at: SimTime,
}

/// What a connector returns for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorResponse {
    pub status: u16,
    pub body: Value,
    /// Variables exported into the execution context (e.g. a fresh case id).
    pub exports: BTreeMap<String, String>,
    /// Domain-determined duration (firmware phases). None lets the engine
    /// draw from the configured step-latency band.
    pub latency_override: Option<SimDuration>,
}

impl ConnectorResponse {
    pub fn ok(body: Value) -> Self {
        ConnectorResponse {
            status: 200,
            body,
            exports: BTreeMap::new(),
            latency_override: None,
        }
    }

    pub fn error(status: u16, message: impl Into<String>) -> Self {
        ConnectorResponse {
            status,
            body: serde_json::json!({ "error": message.into() }),
            exports: BTreeMap::new(),
            latency_override: None,
        }
    }

    pub fn with_export(mut self, name: &str, value: impl Into<String>) -> Self {
        self.exports.insert(name.to_string(), value.into());
        self
    }

    pub fn with_latency(mut self, latency: SimDuration) -> Self {
        self.latency_override = Some(latency);
        self
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub trait Connector: Send {
    fn handle(&mut self, req: &ConnectorRequest) -> ConnectorResponse;
}

/// Sink for manual commands: appends a human task to the incident case and
/// immediately succeeds (automation-with-human-task semantics).
pub trait ManualTaskSink: Send {
    fn append_task(
        &mut self,
        case_id: Option<&str>,
        instruction: &str,
        at: SimTime,
    ) -> ConnectorResponse;
}

/// Registry keyed by URL prefix; dispatch picks the connector with the
/// longest matching prefix.
#[derive(Default)]
pub struct ConnectorRegistry {
    routes: Vec<(String, Box<dyn Connector>)>,
    manual_sink: Option<Box<dyn ManualTaskSink>>,
}

impl ConnectorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, url_prefix: &str, connector: Box<dyn Connector>) {
        self.routes.push((url_prefix.to_string(), connector));
    }

    pub fn set_manual_sink(&mut self, sink: Box<dyn ManualTaskSink>) {
        self.manual_sink = Some(sink);
    }

    pub fn dispatch_http(&mut self, req: &ConnectorRequest) -> Option<ConnectorResponse> {
        let (_, connector) = self
            .routes
            .iter_mut()
            .filter(|(prefix, _)| req.url.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())?;
        Some(connector.handle(req))
    }

    pub fn dispatch_manual(
        &mut self,
        case_id: Option<&str>,
        instruction: &str,
        at: SimTime,
    ) -> ConnectorResponse {
        match &mut self.manual_sink {
            Some(sink) => sink.append_task(case_id, instruction, at),
            None => ConnectorResponse::ok(serde_json::json!({
                "manual_instruction": instruction,
                "note": "no case sink configured; task acknowledged",
            })),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Tagger(&'static str);

    impl Connector for Tagger {
        fn handle(&mut self, _req: &ConnectorRequest) -> ConnectorResponse {
            ConnectorResponse::ok(serde_json::json!({ "by": self.0 }))
        }
    }

    fn req(url: &str) -> ConnectorRequest {
        ConnectorRequest {
            method: "POST".to_string(),
            url: url.to_string(),
            headers: BTreeMap::new(),
            body: String::new(),
            dispatched_at: SimTime::ZERO,
        }
    }

    #[test]
    fn longest_prefix_wins() {
        let mut reg = ConnectorRegistry::new();
        reg.register("http://sdn.local", Box::new(Tagger("generic")));
        reg.register("http://sdn.local/host", Box::new(Tagger("host")));

        let r = reg.dispatch_http(&req("http://sdn.local/host/isolate")).unwrap();
        assert_eq!(r.body["by"], "host");
        let r = reg.dispatch_http(&req("http://sdn.local/vlan/create")).unwrap();
        assert_eq!(r.body["by"], "generic");
    }

    #[test]
    fn unknown_host_has_no_route() {
        let mut reg = ConnectorRegistry::new();
        reg.register("http://sdn.local", Box::new(Tagger("sdn")));
        assert!(reg.dispatch_http(&req("http://other.local/x")).is_none());
    }
}
