use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::checks::verify_trace;
use super::*;
use crate::cacao::parse_playbook;
use crate::time::ClockDriver;

struct FnConnector<F: FnMut(&ConnectorRequest) -> ConnectorResponse + Send>(F);

impl<F: FnMut(&ConnectorRequest) -> ConnectorResponse + Send> Connector for FnConnector<F> {
    fn handle(&mut self, req: &ConnectorRequest) -> ConnectorResponse {
        (self.0)(req)
    }
}

type CallLog = Arc<Mutex<Vec<ConnectorRequest>>>;

fn logging_registry(log: &CallLog) -> ConnectorRegistry {
    let log = Arc::clone(log);
    let mut registry = ConnectorRegistry::new();
    registry.register(
        "http://svc.local",
        Box::new(FnConnector(move |req: &ConnectorRequest| {
            log.lock().unwrap().push(req.clone());
            ConnectorResponse::ok(serde_json::json!({ "path": req.url }))
        })),
    );
    registry
}

fn minimal_playbook() -> crate::cacao::Playbook {
    parse_playbook(
        r#"{
            "id": "pb-min", "name": "minimal", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#,
    )
    .unwrap()
}

fn parallel_playbook() -> crate::cacao::Playbook {
    parse_playbook(
        r#"{
            "id": "pb-par", "name": "parallel", "workflow_start": "s",
            "agent_definitions": {"soar": {"name": "soar"}},
            "workflow": {
                "s": {"kind": "start", "on_completion": "par"},
                "par": {"kind": "parallel", "next_steps": ["open-case", "notify", "create-vlan"], "on_completion": "after"},
                "open-case": {"kind": "action", "agent": "soar", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/cases/open", "body": ""}]},
                "notify": {"kind": "action", "agent": "soar", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/notify", "body": ""}]},
                "create-vlan": {"kind": "action", "agent": "soar", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/vlan/create", "body": ""}]},
                "after": {"kind": "action", "agent": "soar", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/after", "body": ""}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#,
    )
    .unwrap()
}

fn branching_playbook() -> crate::cacao::Playbook {
    parse_playbook(
        r#"{
            "id": "pb-branch", "name": "branch", "workflow_start": "s",
            "playbook_variables": {
                "__device_class__": {"type": "string", "value": "meter"}
            },
            "workflow": {
                "s": {"kind": "start", "on_completion": "classify"},
                "classify": {
                    "kind": "if-condition",
                    "condition": {"lhs": "__device_class__", "operator": "equals", "rhs": "headend"},
                    "on_true": "headend-path", "on_false": "meter-path"
                },
                "headend-path": {"kind": "action", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/headend", "body": ""}], "on_completion": "e"},
                "meter-path": {"kind": "action", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/meter", "body": ""}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#,
    )
    .unwrap()
}

#[test]
fn minimal_playbook_yields_two_record_success_trace() {
    let playbook = minimal_playbook();
    let mut registry = ConnectorRegistry::new();
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(1), &mut registry, &mut driver).unwrap();

    assert_eq!(trace.status, TraceStatus::Succeeded);
    assert_eq!(trace.records.len(), 2);
    assert_eq!(trace.records[0].kind, "start");
    assert_eq!(trace.records[1].kind, "end");
    verify_trace(&playbook, &trace).unwrap();
}

#[test]
fn parallel_branches_overlap_in_virtual_time() {
    let playbook = parallel_playbook();
    let log: CallLog = Arc::new(Mutex::new(Vec::new()));
    let mut registry = logging_registry(&log);
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(2), &mut registry, &mut driver).unwrap();

    assert_eq!(trace.status, TraceStatus::Succeeded);
    verify_trace(&playbook, &trace).unwrap();

    let branch_ids = ["open-case", "notify", "create-vlan"];
    let branches: Vec<&StepRecord> = branch_ids
        .iter()
        .map(|id| trace.record(id).unwrap())
        .collect();
    let fork = trace.record("par").unwrap().start_time;
    // Every branch starts at the fork, before any sibling completes.
    let min_end = branches.iter().map(|r| r.end_time).min().unwrap();
    for r in &branches {
        assert_eq!(r.start_time, fork);
        assert!(r.start_time < min_end);
    }
    // The join continuation starts when the slowest branch is done.
    let max_end = branches.iter().map(|r| r.end_time).max().unwrap();
    assert_eq!(trace.record("after").unwrap().start_time, max_end);

    // Observable connector calls from different branches share the fork
    // dispatch instant: overlapping in virtual time.
    let log = log.lock().unwrap();
    let dispatch_times: Vec<_> = log
        .iter()
        .filter(|c| !c.url.ends_with("/after"))
        .map(|c| c.dispatched_at)
        .collect();
    assert_eq!(dispatch_times.len(), 3);
    assert!(dispatch_times.iter().all(|t| *t == fork));
}

#[test]
fn unregistered_endpoint_fails_trace_and_skips_downstream() {
    let playbook = parallel_playbook();
    // No connector registered at all.
    let mut registry = ConnectorRegistry::new();
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(3), &mut registry, &mut driver).unwrap();

    assert_eq!(trace.status, TraceStatus::Failed);
    assert!(trace.error.as_deref().unwrap_or("").contains("no connector"));
    // The join continuation and end never ran.
    assert!(trace.record("after").is_none());
    assert!(trace.record("e").is_none());
}

#[test]
fn single_branch_failure_aborts_at_join_but_siblings_run() {
    let playbook = parallel_playbook();
    let mut registry = ConnectorRegistry::new();
    registry.register(
        "http://svc.local",
        Box::new(FnConnector(|req: &ConnectorRequest| {
            if req.url.ends_with("/notify") {
                ConnectorResponse::error(503, "unavailable")
            } else {
                ConnectorResponse::ok(serde_json::json!({}))
            }
        })),
    );
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(4), &mut registry, &mut driver).unwrap();

    assert_eq!(trace.status, TraceStatus::Failed);
    assert_eq!(trace.record("notify").unwrap().status, StepStatus::Failed);
    // Siblings still ran (logically concurrent), downstream did not.
    assert_eq!(trace.record("open-case").unwrap().status, StepStatus::Succeeded);
    assert_eq!(trace.record("create-vlan").unwrap().status, StepStatus::Succeeded);
    assert!(trace.record("after").is_none());
}

#[test]
fn condition_routes_by_device_class() {
    for (class, executed, skipped) in [
        ("headend", "headend-path", "meter-path"),
        ("meter", "meter-path", "headend-path"),
    ] {
        let playbook = branching_playbook();
        let log: CallLog = Arc::new(Mutex::new(Vec::new()));
        let mut registry = logging_registry(&log);
        let mut driver = ClockDriver::new();
        let mut ctx = ExecutionContext::new(5);
        ctx.bind(BINDING_DEVICE_CLASS, class);
        let trace = execute(&playbook, ctx, &mut registry, &mut driver).unwrap();

        assert_eq!(trace.status, TraceStatus::Succeeded);
        assert!(trace.executed(executed), "class {class}");
        assert_eq!(trace.record(skipped).unwrap().status, StepStatus::Skipped);
        verify_trace(&playbook, &trace).unwrap();
    }
}

#[test]
fn evaluate_condition_normalizes_types() {
    let mut bindings = BTreeMap::new();
    bindings.insert("__device_class__".to_string(), Variable::string("headend"));

    let eq = |rhs: &str| ConditionExpr {
        lhs: "__device_class__".to_string(),
        operator: OP_EQUALS.to_string(),
        rhs: serde_json::json!(rhs),
    };
    assert!(evaluate_condition(&eq("headend"), &bindings).unwrap());
    bindings.insert("__device_class__".to_string(), Variable::string("meter"));
    assert!(!evaluate_condition(&eq("headend"), &bindings).unwrap());

    // Membership test drives the both-actions branch.
    bindings.insert("__device_class__".to_string(), Variable::string("both"));
    let cond_in = ConditionExpr {
        lhs: "__device_class__".to_string(),
        operator: OP_IN.to_string(),
        rhs: serde_json::json!(["meter", "headend", "both"]),
    };
    assert!(evaluate_condition(&cond_in, &bindings).unwrap());

    // Integers compare after parsing, not textually.
    bindings.insert(
        "__port__".to_string(),
        Variable {
            var_type: VAR_TYPE_INTEGER.to_string(),
            value: "0008".to_string(),
            constant: false,
            description: None,
        },
    );
    let cond_int = ConditionExpr {
        lhs: "__port__".to_string(),
        operator: OP_EQUALS.to_string(),
        rhs: serde_json::json!(8),
    };
    assert!(evaluate_condition(&cond_int, &bindings).unwrap());

    let unbound = ConditionExpr {
        lhs: "__ghost__".to_string(),
        operator: OP_EQUALS.to_string(),
        rhs: serde_json::json!("x"),
    };
    assert_eq!(
        evaluate_condition(&unbound, &bindings),
        Err(ConditionError::UnboundLhs("__ghost__".to_string()))
    );
}

#[test]
fn command_times_out_at_exactly_the_timeout_instant() {
    let playbook = parse_playbook(
        r#"{
            "id": "pb-slow", "name": "slow", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "slow"},
                "slow": {"kind": "action", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/slow", "body": "", "timeout_s": 30}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#,
    )
    .unwrap();
    let mut registry = ConnectorRegistry::new();
    registry.register(
        "http://svc.local",
        Box::new(FnConnector(|_req: &ConnectorRequest| {
            ConnectorResponse::ok(serde_json::json!({}))
                .with_latency(crate::time::SimDuration::from_secs(60))
        })),
    );
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(6), &mut registry, &mut driver).unwrap();

    assert_eq!(trace.status, TraceStatus::Failed);
    let rec = trace.record("slow").unwrap();
    assert_eq!(rec.status, StepStatus::Failed);
    // Virtual-clock arithmetic: dispatch at t=0, timeout 30s.
    assert_eq!(rec.end_time, SimTime::from_secs(30));
    assert!(trace.error.as_deref().unwrap().contains("timed out"));
}

#[test]
fn exports_flow_into_later_commands_across_branches() {
    let playbook = parse_playbook(
        r#"{
            "id": "pb-exports", "name": "exports", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "par"},
                "par": {"kind": "parallel", "next_steps": ["open-case", "notify"], "on_completion": "close"},
                "open-case": {"kind": "action", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/cases/open", "body": ""}]},
                "notify": {"kind": "action", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/notify", "body": "case=__case_id__"}]},
                "close": {"kind": "action", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/cases/update", "body": "{\"case\": \"__case_id__\"}"}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#,
    )
    .unwrap();

    let log: CallLog = Arc::new(Mutex::new(Vec::new()));
    let log_in = Arc::clone(&log);
    let mut registry = ConnectorRegistry::new();
    registry.register(
        "http://svc.local",
        Box::new(FnConnector(move |req: &ConnectorRequest| {
            log_in.lock().unwrap().push(req.clone());
            if req.url.ends_with("/cases/open") {
                ConnectorResponse::ok(serde_json::json!({ "case_id": "CASE-0001" }))
                    .with_export(BINDING_CASE_ID, "CASE-0001")
            } else {
                ConnectorResponse::ok(serde_json::json!({}))
            }
        })),
    );
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(7), &mut registry, &mut driver).unwrap();
    assert_eq!(trace.status, TraceStatus::Succeeded);

    let log = log.lock().unwrap();
    let notify = log.iter().find(|c| c.url.ends_with("/notify")).unwrap();
    // Branches execute in declaration order, so the case id minted by the
    // first branch is visible to the notification.
    assert_eq!(notify.body, "case=CASE-0001");
    let close = log.iter().find(|c| c.url.ends_with("/cases/update")).unwrap();
    assert_eq!(close.body, r#"{"case": "CASE-0001"}"#);
}

#[test]
fn unbound_placeholder_at_dispatch_fails_the_step() {
    let playbook = parse_playbook(
        r#"{
            "id": "pb-unbound", "name": "unbound", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "a"},
                "a": {"kind": "action", "commands": [{"kind": "http-api", "method": "POST", "url": "http://svc.local/x", "body": "host=__victim_ip__"}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#,
    )
    .unwrap();
    let log: CallLog = Arc::new(Mutex::new(Vec::new()));
    let mut registry = logging_registry(&log);
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(8), &mut registry, &mut driver).unwrap();

    assert_eq!(trace.status, TraceStatus::Failed);
    assert!(trace.error.as_deref().unwrap().contains("__victim_ip__"));
    assert!(log.lock().unwrap().is_empty(), "nothing dispatched");
}

#[test]
fn manual_commands_append_case_task_and_succeed() {
    struct Sink(Arc<Mutex<Vec<(Option<String>, String)>>>);
    impl ManualTaskSink for Sink {
        fn append_task(
            &mut self,
            case_id: Option<&str>,
            instruction: &str,
            _at: SimTime,
        ) -> ConnectorResponse {
            self.0
                .lock()
                .unwrap()
                .push((case_id.map(String::from), instruction.to_string()));
            ConnectorResponse::ok(serde_json::json!({ "task": instruction }))
        }
    }

    let playbook = parse_playbook(
        r#"{
            "id": "pb-manual", "name": "manual", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "m"},
                "m": {"kind": "action", "commands": [{"kind": "manual", "body": "call the utility operator"}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#,
    )
    .unwrap();
    let tasks = Arc::new(Mutex::new(Vec::new()));
    let mut registry = ConnectorRegistry::new();
    registry.set_manual_sink(Box::new(Sink(Arc::clone(&tasks))));
    let mut driver = ClockDriver::new();
    let mut ctx = ExecutionContext::new(9);
    ctx.bind(BINDING_CASE_ID, "CASE-0042");
    let trace = execute(&playbook, ctx, &mut registry, &mut driver).unwrap();

    assert_eq!(trace.status, TraceStatus::Succeeded);
    let tasks = tasks.lock().unwrap();
    assert_eq!(
        *tasks,
        vec![(
            Some("CASE-0042".to_string()),
            "call the utility operator".to_string()
        )]
    );
}

#[test]
fn on_alert_routes_by_signature_and_seeds_bindings() {
    let mut playbooks = PlaybookRegistry::new();
    playbooks.register(crate::ndr::SIG_FDI, branching_playbook());

    let mut extensions = BTreeMap::new();
    extensions.insert("externalId".to_string(), "ALERT-0001".to_string());
    extensions.insert("src".to_string(), "10.0.0.7".to_string());
    extensions.insert("dst".to_string(), "10.0.0.7".to_string());
    extensions.insert("cs1".to_string(), "meter".to_string());
    let alert = CefAlert {
        version: "0".to_string(),
        vendor: "PHOENI2X".to_string(),
        product: "AMI-NDR".to_string(),
        device_version: "1.0".to_string(),
        signature_id: crate::ndr::SIG_FDI.to_string(),
        name: "AMI False Data Injection".to_string(),
        severity: 8,
        extensions,
    };

    let log: CallLog = Arc::new(Mutex::new(Vec::new()));
    let mut registry = logging_registry(&log);
    let mut driver = ClockDriver::new();
    let trace = on_alert(
        &alert,
        &playbooks,
        &BTreeMap::new(),
        &mut registry,
        &mut driver,
        11,
        (5.0, 10.0),
    )
    .unwrap();

    assert_eq!(trace.status, TraceStatus::Succeeded);
    assert_eq!(trace.trigger_alert_id.as_deref(), Some("ALERT-0001"));
    assert!(trace.executed("meter-path"));

    // Headend-classified alert takes the other branch.
    let mut headend_alert = alert.clone();
    headend_alert
        .extensions
        .insert("cs1".to_string(), "headend".to_string());
    let trace = on_alert(
        &headend_alert,
        &playbooks,
        &BTreeMap::new(),
        &mut registry,
        &mut driver,
        11,
        (5.0, 10.0),
    )
    .unwrap();
    assert!(trace.executed("headend-path"));

    // Unknown signatures are an error, not a trace.
    let mut unknown = alert.clone();
    unknown.signature_id = "AMI-XXX-999".to_string();
    let err = on_alert(
        &unknown,
        &playbooks,
        &BTreeMap::new(),
        &mut registry,
        &mut driver,
        11,
        (5.0, 10.0),
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::NoPlaybookForSignature(_)));

    // Alerts missing mandatory extension fields are rejected.
    let mut malformed = alert.clone();
    malformed.extensions.remove("dst");
    let err = on_alert(
        &malformed,
        &playbooks,
        &BTreeMap::new(),
        &mut registry,
        &mut driver,
        11,
        (5.0, 10.0),
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::MalformedAlert(_)));
}

#[test]
fn same_seed_produces_identical_traces() {
    let playbook = parallel_playbook();
    let run = |seed: u64| {
        let log: CallLog = Arc::new(Mutex::new(Vec::new()));
        let mut registry = logging_registry(&log);
        let mut driver = ClockDriver::new();
        execute(&playbook, ExecutionContext::new(seed), &mut registry, &mut driver).unwrap()
    };
    let a = run(42);
    let b = run(42);
    assert_eq!(a, b);
    let c = run(43);
    assert_ne!(a.finished_at, c.finished_at);
}

#[test]
fn step_latencies_stay_inside_configured_band() {
    let playbook = parallel_playbook();
    let log: CallLog = Arc::new(Mutex::new(Vec::new()));
    let mut registry = logging_registry(&log);
    let mut driver = ClockDriver::new();
    let trace = execute(&playbook, ExecutionContext::new(42), &mut registry, &mut driver).unwrap();

    for rec in trace.records.iter().filter(|r| r.kind == "action") {
        let secs = rec.end_time.since(rec.start_time).as_secs_f64();
        assert!((5.0..=10.0).contains(&secs), "{} took {secs}s", rec.step_id);
    }
}
