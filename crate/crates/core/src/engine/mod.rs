//! Playbook execution: traverses the validated workflow graph, runs
//! parallel branches in overlapping virtual time, evaluates conditions,
//! dispatches commands through the connector registry, and records a
//! timestamped trace.
//!
//! Parallel branches share the fork instant as their start time and run
//! with branch-local time cursors; the join continuation starts at the
//! latest branch end. The engine advances the time driver only on the main
//! chain, so an end-to-end run keeps emulated traffic flowing while long
//! actions (firmware) consume virtual time.

pub mod checks;
mod connector;

pub use connector::{
    Connector, ConnectorRegistry, ConnectorRequest, ConnectorResponse, ManualTaskSink,
};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cacao::{
    substitute_variables, validate, Command, ConditionExpr, Playbook, StepKind, Variable,
    WorkflowStep, COMMAND_HTTP_API, COMMAND_MANUAL, OP_EQUALS, OP_IN, OP_NOT_EQUALS,
    VAR_TYPE_INTEGER, VAR_TYPE_IPV4,
};
use crate::ndr::CefAlert;
use crate::time::{SimDuration, SimTime, TimeDriver};

pub const BINDING_ALERT_ID: &str = "__alert_id__";
pub const BINDING_VICTIM_IP: &str = "__victim_ip__";
pub const BINDING_OFFENDER_IP: &str = "__offender_ip__";
pub const BINDING_OFFENDER_IPS: &str = "__offender_ips__";
pub const BINDING_DEVICE_CLASS: &str = "__device_class__";
pub const BINDING_CASE_ID: &str = "__case_id__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Succeeded,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_id: String,
    pub kind: String,
    pub start_time: SimTime,
    pub end_time: SimTime,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub playbook_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_alert_id: Option<String>,
    pub status: TraceStatus,
    pub started_at: SimTime,
    pub finished_at: SimTime,
    pub total_duration: SimDuration,
    pub records: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExecutionTrace {
    pub fn record(&self, step_id: &str) -> Option<&StepRecord> {
        self.records.iter().find(|r| r.step_id == step_id)
    }

    pub fn executed(&self, step_id: &str) -> bool {
        self.record(step_id)
            .is_some_and(|r| r.status != StepStatus::Skipped)
    }
}

/// Execution state seeded from the triggering alert.
pub struct ExecutionContext {
    pub bindings: BTreeMap<String, Variable>,
    pub trigger_alert_id: Option<String>,
    /// Virtual step-latency band in seconds for commands without a
    /// domain-determined duration.
    pub latency_range_s: (f64, f64),
    rng: ChaCha12Rng,
}

impl ExecutionContext {
    pub fn new(seed: u64) -> Self {
        ExecutionContext {
            bindings: BTreeMap::new(),
            trigger_alert_id: None,
            latency_range_s: (5.0, 10.0),
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn bind(&mut self, name: &str, value: impl Into<String>) {
        self.bindings
            .insert(name.to_string(), Variable::string(&value.into()));
    }

    fn draw_latency(&mut self) -> SimDuration {
        let (lo, hi) = self.latency_range_s;
        let secs = if hi > lo {
            lo + self.rng.random::<f64>() * (hi - lo)
        } else {
            lo
        };
        SimDuration::from_millis((secs * 1000.0).round() as u64)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no playbook registered for signature `{0}`")]
    NoPlaybookForSignature(String),
    #[error("playbook `{0}` fails validation and cannot execute")]
    InvalidPlaybook(String),
    #[error("graph structure error at step `{step}`: {message}")]
    Structure { step: String, message: String },
    #[error("alert is missing required CEF field `{0}`")]
    MalformedAlert(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConditionError {
    #[error("condition lhs `{0}` is unbound")]
    UnboundLhs(String),
}

/// Pure predicate evaluation over current bindings. equals/not-equals
/// normalize both sides by the variable's declared type before comparing;
/// `in` tests membership of the rhs set with the same normalization.
pub fn evaluate_condition(
    cond: &ConditionExpr,
    bindings: &BTreeMap<String, Variable>,
) -> Result<bool, ConditionError> {
    let var = bindings
        .get(&cond.lhs)
        .ok_or_else(|| ConditionError::UnboundLhs(cond.lhs.clone()))?;

    let matches_scalar = |rhs: &serde_json::Value| -> bool {
        let rhs_text = match rhs {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        match var.var_type.as_str() {
            VAR_TYPE_INTEGER => match (var.value.parse::<i64>(), rhs_text.parse::<i64>()) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            },
            VAR_TYPE_IPV4 => match (
                var.value.parse::<std::net::Ipv4Addr>(),
                rhs_text.parse::<std::net::Ipv4Addr>(),
            ) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            },
            _ => var.value == rhs_text,
        }
    };

    Ok(match cond.operator.as_str() {
        OP_EQUALS => matches_scalar(&cond.rhs),
        OP_NOT_EQUALS => !matches_scalar(&cond.rhs),
        OP_IN => cond
            .rhs
            .as_array()
            .map(|xs| xs.iter().any(matches_scalar))
            .unwrap_or(false),
        _ => false, // rejected by validation
    })
}

/// Selects playbooks by alert signature id.
#[derive(Default)]
pub struct PlaybookRegistry {
    by_signature: BTreeMap<String, Playbook>,
}

impl PlaybookRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, signature_id: &str, playbook: Playbook) {
        self.by_signature.insert(signature_id.to_string(), playbook);
    }

    pub fn for_signature(&self, signature_id: &str) -> Option<&Playbook> {
        self.by_signature.get(signature_id)
    }
}

/// Seeds an execution context from a parsed CEF alert and runs the playbook
/// registered for the alert's signature id.
pub fn on_alert(
    alert: &CefAlert,
    registry: &PlaybookRegistry,
    extra_bindings: &BTreeMap<String, String>,
    connectors: &mut ConnectorRegistry,
    driver: &mut dyn TimeDriver,
    seed: u64,
    latency_range_s: (f64, f64),
) -> Result<ExecutionTrace, EngineError> {
    let playbook = registry
        .for_signature(&alert.signature_id)
        .ok_or_else(|| EngineError::NoPlaybookForSignature(alert.signature_id.clone()))?;

    let mut ctx = ExecutionContext::new(seed);
    ctx.latency_range_s = latency_range_s;

    let required = [
        (BINDING_ALERT_ID, "externalId"),
        (BINDING_VICTIM_IP, "dst"),
        (BINDING_OFFENDER_IP, "src"),
        (BINDING_DEVICE_CLASS, "cs1"),
    ];
    for (binding, cef_key) in required {
        let value = alert
            .extension(cef_key)
            .ok_or_else(|| EngineError::MalformedAlert(cef_key.to_string()))?;
        ctx.bind(binding, value);
    }
    let offender_list = alert
        .extension("cs2")
        .unwrap_or_else(|| alert.extension("src").expect("src checked above"));
    ctx.bind(BINDING_OFFENDER_IPS, offender_list);
    for (name, value) in extra_bindings {
        ctx.bind(name, value.clone());
    }
    ctx.trigger_alert_id = alert.extension("externalId").map(String::from);

    execute(playbook, ctx, connectors, driver)
}

/// Executes a validated playbook from its start step and returns the trace.
/// Action failures abort the enclosing chain; a parallel group aborts at the
/// join when any branch failed. The trace is marked failed in both cases.
pub fn execute(
    playbook: &Playbook,
    ctx: ExecutionContext,
    connectors: &mut ConnectorRegistry,
    driver: &mut dyn TimeDriver,
) -> Result<ExecutionTrace, EngineError> {
    if !validate(playbook).valid {
        return Err(EngineError::InvalidPlaybook(playbook.id.clone()));
    }

    let started_at = driver.now();
    let mut executor = Executor {
        playbook,
        ctx,
        connectors,
        driver,
        records: Vec::new(),
        failure: None,
    };

    let outcome = executor.run_chain(&playbook.workflow_start, started_at, 0)?;
    let (finished_at, finished) = match outcome {
        (t, ChainEnd::Finished) => (t, true),
        (t, ChainEnd::Aborted) => (t, false),
        (t, ChainEnd::BranchEnd) => {
            // Validation guarantees dangling chains only inside branches.
            return Err(EngineError::Structure {
                step: playbook.workflow_start.clone(),
                message: format!("main chain ended without an end step at {t}"),
            });
        }
    };

    let status = if finished && executor.failure.is_none() {
        TraceStatus::Succeeded
    } else {
        TraceStatus::Failed
    };
    let error = executor.failure.clone();
    let trigger_alert_id = executor.ctx.trigger_alert_id.clone();
    Ok(ExecutionTrace {
        playbook_id: playbook.id.clone(),
        trigger_alert_id,
        status,
        started_at,
        finished_at,
        total_duration: finished_at.since(started_at),
        records: executor.records,
        error,
    })
}

enum ChainEnd {
    /// Reached an end step: the playbook is complete.
    Finished,
    /// Chain ended without on_completion: a parallel branch completed.
    BranchEnd,
    /// A step failed; downstream steps are not executed.
    Aborted,
}

struct Executor<'a> {
    playbook: &'a Playbook,
    ctx: ExecutionContext,
    connectors: &'a mut ConnectorRegistry,
    driver: &'a mut dyn TimeDriver,
    records: Vec<StepRecord>,
    failure: Option<String>,
}

impl<'a> Executor<'a> {
    fn step(&self, id: &str) -> Result<&'a WorkflowStep, EngineError> {
        self.playbook
            .workflow
            .get(id)
            .ok_or_else(|| EngineError::Structure {
                step: id.to_string(),
                message: "referenced step does not exist".to_string(),
            })
    }

    fn record(
        &mut self,
        id: &str,
        kind: StepKind,
        start: SimTime,
        end: SimTime,
        status: StepStatus,
        outputs: BTreeMap<String, serde_json::Value>,
    ) {
        self.records.push(StepRecord {
            step_id: id.to_string(),
            kind: kind.as_str().to_string(),
            start_time: start,
            end_time: end,
            status,
            outputs,
        });
    }

    /// Runs a chain of steps starting at `start` with the given time cursor.
    /// `depth` 0 is the main chain, where the time driver is advanced after
    /// every step; inside parallel branches the driver is advanced once, at
    /// the join.
    fn run_chain(
        &mut self,
        start: &str,
        cursor: SimTime,
        depth: usize,
    ) -> Result<(SimTime, ChainEnd), EngineError> {
        let mut cursor = cursor;
        let mut current = Some(start.to_string());

        while let Some(id) = current.take() {
            let step = self.step(&id)?;
            let kind = step.step_kind().ok_or_else(|| EngineError::Structure {
                step: id.clone(),
                message: format!("unsupported step kind `{}`", step.kind),
            })?;

            match kind {
                StepKind::Start => {
                    self.record(&id, kind, cursor, cursor, StepStatus::Succeeded, BTreeMap::new());
                    current = step.on_completion.clone();
                }
                StepKind::End => {
                    self.record(&id, kind, cursor, cursor, StepStatus::Succeeded, BTreeMap::new());
                    return Ok((cursor, ChainEnd::Finished));
                }
                StepKind::Action => {
                    let (end, ok, outputs) = self.run_action(step, cursor);
                    let status = if ok { StepStatus::Succeeded } else { StepStatus::Failed };
                    self.record(&id, kind, cursor, end, status, outputs);
                    cursor = end;
                    if depth == 0 {
                        self.driver.advance_to(cursor);
                    }
                    if !ok {
                        return Ok((cursor, ChainEnd::Aborted));
                    }
                    current = step.on_completion.clone();
                }
                StepKind::Parallel => {
                    let fork = cursor;
                    self.record(&id, kind, fork, fork, StepStatus::Succeeded, BTreeMap::new());
                    let mut join = fork;
                    let mut branch_failed = false;
                    for entry in &step.next_steps {
                        let (end, outcome) = self.run_chain(entry, fork, depth + 1)?;
                        join = join.max(end);
                        match outcome {
                            ChainEnd::BranchEnd => {}
                            ChainEnd::Aborted => branch_failed = true,
                            ChainEnd::Finished => {
                                return Err(EngineError::Structure {
                                    step: entry.clone(),
                                    message: "end step inside parallel branch".to_string(),
                                })
                            }
                        }
                    }
                    cursor = join;
                    if depth == 0 {
                        self.driver.advance_to(cursor);
                    }
                    if branch_failed {
                        self.failure
                            .get_or_insert_with(|| format!("parallel group `{id}` had a failed branch"));
                        return Ok((cursor, ChainEnd::Aborted));
                    }
                    current = step.on_completion.clone();
                }
                StepKind::IfCondition => {
                    let cond = step.condition.as_ref().expect("validated if-condition");
                    let effective = self.effective_bindings(step);
                    match evaluate_condition(cond, &effective) {
                        Ok(taken_true) => {
                            let (taken, skipped) = if taken_true {
                                (step.on_true.clone(), step.on_false.clone())
                            } else {
                                (step.on_false.clone(), step.on_true.clone())
                            };
                            let mut outputs = BTreeMap::new();
                            outputs.insert(
                                "condition_result".to_string(),
                                serde_json::json!(taken_true),
                            );
                            self.record(&id, kind, cursor, cursor, StepStatus::Succeeded, outputs);
                            if let Some(skipped_entry) = skipped {
                                if let Ok(s) = self.step(&skipped_entry) {
                                    let skipped_kind =
                                        s.step_kind().unwrap_or(StepKind::Action);
                                    self.record(
                                        &skipped_entry,
                                        skipped_kind,
                                        cursor,
                                        cursor,
                                        StepStatus::Skipped,
                                        BTreeMap::new(),
                                    );
                                }
                            }
                            current = taken;
                        }
                        Err(e) => {
                            self.failure.get_or_insert_with(|| e.to_string());
                            let mut outputs = BTreeMap::new();
                            outputs.insert("error".to_string(), serde_json::json!(e.to_string()));
                            self.record(&id, kind, cursor, cursor, StepStatus::Failed, outputs);
                            return Ok((cursor, ChainEnd::Aborted));
                        }
                    }
                }
            }
        }

        Ok((cursor, ChainEnd::BranchEnd))
    }

    /// Declared playbook variables, overlaid by step variables, overlaid by
    /// runtime bindings.
    fn effective_bindings(&self, step: &WorkflowStep) -> BTreeMap<String, Variable> {
        let mut all = self.playbook.playbook_variables.clone();
        for (k, v) in &step.step_variables {
            all.insert(k.clone(), v.clone());
        }
        for (k, v) in &self.ctx.bindings {
            all.insert(k.clone(), v.clone());
        }
        all
    }

    fn run_action(
        &mut self,
        step: &WorkflowStep,
        cursor: SimTime,
    ) -> (SimTime, bool, BTreeMap<String, serde_json::Value>) {
        let mut cursor = cursor;
        let mut ok = true;
        let mut command_outputs = Vec::new();

        for cmd in &step.commands {
            let (end, success, output) = self.dispatch_command(step, cmd, cursor);
            cursor = end;
            command_outputs.push(output);
            if !success {
                ok = false;
                break;
            }
        }

        let mut outputs = BTreeMap::new();
        outputs.insert("commands".to_string(), serde_json::json!(command_outputs));
        (cursor, ok, outputs)
    }

    fn dispatch_command(
        &mut self,
        step: &WorkflowStep,
        cmd: &Command,
        cursor: SimTime,
    ) -> (SimTime, bool, serde_json::Value) {
        let bindings = self.effective_bindings(step);
        let timeout = SimDuration::from_secs(cmd.timeout_s);

        let substituted = |text: Option<&String>| -> Result<String, String> {
            match text {
                None => Ok(String::new()),
                Some(t) => substitute_variables(t, &bindings).map_err(|e| e.to_string()),
            }
        };

        let fail = |cursor: SimTime, message: String, this: &mut Self| {
            this.failure.get_or_insert_with(|| message.clone());
            (
                cursor,
                false,
                serde_json::json!({ "error": message }),
            )
        };

        match cmd.kind.as_str() {
            COMMAND_MANUAL => {
                let instruction = match substituted(cmd.body.as_ref()) {
                    Ok(i) => i,
                    Err(e) => return fail(cursor, e, self),
                };
                let case_id = bindings.get(BINDING_CASE_ID).map(|v| v.value.clone());
                let response =
                    self.connectors
                        .dispatch_manual(case_id.as_deref(), &instruction, cursor);
                let latency = self.ctx.draw_latency();
                let end = cursor + latency;
                (
                    end,
                    response.is_success(),
                    serde_json::json!({
                        "kind": "manual",
                        "instruction": instruction,
                        "status": response.status,
                        "latency_s": latency.as_secs_f64(),
                    }),
                )
            }
            COMMAND_HTTP_API => {
                let url = match substituted(cmd.url.as_ref()) {
                    Ok(u) => u,
                    Err(e) => return fail(cursor, e, self),
                };
                let body = match substituted(cmd.body.as_ref()) {
                    Ok(b) => b,
                    Err(e) => return fail(cursor, e, self),
                };
                let mut headers = BTreeMap::new();
                for (name, value) in &cmd.headers {
                    match substitute_variables(value, &bindings) {
                        Ok(v) => {
                            headers.insert(name.clone(), v);
                        }
                        Err(e) => return fail(cursor, e.to_string(), self),
                    }
                }
                let request = ConnectorRequest {
                    method: cmd.method.clone().unwrap_or_else(|| "POST".to_string()),
                    url: url.clone(),
                    headers,
                    body,
                    dispatched_at: cursor,
                };
                let Some(response) = self.connectors.dispatch_http(&request) else {
                    return fail(cursor, format!("no connector registered for url `{url}`"), self);
                };

                let fixed_latency = response.latency_override.is_some();
                let latency = response
                    .latency_override
                    .unwrap_or_else(|| self.ctx.draw_latency());

                // A command that outlasts its timeout fails at exactly the
                // timeout instant.
                if latency > timeout {
                    let end = cursor + timeout;
                    let message = format!(
                        "command to `{url}` timed out after {}s",
                        timeout.as_secs_f64()
                    );
                    self.failure.get_or_insert_with(|| message.clone());
                    return (
                        end,
                        false,
                        serde_json::json!({
                            "kind": "http-api",
                            "url": url,
                            "error": message,
                            "timeout_s": timeout.as_secs_f64(),
                        }),
                    );
                }

                let end = cursor + latency;
                for (name, value) in &response.exports {
                    self.ctx.bind(name, value.clone());
                }
                let success = response.is_success();
                if !success {
                    self.failure.get_or_insert_with(|| {
                        format!("command to `{url}` returned status {}", response.status)
                    });
                }
                (
                    end,
                    success,
                    serde_json::json!({
                        "kind": "http-api",
                        "url": url,
                        "method": request.method,
                        "status": response.status,
                        "latency_s": latency.as_secs_f64(),
                        "fixed_latency": fixed_latency,
                        "response": response.body,
                    }),
                )
            }
            other => fail(cursor, format!("unsupported command kind `{other}`"), self),
        }
    }
}

#[cfg(test)]
mod tests;
