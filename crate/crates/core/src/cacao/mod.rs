//! Playbook data model for the CACAO subset used by the response workflow.
//!
//! A playbook is a directed acyclic workflow of typed steps (start, end,
//! action, parallel, if-condition) plus named variables and agent targets.
//! Documents are UTF-8 JSON; unknown top-level keys are preserved so fuller
//! CACAO documents survive a parse/serialize round trip.

mod substitute;
mod validate;

pub use substitute::{substitute_variables, SubstituteError};
pub use validate::{validate, Finding, Severity, ValidationReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Step kinds supported by the subset. Anything else is an unsupported
/// construct and rejected by validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    Start,
    End,
    Action,
    Parallel,
    IfCondition,
}

impl StepKind {
    pub fn parse(s: &str) -> Option<StepKind> {
        match s {
            "start" => Some(StepKind::Start),
            "end" => Some(StepKind::End),
            "action" => Some(StepKind::Action),
            "parallel" => Some(StepKind::Parallel),
            "if-condition" => Some(StepKind::IfCondition),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Start => "start",
            StepKind::End => "end",
            StepKind::Action => "action",
            StepKind::Parallel => "parallel",
            StepKind::IfCondition => "if-condition",
        }
    }
}

impl std::fmt::Display for StepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A workflow step. Field presence must match the step kind; `validate`
/// enforces the exact combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowStep {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Next step for start/action steps; for parallel steps the join
    /// continuation that runs after every branch completed. Action steps
    /// inside a parallel branch omit it to terminate the branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_completion: Option<String>,
    /// Branch entry points of a parallel step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub next_steps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_true: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_false: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commands: Vec<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub step_variables: BTreeMap<String, Variable>,
}

impl WorkflowStep {
    pub fn of_kind(kind: StepKind) -> Self {
        WorkflowStep {
            kind: kind.as_str().to_string(),
            name: None,
            on_completion: None,
            next_steps: Vec::new(),
            condition: None,
            on_true: None,
            on_false: None,
            commands: Vec::new(),
            agent: None,
            step_variables: BTreeMap::new(),
        }
    }

    pub fn step_kind(&self) -> Option<StepKind> {
        StepKind::parse(&self.kind)
    }
}

/// A dispatchable command on an action step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Target URL; may contain `__name__` placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
    /// Request body for http-api commands, instruction text for manual
    /// commands; may contain `__name__` placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    /// Dispatch timeout in virtual seconds.
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    30
}

pub const COMMAND_HTTP_API: &str = "http-api";
pub const COMMAND_MANUAL: &str = "manual";

impl Command {
    pub fn http(method: &str, url: &str, body: &str) -> Self {
        Command {
            kind: COMMAND_HTTP_API.to_string(),
            method: Some(method.to_string()),
            url: Some(url.to_string()),
            headers: BTreeMap::new(),
            body: Some(body.to_string()),
            timeout_s: default_timeout_s(),
        }
    }

    pub fn manual(instruction: &str) -> Self {
        Command {
            kind: COMMAND_MANUAL.to_string(),
            method: None,
            url: None,
            headers: BTreeMap::new(),
            body: Some(instruction.to_string()),
            timeout_s: default_timeout_s(),
        }
    }
}

/// Declared playbook variable. The map key is the variable name and must
/// follow the `__name__` delimiter convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variable {
    #[serde(rename = "type")]
    pub var_type: String,
    #[serde(default)]
    pub value: String,
    #[serde(default)]
    pub constant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

pub const VAR_TYPE_STRING: &str = "string";
pub const VAR_TYPE_INTEGER: &str = "integer";
pub const VAR_TYPE_IPV4: &str = "ipv4-addr";

impl Variable {
    pub fn string(value: &str) -> Self {
        Variable {
            var_type: VAR_TYPE_STRING.to_string(),
            value: value.to_string(),
            constant: false,
            description: None,
        }
    }
}

/// Returns true when `name` follows the `__name__` delimiter convention.
pub fn is_variable_name(name: &str) -> bool {
    let Some(inner) = name
        .strip_prefix("__")
        .and_then(|s| s.strip_suffix("__"))
    else {
        return false;
    };
    !inner.is_empty()
        && !inner.starts_with('_')
        && !inner.ends_with('_')
        && inner
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Branch predicate of an if-condition step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionExpr {
    /// Name of a declared variable (`__name__`).
    pub lhs: String,
    /// One of `equals`, `not-equals`, `in`.
    pub operator: String,
    /// Scalar literal for equals/not-equals, array of scalars for `in`.
    pub rhs: serde_json::Value,
}

pub const OP_EQUALS: &str = "equals";
pub const OP_NOT_EQUALS: &str = "not-equals";
pub const OP_IN: &str = "in";

/// Execution target referenced by action steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTarget {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// A CACAO-subset playbook document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Playbook {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub playbook_variables: BTreeMap<String, Variable>,
    pub workflow_start: String,
    pub workflow: BTreeMap<String, WorkflowStep>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub agent_definitions: BTreeMap<String, AgentTarget>,
    /// Unknown top-level keys, preserved verbatim for round-tripping.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Errors raised while turning a JSON document into a [`Playbook`].
#[derive(Debug, Error)]
pub enum ParseError {
    /// The document is not syntactically valid JSON.
    #[error("playbook syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    /// The document is JSON but does not match the playbook schema.
    #[error("playbook schema error: {0}")]
    Schema(String),
    /// The document parsed but violates playbook invariants.
    #[error("invalid playbook: {}", format_findings(.0))]
    Invalid(ValidationReport),
}

fn format_findings(report: &ValidationReport) -> String {
    report
        .findings
        .iter()
        .filter(|f| f.severity == Severity::Error)
        .map(|f| format!("[{}] {}", f.location, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses and validates a playbook document.
///
/// Rejects documents that violate any structural invariant; the error lists
/// every finding so authors can fix a playbook in one pass.
pub fn parse_playbook(text: &str) -> Result<Playbook, ParseError> {
    let playbook = deserialize_playbook(text)?;
    let report = validate(&playbook);
    if report.valid {
        Ok(playbook)
    } else {
        Err(ParseError::Invalid(report))
    }
}

/// Deserialization without invariant checks. Used by `parse_playbook` and by
/// tests that exercise `validate` on malformed inputs directly.
pub fn deserialize_playbook(text: &str) -> Result<Playbook, ParseError> {
    match serde_json::from_str::<Playbook>(text) {
        Ok(p) => Ok(p),
        Err(e) if e.is_syntax() || e.is_eof() => Err(ParseError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }),
        Err(e) => Err(ParseError::Schema(e.to_string())),
    }
}

/// Serializes a playbook to a pretty-printed UTF-8 JSON document.
///
/// Output is deterministic: struct fields keep declaration order and all
/// maps are sorted by key, so serializing twice yields identical bytes and
/// `parse_playbook(serialize(p)) == p`.
pub fn serialize(playbook: &Playbook) -> String {
    let mut out = serde_json::to_string_pretty(playbook).expect("playbook serializes");
    out.push('\n');
    out
}
