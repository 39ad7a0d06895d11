//! Structural validation of playbooks.
//!
//! Problems are reported as findings, never thrown; a playbook is valid iff
//! no finding has error severity. Any playbook accepted here executes in the
//! engine without graph-structure errors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    is_variable_name, ConditionExpr, Playbook, StepKind, Variable, WorkflowStep, COMMAND_HTTP_API,
    COMMAND_MANUAL, OP_EQUALS, OP_IN, OP_NOT_EQUALS, VAR_TYPE_INTEGER, VAR_TYPE_IPV4,
    VAR_TYPE_STRING,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One validation problem, anchored to a step id or field path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub findings: Vec<Finding>,
}

struct Checker<'a> {
    playbook: &'a Playbook,
    findings: Vec<Finding>,
}

impl<'a> Checker<'a> {
    fn error(&mut self, location: &str, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Error,
            location: location.to_string(),
            message: message.into(),
        });
    }

    fn warn(&mut self, location: &str, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Warning,
            location: location.to_string(),
            message: message.into(),
        });
    }
}

/// Validates every playbook invariant and reports all problems found.
pub fn validate(playbook: &Playbook) -> ValidationReport {
    let mut c = Checker {
        playbook,
        findings: Vec::new(),
    };

    check_steps(&mut c);
    check_variables(&mut c, &playbook.playbook_variables, "playbook_variables");
    for (id, step) in &playbook.workflow {
        check_variables(&mut c, &step.step_variables, &format!("{id}.step_variables"));
    }
    check_start(&mut c);
    let has_cycle = check_acyclic(&mut c);
    if !has_cycle {
        // Reachability and branch-region analysis assume a DAG.
        check_end_reachable(&mut c);
        check_regions(&mut c);
    }

    let valid = !c
        .findings
        .iter()
        .any(|f| f.severity == Severity::Error);
    ValidationReport {
        valid,
        findings: c.findings,
    }
}

fn check_start(c: &mut Checker) {
    let start_id = &c.playbook.workflow_start;
    match c.playbook.workflow.get(start_id) {
        None => c.error(
            "workflow_start",
            format!("workflow_start `{start_id}` does not exist in workflow"),
        ),
        Some(step) => {
            if step.step_kind() != Some(StepKind::Start) {
                c.error(
                    "workflow_start",
                    format!("workflow_start `{start_id}` must have kind `start`"),
                );
            }
        }
    }
}

fn check_steps(c: &mut Checker) {
    let workflow = &c.playbook.workflow;
    for (id, step) in workflow {
        let Some(kind) = step.step_kind() else {
            c.error(
                id,
                format!("unsupported construct: step kind `{}`", step.kind),
            );
            continue;
        };
        check_kind_fields(c, id, kind, step);
        check_references(c, id, step);
        if kind == StepKind::Action {
            check_commands(c, id, step);
            if let Some(agent) = &step.agent {
                if !c.playbook.agent_definitions.contains_key(agent) {
                    c.error(id, format!("agent `{agent}` is not defined"));
                }
            }
        }
        if kind == StepKind::IfCondition {
            if let Some(cond) = &step.condition {
                check_condition(c, id, cond);
            }
        }
    }
}

/// Field presence must match the step kind exactly; a step mixing fields of
/// two kinds is always rejected.
fn check_kind_fields(c: &mut Checker, id: &str, kind: StepKind, step: &WorkflowStep) {
    let forbid = |c: &mut Checker, present: bool, field: &str| {
        if present {
            c.error(
                id,
                format!("step kind `{kind}` must not carry field `{field}`"),
            );
        }
    };

    match kind {
        StepKind::Start => {
            if step.on_completion.is_none() {
                c.error(id, "start step requires on_completion");
            }
            forbid(c, !step.next_steps.is_empty(), "next_steps");
            forbid(c, step.condition.is_some(), "condition");
            forbid(c, step.on_true.is_some(), "on_true");
            forbid(c, step.on_false.is_some(), "on_false");
            forbid(c, !step.commands.is_empty(), "commands");
            forbid(c, step.agent.is_some(), "agent");
        }
        StepKind::End => {
            forbid(c, step.on_completion.is_some(), "on_completion");
            forbid(c, !step.next_steps.is_empty(), "next_steps");
            forbid(c, step.condition.is_some(), "condition");
            forbid(c, step.on_true.is_some(), "on_true");
            forbid(c, step.on_false.is_some(), "on_false");
            forbid(c, !step.commands.is_empty(), "commands");
            forbid(c, step.agent.is_some(), "agent");
        }
        StepKind::Action => {
            if step.commands.is_empty() {
                c.error(id, "action step requires at least one command");
            }
            forbid(c, !step.next_steps.is_empty(), "next_steps");
            forbid(c, step.condition.is_some(), "condition");
            forbid(c, step.on_true.is_some(), "on_true");
            forbid(c, step.on_false.is_some(), "on_false");
        }
        StepKind::Parallel => {
            if step.next_steps.is_empty() {
                c.error(id, "parallel step requires non-empty next_steps");
            }
            let mut seen = BTreeSet::new();
            for entry in &step.next_steps {
                if !seen.insert(entry) {
                    c.error(id, format!("parallel next_steps lists `{entry}` twice"));
                }
            }
            if step.on_completion.is_none() {
                c.error(id, "parallel step requires on_completion (join continuation)");
            }
            forbid(c, step.condition.is_some(), "condition");
            forbid(c, step.on_true.is_some(), "on_true");
            forbid(c, step.on_false.is_some(), "on_false");
            forbid(c, !step.commands.is_empty(), "commands");
            forbid(c, step.agent.is_some(), "agent");
        }
        StepKind::IfCondition => {
            if step.condition.is_none() {
                c.error(id, "if-condition step requires condition");
            }
            if step.on_true.is_none() {
                c.error(id, "if-condition step requires on_true");
            }
            if step.on_false.is_none() {
                c.error(id, "if-condition step requires on_false");
            }
            forbid(c, step.on_completion.is_some(), "on_completion");
            forbid(c, !step.next_steps.is_empty(), "next_steps");
            forbid(c, !step.commands.is_empty(), "commands");
            forbid(c, step.agent.is_some(), "agent");
        }
    }
}

fn check_references(c: &mut Checker, id: &str, step: &WorkflowStep) {
    let workflow = &c.playbook.workflow;
    let check = |c: &mut Checker, field: &str, target: &str| {
        if !workflow.contains_key(target) {
            c.error(
                id,
                format!("{field} references nonexistent step `{target}`"),
            );
        }
    };
    if let Some(t) = &step.on_completion {
        check(c, "on_completion", t);
    }
    for t in &step.next_steps {
        check(c, "next_steps", t);
    }
    if let Some(t) = &step.on_true {
        check(c, "on_true", t);
    }
    if let Some(t) = &step.on_false {
        check(c, "on_false", t);
    }
}

fn check_commands(c: &mut Checker, id: &str, step: &WorkflowStep) {
    for (i, cmd) in step.commands.iter().enumerate() {
        let loc = format!("{id}.commands[{i}]");
        match cmd.kind.as_str() {
            COMMAND_HTTP_API => {
                if cmd.method.as_deref().unwrap_or("").is_empty() {
                    c.error(&loc, "http-api command requires a non-empty method");
                }
                if cmd.url.as_deref().unwrap_or("").is_empty() {
                    c.error(&loc, "http-api command requires a non-empty url");
                }
            }
            COMMAND_MANUAL => {
                if cmd.body.as_deref().unwrap_or("").is_empty() {
                    c.error(&loc, "manual command requires a non-empty instruction body");
                }
            }
            other => {
                c.error(&loc, format!("unsupported construct: command kind `{other}`"));
            }
        }
    }
}

fn check_condition(c: &mut Checker, id: &str, cond: &ConditionExpr) {
    if !c.playbook.playbook_variables.contains_key(&cond.lhs) {
        c.error(
            id,
            format!("condition lhs `{}` names no declared variable", cond.lhs),
        );
    }
    match cond.operator.as_str() {
        OP_EQUALS | OP_NOT_EQUALS => {
            if cond.rhs.is_array() || cond.rhs.is_object() {
                c.error(id, format!("operator `{}` requires a scalar rhs", cond.operator));
            }
        }
        OP_IN => {
            let ok = cond
                .rhs
                .as_array()
                .is_some_and(|xs| xs.iter().all(|x| !x.is_array() && !x.is_object()));
            if !ok {
                c.error(id, "operator `in` requires an array of scalars as rhs");
            }
        }
        other => {
            c.error(id, format!("unsupported construct: operator `{other}`"));
        }
    }
}

fn check_variables(c: &mut Checker, vars: &BTreeMap<String, Variable>, location: &str) {
    for (name, var) in vars {
        let loc = format!("{location}.{name}");
        if !is_variable_name(name) {
            c.error(
                &loc,
                format!("variable name `{name}` must match the `__name__` convention"),
            );
        }
        match var.var_type.as_str() {
            VAR_TYPE_STRING => {}
            VAR_TYPE_INTEGER => {
                if !var.value.is_empty() && var.value.parse::<i64>().is_err() {
                    c.error(
                        &loc,
                        format!("value `{}` does not parse as integer", var.value),
                    );
                }
            }
            VAR_TYPE_IPV4 => {
                if !var.value.is_empty() && var.value.parse::<std::net::Ipv4Addr>().is_err() {
                    c.error(
                        &loc,
                        format!("value `{}` does not parse as ipv4-addr", var.value),
                    );
                }
            }
            other => {
                c.error(&loc, format!("unsupported construct: variable type `{other}`"));
            }
        }
    }
}

fn successors(step: &WorkflowStep) -> Vec<&str> {
    let mut out = Vec::new();
    if let Some(t) = &step.on_completion {
        out.push(t.as_str());
    }
    out.extend(step.next_steps.iter().map(String::as_str));
    if let Some(t) = &step.on_true {
        out.push(t.as_str());
    }
    if let Some(t) = &step.on_false {
        out.push(t.as_str());
    }
    out
}

/// Detects cycles over all edge kinds. Returns true when a cycle exists.
fn check_acyclic(c: &mut Checker) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let workflow = &c.playbook.workflow;
    let mut marks: BTreeMap<&str, Mark> = workflow.keys().map(|k| (k.as_str(), Mark::White)).collect();
    let mut cycle_at: Option<String> = None;

    // Iterative DFS with an explicit stack; grey nodes are on the current path.
    for root in workflow.keys() {
        if marks[root.as_str()] != Mark::White {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(root.as_str(), 0)];
        marks.insert(root.as_str(), Mark::Grey);
        while let Some((node, idx)) = stack.pop() {
            let succs: Vec<&str> = workflow
                .get(node)
                .map(successors)
                .unwrap_or_default()
                .into_iter()
                .filter(|s| workflow.contains_key(*s))
                .collect();
            if idx < succs.len() {
                stack.push((node, idx + 1));
                let next = succs[idx];
                match marks[next] {
                    Mark::White => {
                        marks.insert(next, Mark::Grey);
                        stack.push((next, 0));
                    }
                    Mark::Grey => {
                        cycle_at.get_or_insert_with(|| next.to_string());
                    }
                    Mark::Black => {}
                }
            } else {
                marks.insert(node, Mark::Black);
            }
        }
    }

    if let Some(at) = cycle_at {
        c.error(&at, format!("workflow cycle passing through step `{at}`"));
        true
    } else {
        false
    }
}

fn reachable_from<'b>(workflow: &'b BTreeMap<String, WorkflowStep>, start: &str) -> BTreeSet<&'b str> {
    let mut seen = BTreeSet::new();
    let Some((root, _)) = workflow.get_key_value(start) else {
        return seen;
    };
    let mut stack = vec![root.as_str()];
    while let Some(node) = stack.pop() {
        if !seen.insert(node) {
            continue;
        }
        if let Some(step) = workflow.get(node) {
            for s in successors(step) {
                if workflow.contains_key(s) {
                    stack.push(s);
                }
            }
        }
    }
    seen
}

fn check_end_reachable(c: &mut Checker) {
    let workflow = &c.playbook.workflow;
    let reached = reachable_from(workflow, &c.playbook.workflow_start);
    let end_reached = reached.iter().any(|id| {
        workflow
            .get(*id)
            .and_then(WorkflowStep::step_kind)
            .map(|k| k == StepKind::End)
            .unwrap_or(false)
    });
    if !end_reached {
        c.error(
            "workflow",
            "no reachable end step from workflow_start",
        );
    }
    for id in workflow.keys() {
        if !reached.contains(id.as_str()) {
            c.warn(id, "step unreachable from workflow_start");
        }
    }
}

/// Checks the parallel branch regions: branches of a parallel step are the
/// chains reachable from its next_steps entries; they must terminate inside
/// the branch (a non-end step without on_completion), never contain an end
/// step, never share steps with a sibling branch, and never re-enter the
/// main workflow spine. The join continuation is the parallel step's own
/// on_completion.
fn check_regions(c: &mut Checker) {
    let workflow = &c.playbook.workflow;

    // Spine: steps reached from workflow_start without descending into
    // parallel branches (parallel steps contribute only their join edge).
    let mut spine: BTreeSet<&str> = BTreeSet::new();
    let mut stack = vec![c.playbook.workflow_start.as_str()];
    while let Some(node) = stack.pop() {
        let Some((key, step)) = workflow.get_key_value(node) else {
            continue;
        };
        if !spine.insert(key.as_str()) {
            continue;
        }
        if step.step_kind() == Some(StepKind::Parallel) {
            if let Some(t) = &step.on_completion {
                stack.push(t.as_str());
            }
        } else {
            for s in successors(step) {
                stack.push(s);
            }
        }
    }

    let mut all_branch_steps: BTreeSet<&str> = BTreeSet::new();

    for (id, step) in workflow {
        if step.step_kind() != Some(StepKind::Parallel) {
            continue;
        }
        let mut seen_in_this_parallel: BTreeSet<&str> = BTreeSet::new();
        for entry in &step.next_steps {
            if !workflow.contains_key(entry) {
                continue; // dangling reference reported elsewhere
            }
            let region = reachable_from(workflow, entry);
            for node in &region {
                let node_step = &workflow[*node];
                if node_step.step_kind() == Some(StepKind::End) {
                    c.error(
                        id,
                        format!("end step `{node}` inside parallel branch `{entry}`"),
                    );
                }
                if spine.contains(node) {
                    c.error(
                        id,
                        format!("parallel branch `{entry}` re-enters main workflow at `{node}`"),
                    );
                }
                if !seen_in_this_parallel.insert(node) {
                    c.error(
                        id,
                        format!("parallel branches share step `{node}`"),
                    );
                }
                all_branch_steps.insert(node);
            }
        }
    }

    // A chain may only stop without an end step inside a parallel branch.
    for (id, step) in workflow {
        let dangles = match step.step_kind() {
            Some(StepKind::Action) => step.on_completion.is_none(),
            _ => false,
        };
        if dangles && !all_branch_steps.contains(id.as_str()) {
            c.error(
                id,
                "action chain ends without reaching an end step (missing on_completion)",
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{deserialize_playbook, parse_playbook};
    use super::*;

    fn report_of(doc: &str) -> ValidationReport {
        validate(&deserialize_playbook(doc).expect("deserializes"))
    }

    fn has_error_containing(report: &ValidationReport, needle: &str) -> bool {
        report
            .findings
            .iter()
            .any(|f| f.severity == Severity::Error && f.message.contains(needle))
    }

    #[test]
    fn minimal_playbook_is_valid_with_zero_findings() {
        let report = report_of(super::super::tests::minimal_playbook_json());
        assert!(report.valid);
        assert!(report.findings.is_empty());
    }

    #[test]
    fn cycle_is_reported() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "s1"},
                "s1": {"kind": "action", "commands": [{"kind": "manual", "body": "x"}], "on_completion": "s2"},
                "s2": {"kind": "action", "commands": [{"kind": "manual", "body": "y"}], "on_completion": "s1"},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(!report.valid);
        assert!(has_error_containing(&report, "workflow cycle"), "{report:?}");
    }

    #[test]
    fn missing_end_is_reported() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "a"},
                "a": {"kind": "action", "commands": [{"kind": "manual", "body": "x"}], "on_completion": "b"},
                "b": {"kind": "action", "commands": [{"kind": "manual", "body": "y"}]}
            }
        }"#;
        let report = report_of(doc);
        assert!(!report.valid);
        assert!(has_error_containing(&report, "no reachable end step"), "{report:?}");
    }

    #[test]
    fn two_kind_field_mix_is_rejected() {
        // A parallel step that also carries commands.
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "par"},
                "par": {
                    "kind": "parallel",
                    "next_steps": ["a"],
                    "on_completion": "e",
                    "commands": [{"kind": "manual", "body": "x"}]
                },
                "a": {"kind": "action", "commands": [{"kind": "manual", "body": "y"}]},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(has_error_containing(&report, "must not carry field `commands`"));
    }

    #[test]
    fn duplicate_parallel_entries_rejected() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "par"},
                "par": {"kind": "parallel", "next_steps": ["a", "a"], "on_completion": "e"},
                "a": {"kind": "action", "commands": [{"kind": "manual", "body": "x"}]},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(has_error_containing(&report, "twice"));
    }

    #[test]
    fn unsupported_step_kind_rejected() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "w"},
                "w": {"kind": "while-condition", "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(has_error_containing(&report, "unsupported construct"));
    }

    #[test]
    fn bad_variable_name_and_value_rejected() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "playbook_variables": {
                "victim": {"type": "string", "value": "x"},
                "__port__": {"type": "integer", "value": "not-a-number"},
                "__ip__": {"type": "ipv4-addr", "value": "999.1.1.1"}
            },
            "workflow": {
                "s": {"kind": "start", "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(has_error_containing(&report, "`__name__` convention"));
        assert!(has_error_containing(&report, "does not parse as integer"));
        assert!(has_error_containing(&report, "does not parse as ipv4-addr"));
    }

    #[test]
    fn condition_lhs_must_be_declared() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "c"},
                "c": {
                    "kind": "if-condition",
                    "condition": {"lhs": "__ghost__", "operator": "equals", "rhs": "x"},
                    "on_true": "e", "on_false": "e"
                },
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(has_error_containing(&report, "names no declared variable"));
    }

    #[test]
    fn branch_reentering_spine_is_rejected() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "par"},
                "par": {"kind": "parallel", "next_steps": ["a"], "on_completion": "j"},
                "a": {"kind": "action", "commands": [{"kind": "manual", "body": "x"}], "on_completion": "j"},
                "j": {"kind": "action", "commands": [{"kind": "manual", "body": "y"}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(has_error_containing(&report, "re-enters main workflow"));
    }

    #[test]
    fn dangling_chain_outside_branch_is_rejected() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "a"},
                "a": {"kind": "action", "commands": [{"kind": "manual", "body": "x"}]},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(has_error_containing(&report, "ends without reaching an end step"));
    }

    #[test]
    fn unreachable_step_is_a_warning_only() {
        let doc = r#"{
            "id": "p", "name": "p", "workflow_start": "s",
            "workflow": {
                "s": {"kind": "start", "on_completion": "e"},
                "orphan": {"kind": "action", "commands": [{"kind": "manual", "body": "x"}], "on_completion": "e"},
                "e": {"kind": "end"}
            }
        }"#;
        let report = report_of(doc);
        assert!(report.valid);
        assert!(report
            .findings
            .iter()
            .any(|f| f.severity == Severity::Warning && f.message.contains("unreachable")));
    }

    #[test]
    fn valid_iff_no_error_finding() {
        let ok = parse_playbook(super::super::tests::minimal_playbook_json()).unwrap();
        let report = validate(&ok);
        assert_eq!(
            report.valid,
            !report.findings.iter().any(|f| f.severity == Severity::Error)
        );
    }
}
