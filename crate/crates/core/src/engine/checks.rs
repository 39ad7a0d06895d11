//! Structural checks over executed traces, written against the workflow
//! graph rather than the executor, so test suites can verify engine output
//! independently.

use std::collections::BTreeMap;

use super::{ExecutionTrace, StepRecord, StepStatus, TraceStatus};
use crate::cacao::{Playbook, StepKind};

/// Verifies the trace invariants against the playbook that produced it:
///
/// * exactly one start record, and exactly one end record on success;
/// * `end_time >= start_time` for every record;
/// * parallel-join correctness: branches start at the fork instant and all
///   end no later than the join continuation starts;
/// * branch exclusivity: an if-condition leads to executed records in
///   exactly one of its arms;
/// * causality: a step never starts before an executed predecessor ended.
pub fn verify_trace(playbook: &Playbook, trace: &ExecutionTrace) -> Result<(), String> {
    let executed: BTreeMap<&str, &StepRecord> = trace
        .records
        .iter()
        .filter(|r| r.status != StepStatus::Skipped)
        .map(|r| (r.step_id.as_str(), r))
        .collect();

    let starts = trace
        .records
        .iter()
        .filter(|r| r.kind == "start" && r.status != StepStatus::Skipped)
        .count();
    if starts != 1 {
        return Err(format!("trace has {starts} start records, expected 1"));
    }
    let ends = trace
        .records
        .iter()
        .filter(|r| r.kind == "end" && r.status != StepStatus::Skipped)
        .count();
    if trace.status == TraceStatus::Succeeded && ends != 1 {
        return Err(format!("successful trace has {ends} end records, expected 1"));
    }

    for r in &trace.records {
        if r.end_time < r.start_time {
            return Err(format!("record `{}` ends before it starts", r.step_id));
        }
    }

    for (id, step) in &playbook.workflow {
        let Some(kind) = step.step_kind() else { continue };
        match kind {
            StepKind::Parallel => {
                let Some(fork_rec) = executed.get(id.as_str()) else {
                    continue;
                };
                let fork = fork_rec.start_time;
                let mut latest_branch_end = fork;
                for entry in &step.next_steps {
                    if let Some(branch_rec) = executed.get(entry.as_str()) {
                        if branch_rec.start_time != fork {
                            return Err(format!(
                                "branch `{entry}` of `{id}` starts at {} instead of the fork {}",
                                branch_rec.start_time, fork
                            ));
                        }
                        latest_branch_end = latest_branch_end.max(chain_end(
                            playbook, &executed, entry,
                        ));
                    }
                }
                if let Some(join_rec) = step
                    .on_completion
                    .as_ref()
                    .and_then(|j| executed.get(j.as_str()))
                {
                    if latest_branch_end > join_rec.start_time {
                        return Err(format!(
                            "join continuation of `{id}` starts at {} before branches end at {}",
                            join_rec.start_time, latest_branch_end
                        ));
                    }
                }
            }
            StepKind::IfCondition => {
                let Some(if_rec) = executed.get(id.as_str()) else {
                    continue;
                };
                if if_rec.status != StepStatus::Succeeded {
                    continue;
                }
                let arm_executed = |arm: &Option<String>| {
                    arm.as_ref()
                        .is_some_and(|a| executed.contains_key(a.as_str()))
                };
                let true_taken = arm_executed(&step.on_true);
                let false_taken = arm_executed(&step.on_false);
                if true_taken == false_taken {
                    return Err(format!(
                        "if-condition `{id}` executed {} arms, expected exactly 1",
                        [true_taken, false_taken].iter().filter(|x| **x).count()
                    ));
                }
            }
            _ => {}
        }
    }

    // Causality over every edge kind.
    for (id, step) in &playbook.workflow {
        let Some(pred) = executed.get(id.as_str()) else {
            continue;
        };
        let mut targets: Vec<&String> = Vec::new();
        targets.extend(step.on_completion.iter());
        targets.extend(step.next_steps.iter());
        targets.extend(step.on_true.iter());
        targets.extend(step.on_false.iter());
        for target in targets {
            if let Some(succ) = executed.get(target.as_str()) {
                if succ.start_time < pred.end_time
                    && !(step.step_kind() == Some(StepKind::IfCondition))
                {
                    // If-condition arms share the condition's instant, which
                    // is why the exemption above exists; everything else must
                    // strictly follow its predecessor.
                    return Err(format!(
                        "step `{target}` starts at {} before predecessor `{id}` ends at {}",
                        succ.start_time, pred.end_time
                    ));
                }
            }
        }
    }

    Ok(())
}

/// Latest end time of the executed records in the chain rooted at `entry`
/// (the records of a parallel branch).
fn chain_end(
    playbook: &Playbook,
    executed: &BTreeMap<&str, &StepRecord>,
    entry: &str,
) -> crate::time::SimTime {
    let mut latest = crate::time::SimTime::ZERO;
    let mut stack = vec![entry.to_string()];
    let mut seen = std::collections::BTreeSet::new();
    while let Some(id) = stack.pop() {
        if !seen.insert(id.clone()) {
            continue;
        }
        if let Some(rec) = executed.get(id.as_str()) {
            latest = latest.max(rec.end_time);
        }
        if let Some(step) = playbook.workflow.get(&id) {
            stack.extend(step.on_completion.iter().cloned());
            stack.extend(step.next_steps.iter().cloned());
            stack.extend(step.on_true.iter().cloned());
            stack.extend(step.on_false.iter().cloned());
        }
    }
    latest
}
