//! Incident case management: cases open with the standard containment /
//! eradication / recovery / reporting task list and resolve only when every
//! task completed. Each case is persisted as an append-only JSON-lines event
//! log.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

pub const STANDARD_TASKS: [&str; 4] = ["contain", "eradicate", "recover", "report"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Open,
    InProgress,
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTask {
    pub name: String,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseArtifacts {
    pub alert_id: String,
    pub victim_ip: Ipv4Addr,
    pub offender_ips: Vec<Ipv4Addr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentCase {
    pub case_id: String,
    pub title: String,
    pub created_at: SimTime,
    pub status: CaseStatus,
    pub tasks: Vec<CaseTask>,
    pub artifacts: CaseArtifacts,
}

impl IncidentCase {
    pub fn task(&self, name: &str) -> Option<&CaseTask> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn all_tasks_completed(&self) -> bool {
        self.tasks.iter().all(|t| t.status == TaskStatus::Completed)
    }
}

/// One entry of the append-only case log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CaseEvent {
    Created {
        at: SimTime,
        case_id: String,
        title: String,
        tasks: Vec<String>,
        artifacts: CaseArtifacts,
    },
    TaskAdded {
        at: SimTime,
        task: String,
    },
    TaskCompleted {
        at: SimTime,
        task: String,
    },
    StatusChanged {
        at: SimTime,
        status: CaseStatus,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("alert reference must not be empty")]
    EmptyAlertId,
    #[error("cannot resolve case `{case_id}`: task `{task}` is not completed")]
    IncompleteTask { case_id: String, task: String },
    #[error("case store i/o failure: {0}")]
    Storage(String),
}

/// In-memory case state plus the per-case JSON-lines event logs.
pub struct CaseStore {
    dir: Option<PathBuf>,
    cases: BTreeMap<String, IncidentCase>,
    by_alert: BTreeMap<String, String>,
    seq: u32,
}

impl CaseStore {
    /// `dir` is the directory for per-case event logs; None keeps the store
    /// purely in memory.
    pub fn new(dir: Option<PathBuf>) -> Self {
        CaseStore {
            dir,
            cases: BTreeMap::new(),
            by_alert: BTreeMap::new(),
            seq: 0,
        }
    }

    pub fn get(&self, case_id: &str) -> Option<&IncidentCase> {
        self.cases.get(case_id)
    }

    pub fn case_for_alert(&self, alert_id: &str) -> Option<&IncidentCase> {
        self.by_alert.get(alert_id).and_then(|id| self.cases.get(id))
    }

    pub fn cases(&self) -> impl Iterator<Item = &IncidentCase> {
        self.cases.values()
    }

    fn append_event(&self, case_id: &str, event: &CaseEvent) -> Result<(), CaseError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|e| CaseError::Storage(e.to_string()))?;
        let path = dir.join(format!("{case_id}.jsonl"));
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CaseError::Storage(e.to_string()))?;
        let line = serde_json::to_string(event).expect("event serializes");
        writeln!(file, "{line}").map_err(|e| CaseError::Storage(e.to_string()))
    }

    /// Opens a case with the standard task list. A second alert with the
    /// same id returns the existing case instead of a duplicate.
    pub fn open_case(
        &mut self,
        alert_id: &str,
        title: &str,
        victim_ip: Ipv4Addr,
        offender_ips: Vec<Ipv4Addr>,
        trace_ref: Option<String>,
        at: SimTime,
    ) -> Result<IncidentCase, CaseError> {
        if alert_id.is_empty() {
            return Err(CaseError::EmptyAlertId);
        }
        if let Some(existing) = self.by_alert.get(alert_id) {
            return Ok(self.cases[existing].clone());
        }

        self.seq += 1;
        let case_id = format!("CASE-{:04}", self.seq);
        let artifacts = CaseArtifacts {
            alert_id: alert_id.to_string(),
            victim_ip,
            offender_ips,
            trace_ref,
        };
        let case = IncidentCase {
            case_id: case_id.clone(),
            title: title.to_string(),
            created_at: at,
            status: CaseStatus::Open,
            tasks: STANDARD_TASKS
                .iter()
                .map(|name| CaseTask {
                    name: name.to_string(),
                    status: TaskStatus::Pending,
                    completed_at: None,
                })
                .collect(),
            artifacts: artifacts.clone(),
        };
        self.append_event(
            &case_id,
            &CaseEvent::Created {
                at,
                case_id: case_id.clone(),
                title: title.to_string(),
                tasks: STANDARD_TASKS.iter().map(|s| s.to_string()).collect(),
                artifacts,
            },
        )?;
        self.by_alert.insert(alert_id.to_string(), case_id.clone());
        self.cases.insert(case_id.clone(), case.clone());
        Ok(case)
    }

    /// Appends an ad-hoc task (manual playbook commands land here).
    pub fn add_task(&mut self, case_id: &str, name: &str, at: SimTime) -> Result<(), CaseError> {
        let case = self
            .cases
            .get_mut(case_id)
            .ok_or_else(|| CaseError::UnknownCase(case_id.to_string()))?;
        case.tasks.push(CaseTask {
            name: name.to_string(),
            status: TaskStatus::Pending,
            completed_at: None,
        });
        let event = CaseEvent::TaskAdded {
            at,
            task: name.to_string(),
        };
        self.append_event(case_id, &event)
    }

    /// Marks tasks completed and optionally resolves the case. Completing
    /// any task moves an open case to in_progress first; resolution requires
    /// every task completed.
    pub fn update_case(
        &mut self,
        case_id: &str,
        completed_tasks: &[String],
        resolve: bool,
        at: SimTime,
    ) -> Result<IncidentCase, CaseError> {
        if !self.cases.contains_key(case_id) {
            return Err(CaseError::UnknownCase(case_id.to_string()));
        }

        let mut events = Vec::new();
        {
            let case = self.cases.get_mut(case_id).expect("checked above");
            let mut any_marked = false;
            for name in completed_tasks {
                if let Some(task) = case.tasks.iter_mut().find(|t| &t.name == name) {
                    if task.status != TaskStatus::Completed {
                        task.status = TaskStatus::Completed;
                        task.completed_at = Some(at);
                        any_marked = true;
                        events.push(CaseEvent::TaskCompleted {
                            at,
                            task: name.clone(),
                        });
                    }
                }
            }
            if any_marked && case.status == CaseStatus::Open {
                case.status = CaseStatus::InProgress;
                events.push(CaseEvent::StatusChanged {
                    at,
                    status: CaseStatus::InProgress,
                });
            }
            if resolve {
                if let Some(pending) = case.tasks.iter().find(|t| t.status == TaskStatus::Pending)
                {
                    let task = pending.name.clone();
                    // Roll back nothing: marks above stand, resolution fails.
                    for e in &events {
                        self.append_event(case_id, e)?;
                    }
                    return Err(CaseError::IncompleteTask {
                        case_id: case_id.to_string(),
                        task,
                    });
                }
                if case.status != CaseStatus::Resolved {
                    case.status = CaseStatus::Resolved;
                    events.push(CaseEvent::StatusChanged {
                        at,
                        status: CaseStatus::Resolved,
                    });
                }
            }
        }
        for e in &events {
            self.append_event(case_id, e)?;
        }
        Ok(self.cases[case_id].clone())
    }

    pub fn set_trace_ref(&mut self, case_id: &str, trace_ref: &str) -> Result<(), CaseError> {
        let case = self
            .cases
            .get_mut(case_id)
            .ok_or_else(|| CaseError::UnknownCase(case_id.to_string()))?;
        case.artifacts.trace_ref = Some(trace_ref.to_string());
        Ok(())
    }

    /// Rebuilds a case by folding its event log; used by inspection tooling
    /// and tests.
    pub fn load_case(path: &Path) -> Result<IncidentCase, CaseError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CaseError::Storage(e.to_string()))?;
        let mut case: Option<IncidentCase> = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let event: CaseEvent =
                serde_json::from_str(line).map_err(|e| CaseError::Storage(e.to_string()))?;
            match event {
                CaseEvent::Created {
                    at,
                    case_id,
                    title,
                    tasks,
                    artifacts,
                } => {
                    case = Some(IncidentCase {
                        case_id,
                        title,
                        created_at: at,
                        status: CaseStatus::Open,
                        tasks: tasks
                            .into_iter()
                            .map(|name| CaseTask {
                                name,
                                status: TaskStatus::Pending,
                                completed_at: None,
                            })
                            .collect(),
                        artifacts,
                    });
                }
                CaseEvent::TaskAdded { at: _, task } => {
                    if let Some(c) = &mut case {
                        c.tasks.push(CaseTask {
                            name: task,
                            status: TaskStatus::Pending,
                            completed_at: None,
                        });
                    }
                }
                CaseEvent::TaskCompleted { at, task } => {
                    if let Some(c) = &mut case {
                        if let Some(t) = c.tasks.iter_mut().find(|t| t.name == task) {
                            t.status = TaskStatus::Completed;
                            t.completed_at = Some(at);
                        }
                    }
                }
                CaseEvent::StatusChanged { at: _, status } => {
                    if let Some(c) = &mut case {
                        c.status = status;
                    }
                }
            }
        }
        case.ok_or_else(|| CaseError::Storage("log has no created event".to_string()))
    }
}
