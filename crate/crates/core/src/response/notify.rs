//! IR-team notifications. The mock appends one JSON line per message to the
//! notification log; the channel abstraction keeps the playbooks identical
//! whether the sink is a file or a real messaging integration.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationKind {
    Triggered,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub kind: NotificationKind,
    pub channel: String,
    pub recipient: String,
    pub case_id: String,
    pub playbook_id: String,
    pub body: String,
    pub sent_at: SimTime,
    /// Pivot links for the responder (trace file, alert log).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pivots: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum NotifyError {
    #[error("channel `{0}` is not configured")]
    UnknownChannel(String),
    #[error("resolved notifications must reference a case")]
    MissingCase,
    #[error("resolved notifications must carry pivot links")]
    MissingPivots,
    #[error("notification sink failure: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub recipient: String,
}

/// Configured channels plus the file sink.
pub struct Notifier {
    channels: BTreeMap<String, ChannelConfig>,
    sink: Option<Box<dyn Write + Send>>,
    sent: Vec<Notification>,
}

impl Notifier {
    pub fn new(channels: BTreeMap<String, ChannelConfig>) -> Self {
        Notifier {
            channels,
            sink: None,
            sent: Vec::new(),
        }
    }

    pub fn with_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn sent(&self) -> &[Notification] {
        &self.sent
    }

    pub fn notify(
        &mut self,
        kind: NotificationKind,
        channel: &str,
        case_id: &str,
        playbook_id: &str,
        body: &str,
        pivots: Vec<String>,
        at: SimTime,
    ) -> Result<Notification, NotifyError> {
        let config = self
            .channels
            .get(channel)
            .ok_or_else(|| NotifyError::UnknownChannel(channel.to_string()))?;
        if kind == NotificationKind::Resolved {
            if case_id.is_empty() {
                return Err(NotifyError::MissingCase);
            }
            if pivots.is_empty() {
                return Err(NotifyError::MissingPivots);
            }
        }
        let notification = Notification {
            kind,
            channel: channel.to_string(),
            recipient: config.recipient.clone(),
            case_id: case_id.to_string(),
            playbook_id: playbook_id.to_string(),
            body: body.to_string(),
            sent_at: at,
            pivots,
        };
        if let Some(sink) = &mut self.sink {
            let line = serde_json::to_string(&notification).expect("notification serializes");
            writeln!(sink, "{line}").map_err(|e| NotifyError::Sink(e.to_string()))?;
            sink.flush().map_err(|e| NotifyError::Sink(e.to_string()))?;
        }
        self.sent.push(notification.clone());
        Ok(notification)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn notifier() -> Notifier {
        Notifier::new(
            [(
                "ir-team".to_string(),
                ChannelConfig {
                    recipient: "soc@utility.example".to_string(),
                },
            )]
            .into_iter()
            .collect(),
        )
    }

    #[test]
    fn triggered_notification_names_playbook_and_case() {
        let mut n = notifier();
        let sent = n
            .notify(
                NotificationKind::Triggered,
                "ir-team",
                "CASE-0001",
                "playbook--fdi-response",
                "incident response started",
                vec![],
                SimTime::from_secs(12),
            )
            .unwrap();
        assert_eq!(sent.case_id, "CASE-0001");
        assert_eq!(sent.playbook_id, "playbook--fdi-response");
        assert_eq!(sent.recipient, "soc@utility.example");
    }

    #[test]
    fn resolved_notification_requires_pivots() {
        let mut n = notifier();
        let err = n
            .notify(
                NotificationKind::Resolved,
                "ir-team",
                "CASE-0001",
                "pb",
                "done",
                vec![],
                SimTime::ZERO,
            )
            .unwrap_err();
        assert_eq!(err, NotifyError::MissingPivots);

        let ok = n
            .notify(
                NotificationKind::Resolved,
                "ir-team",
                "CASE-0001",
                "pb",
                "done",
                vec!["traces/trace_ALERT-0001.json".to_string()],
                SimTime::ZERO,
            )
            .unwrap();
        assert!(ok.pivots[0].contains("trace_ALERT-0001"));
    }

    #[test]
    fn unknown_channel_is_an_error() {
        let mut n = notifier();
        let err = n
            .notify(
                NotificationKind::Triggered,
                "pager",
                "CASE-0001",
                "pb",
                "x",
                vec![],
                SimTime::ZERO,
            )
            .unwrap_err();
        assert_eq!(err, NotifyError::UnknownChannel("pager".to_string()));
    }
}
