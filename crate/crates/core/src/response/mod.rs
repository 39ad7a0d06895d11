//! Response actions behind the playbook connectors: case management,
//! notifications, standby Headend activation, firmware reinstallation, and
//! NIS2-phased incident reporting.

pub mod case;
pub mod firmware;
pub mod notify;
pub mod report;
pub mod standby;

pub use case::{
    CaseArtifacts, CaseError, CaseEvent, CaseStatus, CaseStore, CaseTask, IncidentCase,
    TaskStatus, STANDARD_TASKS,
};
pub use firmware::{
    reinstall_firmware, FirmwareDurations, FirmwareError, FirmwareJob, FirmwarePhase,
};
pub use notify::{ChannelConfig, Notification, NotificationKind, Notifier, NotifyError};
pub use report::{
    generate_consolidated, generate_report, render_consolidated_text, render_text,
    ConsolidatedReport, IncidentReport, MitigationEntry, ReportError, ReportPhase,
};
pub use standby::{activate_standby_headend, StandbyError};
