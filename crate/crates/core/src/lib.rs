//! Incident-response automation testbed for Advanced Metering
//! Infrastructure.
//!
//! The crate wires together an emulated AMI (smart meters polled by a
//! Headend over DLMS/COSEM-style sessions), network detection with CEF
//! alerting, a CACAO-subset playbook engine, a mock SDN switch for VLAN
//! isolation, response-action connectors (case management, notification,
//! firmware, standby Headend, NIS2 reporting), and MTTR instrumentation.
//! Everything runs on a virtual clock for deterministic, seedable runs.

pub mod cacao;
pub mod connectors;
pub mod engine;
pub mod metrics;
pub mod ndr;
pub mod pipeline;
pub mod response;
pub mod scenario;
pub mod sdn;
pub mod sim;
pub mod time;
