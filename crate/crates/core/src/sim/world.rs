//! Shared AMI inventory state: meters, Headends, and in-flight firmware
//! work. Connectors and the simulator both mutate it, serialized behind a
//! mutex by the pipeline.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::meter::{MeterState, SmartMeter};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadendInfo {
    pub name: String,
    pub ip: Ipv4Addr,
}

/// Firmware work that finishes later on the virtual clock.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingFirmware {
    pub meter_id: String,
    pub target_version: String,
    pub done_at: SimTime,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("unknown meter `{0}`")]
    UnknownMeter(String),
    #[error("unknown host {0}")]
    UnknownHost(Ipv4Addr),
}

#[derive(Debug)]
pub struct AmiWorld {
    /// Inventory in polling order.
    pub meters: Vec<SmartMeter>,
    pub primary_headend: HeadendInfo,
    pub standby_headend: Option<HeadendInfo>,
    /// Session initiator for subsequent polls.
    pub active_headend: Ipv4Addr,
    /// Set while an attack window has the Headend under adversary control.
    pub headend_compromised: bool,
    /// Set when detection implicates the Headend; gates standby activation.
    pub headend_suspicious: bool,
    pending_firmware: Vec<PendingFirmware>,
}

impl AmiWorld {
    pub fn new(
        meters: Vec<SmartMeter>,
        primary_headend: HeadendInfo,
        standby_headend: Option<HeadendInfo>,
    ) -> Self {
        let active = primary_headend.ip;
        AmiWorld {
            meters,
            primary_headend,
            standby_headend,
            active_headend: active,
            headend_compromised: false,
            headend_suspicious: false,
            pending_firmware: Vec::new(),
        }
    }

    pub fn meter(&self, meter_id: &str) -> Option<&SmartMeter> {
        self.meters.iter().find(|m| m.meter_id == meter_id)
    }

    pub fn meter_mut(&mut self, meter_id: &str) -> Option<&mut SmartMeter> {
        self.meters.iter_mut().find(|m| m.meter_id == meter_id)
    }

    pub fn meter_by_ip(&self, ip: Ipv4Addr) -> Option<&SmartMeter> {
        self.meters.iter().find(|m| m.ip == ip)
    }

    pub fn meter_by_ip_mut(&mut self, ip: Ipv4Addr) -> Option<&mut SmartMeter> {
        self.meters.iter_mut().find(|m| m.ip == ip)
    }

    pub fn is_headend_ip(&self, ip: Ipv4Addr) -> bool {
        ip == self.primary_headend.ip
            || self.standby_headend.as_ref().is_some_and(|h| h.ip == ip)
    }

    /// Every host ip known to the inventory.
    pub fn host_ips(&self) -> Vec<Ipv4Addr> {
        let mut ips: Vec<Ipv4Addr> = self.meters.iter().map(|m| m.ip).collect();
        ips.push(self.primary_headend.ip);
        if let Some(h) = &self.standby_headend {
            ips.push(h.ip);
        }
        ips
    }

    /// Marks a meter compromised; idempotent for already-compromised meters.
    pub fn compromise_meter(&mut self, meter_id: &str) -> Result<(), WorldError> {
        let meter = self
            .meter_mut(meter_id)
            .ok_or_else(|| WorldError::UnknownMeter(meter_id.to_string()))?;
        if meter.state == MeterState::Operational {
            meter
                .transition(MeterState::Compromised)
                .expect("operational -> compromised is legal");
        }
        Ok(())
    }

    pub fn register_firmware(&mut self, pending: PendingFirmware) {
        self.pending_firmware.push(pending);
    }

    pub fn firmware_in_progress(&self, meter_id: &str) -> bool {
        self.pending_firmware.iter().any(|p| p.meter_id == meter_id)
    }

    /// Completes firmware jobs whose reboot finished by `now`: the meter
    /// gets the target version and returns to the operational state (still
    /// inside its sandbox segment until restored).
    pub fn apply_due_firmware(&mut self, now: SimTime) {
        let due: Vec<PendingFirmware> = {
            let (due, rest) = std::mem::take(&mut self.pending_firmware)
                .into_iter()
                .partition(|p| p.done_at <= now);
            self.pending_firmware = rest;
            due
        };
        for job in due {
            if let Some(meter) = self.meter_mut(&job.meter_id) {
                meter.firmware_version = job.target_version;
                let _ = meter.transition(MeterState::Operational);
            }
        }
    }
}
