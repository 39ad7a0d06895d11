//! Firmware reinstallation: fetch, install, reboot phases scheduled on the
//! virtual clock. The meter stays in the reinstalling state until the reboot
//! completes, at which point it returns to operational with the target
//! firmware version (still inside its sandbox segment until restored).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::meter::MeterState;
use crate::sim::world::{AmiWorld, PendingFirmware};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirmwareDurations {
    pub fetch_s: u64,
    pub install_s: u64,
    pub reboot_s: u64,
}

impl Default for FirmwareDurations {
    fn default() -> Self {
        // Obtaining the image is fast; installing and rebooting dominate.
        FirmwareDurations {
            fetch_s: 60,
            install_s: 900,
            reboot_s: 900,
        }
    }
}

impl FirmwareDurations {
    pub fn total(&self) -> SimDuration {
        SimDuration::from_secs(self.fetch_s + self.install_s + self.reboot_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmwarePhase {
    pub name: String,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmwareJob {
    pub meter_id: String,
    pub target_version: String,
    pub started_at: SimTime,
    pub completed_at: SimTime,
    pub phases: Vec<FirmwarePhase>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FirmwareError {
    #[error("unknown meter `{0}`")]
    UnknownMeter(String),
    #[error("meter `{meter_id}` is {state:?}; containment must sandbox it before reinstalling")]
    NotSandboxed {
        meter_id: String,
        state: MeterState,
    },
}

/// Starts a firmware reinstall for a sandboxed meter. Phase boundaries are
/// fixed at start; the world applies the completion (version + operational
/// state) when the virtual clock reaches the reboot end.
pub fn reinstall_firmware(
    world: &mut AmiWorld,
    meter_id: &str,
    target_version: &str,
    durations: FirmwareDurations,
    now: SimTime,
) -> Result<FirmwareJob, FirmwareError> {
    let meter = world
        .meter_mut(meter_id)
        .ok_or_else(|| FirmwareError::UnknownMeter(meter_id.to_string()))?;
    if meter.state != MeterState::Sandboxed {
        return Err(FirmwareError::NotSandboxed {
            meter_id: meter_id.to_string(),
            state: meter.state,
        });
    }
    meter
        .transition(MeterState::Reinstalling)
        .expect("sandboxed -> reinstalling is legal");

    let fetch_end = now + SimDuration::from_secs(durations.fetch_s);
    let install_end = fetch_end + SimDuration::from_secs(durations.install_s);
    let reboot_end = install_end + SimDuration::from_secs(durations.reboot_s);
    let job = FirmwareJob {
        meter_id: meter_id.to_string(),
        target_version: target_version.to_string(),
        started_at: now,
        completed_at: reboot_end,
        phases: vec![
            FirmwarePhase {
                name: "fetch".to_string(),
                start: now,
                end: fetch_end,
            },
            FirmwarePhase {
                name: "install".to_string(),
                start: fetch_end,
                end: install_end,
            },
            FirmwarePhase {
                name: "reboot".to_string(),
                start: install_end,
                end: reboot_end,
            },
        ],
    };
    world.register_firmware(PendingFirmware {
        meter_id: meter_id.to_string(),
        target_version: target_version.to_string(),
        done_at: reboot_end,
    });
    Ok(job)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::meter::{LocationClass, SecurityLevel, SmartMeter};
    use crate::sim::world::HeadendInfo;
    use std::net::Ipv4Addr;

    fn sandboxed_world() -> AmiWorld {
        let mut world = AmiWorld::new(
            vec![SmartMeter {
                meter_id: "meter-07".to_string(),
                ip: Ipv4Addr::new(10, 0, 0, 7),
                location_class: LocationClass::Household,
                area_m2: 120.0,
                firmware_version: "1.4.2".to_string(),
                security_level: SecurityLevel::Low,
                state: MeterState::Operational,
            }],
            HeadendInfo {
                name: "headend".to_string(),
                ip: Ipv4Addr::new(10, 0, 0, 2),
            },
            None,
        );
        world.compromise_meter("meter-07").unwrap();
        world
            .meter_mut("meter-07")
            .unwrap()
            .transition(MeterState::Sandboxed)
            .unwrap();
        world
    }

    #[test]
    fn default_durations_complete_at_t0_plus_1860s() {
        let mut world = sandboxed_world();
        let t0 = SimTime::from_secs(10_000);
        let job = reinstall_firmware(
            &mut world,
            "meter-07",
            "2.0.0-clean",
            FirmwareDurations::default(),
            t0,
        )
        .unwrap();

        // 60s fetch + 900s install + 900s reboot.
        assert_eq!(job.completed_at, SimTime::from_secs(11_860));
        assert_eq!(job.phases.len(), 3);
        for pair in job.phases.windows(2) {
            assert_eq!(pair[0].end, pair[1].start);
        }
        assert_eq!(world.meter("meter-07").unwrap().state, MeterState::Reinstalling);

        world.apply_due_firmware(SimTime::from_secs(11_859));
        assert_eq!(world.meter("meter-07").unwrap().state, MeterState::Reinstalling);
        world.apply_due_firmware(job.completed_at);
        let m = world.meter("meter-07").unwrap();
        assert_eq!(m.state, MeterState::Operational);
        assert_eq!(m.firmware_version, "2.0.0-clean");
    }

    #[test]
    fn zero_duration_config_completes_immediately() {
        let mut world = sandboxed_world();
        let t0 = SimTime::from_secs(5);
        let job = reinstall_firmware(
            &mut world,
            "meter-07",
            "2.0.0-clean",
            FirmwareDurations {
                fetch_s: 0,
                install_s: 0,
                reboot_s: 0,
            },
            t0,
        )
        .unwrap();
        assert_eq!(job.completed_at, t0);
        world.apply_due_firmware(t0);
        assert_eq!(world.meter("meter-07").unwrap().state, MeterState::Operational);
    }

    #[test]
    fn reinstall_requires_containment_first() {
        let mut world = AmiWorld::new(
            vec![SmartMeter {
                meter_id: "meter-07".to_string(),
                ip: Ipv4Addr::new(10, 0, 0, 7),
                location_class: LocationClass::Household,
                area_m2: 120.0,
                firmware_version: "1.4.2".to_string(),
                security_level: SecurityLevel::Low,
                state: MeterState::Operational,
            }],
            HeadendInfo {
                name: "headend".to_string(),
                ip: Ipv4Addr::new(10, 0, 0, 2),
            },
            None,
        );
        let err = reinstall_firmware(
            &mut world,
            "meter-07",
            "2.0.0",
            FirmwareDurations::default(),
            SimTime::ZERO,
        )
        .unwrap_err();
        assert!(matches!(err, FirmwareError::NotSandboxed { .. }));

        let err = reinstall_firmware(
            &mut world,
            "ghost",
            "2.0.0",
            FirmwareDurations::default(),
            SimTime::ZERO,
        )
        .unwrap_err();
        assert_eq!(err, FirmwareError::UnknownMeter("ghost".to_string()));
    }
}
