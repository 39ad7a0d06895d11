//! Standby Headend activation: when the primary Headend is implicated, the
//! hot standby takes over as session initiator for subsequent polls.

use std::net::Ipv4Addr;

use thiserror::Error;

use crate::sim::world::AmiWorld;

#[derive(Debug, Error, PartialEq)]
pub enum StandbyError {
    #[error("no standby headend configured in the inventory")]
    NoStandbyConfigured,
    #[error("primary headend is not flagged suspicious; refusing failover")]
    PrimaryNotSuspicious,
    #[error("standby headend is already active")]
    AlreadyActive,
}

/// Switches polling to the standby Headend. Requires detection to have
/// flagged the primary first; a no-incident failover is refused.
pub fn activate_standby_headend(world: &mut AmiWorld) -> Result<Ipv4Addr, StandbyError> {
    let standby = world
        .standby_headend
        .clone()
        .ok_or(StandbyError::NoStandbyConfigured)?;
    if !world.headend_suspicious {
        return Err(StandbyError::PrimaryNotSuspicious);
    }
    if world.active_headend == standby.ip {
        return Err(StandbyError::AlreadyActive);
    }
    world.active_headend = standby.ip;
    Ok(standby.ip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::meter::{LocationClass, MeterState, SecurityLevel, SmartMeter};
    use crate::sim::world::HeadendInfo;

    fn world(with_standby: bool) -> AmiWorld {
        AmiWorld::new(
            vec![SmartMeter {
                meter_id: "meter-05".to_string(),
                ip: Ipv4Addr::new(10, 0, 0, 5),
                location_class: LocationClass::Household,
                area_m2: 80.0,
                firmware_version: "1.4.2".to_string(),
                security_level: SecurityLevel::Low,
                state: MeterState::Operational,
            }],
            HeadendInfo {
                name: "headend".to_string(),
                ip: Ipv4Addr::new(10, 0, 0, 2),
            },
            with_standby.then(|| HeadendInfo {
                name: "headend-standby".to_string(),
                ip: Ipv4Addr::new(10, 0, 0, 3),
            }),
        )
    }

    #[test]
    fn failover_switches_the_session_initiator() {
        let mut w = world(true);
        w.headend_suspicious = true;
        let active = activate_standby_headend(&mut w).unwrap();
        assert_eq!(active, Ipv4Addr::new(10, 0, 0, 3));
        assert_eq!(w.active_headend, active);
    }

    #[test]
    fn no_standby_configured_is_an_error() {
        let mut w = world(false);
        w.headend_suspicious = true;
        assert_eq!(
            activate_standby_headend(&mut w),
            Err(StandbyError::NoStandbyConfigured)
        );
    }

    #[test]
    fn failover_without_incident_is_refused() {
        let mut w = world(true);
        assert_eq!(
            activate_standby_headend(&mut w),
            Err(StandbyError::PrimaryNotSuspicious)
        );
    }
}
