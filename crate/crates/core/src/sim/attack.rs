//! Attack scenarios and traffic injectors.
//!
//! Injectors are pure message transforms; the simulator decides when a
//! message is in scope (window, target, meter state) and then applies them.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::message::{DlmsMessage, MsgType, Payload};
use crate::sim::meter::stable_hash;
use crate::time::SimTime;

/// Target name that selects the Headend instead of a meter.
pub const TARGET_HEADEND: &str = "headend";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fdi,
    TamperDrop,
    Ddos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdiParams {
    pub multiplier: f64,
    #[serde(default)]
    pub sign_flip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdosParams {
    pub attacker_count: u32,
    pub rate_multiplier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TamperParams {
    pub drop_probability: f64,
}

impl Default for TamperParams {
    fn default() -> Self {
        TamperParams {
            drop_probability: 1.0,
        }
    }
}

/// One attack window over the scenario timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub kind: AttackKind,
    /// Window bounds in virtual seconds from scenario start; start inclusive,
    /// end exclusive.
    pub start_s: u64,
    pub end_s: u64,
    /// Meter ids, or [`TARGET_HEADEND`]. For ddos an empty list means the
    /// first `attacker_count` meters of the inventory.
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fdi_params: Option<FdiParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ddos_params: Option<DdosParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tamper_params: Option<TamperParams>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackConfigError {
    #[error("attack window must satisfy start < end (got {start_s}..{end_s})")]
    EmptyWindow { start_s: u64, end_s: u64 },
    #[error("fdi attack requires fdi_params")]
    MissingFdiParams,
    #[error("ddos attack requires ddos_params")]
    MissingDdosParams,
    #[error("ddos attacker_count must be >= 1")]
    NoAttackers,
}

impl AttackScenario {
    pub fn validate(&self) -> Result<(), AttackConfigError> {
        if self.start_s >= self.end_s {
            return Err(AttackConfigError::EmptyWindow {
                start_s: self.start_s,
                end_s: self.end_s,
            });
        }
        match self.kind {
            AttackKind::Fdi => {
                if self.fdi_params.is_none() {
                    return Err(AttackConfigError::MissingFdiParams);
                }
            }
            AttackKind::Ddos => match self.ddos_params {
                None => return Err(AttackConfigError::MissingDdosParams),
                Some(p) if p.attacker_count == 0 => {
                    return Err(AttackConfigError::NoAttackers)
                }
                Some(_) => {}
            },
            AttackKind::TamperDrop => {}
        }
        Ok(())
    }

    pub fn window_contains(&self, t: SimTime) -> bool {
        t >= SimTime::from_secs(self.start_s) && t < SimTime::from_secs(self.end_s)
    }

    pub fn targets_headend(&self) -> bool {
        self.targets.iter().any(|t| t == TARGET_HEADEND)
    }

    pub fn targets_meter(&self, meter_id: &str) -> bool {
        self.targets.iter().any(|t| t == meter_id)
    }
}

/// Applies false data injection to a read response: the carried value is
/// multiplied and optionally sign-flipped; every other field is unchanged.
/// Non-response messages pass through untouched.
pub fn inject_fdi(msg: DlmsMessage, params: FdiParams) -> DlmsMessage {
    if msg.msg_type != MsgType::ReadResp {
        return msg;
    }
    let mut msg = msg;
    if let Some(Payload::Measurement(m)) = &mut msg.payload {
        m.value *= params.multiplier;
        if params.sign_flip {
            m.value = -m.value;
        }
    }
    msg
}

/// Drops a targeted message with the configured probability. The decision is
/// derived from the scenario seed and the message identity, so replaying a
/// scenario reproduces the same losses.
pub fn inject_tamper_drop(
    msg: DlmsMessage,
    params: TamperParams,
    seed: u64,
) -> Option<DlmsMessage> {
    if params.drop_probability >= 1.0 {
        return None;
    }
    if params.drop_probability <= 0.0 {
        return Some(msg);
    }
    let mix = stable_hash(&[
        &seed.to_le_bytes(),
        b"tamper",
        msg.session_id.as_bytes(),
        &msg.timestamp.as_millis().to_le_bytes(),
    ]);
    let mut rng = ChaCha12Rng::seed_from_u64(mix);
    if rng.random::<f64>() < params.drop_probability {
        None
    } else {
        Some(msg)
    }
}
