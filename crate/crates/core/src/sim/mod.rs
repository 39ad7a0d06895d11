//! Discrete-event emulation of the AMI: a Headend polling smart meters over
//! DLMS/COSEM-style sessions on a virtual clock, with attack injectors and
//! the SDN network policy applied to every message.

pub mod attack;
pub mod message;
pub mod meter;
pub mod world;

pub use attack::{
    inject_fdi, inject_tamper_drop, AttackConfigError, AttackKind, AttackScenario, DdosParams,
    FdiParams, TamperParams, TARGET_HEADEND,
};
pub use message::{DlmsMessage, MsgType, Payload};
pub use meter::{
    generate_reading, measurement_from_snapshot, nominal_snapshot, reading_rng, LoadModel,
    LocationClass, Measurement, MeterState, Quantity, ReadingSnapshot, SecurityLevel, SmartMeter,
    StateTransitionError,
};
pub use world::{AmiWorld, HeadendInfo, PendingFirmware, WorldError};

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::sdn::{Admission, SdnService};
use crate::time::{Calendar, EventQueue, SimDuration, SimTime, VirtualClock};

/// Spacing between the session starts of consecutive meters in one round.
const METER_OFFSET: SimDuration = SimDuration(100);
/// Spacing between consecutive messages of one session.
const MSG_GAP: SimDuration = SimDuration(10);
/// From-meter messages per complete session: ASSOC_RESP plus one READ_RESP
/// per quantity. DDoS rate multipliers apply to this figure.
const FROM_METER_MSGS_PER_SESSION: f64 = 1.0 + Quantity::ALL.len() as f64;

/// Everything the simulator needs to know about a scenario.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub seed: u64,
    pub polling_interval: SimDuration,
    pub rounds: u32,
    pub calendar: Calendar,
    pub load_model: LoadModel,
    pub attacks: Vec<AttackScenario>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeterRoundStats {
    pub rounds_polled: u32,
    pub rounds_completed: u32,
    pub rounds_skipped_isolated: u32,
    pub last_completed_round: Option<u32>,
    /// Largest number of consecutive rounds without a completed session
    /// between two completed ones.
    pub max_missed_between: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub rounds_scheduled: u32,
    pub messages_emitted: u64,
    pub messages_delivered: u64,
    pub dropped_cross_segment: u64,
    pub dropped_rate_limited: u64,
    pub dropped_tampered: u64,
    /// Self-audit: messages delivered across segment boundaries. Zero by
    /// construction; asserted by the acceptance suite.
    pub cross_segment_delivered: u64,
    pub per_meter: BTreeMap<String, MeterRoundStats>,
}

#[derive(Debug)]
enum SimEvent {
    Round(u32),
    Deliver {
        msg: DlmsMessage,
        round: u32,
        closes_session: bool,
    },
}

pub struct Simulator {
    params: SimParams,
    world: Arc<Mutex<AmiWorld>>,
    sdn: Option<Arc<SdnService>>,
    queue: EventQueue<SimEvent>,
    clock: VirtualClock,
    session_seq: u64,
    summary: SimulationSummary,
}

impl Simulator {
    pub fn new(
        params: SimParams,
        world: Arc<Mutex<AmiWorld>>,
        sdn: Option<Arc<SdnService>>,
    ) -> Self {
        let mut sim = Simulator {
            params,
            world,
            sdn,
            queue: EventQueue::new(),
            clock: VirtualClock::new(),
            session_seq: 0,
            summary: SimulationSummary::default(),
        };
        sim.schedule_rounds();
        sim
    }

    fn schedule_rounds(&mut self) {
        self.summary.rounds_scheduled = self.params.rounds;
        for r in 1..=self.params.rounds {
            let at = SimTime::ZERO + self.params.polling_interval * u64::from(r);
            self.queue.schedule(at, SimEvent::Round(r));
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.next_time()
    }

    /// Processes the next pending event, delivering messages through the
    /// callback. Returns the event time, or None when the queue is drained.
    pub fn pump_one(&mut self, deliver: &mut dyn FnMut(&DlmsMessage)) -> Option<SimTime> {
        let horizon = SimTime(u64::MAX);
        let (at, event) = self.queue.pop_due(horizon)?;
        self.clock.advance_to(at);
        self.world
            .lock()
            .expect("world lock")
            .apply_due_firmware(at);
        match event {
            SimEvent::Round(r) => self.run_round(r, at),
            SimEvent::Deliver {
                msg,
                round,
                closes_session,
            } => self.process_delivery(msg, round, closes_session, deliver),
        }
        Some(at)
    }

    /// Processes every event at or before `t`, then advances the clock to
    /// `t`. Firmware work due by `t` is applied even when no event fires.
    pub fn pump_until(&mut self, t: SimTime, deliver: &mut dyn FnMut(&DlmsMessage)) {
        while self.queue.next_time().is_some_and(|next| next <= t) {
            self.pump_one(deliver);
        }
        self.clock.advance_to(t);
        self.world.lock().expect("world lock").apply_due_firmware(t);
    }

    /// Drains the whole event queue and returns the summary.
    pub fn run(mut self, deliver: &mut dyn FnMut(&DlmsMessage)) -> SimulationSummary {
        while self.pump_one(deliver).is_some() {}
        self.summary
    }

    pub fn into_summary(self) -> SimulationSummary {
        self.summary
    }

    pub fn summary(&self) -> &SimulationSummary {
        &self.summary
    }

    /// Schedules one polling round: the active Headend opens a session with
    /// every pollable meter (operational or silently compromised; sandboxed
    /// and reinstalling meters are skipped).
    fn run_round(&mut self, round: u32, at: SimTime) {
        let (meters, headend_ip): (Vec<SmartMeter>, _) = {
            let world = self.world.lock().expect("world lock");
            (world.meters.clone(), world.active_headend)
        };

        for (idx, m) in meters.iter().enumerate() {
            let stats = self
                .summary
                .per_meter
                .entry(m.meter_id.clone())
                .or_default();
            if matches!(m.state, MeterState::Sandboxed | MeterState::Reinstalling) {
                stats.rounds_skipped_isolated += 1;
                continue;
            }
            stats.rounds_polled += 1;

            self.session_seq += 1;
            let session_id = format!("sess-{:06}-{}", self.session_seq, m.meter_id);
            let t0 = at + METER_OFFSET * idx as u64;

            let mut rng = reading_rng(self.params.seed, &m.meter_id, t0);
            let snapshot = nominal_snapshot(m, t0, &self.params.calendar, &self.params.load_model, &mut rng);

            let emit = |sim: &mut Simulator, t: SimTime, msg_type, src, dst, payload, closes| {
                let msg = DlmsMessage {
                    msg_type,
                    session_id: session_id.clone(),
                    src_ip: src,
                    dst_ip: dst,
                    timestamp: t,
                    meter_id: m.meter_id.clone(),
                    payload,
                };
                sim.summary.messages_emitted += 1;
                sim.queue.schedule(
                    t,
                    SimEvent::Deliver {
                        msg,
                        round,
                        closes_session: closes,
                    },
                );
            };

            // Sessions are initiated by the Headend, never by a meter.
            emit(
                self,
                t0,
                MsgType::AssocReq,
                headend_ip,
                m.ip,
                Some(Payload::Credential(m.security_level.credential().to_string())),
                false,
            );
            emit(
                self,
                t0 + MSG_GAP,
                MsgType::AssocResp,
                m.ip,
                headend_ip,
                None,
                false,
            );
            for (q_idx, quantity) in Quantity::ALL.iter().enumerate() {
                let req_t = t0 + MSG_GAP * (2 + 2 * q_idx as u64);
                let resp_t = t0 + MSG_GAP * (3 + 2 * q_idx as u64);
                emit(
                    self,
                    req_t,
                    MsgType::ReadReq,
                    headend_ip,
                    m.ip,
                    Some(Payload::Quantity(*quantity)),
                    false,
                );
                let measurement = measurement_from_snapshot(m, *quantity, &snapshot, resp_t);
                emit(
                    self,
                    resp_t,
                    MsgType::ReadResp,
                    m.ip,
                    headend_ip,
                    Some(Payload::Measurement(measurement)),
                    q_idx == Quantity::ALL.len() - 1,
                );
            }

            // Flooding meters duplicate read responses during a ddos window,
            // multiplying their message rate.
            let flood_extra = self.flood_extra_for(&m.meter_id, idx, at);
            if flood_extra > 0 {
                let last_resp_t = t0 + MSG_GAP * (3 + 2 * (Quantity::ALL.len() as u64 - 1));
                let flood_measurement =
                    measurement_from_snapshot(m, Quantity::ApparentPower, &snapshot, last_resp_t);
                for j in 0..flood_extra {
                    let t = last_resp_t + MSG_GAP * (1 + j as u64);
                    emit(
                        self,
                        t,
                        MsgType::ReadResp,
                        m.ip,
                        headend_ip,
                        Some(Payload::Measurement(flood_measurement.clone())),
                        false,
                    );
                }
            }
        }
    }

    fn flood_extra_for(&self, meter_id: &str, meter_idx: usize, at: SimTime) -> u32 {
        let mut extra = 0u32;
        for atk in &self.params.attacks {
            if atk.kind != AttackKind::Ddos || !atk.window_contains(at) {
                continue;
            }
            let Some(params) = atk.ddos_params else { continue };
            let is_attacker = if atk.targets.is_empty() {
                (meter_idx as u32) < params.attacker_count
            } else {
                atk.targets_meter(meter_id)
            };
            if is_attacker && params.rate_multiplier > 1.0 {
                let dup =
                    ((params.rate_multiplier - 1.0) * FROM_METER_MSGS_PER_SESSION).ceil() as u32;
                extra = extra.max(dup);
            }
        }
        extra
    }

    /// Applies attack mutations and the network policy, then hands delivered
    /// messages to the tap callback.
    fn process_delivery(
        &mut self,
        msg: DlmsMessage,
        round: u32,
        closes_session: bool,
        deliver: &mut dyn FnMut(&DlmsMessage),
    ) {
        let t = msg.timestamp;
        let mut msg = msg;

        // Track adversary presence on the Headend link for observability.
        let headend_window_active = self.params.attacks.iter().any(|a| {
            a.kind == AttackKind::Fdi && a.targets_headend() && a.window_contains(t)
        });
        {
            let mut world = self.world.lock().expect("world lock");
            world.headend_compromised = headend_window_active;
        }

        for atk in &self.params.attacks.clone() {
            if !atk.window_contains(t) {
                continue;
            }
            match atk.kind {
                AttackKind::Fdi => {
                    let Some(params) = atk.fdi_params else { continue };
                    if msg.msg_type != MsgType::ReadResp {
                        continue;
                    }
                    let mut world = self.world.lock().expect("world lock");
                    if atk.targets_meter(&msg.meter_id) {
                        // The implant lives in the meter firmware: it takes
                        // effect on compromise and stops once clean firmware
                        // is reinstalled, even inside the window.
                        let _ = world.compromise_meter(&msg.meter_id);
                        let compromised = world
                            .meter(&msg.meter_id)
                            .is_some_and(|m| m.state == MeterState::Compromised);
                        if compromised {
                            msg = inject_fdi(msg, params);
                        }
                    }
                    if atk.targets_headend()
                        && msg.dst_ip == world.primary_headend.ip
                        && world.active_headend == world.primary_headend.ip
                    {
                        // Adversary at the Headend link tampers with every
                        // response it sees; failing over to the standby
                        // moves traffic off the compromised path.
                        msg = inject_fdi(msg, params);
                    }
                }
                AttackKind::TamperDrop => {
                    if atk.targets_meter(&msg.meter_id) {
                        let params = atk.tamper_params.unwrap_or_default();
                        match inject_tamper_drop(msg, params, self.params.seed) {
                            Some(m) => msg = m,
                            None => {
                                self.summary.dropped_tampered += 1;
                                return;
                            }
                        }
                    }
                }
                AttackKind::Ddos => {}
            }
        }

        if let Some(sdn) = &self.sdn {
            match sdn.admit(msg.src_ip, msg.dst_ip, t) {
                Admission::Delivered => {}
                Admission::DroppedCrossSegment => {
                    self.summary.dropped_cross_segment += 1;
                    return;
                }
                Admission::DroppedRateLimited => {
                    self.summary.dropped_rate_limited += 1;
                    return;
                }
            }
            if !sdn.reachable(msg.src_ip, msg.dst_ip) {
                self.summary.cross_segment_delivered += 1;
            }
        }

        self.summary.messages_delivered += 1;
        if closes_session {
            let stats = self
                .summary
                .per_meter
                .entry(msg.meter_id.clone())
                .or_default();
            if let Some(last) = stats.last_completed_round {
                let missed = round.saturating_sub(last + 1);
                stats.max_missed_between = stats.max_missed_between.max(missed);
            }
            stats.last_completed_round = Some(round);
            stats.rounds_completed += 1;
        }
        deliver(&msg);
    }
}
