//! SDN switch state: flow table, VLAN segments, isolation log, and the
//! segment-based reachability that the network policy enforces.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

pub const OPERATIONAL_VLAN_ID: u16 = 1;
pub const FIRST_DYNAMIC_VLAN_ID: u16 = 100;
pub const MAX_VLAN_ID: u16 = 4094;
pub const ETH_TYPE_IPV4: u32 = 2048;

pub const ACTION_OUTPUT: &str = "OUTPUT";
pub const ACTION_RATE_LIMIT: &str = "RATE_LIMIT";

/// Window over which `limit_per_min` rate limits are enforced.
const RATE_WINDOW: SimDuration = SimDuration(60_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Operational,
    Sandbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlanSegment {
    pub vlan_id: u16,
    pub name: String,
    pub kind: SegmentKind,
    pub members: BTreeSet<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowAction {
    #[serde(rename = "type")]
    pub action_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_per_min: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMatch {
    pub ipv4_src: Ipv4Addr,
    pub eth_type: u32,
}

/// One installed network flow. Field names mirror the switch REST API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub entry_number: u64,
    pub dpid: u64,
    pub priority: i64,
    pub actions: Vec<FlowAction>,
    #[serde(rename = "match")]
    pub flow_match: FlowMatch,
    pub table_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationEvent {
    pub time: SimTime,
    pub host: Ipv4Addr,
    pub from_segment: u16,
    pub to_segment: u16,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("unknown host {0}")]
    UnknownHost(Ipv4Addr),
    #[error("unknown vlan {0}")]
    UnknownVlan(u16),
    #[error("vlan name `{0}` already exists")]
    DuplicateVlanName(String),
    #[error("vlan id space exhausted")]
    VlanSpaceExhausted,
    #[error("host {0} is not isolated")]
    NotIsolated(Ipv4Addr),
    #[error("host {0} is not verified clean")]
    NotVerifiedClean(Ipv4Addr),
}

/// Admission decision for one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Delivered,
    DroppedCrossSegment,
    DroppedRateLimited,
}

#[derive(Debug)]
pub struct TopologyState {
    segments: BTreeMap<u16, VlanSegment>,
    flow_table: Vec<FlowEntry>,
    isolation_log: Vec<IsolationEvent>,
    next_entry_number: u64,
    /// Hosts that passed verify_clean since their last isolation.
    verified: BTreeSet<Ipv4Addr>,
    /// Operational segment each isolated host came from.
    home_segment: BTreeMap<Ipv4Addr, u16>,
    /// Delivery timestamps per source, used by rate-limit flows.
    rate_windows: BTreeMap<Ipv4Addr, VecDeque<SimTime>>,
}

impl TopologyState {
    /// Builds the initial topology: one operational segment holding every
    /// inventory host.
    pub fn new(hosts: impl IntoIterator<Item = Ipv4Addr>) -> Self {
        let mut segments = BTreeMap::new();
        segments.insert(
            OPERATIONAL_VLAN_ID,
            VlanSegment {
                vlan_id: OPERATIONAL_VLAN_ID,
                name: "operational".to_string(),
                kind: SegmentKind::Operational,
                members: hosts.into_iter().collect(),
            },
        );
        TopologyState {
            segments,
            flow_table: Vec::new(),
            isolation_log: Vec::new(),
            next_entry_number: 1,
            verified: BTreeSet::new(),
            home_segment: BTreeMap::new(),
            rate_windows: BTreeMap::new(),
        }
    }

    pub fn segments(&self) -> &BTreeMap<u16, VlanSegment> {
        &self.segments
    }

    pub fn flow_table(&self) -> &[FlowEntry] {
        &self.flow_table
    }

    pub fn isolation_log(&self) -> &[IsolationEvent] {
        &self.isolation_log
    }

    pub fn segment_of(&self, host: Ipv4Addr) -> Option<u16> {
        self.segments
            .values()
            .find(|s| s.members.contains(&host))
            .map(|s| s.vlan_id)
    }

    pub fn is_verified(&self, host: Ipv4Addr) -> bool {
        self.verified.contains(&host)
    }

    /// Two hosts can exchange traffic iff they share a segment.
    pub fn reachable(&self, a: Ipv4Addr, b: Ipv4Addr) -> bool {
        match (self.segment_of(a), self.segment_of(b)) {
            (Some(sa), Some(sb)) => sa == sb,
            _ => false,
        }
    }

    /// Appends a flow entry, assigning a fresh entry number. Re-adding an
    /// identical body returns the existing entry number.
    pub fn add_flow_entry(
        &mut self,
        dpid: u64,
        priority: i64,
        actions: Vec<FlowAction>,
        flow_match: FlowMatch,
        table_id: u32,
    ) -> u64 {
        if let Some(existing) = self.flow_table.iter().find(|e| {
            e.dpid == dpid
                && e.priority == priority
                && e.actions == actions
                && e.flow_match == flow_match
                && e.table_id == table_id
        }) {
            return existing.entry_number;
        }
        let entry_number = self.next_entry_number;
        self.next_entry_number += 1;
        self.flow_table.push(FlowEntry {
            entry_number,
            dpid,
            priority,
            actions,
            flow_match,
            table_id,
        });
        entry_number
    }

    pub fn create_vlan(&mut self, name: &str, kind: SegmentKind) -> Result<u16, TopologyError> {
        if self.segments.values().any(|s| s.name == name) {
            return Err(TopologyError::DuplicateVlanName(name.to_string()));
        }
        let vlan_id = (FIRST_DYNAMIC_VLAN_ID..=MAX_VLAN_ID)
            .find(|id| !self.segments.contains_key(id))
            .ok_or(TopologyError::VlanSpaceExhausted)?;
        self.segments.insert(
            vlan_id,
            VlanSegment {
                vlan_id,
                name: name.to_string(),
                kind,
                members: BTreeSet::new(),
            },
        );
        Ok(vlan_id)
    }

    /// Moves a host into the target segment in a single instant. The host's
    /// operational home is remembered so a later restore can undo the move.
    /// Moving a host between distinct segments clears its verification flag.
    pub fn isolate_host(
        &mut self,
        host: Ipv4Addr,
        target: u16,
        now: SimTime,
    ) -> Result<(), TopologyError> {
        let from = self
            .segment_of(host)
            .ok_or(TopologyError::UnknownHost(host))?;
        if !self.segments.contains_key(&target) {
            return Err(TopologyError::UnknownVlan(target));
        }
        if from != target {
            if self.segments[&from].kind == SegmentKind::Operational {
                self.home_segment.insert(host, from);
            }
            self.verified.remove(&host);
            self.segments
                .get_mut(&from)
                .expect("source segment exists")
                .members
                .remove(&host);
            self.segments
                .get_mut(&target)
                .expect("target segment exists")
                .members
                .insert(host);
        }
        self.isolation_log.push(IsolationEvent {
            time: now,
            host,
            from_segment: from,
            to_segment: target,
        });
        Ok(())
    }

    /// Returns a verified host from its sandbox to the operational segment
    /// recorded at isolation time.
    pub fn restore_host(&mut self, host: Ipv4Addr, now: SimTime) -> Result<u16, TopologyError> {
        let current = self
            .segment_of(host)
            .ok_or(TopologyError::UnknownHost(host))?;
        if self.segments[&current].kind != SegmentKind::Sandbox {
            return Err(TopologyError::NotIsolated(host));
        }
        if !self.verified.contains(&host) {
            return Err(TopologyError::NotVerifiedClean(host));
        }
        let home = self
            .home_segment
            .remove(&host)
            .ok_or(TopologyError::NotIsolated(host))?;
        if !self.segments.contains_key(&home) {
            return Err(TopologyError::UnknownVlan(home));
        }
        self.segments
            .get_mut(&current)
            .expect("current segment exists")
            .members
            .remove(&host);
        self.segments
            .get_mut(&home)
            .expect("home segment exists")
            .members
            .insert(host);
        self.isolation_log.push(IsolationEvent {
            time: now,
            host,
            from_segment: current,
            to_segment: home,
        });
        Ok(home)
    }

    /// Records the outcome of the sandbox cleanliness check. The flag sticks
    /// until the host is isolated again.
    pub fn set_verification(&mut self, host: Ipv4Addr, clean: bool) -> Result<(), TopologyError> {
        if self.segment_of(host).is_none() {
            return Err(TopologyError::UnknownHost(host));
        }
        if clean {
            self.verified.insert(host);
        } else {
            self.verified.remove(&host);
        }
        Ok(())
    }

    /// The strictest rate limit installed for a source, if any.
    fn rate_limit_for(&self, src: Ipv4Addr) -> Option<u32> {
        self.flow_table
            .iter()
            .filter(|e| e.flow_match.ipv4_src == src)
            .flat_map(|e| e.actions.iter())
            .filter(|a| a.action_type == ACTION_RATE_LIMIT)
            .filter_map(|a| a.limit_per_min)
            .min()
    }

    /// Decides whether a message may pass: same-segment reachability first,
    /// then any rate-limit flows installed for the source.
    pub fn admit(&mut self, src: Ipv4Addr, dst: Ipv4Addr, now: SimTime) -> Admission {
        if !self.reachable(src, dst) {
            return Admission::DroppedCrossSegment;
        }
        if let Some(limit) = self.rate_limit_for(src) {
            let window = self.rate_windows.entry(src).or_default();
            let cutoff = SimTime(now.as_millis().saturating_sub(RATE_WINDOW.as_millis()));
            while window.front().is_some_and(|t| *t < cutoff) {
                window.pop_front();
            }
            if window.len() as u32 >= limit {
                return Admission::DroppedRateLimited;
            }
            window.push_back(now);
        }
        Admission::Delivered
    }

    /// Serializable snapshot for the `/topology` endpoint and artifacts.
    pub fn snapshot(&self) -> TopologySnapshot {
        TopologySnapshot {
            segments: self.segments.values().cloned().collect(),
            flow_table: self.flow_table.clone(),
            isolation_log: self.isolation_log.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub segments: Vec<VlanSegment>,
    pub flow_table: Vec<FlowEntry>,
    pub isolation_log: Vec<IsolationEvent>,
}
