//! Stream detectors: profile-deviation detection for FDI and per-source
//! rate detection for DDoS floods.
//!
//! Both detectors emit one alert per sustained episode. A short aggregation
//! delay (debounce) sits between the first trigger and the alert so the
//! alert can name every implicated source; the episode re-arms only after
//! the offending sources return to nominal.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::alert::{Alert, DeviceClass, SIG_DDOS, SIG_FDI};
use super::dissect::ProtocolLogRecord;
use super::profile::{ClusterKey, ClusterProfile, DetectorConfig, MeterCatalog};
use crate::sim::meter::Quantity;
use crate::time::{Calendar, SimDuration, SimTime};

/// Evidence records retained per meter for the alert payload.
const EVIDENCE_PER_METER: usize = 5;

#[derive(Debug, Default)]
struct MeterStreak {
    consecutive: u32,
    abs_z_sum: f64,
    abs_z_count: u64,
    evidence: Vec<ProtocolLogRecord>,
    first_deviant_at: Option<SimTime>,
}

impl MeterStreak {
    fn mean_abs_z(&self) -> f64 {
        if self.abs_z_count == 0 {
            0.0
        } else {
            self.abs_z_sum / self.abs_z_count as f64
        }
    }
}

#[derive(Debug)]
struct PendingAlert {
    first_meter: String,
    flush_at: SimTime,
}

/// Profile-deviation detector: a reading is deviant iff
/// |value - mean| > k_sigma * std; a meter triggers after
/// `consecutive_required` deviant readings with no nominal one in between.
pub struct FdiDetector {
    profiles: BTreeMap<ClusterKey, ClusterProfile>,
    catalog: MeterCatalog,
    calendar: Calendar,
    config: DetectorConfig,
    headend_ip: Ipv4Addr,
    streaks: BTreeMap<String, MeterStreak>,
    pending: Option<PendingAlert>,
    episode_active: bool,
    /// Clusters seen in live traffic with no trained profile.
    pub coverage_gaps: BTreeSet<ClusterKey>,
}

impl FdiDetector {
    pub fn new(
        profiles: BTreeMap<ClusterKey, ClusterProfile>,
        catalog: MeterCatalog,
        calendar: Calendar,
        config: DetectorConfig,
        headend_ip: Ipv4Addr,
    ) -> Self {
        FdiDetector {
            profiles,
            catalog,
            calendar,
            config,
            headend_ip,
            streaks: BTreeMap::new(),
            pending: None,
            episode_active: false,
            coverage_gaps: BTreeSet::new(),
        }
    }

    pub fn on_record(&mut self, rec: &ProtocolLogRecord) -> Option<Alert> {
        self.ingest(rec);
        self.flush_if_due(rec.timestamp)
    }

    /// Flushes a pending alert at end of stream.
    pub fn finish(&mut self) -> Option<Alert> {
        let flush_at = self.pending.as_ref()?.flush_at;
        self.emit(flush_at)
    }

    fn ingest(&mut self, rec: &ProtocolLogRecord) {
        let (Some(Quantity::ApparentPower), Some(value)) = (rec.quantity, rec.value) else {
            return;
        };
        let Some(entry) = self.catalog.get(&rec.meter_id) else {
            return;
        };
        let key = self.config.cluster_key(entry, rec.timestamp, &self.calendar);
        let Some(profile) = self.profiles.get(&key) else {
            // Uncovered cluster: log the gap, never alert on it.
            self.coverage_gaps.insert(key);
            return;
        };

        let deviation = (value - profile.mean).abs();
        let deviant = deviation > self.config.k_sigma * profile.std;
        if deviant {
            let streak = self.streaks.entry(rec.meter_id.clone()).or_default();
            streak.consecutive += 1;
            streak.abs_z_sum += deviation / profile.std;
            streak.abs_z_count += 1;
            streak.first_deviant_at.get_or_insert(rec.timestamp);
            if streak.evidence.len() < EVIDENCE_PER_METER {
                streak.evidence.push(rec.clone());
            }
            if streak.consecutive >= self.config.consecutive_required
                && !self.episode_active
                && self.pending.is_none()
            {
                self.pending = Some(PendingAlert {
                    first_meter: rec.meter_id.clone(),
                    flush_at: rec.timestamp + SimDuration::from_secs(self.config.debounce_s),
                });
            }
        } else {
            self.streaks.remove(&rec.meter_id);
            if self.episode_active && self.streaks.is_empty() {
                // Every implicated meter is back to nominal: re-arm.
                self.episode_active = false;
            }
        }
    }

    fn flush_if_due(&mut self, now: SimTime) -> Option<Alert> {
        let flush_at = self.pending.as_ref()?.flush_at;
        if now >= flush_at {
            self.emit(flush_at)
        } else {
            None
        }
    }

    /// Builds the alert from every meter that reached the trigger threshold
    /// during the aggregation window and classifies the offending device.
    fn emit(&mut self, detection_time: SimTime) -> Option<Alert> {
        let pending = self.pending.take()?;
        self.episode_active = true;

        let triggered: Vec<(&String, &MeterStreak)> = self
            .streaks
            .iter()
            .filter(|(_, s)| s.consecutive >= self.config.consecutive_required)
            .collect();
        let (victim_ip, offender_ip, device_class, offenders) =
            self.classify(&pending.first_meter, &triggered);

        let mut evidence: Vec<ProtocolLogRecord> = Vec::new();
        for (_, streak) in &triggered {
            evidence.extend(streak.evidence.iter().cloned());
        }

        let summary = match device_class {
            DeviceClass::Meter => format!(
                "sustained apparent-power deviation on {}",
                pending.first_meter
            ),
            DeviceClass::Headend => format!(
                "fleet-wide apparent-power deviation across {} meters implicates the headend",
                triggered.len()
            ),
            DeviceClass::Both => format!(
                "fleet-wide deviation plus independent outlier {}",
                offender_ip
            ),
        };

        Some(Alert {
            alert_id: String::new(), // assigned by the alert sink
            signature_id: SIG_FDI.to_string(),
            name: "AMI False Data Injection".to_string(),
            severity: Alert::clamp_severity(i64::from(self.config.fdi_severity)),
            victim_ip,
            offender_ip,
            offender_ips: offenders,
            device_class,
            detection_time,
            summary,
            evidence,
        })
    }

    /// Attribution: one deviant meter points at that meter; a fleet-wide
    /// episode (>= headend_min_meters concurrently triggered) points at the
    /// Headend, the traffic's common point. A meter deviating far harder
    /// than the fleet median on top of a fleet-wide episode is an
    /// independent offender, classifying the episode as `both`.
    fn classify(
        &self,
        first_meter: &str,
        triggered: &[(&String, &MeterStreak)],
    ) -> (Ipv4Addr, Ipv4Addr, DeviceClass, Vec<Ipv4Addr>) {
        let meter_ip = |id: &str| self.catalog.get(id).map(|e| e.ip);
        let fleet_wide = triggered.len() >= self.config.headend_min_meters as usize;

        if !fleet_wide {
            let ip = meter_ip(first_meter).unwrap_or(Ipv4Addr::UNSPECIFIED);
            return (ip, ip, DeviceClass::Meter, vec![ip]);
        }

        let mut zs: Vec<f64> = triggered.iter().map(|(_, s)| s.mean_abs_z()).collect();
        zs.sort_by(|a, b| a.partial_cmp(b).expect("z-scores are finite"));
        let median = zs[zs.len() / 2];
        let mut outliers: Vec<Ipv4Addr> = triggered
            .iter()
            .filter(|(_, s)| s.mean_abs_z() >= self.config.meter_outlier_factor * median)
            .filter_map(|(id, _)| meter_ip(id))
            .collect();
        outliers.sort();

        if let Some(outlier) = outliers.first() {
            let mut offenders = vec![self.headend_ip];
            offenders.extend(outliers.iter().copied());
            (self.headend_ip, *outlier, DeviceClass::Both, offenders)
        } else {
            (
                self.headend_ip,
                self.headend_ip,
                DeviceClass::Headend,
                vec![self.headend_ip],
            )
        }
    }
}

/// Per-source sliding-window message counts for trained baselines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateBaselines {
    /// Expected messages per rate window, per source ip.
    pub per_source: BTreeMap<Ipv4Addr, f64>,
}

impl RateBaselines {
    /// Derives per-source baselines from attack-free training records.
    pub fn from_training(
        records: &[ProtocolLogRecord],
        duration: SimDuration,
        window: SimDuration,
    ) -> Self {
        let mut counts: BTreeMap<Ipv4Addr, u64> = BTreeMap::new();
        for rec in records {
            *counts.entry(rec.src_ip).or_default() += 1;
        }
        let duration_s = duration.as_secs_f64().max(1.0);
        RateBaselines {
            per_source: counts
                .into_iter()
                .map(|(ip, n)| (ip, n as f64 * window.as_secs_f64() / duration_s))
                .collect(),
        }
    }
}

/// Flood detector: alerts when any source's message count in a sliding
/// window exceeds `rate_factor` times its trained baseline.
pub struct DdosDetector {
    baselines: RateBaselines,
    config: DetectorConfig,
    headend_ip: Ipv4Addr,
    windows: BTreeMap<Ipv4Addr, VecDeque<SimTime>>,
    last_record: BTreeMap<Ipv4Addr, ProtocolLogRecord>,
    pending: Option<SimTime>,
    episode_active: bool,
    last_sweep: SimTime,
}

impl DdosDetector {
    pub fn new(baselines: RateBaselines, config: DetectorConfig, headend_ip: Ipv4Addr) -> Self {
        DdosDetector {
            baselines,
            config,
            headend_ip,
            windows: BTreeMap::new(),
            last_record: BTreeMap::new(),
            pending: None,
            episode_active: false,
            last_sweep: SimTime::ZERO,
        }
    }

    fn window(&self) -> SimDuration {
        SimDuration::from_secs(self.config.rate_window_s)
    }

    fn threshold(&self, src: Ipv4Addr) -> Option<f64> {
        self.baselines
            .per_source
            .get(&src)
            .map(|b| self.config.rate_factor * b)
    }

    pub fn on_record(&mut self, rec: &ProtocolLogRecord) -> Option<Alert> {
        let now = rec.timestamp;
        // Headend-originated traffic has no flood baseline semantics worth
        // alerting on separately, but it still counts per source uniformly.
        let window_len = self.window();
        let cutoff = SimTime(now.as_millis().saturating_sub(window_len.as_millis()));

        let q = self.windows.entry(rec.src_ip).or_default();
        q.push_back(now);
        while q.front().is_some_and(|t| *t < cutoff) {
            q.pop_front();
        }
        let count = q.len() as f64;
        self.last_record.insert(rec.src_ip, rec.clone());

        if let Some(threshold) = self.threshold(rec.src_ip) {
            if count > threshold && !self.episode_active && self.pending.is_none() {
                self.pending = Some(now + SimDuration::from_secs(self.config.debounce_s));
            }
        }

        // Re-arm once every source has fallen back under threshold for a
        // while; sweep at most once per second of virtual time.
        if self.episode_active && now.since(self.last_sweep) >= SimDuration::from_secs(1) {
            self.last_sweep = now;
            if self.offending_sources(now).is_empty() {
                self.episode_active = false;
            }
        }

        if self.pending.is_some_and(|flush| now >= flush) {
            let flush_at = self.pending.take().expect("pending checked");
            return Some(self.emit(flush_at));
        }
        None
    }

    pub fn finish(&mut self) -> Option<Alert> {
        let flush_at = self.pending.take()?;
        Some(self.emit(flush_at))
    }

    fn offending_sources(&mut self, now: SimTime) -> Vec<Ipv4Addr> {
        let window_len = self.window();
        let cutoff = SimTime(now.as_millis().saturating_sub(window_len.as_millis()));
        let mut offenders = Vec::new();
        for (src, q) in &mut self.windows {
            while q.front().is_some_and(|t| *t < cutoff) {
                q.pop_front();
            }
            let Some(baseline) = self.baselines.per_source.get(src) else {
                continue;
            };
            if q.len() as f64 > self.config.rate_factor * baseline {
                offenders.push(*src);
            }
        }
        offenders
    }

    fn emit(&mut self, detection_time: SimTime) -> Alert {
        self.episode_active = true;
        let offenders = self.offending_sources(detection_time);
        let offender_ip = offenders.first().copied().unwrap_or(Ipv4Addr::UNSPECIFIED);
        let evidence: Vec<ProtocolLogRecord> = offenders
            .iter()
            .filter_map(|ip| self.last_record.get(ip).cloned())
            .collect();

        Alert {
            alert_id: String::new(),
            signature_id: SIG_DDOS.to_string(),
            name: "AMI DDoS Flood".to_string(),
            severity: Alert::clamp_severity(i64::from(self.config.ddos_severity)),
            victim_ip: self.headend_ip,
            offender_ip,
            offender_ips: offenders.clone(),
            device_class: DeviceClass::Meter,
            detection_time,
            summary: format!(
                "message-rate flood from {} sources exceeds {}x baseline",
                offenders.len(),
                self.config.rate_factor
            ),
            evidence,
        }
    }
}
