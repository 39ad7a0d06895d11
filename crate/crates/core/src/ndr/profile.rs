//! Clustered nominal profiles: meters are grouped by location class, metered
//! area bucket, and season; each cluster gets a mean/std profile of its
//! apparent-power readings built from attack-free training traffic.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dissect::ProtocolLogRecord;
use crate::sim::meter::{LocationClass, Quantity, SmartMeter};
use crate::sim::world::AmiWorld;
use crate::time::{Calendar, Season, SimTime};

/// Inventory facts the detectors need about each meter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub ip: Ipv4Addr,
    pub location_class: LocationClass,
    pub area_m2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeterCatalog {
    pub meters: BTreeMap<String, CatalogEntry>,
}

impl MeterCatalog {
    pub fn from_meters<'a>(meters: impl IntoIterator<Item = &'a SmartMeter>) -> Self {
        MeterCatalog {
            meters: meters
                .into_iter()
                .map(|m| {
                    (
                        m.meter_id.clone(),
                        CatalogEntry {
                            ip: m.ip,
                            location_class: m.location_class,
                            area_m2: m.area_m2,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_world(world: &AmiWorld) -> Self {
        Self::from_meters(world.meters.iter())
    }

    pub fn get(&self, meter_id: &str) -> Option<&CatalogEntry> {
        self.meters.get(meter_id)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ClusterKey {
    pub location_class: LocationClass,
    pub area_bucket: u8,
    pub season: Season,
}

impl std::fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/b{}/{}",
            self.location_class, self.area_bucket, self.season
        )
    }
}

// LocationClass ordering for the BTreeMap cluster key.
impl PartialOrd for LocationClass {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for LocationClass {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        fn rank(c: &LocationClass) -> u8 {
            match c {
                LocationClass::Household => 0,
                LocationClass::DistributionTransformer => 1,
                LocationClass::CommercialIndustrial => 2,
            }
        }
        rank(self).cmp(&rank(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub mean: f64,
    pub std: f64,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Deviation threshold in profile standard deviations.
    pub k_sigma: f64,
    /// Deviant readings in a row before a meter triggers.
    pub consecutive_required: u32,
    /// Sliding window for per-source message rates, seconds.
    pub rate_window_s: u64,
    /// Rate threshold as a multiple of the trained per-source baseline.
    pub rate_factor: f64,
    /// Clusters with fewer training samples are omitted.
    pub min_training_samples: u64,
    /// Profile std never drops below this fraction of the mean.
    pub std_floor_fraction: f64,
    /// Area bucket edges in square meters; bucket i covers
    /// [edge[i-1], edge[i]).
    pub area_bucket_edges: Vec<f64>,
    /// Evidence-aggregation delay between the first trigger and the alert,
    /// so one alert can carry every implicated source.
    pub debounce_s: u64,
    /// Concurrently deviant meters needed to implicate the Headend.
    pub headend_min_meters: u32,
    /// A meter deviating this many times harder than the fleet median is an
    /// independent offender on top of a Headend-level episode.
    pub meter_outlier_factor: f64,
    pub fdi_severity: u8,
    pub ddos_severity: u8,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            k_sigma: 3.0,
            consecutive_required: 3,
            rate_window_s: 120,
            rate_factor: 5.0,
            min_training_samples: 30,
            std_floor_fraction: 0.01,
            area_bucket_edges: vec![50.0, 150.0, 500.0],
            debounce_s: 15,
            headend_min_meters: 3,
            meter_outlier_factor: 3.0,
            fdi_severity: 8,
            ddos_severity: 7,
        }
    }
}

impl DetectorConfig {
    pub fn area_bucket(&self, area_m2: f64) -> u8 {
        self.area_bucket_edges
            .iter()
            .take_while(|edge| area_m2 >= **edge)
            .count() as u8
    }

    pub fn cluster_key(
        &self,
        entry: &CatalogEntry,
        t: SimTime,
        calendar: &Calendar,
    ) -> ClusterKey {
        ClusterKey {
            location_class: entry.location_class,
            area_bucket: self.area_bucket(entry.area_m2),
            season: calendar.season(t),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("training set contains no apparent-power readings")]
    EmptyTrainingSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub profiles: BTreeMap<ClusterKey, ClusterProfile>,
    /// Clusters dropped for insufficient samples, with their counts.
    pub omitted: Vec<(ClusterKey, u64)>,
}

/// Builds per-cluster mean/std profiles from attack-free training records.
/// Uses Welford's one-pass update; clusters below the minimum sample count
/// are omitted and reported.
pub fn build_profiles(
    records: &[ProtocolLogRecord],
    catalog: &MeterCatalog,
    calendar: &Calendar,
    config: &DetectorConfig,
) -> Result<ProfileSet, ProfileError> {
    struct Acc {
        count: u64,
        mean: f64,
        m2: f64,
    }
    let mut acc: BTreeMap<ClusterKey, Acc> = BTreeMap::new();

    for rec in records {
        let (Some(Quantity::ApparentPower), Some(value)) = (rec.quantity, rec.value) else {
            continue;
        };
        let Some(entry) = catalog.get(&rec.meter_id) else {
            continue;
        };
        let key = config.cluster_key(entry, rec.timestamp, calendar);
        let a = acc.entry(key).or_insert(Acc {
            count: 0,
            mean: 0.0,
            m2: 0.0,
        });
        a.count += 1;
        let delta = value - a.mean;
        a.mean += delta / a.count as f64;
        a.m2 += delta * (value - a.mean);
    }

    if acc.is_empty() {
        return Err(ProfileError::EmptyTrainingSet);
    }

    let mut profiles = BTreeMap::new();
    let mut omitted = Vec::new();
    for (key, a) in acc {
        if a.count < config.min_training_samples {
            omitted.push((key, a.count));
            continue;
        }
        let variance = if a.count > 1 {
            a.m2 / (a.count - 1) as f64
        } else {
            0.0
        };
        let std = variance.sqrt().max(config.std_floor_fraction * a.mean.abs());
        profiles.insert(
            key,
            ClusterProfile {
                mean: a.mean,
                std,
                sample_count: a.count,
            },
        );
    }
    Ok(ProfileSet { profiles, omitted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::message::MsgType;

    fn record(meter_id: &str, value: f64, t: u64) -> ProtocolLogRecord {
        ProtocolLogRecord {
            timestamp: SimTime::from_secs(t),
            session_id: format!("sess-{t}-{meter_id}"),
            msg_type: MsgType::ReadResp,
            src_ip: Ipv4Addr::new(10, 0, 0, 7),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            meter_id: meter_id.to_string(),
            quantity: Some(Quantity::ApparentPower),
            value: Some(value),
            unit: Some("VA".to_string()),
        }
    }

    fn catalog_with(entries: &[(&str, LocationClass, f64)]) -> MeterCatalog {
        MeterCatalog {
            meters: entries
                .iter()
                .enumerate()
                .map(|(i, (id, class, area))| {
                    (
                        id.to_string(),
                        CatalogEntry {
                            ip: Ipv4Addr::new(10, 0, 0, 10 + i as u8),
                            location_class: *class,
                            area_m2: *area,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Independent oracle: naive two-pass mean and sample std.
    fn naive_mean_std(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn profile_matches_independent_oracle() {
        // 100 readings drawn around 2.0 with sigma 0.1 (deterministic set).
        let catalog = catalog_with(&[("meter-07", LocationClass::Household, 120.0)]);
        let values: Vec<f64> = (0..100)
            .map(|i| 2.0 + 0.1 * ((i as f64 * 0.7).sin() * 1.6))
            .collect();
        let records: Vec<ProtocolLogRecord> = values
            .iter()
            .enumerate()
            .map(|(i, v)| record("meter-07", *v, i as u64 * 300))
            .collect();

        let cfg = DetectorConfig::default();
        let set = build_profiles(&records, &catalog, &Calendar::default(), &cfg).unwrap();
        assert_eq!(set.profiles.len(), 1);
        let profile = set.profiles.values().next().unwrap();

        let (mean, std) = naive_mean_std(&values);
        assert!((profile.mean - mean).abs() <= 0.1 * mean.abs());
        assert!((profile.std - std).abs() <= 0.1 * std.abs());
        assert_eq!(profile.sample_count, 100);
    }

    #[test]
    fn distinct_location_classes_build_distinct_clusters() {
        let catalog = catalog_with(&[
            ("meter-01", LocationClass::Household, 120.0),
            ("meter-02", LocationClass::CommercialIndustrial, 120.0),
        ]);
        let mut records = Vec::new();
        for i in 0..40 {
            records.push(record("meter-01", 2000.0, i * 300));
            records.push(record("meter-02", 9000.0, i * 300));
        }
        let set = build_profiles(
            &records,
            &catalog,
            &Calendar::default(),
            &DetectorConfig::default(),
        )
        .unwrap();
        assert_eq!(set.profiles.len(), 2);
    }

    #[test]
    fn undersampled_clusters_are_omitted_with_warning() {
        let catalog = catalog_with(&[("meter-01", LocationClass::Household, 120.0)]);
        let records: Vec<ProtocolLogRecord> =
            (0..10).map(|i| record("meter-01", 2000.0, i * 300)).collect();
        let set = build_profiles(
            &records,
            &catalog,
            &Calendar::default(),
            &DetectorConfig::default(),
        )
        .unwrap();
        assert!(set.profiles.is_empty());
        assert_eq!(set.omitted.len(), 1);
        assert_eq!(set.omitted[0].1, 10);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let catalog = catalog_with(&[("meter-01", LocationClass::Household, 120.0)]);
        assert_eq!(
            build_profiles(&[], &catalog, &Calendar::default(), &DetectorConfig::default()),
            Err(ProfileError::EmptyTrainingSet)
        );
    }

    #[test]
    fn area_buckets_follow_documented_edges() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.area_bucket(0.0), 0);
        assert_eq!(cfg.area_bucket(49.9), 0);
        assert_eq!(cfg.area_bucket(50.0), 1);
        assert_eq!(cfg.area_bucket(149.9), 1);
        assert_eq!(cfg.area_bucket(150.0), 2);
        assert_eq!(cfg.area_bucket(499.9), 2);
        assert_eq!(cfg.area_bucket(500.0), 3);
        assert_eq!(cfg.area_bucket(10_000.0), 3);
    }

    #[test]
    fn std_floor_prevents_zero_width_bands() {
        let catalog = catalog_with(&[("meter-01", LocationClass::Household, 120.0)]);
        let records: Vec<ProtocolLogRecord> =
            (0..40).map(|i| record("meter-01", 2000.0, i * 300)).collect();
        let set = build_profiles(
            &records,
            &catalog,
            &Calendar::default(),
            &DetectorConfig::default(),
        )
        .unwrap();
        let p = set.profiles.values().next().unwrap();
        assert!(p.std >= 0.01 * 2000.0);
    }
}
