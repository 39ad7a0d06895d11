//! End-to-end scenario execution: a training pass builds detector profiles,
//! then the live run emulates traffic, detects attacks, triggers playbooks
//! whose steps consume virtual time while the emulation keeps flowing, and
//! writes every artifact (capture, protocol log, CEF alerts, traces, cases,
//! notifications, reports, topology, metrics) under one output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::cacao::{parse_playbook, ParseError};
use crate::connectors::{build_registry, ConnectorStores, WorldProbe};
use crate::engine::{self, EngineError, ExecutionTrace, PlaybookRegistry, TraceStatus};
use crate::metrics::{
    compare_baseline, compute_mttr, summarize, BaselineModel, MttrRecord, ReductionReport,
};
use crate::ndr::{
    build_profiles, parse_cef, Alert, DetectorState, DeviceClass, MeterCatalog, Ndr,
    RateBaselines,
};
use crate::response::{
    generate_consolidated, render_consolidated_text, CaseStore, ChannelConfig, Notifier,
};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::sdn::SdnService;
use crate::sim::meter::stable_hash;
use crate::sim::world::AmiWorld;
use crate::sim::{DlmsMessage, SimParams, SimulationSummary, Simulator};
use crate::time::{SimTime, TimeDriver};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("playbook `{path}` failed to load: {source}")]
    Playbook {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("training produced no usable profiles: {0}")]
    Training(String),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("i/o failure at `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    pub baseline_hours_override: Option<f64>,
    pub clock_scale_override: Option<f64>,
}

/// Everything a finished scenario run produced, plus where it lives.
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub scenario_id: String,
    pub seed: u64,
    pub summary: SimulationSummary,
    pub alerts: Vec<Alert>,
    pub traces: Vec<ExecutionTrace>,
    pub mttr_records: Vec<MttrRecord>,
    pub reductions: Vec<ReductionReport>,
    pub detector_state: DetectorState,
}

impl RunArtifacts {
    pub fn all_playbooks_succeeded(&self) -> bool {
        !self.traces.is_empty() || self.alerts.is_empty()
    }

    pub fn succeeded(&self) -> bool {
        self.alerts.len() == self.traces.len()
            && self.traces.iter().all(|t| t.status == TraceStatus::Succeeded)
    }
}

/// Live run state: the simulator plus the sinks fed on every delivery. Also
/// serves as the engine's time driver, so response steps that consume
/// virtual time keep the emulation moving underneath them.
struct LiveRun {
    sim: Simulator,
    ndr: Ndr,
    capture: BufWriter<File>,
    clock_scale: f64,
}

impl LiveRun {
    fn deliver_closure<'a>(
        ndr: &'a mut Ndr,
        capture: &'a mut BufWriter<File>,
    ) -> impl FnMut(&DlmsMessage) + 'a {
        move |msg| {
            let _ = writeln!(capture, "{}", msg.to_json_line());
            ndr.on_message(msg);
        }
    }

    fn pump_one(&mut self) -> Option<SimTime> {
        let before = self.sim.now();
        let mut deliver = Self::deliver_closure(&mut self.ndr, &mut self.capture);
        let at = self.sim.pump_one(&mut deliver)?;
        drop(deliver);
        self.throttle(before, at);
        Some(at)
    }

    fn throttle(&self, from: SimTime, to: SimTime) {
        if self.clock_scale > 0.0 && to > from {
            let virtual_s = to.since(from).as_secs_f64();
            std::thread::sleep(std::time::Duration::from_secs_f64(
                virtual_s * self.clock_scale,
            ));
        }
    }
}

impl TimeDriver for LiveRun {
    fn now(&self) -> SimTime {
        self.sim.now()
    }

    fn advance_to(&mut self, t: SimTime) {
        let before = self.sim.now();
        let mut deliver = Self::deliver_closure(&mut self.ndr, &mut self.capture);
        self.sim.pump_until(t, &mut deliver);
        drop(deliver);
        self.throttle(before, t);
    }
}

pub fn run_scenario_file(
    scenario_path: &Path,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunArtifacts, PipelineError> {
    let config = ScenarioConfig::load(scenario_path)?;
    run_scenario(&config, out_dir, options)
}

pub fn run_scenario(
    config: &ScenarioConfig,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunArtifacts, PipelineError> {
    let seed = options.seed_override.unwrap_or(config.seed);
    let clock_scale = options.clock_scale_override.unwrap_or(config.clock_scale);
    let baseline = BaselineModel::from_hours(
        options
            .baseline_hours_override
            .unwrap_or(config.baseline_hours),
    );
    let calendar = config.calendar();

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for sub in ["traces", "cases", "reports"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(io_err(out_dir))?;
    }

    // Training pass: identical inventory and generator, attack-free, on a
    // derived seed, long enough to satisfy the per-cluster sample minimum.
    let detector_state = train_detectors(config, seed)?;
    write_json(&out_dir.join("profiles.json"), &detector_state)?;

    // Playbook routing.
    let mut playbooks = PlaybookRegistry::new();
    for (signature, path) in &config.playbooks {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let playbook = parse_playbook(&text).map_err(|source| PipelineError::Playbook {
            path: path.clone(),
            source,
        })?;
        playbooks.register(signature, playbook);
    }

    // Shared live state.
    let world = Arc::new(Mutex::new(AmiWorld::new(
        config.meters.clone(),
        config.headend.clone(),
        config.standby_headend.clone(),
    )));
    let host_ips = world.lock().expect("world lock").host_ips();
    let sdn = Arc::new(SdnService::new(
        host_ips,
        &config.sdn_auth_token,
        Box::new(WorldProbe {
            world: Arc::clone(&world),
            clean_version: config.clean_firmware_version.clone(),
        }),
    ));
    let cases = Arc::new(Mutex::new(CaseStore::new(Some(out_dir.join("cases")))));
    let notifier = Arc::new(Mutex::new(
        Notifier::new(
            [(
                config.notification_channel.clone(),
                ChannelConfig {
                    recipient: config.notification_recipient.clone(),
                },
            )]
            .into_iter()
            .collect(),
        )
        .with_sink(Box::new(
            File::create(out_dir.join("notifications.log"))
                .map_err(io_err(&out_dir.join("notifications.log")))?,
        )),
    ));
    let alert_index: crate::connectors::SharedAlerts = Arc::new(Mutex::new(BTreeMap::new()));

    let stores = ConnectorStores {
        world: Arc::clone(&world),
        sdn: Arc::clone(&sdn),
        cases: Arc::clone(&cases),
        notifier: Arc::clone(&notifier),
        alerts: Arc::clone(&alert_index),
        calendar,
        firmware: config.firmware,
        out_dir: Some(out_dir.to_path_buf()),
    };
    let mut connectors = build_registry(&stores, &config.connectors);

    let ndr = Ndr::new(&detector_state)
        .with_log_sink(Box::new(
            File::create(out_dir.join("protocol_log.jsonl"))
                .map_err(io_err(&out_dir.join("protocol_log.jsonl")))?,
        ))
        .with_cef_sink(Box::new(
            File::create(out_dir.join("alerts.cef"))
                .map_err(io_err(&out_dir.join("alerts.cef")))?,
        ));
    let capture = BufWriter::new(
        File::create(out_dir.join("capture.jsonl"))
            .map_err(io_err(&out_dir.join("capture.jsonl")))?,
    );

    let sim = Simulator::new(
        SimParams {
            seed,
            polling_interval: crate::time::SimDuration::from_secs(config.polling_interval_s),
            rounds: config.rounds,
            calendar,
            load_model: config.load_model.clone(),
            attacks: config.attacks.clone(),
        },
        Arc::clone(&world),
        Some(Arc::clone(&sdn)),
    );
    let mut run = LiveRun {
        sim,
        ndr,
        capture,
        clock_scale,
    };

    // Main loop: emulate until detection fires, execute the playbook (which
    // pumps the emulation through its own virtual time), repeat.
    let mut alerts: Vec<Alert> = Vec::new();
    let mut traces: Vec<ExecutionTrace> = Vec::new();
    let mut mttr_records: Vec<MttrRecord> = Vec::new();
    loop {
        for alert in run.ndr.take_alerts() {
            handle_alert(
                &alert,
                config,
                seed,
                out_dir,
                &calendar,
                &playbooks,
                &mut connectors,
                &mut run,
                &stores,
                &mut traces,
                &mut mttr_records,
            )?;
            alerts.push(alert);
        }
        if run.pump_one().is_none() {
            break;
        }
    }
    run.ndr.finish();
    for alert in run.ndr.take_alerts() {
        handle_alert(
            &alert,
            config,
            seed,
            out_dir,
            &calendar,
            &playbooks,
            &mut connectors,
            &mut run,
            &stores,
            &mut traces,
            &mut mttr_records,
        )?;
        alerts.push(alert);
    }

    let LiveRun {
        sim, mut capture, ..
    } = run;
    capture.flush().map_err(io_err(out_dir))?;
    let summary = sim.into_summary();

    // Evaluation artifacts.
    let reductions = if mttr_records.is_empty() {
        Vec::new()
    } else {
        compare_baseline(&mttr_records, &baseline).expect("records are non-empty")
    };
    let trace_refs: Vec<(String, &ExecutionTrace)> = traces
        .iter()
        .map(|t| (config.scenario_id.clone(), t))
        .collect();
    let evaluation = summarize(&mttr_records, &trace_refs);
    #[derive(Serialize)]
    struct MetricsArtifact<'a> {
        scenario_id: &'a str,
        seed: u64,
        records: &'a [MttrRecord],
        reductions: &'a [ReductionReport],
        evaluation: &'a crate::metrics::EvaluationSummary,
    }
    write_json(
        &out_dir.join("metrics.json"),
        &MetricsArtifact {
            scenario_id: &config.scenario_id,
            seed,
            records: &mttr_records,
            reductions: &reductions,
            evaluation: &evaluation,
        },
    )?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_json(&out_dir.join("topology.json"), &sdn.snapshot())?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        scenario_id: config.scenario_id.clone(),
        seed,
        summary,
        alerts,
        traces,
        mttr_records,
        reductions,
        detector_state,
    })
}

/// Runs the attack-free training pass and builds the detector state.
pub fn train_detectors(
    config: &ScenarioConfig,
    seed: u64,
) -> Result<DetectorState, PipelineError> {
    let calendar = config.calendar();
    let training_seed = seed.wrapping_add(1_000_003);
    let world = Arc::new(Mutex::new(AmiWorld::new(
        config.meters.clone(),
        config.headend.clone(),
        config.standby_headend.clone(),
    )));
    let sim = Simulator::new(
        SimParams {
            seed: training_seed,
            polling_interval: crate::time::SimDuration::from_secs(config.polling_interval_s),
            rounds: config.training_rounds,
            calendar,
            load_model: config.load_model.clone(),
            attacks: Vec::new(),
        },
        Arc::clone(&world),
        None,
    );

    let mut records = Vec::new();
    let _summary = sim.run(&mut |msg| records.push(crate::ndr::dissect(msg)));

    let catalog = MeterCatalog::from_meters(config.meters.iter());
    let profile_set = build_profiles(&records, &catalog, &calendar, &config.detector)
        .map_err(|e| PipelineError::Training(e.to_string()))?;
    if profile_set.profiles.is_empty() {
        return Err(PipelineError::Training(
            "every cluster fell below the minimum training sample count".to_string(),
        ));
    }
    let duration = crate::time::SimDuration::from_secs(
        config.polling_interval_s * u64::from(config.training_rounds),
    );
    let rate_baselines = RateBaselines::from_training(
        &records,
        duration,
        crate::time::SimDuration::from_secs(config.detector.rate_window_s),
    );

    Ok(DetectorState {
        calendar,
        config: config.detector.clone(),
        catalog,
        headend_ip: config.headend.ip,
        profiles: profile_set.profiles.into_iter().collect(),
        rate_baselines,
        omitted_clusters: profile_set.omitted,
    })
}

#[allow(clippy::too_many_arguments)]
fn handle_alert(
    alert: &Alert,
    config: &ScenarioConfig,
    seed: u64,
    out_dir: &Path,
    calendar: &crate::time::Calendar,
    playbooks: &PlaybookRegistry,
    connectors: &mut crate::engine::ConnectorRegistry,
    run: &mut LiveRun,
    stores: &ConnectorStores,
    traces: &mut Vec<ExecutionTrace>,
    mttr_records: &mut Vec<MttrRecord>,
) -> Result<(), PipelineError> {
    stores
        .alerts
        .lock()
        .expect("alert lock")
        .insert(alert.alert_id.clone(), alert.clone());

    // Detection implicating the Headend authorizes standby failover.
    if matches!(alert.device_class, DeviceClass::Headend | DeviceClass::Both) {
        stores.world.lock().expect("world lock").headend_suspicious = true;
    }

    // The engine consumes the same CEF line the NDR emitted.
    let cef_line = crate::ndr::emit_cef(alert, calendar);
    let cef = parse_cef(&cef_line).expect("emitted CEF parses");

    let trace_rel = format!("traces/trace_{}.json", alert.alert_id);
    let mut extra = BTreeMap::new();
    extra.insert("__trace_path__".to_string(), trace_rel.clone());
    extra.insert(
        "__clean_firmware_version__".to_string(),
        config.clean_firmware_version.clone(),
    );
    extra.insert(
        "__rate_limit_per_min__".to_string(),
        config.rate_limit_per_min.to_string(),
    );
    extra.insert(
        "__notification_channel__".to_string(),
        config.notification_channel.clone(),
    );
    extra.insert(
        "__sdn_auth_token__".to_string(),
        config.sdn_auth_token.clone(),
    );

    let engine_seed = stable_hash(&[
        &seed.to_le_bytes(),
        b"engine",
        alert.alert_id.as_bytes(),
    ]);
    let trace = engine::on_alert(
        &cef,
        playbooks,
        &extra,
        connectors,
        run,
        engine_seed,
        crate::metrics::STEP_LATENCY_BAND_S,
    )?;

    let trace_path = out_dir.join(&trace_rel);
    write_json(&trace_path, &trace)?;

    if trace.status == TraceStatus::Succeeded {
        let case = stores
            .cases
            .lock()
            .expect("case lock")
            .case_for_alert(&alert.alert_id)
            .cloned();
        if let Some(case) = case {
            let now = run.now();
            if let Ok(final_report) = crate::response::generate_report(
                crate::response::ReportPhase::Final,
                &case,
                alert,
                Some(&trace),
                calendar,
                now,
            ) {
                crate::connectors::write_report_files(
                    out_dir,
                    &case.case_id,
                    "final",
                    &final_report,
                )
                .map_err(io_err(out_dir))?;
                crate::connectors::write_phase_report_text(out_dir, &case.case_id, &final_report)
                    .map_err(io_err(out_dir))?;
            }
            if let Ok(consolidated) = generate_consolidated(&case, alert, &trace, calendar, now) {
                crate::connectors::write_report_files(
                    out_dir,
                    &case.case_id,
                    "consolidated",
                    &consolidated,
                )
                .map_err(io_err(out_dir))?;
                crate::connectors::write_report_text(
                    out_dir,
                    &case.case_id,
                    "consolidated",
                    &render_consolidated_text(&consolidated),
                )
                .map_err(io_err(out_dir))?;
            }
        }
        if let Ok(record) = compute_mttr(&config.scenario_id, &trace, alert) {
            mttr_records.push(record);
        }
    }

    traces.push(trace);
    Ok(())
}

/// Re-runs the detectors over a recorded capture with the persisted training
/// state. Returns the CEF lines; identical input and state reproduce the
/// live run's alerts byte for byte.
pub fn replay_capture(
    capture_path: &Path,
    state: &DetectorState,
) -> Result<(Vec<String>, Vec<Alert>), ReplayError> {
    let text = std::fs::read_to_string(capture_path).map_err(|source| ReplayError::Io {
        path: capture_path.to_path_buf(),
        source,
    })?;

    let mut ndr = Ndr::new(state);
    let mut last_t: Option<SimTime> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(msg) = DlmsMessage::from_json_line(line) {
            if last_t.is_some_and(|t| msg.timestamp < t) {
                return Err(ReplayError::NonMonotonic { line: lineno + 1 });
            }
            last_t = Some(msg.timestamp);
        }
        ndr.on_capture_line(line);
    }
    ndr.finish();
    let alerts = ndr.take_alerts();
    let lines = alerts
        .iter()
        .map(|a| crate::ndr::emit_cef(a, &state.calendar))
        .collect();
    Ok((lines, alerts))
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read capture `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("capture timestamps must be non-decreasing (violated at line {line})")]
    NonMonotonic { line: usize },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut doc = serde_json::to_string_pretty(value).expect("artifact serializes");
    doc.push('\n');
    std::fs::write(path, doc).map_err(io_err(path))
}
