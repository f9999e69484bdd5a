//! Both nodes in one process, connected by an in-memory pipe.

use std::path::Path;

use super::ledger::write_comm_load_csv;
use super::records::{
    combine_epochs, join_pair_logs, write_epochs_csv, write_pairs_csv, COMM_LOAD_FILE, EPOCHS_FILE, KEYS_DIR,
    PAIRS_FILE,
};
use super::session::{run_session, SessionFailure, SessionOutcome};
use super::transport::duplex;
use super::NetError;
use crate::analysis::{session_report, EpochStats, SessionReport};
use crate::coincidence::{apply_click_policies, ClickConfig};
use crate::config::{Role, SessionConfig};
use crate::model::DetectionEvent;
use crate::privacy::KeyStore;
use crate::seed::{rng_for, tags};
use crate::sim::generate_streams;

/// Applies the double-click and dead-time policies to one node's raw
/// detections. The generator is keyed by role so both modes agree.
pub fn apply_node_clicks(cfg: &SessionConfig, role: Role, raw: &[DetectionEvent]) -> Vec<DetectionEvent> {
    let clicks = ClickConfig {
        dead_time: cfg.clock.dead_time,
        double_click_window: cfg.double_click_window,
        policy: cfg.double_click_policy,
        dead_time_rejection: cfg.dead_time_rejection,
    };
    let tag = match role {
        Role::Alice => tags::CLICKS_ALICE,
        Role::Bob => tags::CLICKS_BOB,
    };
    apply_click_policies(raw, &clicks, &mut rng_for(cfg.seed, tag, 0))
}

/// Both detection streams after the click policies, each on its own clock.
pub fn simulate_node_streams(cfg: &SessionConfig) -> Result<(Vec<DetectionEvent>, Vec<DetectionEvent>), NetError> {
    let sim = generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), cfg.duration, cfg.seed)?;
    Ok((apply_node_clicks(cfg, Role::Alice, &sim.alice), apply_node_clicks(cfg, Role::Bob, &sim.bob)))
}

/// This node's stream. Each node simulates the whole experiment from the
/// shared seed and keeps only its own detector.
pub fn node_stream(cfg: &SessionConfig, role: Role) -> Result<Vec<DetectionEvent>, NetError> {
    let (alice, bob) = simulate_node_streams(cfg)?;
    Ok(match role {
        Role::Alice => alice,
        Role::Bob => bob,
    })
}

/// Key store under a node's output directory.
pub fn open_node_store(dir: &Path) -> Result<KeyStore, NetError> {
    Ok(KeyStore::open(dir.join(KEYS_DIR))?)
}

/// Pair log, epoch table and average communication load of one node.
pub fn write_node_outputs(dir: &Path, outcome: &SessionOutcome, duration_s: f64) -> Result<(), NetError> {
    std::fs::create_dir_all(dir)?;
    write_pairs_csv(&dir.join(PAIRS_FILE), &outcome.pairs)?;
    write_epochs_csv(&dir.join(EPOCHS_FILE), &outcome.epochs)?;
    let f = std::fs::File::create(dir.join(COMM_LOAD_FILE))?;
    write_comm_load_csv(std::io::BufWriter::new(f), &outcome.ledger, duration_s)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub alice: SessionOutcome,
    pub bob: SessionOutcome,
    /// Epochs with figures from the joined coincidence matrix.
    pub epochs: Vec<EpochStats>,
    pub report: SessionReport,
}

#[derive(Debug, thiserror::Error)]
pub enum OfflineError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Session(Box<SessionFailure>),
    #[error("{0} node thread panicked")]
    Panicked(Role),
}

/// Simulates the session and runs both nodes on two threads. With
/// `out_dir`, each node writes keys and logs under `alice/` and `bob/`, and
/// the session figures go to the directory itself.
pub fn run_offline(cfg: &SessionConfig, out_dir: Option<&Path>) -> Result<OfflineRun, OfflineError> {
    cfg.validate().map_err(|e| NetError::Config(e.to_string()))?;
    let (alice_events, bob_events) = simulate_node_streams(cfg)?;
    run_offline_streams(cfg, &alice_events, &bob_events, out_dir)
}

/// Runs both nodes on two threads over the given post-policy streams.
pub fn run_offline_streams(
    cfg: &SessionConfig,
    alice_events: &[DetectionEvent],
    bob_events: &[DetectionEvent],
    out_dir: Option<&Path>,
) -> Result<OfflineRun, OfflineError> {
    cfg.validate().map_err(|e| NetError::Config(e.to_string()))?;
    let stores = match out_dir {
        Some(d) => Some((open_node_store(&d.join("alice"))?, open_node_store(&d.join("bob"))?)),
        None => None,
    };
    let (a_end, b_end) = duplex();
    let (ra, rb) = std::thread::scope(|s| {
        let a = s.spawn(|| run_session(a_end, cfg, Role::Alice, alice_events, stores.as_ref().map(|s| &s.0)));
        let b = s.spawn(|| run_session(b_end, cfg, Role::Bob, bob_events, stores.as_ref().map(|s| &s.1)));
        (a.join(), b.join())
    });
    let alice = ra.map_err(|_| OfflineError::Panicked(Role::Alice))?.map_err(OfflineError::Session)?;
    let bob = rb.map_err(|_| OfflineError::Panicked(Role::Bob))?.map_err(OfflineError::Session)?;
    let epochs = combine_epochs(&alice.epochs, &join_pair_logs(&alice.pairs, &bob.pairs));
    let report = session_report(&epochs).map_err(|e| NetError::Config(e.to_string()))?;
    if let Some(d) = out_dir {
        write_node_outputs(&d.join("alice"), &alice, cfg.duration)?;
        write_node_outputs(&d.join("bob"), &bob, cfg.duration)?;
        crate::analysis::write_report_csvs(d, &epochs, &report).map_err(NetError::from)?;
    }
    Ok(OfflineRun { alice, bob, epochs, report })
}
