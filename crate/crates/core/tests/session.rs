use qkd_core::netlink::{run_offline, OfflineError};
use qkd_core::sim::make_scenario;
use qkd_core::SessionConfig;

fn night(duration: f64, seed: u64) -> SessionConfig {
    let mut cfg = make_scenario("two-link-night1").unwrap();
    cfg.duration = duration;
    cfg.seed = seed;
    cfg
}

#[test]
fn offline_session_produces_matching_keys() {
    let run = run_offline(&night(4.0, 11), None).unwrap();
    eprintln!("{}", run.report);
    assert_eq!(run.alice.keys, run.bob.keys);
    assert_eq!(run.alice.keys.len(), 4);
    assert!(run.alice.keys.iter().any(|k| !k.is_empty()));
    let sent = run.alice.ledger.total_sent();
    assert_eq!(sent, run.bob.ledger.total_received());
    assert_eq!(run.alice.ledger.total_received(), run.bob.ledger.total_sent());
}

#[test]
fn forced_abort_skips_one_epoch() {
    let mut cfg = night(5.0, 3);
    cfg.faults.abort_epochs = vec![3];
    let run = run_offline(&cfg, None).unwrap();
    let epochs: Vec<u32> = run.alice.keys.iter().map(|k| k.epoch_id).collect();
    assert_eq!(epochs, vec![1, 2, 4, 5]);
    assert_eq!(run.bob.keys, run.alice.keys);
    assert_eq!(run.report.aborted_epochs, vec![3]);
}

#[test]
fn residual_error_is_caught_by_verification() {
    let mut cfg = night(3.0, 5);
    cfg.faults.residual_error_epochs = vec![2];
    let run = run_offline(&cfg, None).unwrap();
    let epochs: Vec<u32> = run.bob.keys.iter().map(|k| k.epoch_id).collect();
    assert_eq!(epochs, vec![1, 3]);
    assert_eq!(run.bob.keys, run.alice.keys);
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = night(1.0, 1);
    cfg.epoch_seconds = 7;
    assert!(matches!(run_offline(&cfg, None), Err(OfflineError::Net(_))));
}
