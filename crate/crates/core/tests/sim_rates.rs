use qkd_core::analysis::qber_decompose;
use qkd_core::netlink::run_offline;
use qkd_core::sim::{expected_rates, make_scenario, simulate_bell_run, AnalyzerSetting, SourceModel};

/// Raw key rates of the six setups, bits/s.
const TABLE5_RAW: [(&str, f64); 6] = [
    ("local", 6_025.0),
    ("one-435m", 2_812.0),
    ("two-435m", 1_170.0),
    ("one-pi", 1_398.0),
    ("two-link-night1", 857.0),
    ("two-link-night2", 565.0),
];

#[test]
fn local_ten_seconds_matches_local_rate() {
    let mut cfg = make_scenario("local").unwrap();
    cfg.duration = 10.0;
    cfg.seed = 31;
    let run = run_offline(&cfg, None).unwrap();
    let raw = run.report.raw_bits as f64;
    // Poisson spread plus a 3% model allowance.
    let tol = 3.0 * 60_250f64.sqrt() + 0.03 * 60_250.0;
    assert!((raw - 60_250.0).abs() <= tol, "raw {raw}");
}

#[test]
fn night2_hundred_epochs_raw_rate() {
    let mut cfg = make_scenario("two-link-night2").unwrap();
    assert_eq!(cfg.epoch_seconds, 2);
    cfg.duration = 200.0;
    cfg.seed = 32;
    let run = run_offline(&cfg, None).unwrap();
    assert_eq!(run.epochs.len(), 100);
    let rate = run.report.rate(run.report.raw_bits);
    assert!((rate / 565.0 - 1.0).abs() <= 0.10, "raw rate {rate}");
}

#[test]
fn scenario_models_predict_table5_rates() {
    for (name, raw) in TABLE5_RAW {
        let r = expected_rates(&make_scenario(name).unwrap());
        assert!((r.raw / raw - 1.0).abs() <= 0.05, "{name}: {} vs {raw}", r.raw);
    }
}

#[test]
fn balanced_source_sifts_half() {
    let m = simulate_bell_run(
        &SourceModel::default(),
        (AnalyzerSetting::new(0.0), AnalyzerSetting::new(0.0)),
        1_000_000,
        33,
    );
    let ratio = qber_decompose(&m).unwrap().sifted as f64 / m.total() as f64;
    assert!((ratio - 0.5).abs() <= 0.003, "sifted/raw {ratio}");
}
