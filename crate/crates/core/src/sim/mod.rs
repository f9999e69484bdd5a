//! Monte-Carlo source, link, detector and clock simulation producing the two
//! timetag streams a pair of receivers would record.

mod scenario;
mod source;

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Channel, CoincidenceMatrix, DetectionEvent, Tick, TICKS_PER_SECOND};
use crate::seed::{rng_for, tags};

pub use scenario::{
    expected_rates, make_scenario, window_capture_probability, ExpectedRates, SCENARIO_NAMES,
};
pub use source::{
    correlated_bits, correlation, joint_distribution, joint_outcome, AnalyzerSetting, SourceModel,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation parameter: {0}")]
    Invalid(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

/// Relative per-channel detection efficiencies of Alice's detectors
/// (H, V, +, -), from the channel totals of the two-link reference matrix.
pub const ALICE_CHANNEL_TOTALS: [f64; 4] = [2_604_973.0, 3_165_021.0, 2_501_560.0, 2_535_326.0];
/// Same for Bob.
pub const BOB_CHANNEL_TOTALS: [f64; 4] = [2_006_125.0, 2_950_985.0, 2_872_020.0, 2_977_750.0];

pub fn relative_factors(totals: [f64; 4]) -> [f64; 4] {
    let max = totals.iter().cloned().fold(0.0, f64::max);
    totals.map(|t| t / max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub transmission: f64,
    pub detector_box_efficiency: f64,
    pub detector_quantum_efficiency: f64,
    /// Detected background counts per second, all channels together.
    pub background_rate: f64,
    /// Detector dark counts per second, all channels together.
    pub dark_rate: f64,
    pub per_channel_efficiency: [f64; 4],
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            transmission: 1.0,
            detector_box_efficiency: 1.0,
            detector_quantum_efficiency: 1.0,
            background_rate: 0.0,
            dark_rate: 0.0,
            per_channel_efficiency: [1.0; 4],
        }
    }
}

impl LinkModel {
    /// Detection probability before the per-channel factor.
    pub fn base_efficiency(&self) -> f64 {
        self.transmission * self.detector_box_efficiency * self.detector_quantum_efficiency
    }

    pub fn efficiency(&self, c: Channel) -> f64 {
        self.base_efficiency() * self.per_channel_efficiency[c.index()]
    }

    pub fn mean_channel_factor(&self) -> f64 {
        self.per_channel_efficiency.iter().sum::<f64>() / 4.0
    }

    fn validate(&self, side: &str) -> Result<(), SimError> {
        let unit = [
            ("transmission", self.transmission),
            ("detector_box_efficiency", self.detector_box_efficiency),
            ("detector_quantum_efficiency", self.detector_quantum_efficiency),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::Invalid(format!("{side}.{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [("background_rate", self.background_rate), ("dark_rate", self.dark_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(format!("{side}.{name} = {v} must be >= 0")));
            }
        }
        if self.per_channel_efficiency.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(SimError::Invalid(format!("{side}.per_channel_efficiency must lie in (0, 1]")));
        }
        Ok(())
    }
}

/// Bob's clock relative to Alice's. Alice's timetagger is the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockModel {
    /// Ticks; at most 100 ms in magnitude.
    pub initial_offset: i64,
    /// Fractional rate error of Bob's oscillator between resyncs.
    pub drift: f64,
    /// Relative timing jitter between the stations, ticks (1 sigma).
    pub jitter_sigma: f64,
    pub dead_time: u64,
    pub resync_period: u64,
}

pub const MAX_INITIAL_OFFSET: i64 = 640_000_000;

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel {
            initial_offset: 0,
            drift: 1e-8,
            jitter_sigma: 3.0,
            dead_time: 320,
            resync_period: TICKS_PER_SECOND,
        }
    }
}

impl ClockModel {
    /// Bob's clock reading (fractional ticks) at true time `t` ticks, without
    /// jitter. The drift error restarts from zero at every 1PPS edge.
    pub fn bob_reading(&self, t: f64) -> f64 {
        let since_resync = t.rem_euclid(self.resync_period as f64);
        t + self.initial_offset as f64 + self.drift * since_resync
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.initial_offset.abs() > MAX_INITIAL_OFFSET {
            return Err(SimError::Invalid(format!(
                "initial_offset {} exceeds 100 ms ({MAX_INITIAL_OFFSET} ticks)",
                self.initial_offset
            )));
        }
        if !(self.drift.abs() < 1e-3) {
            return Err(SimError::Invalid(format!("drift {} too large", self.drift)));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(SimError::Invalid("jitter_sigma must be >= 0".into()));
        }
        if self.resync_period == 0 {
            return Err(SimError::Invalid("resync_period must be > 0".into()));
        }
        Ok(())
    }
}

pub fn validate_models(
    source: &SourceModel,
    alice: &LinkModel,
    bob: &LinkModel,
    clocks: &ClockModel,
) -> Result<(), SimError> {
    for (name, v) in [("pair_rate", source.pair_rate), ("singles_rate_per_side", source.singles_rate_per_side)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(SimError::Invalid(format!("{name} = {v} must be >= 0")));
        }
    }
    if source.pair_rate > source.singles_rate_per_side {
        return Err(SimError::Invalid("pair_rate exceeds singles_rate_per_side".into()));
    }
    for (name, v) in [("visibility_z", source.visibility_z), ("visibility_x", source.visibility_x)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SimError::Invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    alice.validate("alice")?;
    bob.validate("bob")?;
    clocks.validate()
}

/// One emitted pair in which at least one photon was detected.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub pair_id: u64,
    pub alice_tick: i64,
    /// Bob's clock reading; may be negative before his clock's zero.
    pub bob_tick: i64,
    pub alice_channel: Channel,
    pub bob_channel: Channel,
    pub alice_detected: bool,
    pub bob_detected: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutput {
    pub alice: Vec<DetectionEvent>,
    pub bob: Vec<DetectionEvent>,
    pub truth: Vec<TruthRecord>,
}

pub fn write_truth_csv<W: Write>(mut w: W, truth: &[TruthRecord]) -> io::Result<()> {
    writeln!(w, "pair_id,alice_tick,bob_tick,alice_channel,bob_channel,survived_flags")?;
    for r in truth {
        writeln!(
            w,
            "{},{},{},{},{},{}{}",
            r.pair_id,
            r.alice_tick,
            r.bob_tick,
            r.alice_channel,
            r.bob_channel,
            r.alice_detected as u8,
            r.bob_detected as u8
        )?;
    }
    w.flush()
}

fn poisson_times<R: Rng>(rate: f64, duration: f64, rng: &mut R, mut f: impl FnMut(f64, &mut R)) {
    if rate <= 0.0 || duration <= 0.0 {
        return;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < duration {
        f(t, rng);
        t += gap.sample(rng);
    }
}

fn uniform_channel<R: Rng>(rng: &mut R) -> Channel {
    Channel::ALL[rng.random_range(0..4)]
}

/// Drops events closer than `dead_time` to the previous kept event on the
/// same channel. Input must be sorted.
pub fn enforce_dead_time(events: &mut Vec<DetectionEvent>, dead_time: u64) {
    if dead_time == 0 {
        return;
    }
    let mut last: [Option<u64>; 4] = [None; 4];
    events.retain(|e| {
        let slot = &mut last[e.channel.index()];
        match *slot {
            Some(prev) if e.time.0 - prev < dead_time => false,
            _ => {
                *slot = Some(e.time.0);
                true
            }
        }
    });
}

/// Generates both detection streams for `duration` seconds.
///
/// Pairs are emitted as a Poisson process; each photon independently
/// survives its link with the end-to-end efficiency of the channel it lands
/// in. Unpaired source photons, background light and dark counts are
/// uniform in time and over channels. Bob's events are mapped through the
/// clock model; events that fall before his clock's zero are lost. Each
/// stream is sorted and has per-channel dead time applied.
pub fn generate_streams(
    source: &SourceModel,
    alice: &LinkModel,
    bob: &LinkModel,
    clocks: &ClockModel,
    angles: (AnalyzerSetting, AnalyzerSetting),
    duration: f64,
    seed: u64,
) -> Result<SimOutput, SimError> {
    validate_models(source, alice, bob, clocks)?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(SimError::Invalid(format!("duration {duration} must be >= 0")));
    }
    let tps = TICKS_PER_SECOND as f64;
    let jitter = Normal::new(0.0, clocks.jitter_sigma).expect("finite sigma");
    let mut clock_rng = rng_for(seed, tags::SIM_CLOCK, 0);
    let mut bob_tick = |t_secs: f64| -> i64 {
        let reading = clocks.bob_reading(t_secs * tps) + jitter.sample(&mut clock_rng);
        reading.floor() as i64
    };
    let alice_tick = |t_secs: f64| (t_secs * tps).floor() as i64;

    let mut out = SimOutput::default();
    let mut bob_raw: Vec<(i64, Channel)> = Vec::new();

    // Pairs. Only candidates where at least one side could detect are drawn:
    // the base efficiencies bound every channel's efficiency from above.
    let ea = alice.base_efficiency();
    let eb = bob.base_efficiency();
    let p_candidate = ea + eb - ea * eb;
    let mut pair_rng = rng_for(seed, tags::SIM_PAIRS, 0);
    let mut pair_id = 0u64;
    poisson_times(source.pair_rate * p_candidate, duration, &mut pair_rng, |t, rng| {
        pair_id += 1;
        let u = rng.random::<f64>() * p_candidate;
        let (a_reaches, b_reaches) = if u < ea * (1.0 - eb) {
            (true, false)
        } else if u < ea * (1.0 - eb) + (1.0 - ea) * eb {
            (false, true)
        } else {
            (true, true)
        };
        let (ca, cb) = joint_outcome(source, angles, rng);
        let a_det = a_reaches && rng.random::<f64>() < alice.per_channel_efficiency[ca.index()];
        let b_det = b_reaches && rng.random::<f64>() < bob.per_channel_efficiency[cb.index()];
        if !(a_det || b_det) {
            return;
        }
        let ta = alice_tick(t);
        let tb = bob_tick(t);
        if a_det {
            out.alice.push(DetectionEvent { time: Tick(ta as u64), channel: ca });
        }
        if b_det {
            bob_raw.push((tb, cb));
        }
        out.truth.push(TruthRecord {
            pair_id,
            alice_tick: ta,
            bob_tick: tb,
            alice_channel: ca,
            bob_channel: cb,
            alice_detected: a_det,
            bob_detected: b_det,
        });
    });

    // Unpaired source photons: the partner was never emitted into the
    // collected mode, so the polarization is fully mixed.
    let unpaired = (source.singles_rate_per_side - source.pair_rate).max(0.0);
    let mut alice_rng = rng_for(seed, tags::SIM_ALICE, 0);
    poisson_times(unpaired * ea, duration, &mut alice_rng, |t, rng| {
        let c = uniform_channel(rng);
        if rng.random::<f64>() < alice.per_channel_efficiency[c.index()] {
            out.alice.push(DetectionEvent { time: Tick(alice_tick(t) as u64), channel: c });
        }
    });
    poisson_times(alice.background_rate + alice.dark_rate, duration, &mut alice_rng, |t, rng| {
        out.alice.push(DetectionEvent { time: Tick(alice_tick(t) as u64), channel: uniform_channel(rng) });
    });

    let mut bob_rng = rng_for(seed, tags::SIM_BOB, 0);
    let mut bob_times = Vec::new();
    poisson_times(unpaired * eb, duration, &mut bob_rng, |t, rng| {
        let c = uniform_channel(rng);
        if rng.random::<f64>() < bob.per_channel_efficiency[c.index()] {
            bob_times.push((t, c));
        }
    });
    poisson_times(bob.background_rate + bob.dark_rate, duration, &mut bob_rng, |t, rng| {
        bob_times.push((t, uniform_channel(rng)));
    });
    for (t, c) in bob_times {
        bob_raw.push((bob_tick(t), c));
    }
    out.bob = bob_raw
        .into_iter()
        .filter(|&(t, _)| t >= 0)
        .map(|(t, c)| DetectionEvent { time: Tick(t as u64), channel: c })
        .collect();

    out.alice.sort_unstable();
    out.bob.sort_unstable();
    enforce_dead_time(&mut out.alice, clocks.dead_time);
    enforce_dead_time(&mut out.bob, clocks.dead_time);
    Ok(out)
}

/// Ideal-detection Bell test: `n_pairs` pairs through the two analyzers,
/// every photon detected, outcomes tallied into a coincidence matrix.
pub fn simulate_bell_run(
    source: &SourceModel,
    angles: (AnalyzerSetting, AnalyzerSetting),
    n_pairs: u64,
    seed: u64,
) -> CoincidenceMatrix {
    let mut rng = rng_for(seed, tags::SIM_PAIRS, 1);
    let mut m = CoincidenceMatrix::default();
    for _ in 0..n_pairs {
        let (a, b) = joint_outcome(source, angles, &mut rng);
        m.record(a, b);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Basis;

    fn lossless() -> LinkModel {
        LinkModel::default()
    }

    fn quiet_clock() -> ClockModel {
        ClockModel { drift: 0.0, jitter_sigma: 0.0, ..ClockModel::default() }
    }

    #[test]
    fn nothing_emitted_means_empty_streams() {
        let source = SourceModel { pair_rate: 0.0, singles_rate_per_side: 0.0, ..SourceModel::default() };
        let out = generate_streams(&source, &lossless(), &lossless(), &quiet_clock(), Default::default(), 5.0, 1).unwrap();
        assert!(out.alice.is_empty() && out.bob.is_empty() && out.truth.is_empty());
    }

    #[test]
    fn perfect_singlet_is_anticorrelated_in_same_basis() {
        let source = SourceModel {
            pair_rate: 5_000.0,
            singles_rate_per_side: 5_000.0,
            visibility_z: 1.0,
            visibility_x: 1.0,
            state_phase: 0.0,
        };
        let out = generate_streams(&source, &lossless(), &lossless(), &quiet_clock(), Default::default(), 1.0, 9).unwrap();
        let mut same_basis = 0;
        for r in &out.truth {
            assert!(r.alice_detected && r.bob_detected);
            if r.alice_channel.basis() == r.bob_channel.basis() {
                same_basis += 1;
                assert_ne!(r.alice_channel.bit(), r.bob_channel.bit());
            }
        }
        assert!(same_basis > 2_000);
    }

    #[test]
    fn identical_seed_is_bit_identical() {
        let cfg = make_scenario("two-link-night2").unwrap();
        let run = |seed| {
            generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), 0.5, seed).unwrap()
        };
        let (a, b) = (run(11), run(11));
        assert_eq!(a.alice, b.alice);
        assert_eq!(a.bob, b.bob);
        assert_eq!(a.truth, b.truth);
        assert_ne!(run(12).alice, a.alice);
    }

    #[test]
    fn table2_alice_total_rate() {
        // Alice: 10,000/s from the source, 14,693/s background, 1,200/s dark.
        let cfg = make_scenario("two-link-night2").unwrap();
        let duration = 10.0;
        let out = generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), duration, 5).unwrap();
        let rate = out.alice.len() as f64 / duration;
        let target: f64 = 25_893.0;
        assert!((rate - target).abs() < 3.0 * (target / duration).sqrt(), "alice rate {rate}");
        let bob_rate = out.bob.len() as f64 / duration;
        assert!((bob_rate - 42_340.0).abs() < 3.0 * (42_340.0f64 / duration).sqrt() + 20.0, "bob rate {bob_rate}");
    }

    #[test]
    fn dead_time_respected_per_channel() {
        let cfg = make_scenario("local").unwrap();
        let out = generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), 0.5, 3).unwrap();
        for stream in [&out.alice, &out.bob] {
            assert!(stream.windows(2).all(|w| w[0].time <= w[1].time));
            let mut last = [None; 4];
            for e in stream.iter() {
                if let Some(prev) = last[e.channel.index()] {
                    assert!(e.time.0 - prev >= cfg.clock.dead_time);
                }
                last[e.channel.index()] = Some(e.time.0);
            }
        }
    }

    #[test]
    fn drift_error_resets_at_each_pps_edge() {
        let clock = ClockModel { initial_offset: 1000, drift: 1e-8, ..ClockModel::default() };
        let p = clock.resync_period as f64;
        for k in 0..5 {
            let t = k as f64 * p;
            assert!((clock.bob_reading(t) - t - 1000.0).abs() < 1.0);
            let just_before = t + p - 1.0;
            let err = clock.bob_reading(just_before) - just_before - 1000.0;
            assert!((err - 64.0).abs() < 0.01, "{err}");
        }
    }

    #[test]
    fn qber_floor_follows_visibilities() {
        let source = SourceModel {
            pair_rate: 200_000.0,
            singles_rate_per_side: 200_000.0,
            visibility_z: 0.9,
            visibility_x: 0.8,
            state_phase: 0.0,
        };
        let out = generate_streams(&source, &lossless(), &lossless(), &quiet_clock(), Default::default(), 1.0, 4).unwrap();
        let mut n = [0u32; 2];
        let mut err = [0u32; 2];
        for r in &out.truth {
            if r.alice_channel.basis() == r.bob_channel.basis() {
                let i = (r.alice_channel.basis() == Basis::X) as usize;
                n[i] += 1;
                err[i] += (r.alice_channel.bit() == r.bob_channel.bit()) as u32;
            }
        }
        for (i, expected) in [(0, 0.05), (1, 0.1)] {
            let q = err[i] as f64 / n[i] as f64;
            let sigma = (expected * (1.0 - expected) / n[i] as f64).sqrt();
            assert!((q - expected).abs() < 4.0 * sigma, "basis {i}: {q}");
        }
    }

    #[test]
    fn rejects_invalid_models() {
        let mut cfg = make_scenario("local").unwrap();
        cfg.source.pair_rate = cfg.source.singles_rate_per_side * 2.0;
        assert!(generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), 1.0, 1).is_err());
        let mut cfg = make_scenario("local").unwrap();
        cfg.clock.initial_offset = MAX_INITIAL_OFFSET + 1;
        assert!(generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), 1.0, 1).is_err());
        let cfg = make_scenario("local").unwrap();
        assert!(generate_streams(&cfg.source, &cfg.alice, &cfg.bob, &cfg.clock, cfg.angles(), -1.0, 1).is_err());
    }
}
