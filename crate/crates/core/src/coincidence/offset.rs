//! Clock-offset recovery by hierarchical cross-correlation of the two
//! detection streams.
//!
//! A coarse histogram of time differences (FFT-based when the search range
//! is wide) finds the peak to within a microsecond; the peak region is then
//! re-histogrammed at 16x finer bins until single ticks are reached. Before
//! the final level the slow clock drift between 1PPS edges is fitted and
//! removed, since it can smear the peak over several tens of ticks.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::CoincidenceError;
use crate::model::{DetectionEvent, Tick, TICKS_PER_SECOND};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetEstimate {
    /// Bob's clock minus Alice's at the start of each resync period, ticks.
    pub offset: i64,
    /// Fitted fractional rate error of Bob's clock within a resync period.
    pub drift: f64,
    pub histogram_peak_height: u64,
    /// Counts inside the coincidence window over the expected background.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetConfig {
    /// Half-width of the search around `center`, ticks.
    pub search_range: u64,
    pub center: i64,
    pub coarse_bin: u64,
    pub refine_factor: u64,
    pub lock_threshold: f64,
    pub window: u64,
    pub resync_period: u64,
}

impl Default for OffsetConfig {
    fn default() -> Self {
        OffsetConfig {
            search_range: 640_000_000,
            center: 0,
            coarse_bin: 6_400,
            refine_factor: 16,
            lock_threshold: 5.0,
            window: 13,
            resync_period: TICKS_PER_SECOND,
        }
    }
}

/// Coarse lag ranges wider than this many bins use the FFT correlator.
const DIRECT_MAX_BINS: i64 = 512;
/// Longest Alice span fed to the FFT correlator, in coarse bins.
const FFT_MAX_SPAN_BINS: i64 = 1 << 21;
const FINAL_CENTROID_HALF_WIDTH: i64 = 8;
const DRIFT_MIN_POINTS: usize = 20;
const MAX_DRIFT: f64 = 1e-6;

pub fn recover_offset(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    search_range: u64,
) -> Result<OffsetEstimate, CoincidenceError> {
    recover_offset_with(alice, bob, &OffsetConfig { search_range, ..OffsetConfig::default() })
}

fn times(events: &[DetectionEvent]) -> Vec<i64> {
    events.iter().map(|e| e.time.0 as i64).collect()
}

/// Calls `f(alice_index, delta)` for every pair with `lo <= tb - ta < hi`.
fn for_each_delta(ta: &[i64], tb: &[i64], lo: i64, hi: i64, mut f: impl FnMut(usize, i64)) {
    let mut start = 0;
    for (i, &a) in ta.iter().enumerate() {
        while start < tb.len() && tb[start] - a < lo {
            start += 1;
        }
        let mut j = start;
        while j < tb.len() && tb[j] - a < hi {
            f(i, tb[j] - a);
            j += 1;
        }
    }
}

fn histogram(ta: &[i64], tb: &[i64], lo: i64, bin: i64, bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for_each_delta(ta, tb, lo, lo + bin * bins as i64, |_, d| h[((d - lo) / bin) as usize] += 1);
    h
}

fn argmax(h: &[u64]) -> usize {
    let mut best = 0;
    for (i, &v) in h.iter().enumerate() {
        if v > h[best] {
            best = i;
        }
    }
    best
}

/// Counts of `floor(tb / w) - floor(ta / w)` for lags in `lo..=hi`.
fn fft_lag_counts(ta: &[i64], tb: &[i64], w: i64, lo: i64, hi: i64) -> Vec<u64> {
    let a0 = ta[0].div_euclid(w);
    let span = (ta[ta.len() - 1].div_euclid(w) - a0 + 1).min(FFT_MAX_SPAN_BINS);
    let lags = hi - lo + 1;
    let len_b = span + lags - 1;
    let n = (len_b as usize).next_power_of_two();
    let mut fa = vec![Complex::new(0.0f64, 0.0); n];
    let mut fb = vec![Complex::new(0.0f64, 0.0); n];
    for &t in ta {
        let i = t.div_euclid(w) - a0;
        if i >= span {
            break;
        }
        fa[i as usize].re += 1.0;
    }
    let b0 = a0 + lo;
    for &t in tb {
        let i = t.div_euclid(w) - b0;
        if (0..len_b).contains(&i) {
            fb[i as usize].re += 1.0;
        }
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = x.conj() * y;
    }
    planner.plan_fft_inverse(n).process(&mut fa);
    let scale = 1.0 / n as f64;
    (0..lags as usize).map(|j| (fa[j].re * scale).round().max(0.0) as u64).collect()
}

/// Mean coarse-bin count away from the peak, used as the background level.
fn background_per_bin(h: &[u64], peak: usize) -> f64 {
    let (sum, n) = h
        .iter()
        .enumerate()
        .filter(|(i, _)| i.abs_diff(peak) > 1)
        .fold((0u64, 0usize), |(s, n), (_, &v)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Trimmed least-squares fit of `delta = a + b * phase`, where `phase` is
/// Alice's time since the last resync edge.
fn fit_drift(points: &[(f64, f64)], start: f64) -> (f64, f64) {
    let (mut a, mut b) = (start, 0.0);
    for half_width in [128.0, 32.0, 16.0, 10.0] {
        let sel: Vec<_> = points.iter().filter(|(x, y)| (y - a - b * x).abs() <= half_width).collect();
        if sel.len() < DRIFT_MIN_POINTS {
            break;
        }
        let n = sel.len() as f64;
        let mx = sel.iter().map(|p| p.0).sum::<f64>() / n;
        let my = sel.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = sel.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = sel.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        b = if sxx > 0.0 { (sxy / sxx).clamp(-MAX_DRIFT, MAX_DRIFT) } else { 0.0 };
        a = my - b * mx;
    }
    (a, b)
}

/// One of Bob's times mapped onto a drift-free clock.
pub fn deskew_time(t: u64, offset: f64, drift: f64, resync_period: u64) -> u64 {
    if drift == 0.0 {
        return t;
    }
    let shift = (drift * (t as f64 - offset).rem_euclid(resync_period as f64)).round() as i64;
    (t as i64 - shift).max(0) as u64
}

/// Maps Bob's times back onto a drift-free clock with the given offset and
/// drift, keeping the result sorted.
pub fn deskew(bob: &[DetectionEvent], offset: f64, drift: f64, resync_period: u64) -> Vec<DetectionEvent> {
    let mut out: Vec<DetectionEvent> = bob
        .iter()
        .map(|e| DetectionEvent { time: Tick(deskew_time(e.time.0, offset, drift, resync_period)), channel: e.channel })
        .collect();
    out.sort_unstable();
    out
}

pub fn recover_offset_with(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    cfg: &OffsetConfig,
) -> Result<OffsetEstimate, CoincidenceError> {
    Ok(correlate(alice, bob, cfg)?.0)
}

/// Recovers the offset and returns it together with Bob's drift-corrected
/// stream, ready for coincidence matching.
pub fn correlate(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    cfg: &OffsetConfig,
) -> Result<(OffsetEstimate, Vec<DetectionEvent>), CoincidenceError> {
    if alice.is_empty() || bob.is_empty() {
        return Err(CoincidenceError::EmptyStream);
    }
    let ta = times(alice);
    let tb = times(bob);
    let w = cfg.coarse_bin.max(1) as i64;
    let range = cfg.search_range as i64;

    // Coarse level: locate the peak to within a few coarse bins.
    let (region_lo, bg_per_bin) = {
        let lo_lag = (cfg.center - range).div_euclid(w) - 1;
        let hi_lag = (cfg.center + range).div_euclid(w) + 1;
        if hi_lag - lo_lag > DIRECT_MAX_BINS {
            let h = fft_lag_counts(&ta, &tb, w, lo_lag, hi_lag);
            let k = argmax(&h);
            let lag = lo_lag + k as i64;
            (lag * w - w - w / 2, background_per_bin(&h, k))
        } else {
            let lo = lo_lag * w;
            let h = histogram(&ta, &tb, lo, w, (hi_lag - lo_lag + 1) as usize);
            let k = argmax(&h);
            (lo + (k as i64 - 1) * w, background_per_bin(&h, k))
        }
    };

    // Refinement down to the level just above single ticks.
    let factor = cfg.refine_factor.max(2) as i64;
    let mut lo = region_lo;
    let mut bin = w;
    while bin / factor >= 2 {
        let width = bin * 3;
        bin /= factor;
        let h = histogram(&ta, &tb, lo, bin, (width / bin) as usize);
        let j = argmax(&h) as i64;
        lo += (j - 1) * bin;
    }
    let rough = lo as f64 + 1.5 * bin as f64;

    // Drift fit on the differences around the rough peak.
    let p = cfg.resync_period.max(1) as i64;
    let mut points = Vec::new();
    for_each_delta(&ta, &tb, rough as i64 - 192, rough as i64 + 192, |i, d| {
        points.push((ta[i].rem_euclid(p) as f64, d as f64))
    });
    let (a, drift) = fit_drift(&points, rough);
    let bob_fixed = deskew(bob, a, drift, cfg.resync_period);
    let tb = times(&bob_fixed);

    // Single-tick level: background-subtracted centroid around the peak.
    let bg_per_tick = bg_per_bin / w as f64;
    let search = 32;
    let base = a.round() as i64 - search;
    let h = histogram(&ta, &tb, base, 1, (2 * search + 1) as usize);
    let peak = argmax(&h) as i64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in (peak - FINAL_CENTROID_HALF_WIDTH).max(0)..=(peak + FINAL_CENTROID_HALF_WIDTH).min(2 * search) {
        let c = (h[k as usize] as f64 - bg_per_tick).max(0.0);
        num += c * k as f64;
        den += c;
    }
    let center = if den > 0.0 { (num / den).round() as i64 } else { peak };
    let offset = base + center;
    let half = (cfg.window / 2) as i64;
    let in_window: u64 = ((center - half).max(0)..=(center + half).min(2 * search)).map(|k| h[k as usize]).sum();
    let expected_bg = (bg_per_tick * cfg.window as f64).max(1.0);
    let confidence = in_window as f64 / expected_bg;
    let estimate = OffsetEstimate { offset, drift, histogram_peak_height: h[peak as usize], confidence };
    if confidence <= cfg.lock_threshold {
        return Err(CoincidenceError::LockFailure { confidence });
    }
    Ok((estimate, bob_fixed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Channel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poisson(rate_per_tick: f64, span: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let mut t = 0.0;
        let mut out = Vec::new();
        loop {
            t += -rng.random::<f64>().ln() / rate_per_tick;
            if t >= span as f64 {
                return out;
            }
            out.push(t as u64);
        }
    }

    fn events(ts: &[u64]) -> Vec<DetectionEvent> {
        ts.iter().map(|&t| DetectionEvent::new(t, Channel::H)).collect()
    }

    #[test]
    fn identical_streams_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = events(&poisson(1e-5, 1 << 30, &mut rng));
        let est = recover_offset(&a, &a, 640_000_000).unwrap();
        assert_eq!(est.offset, 0);
        assert!(est.drift.abs() < 1e-15);
    }

    #[test]
    fn shifted_copy_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let span = 6_400_000_000u64;
        let pairs = poisson(2e-7, span, &mut rng);
        let offset = -4_321_987i64;
        let mut a = poisson(3e-6, span, &mut rng);
        let mut b: Vec<u64> = poisson(5e-6, span, &mut rng)
            .into_iter()
            .filter(|&t| t as i64 + offset >= 0)
            .map(|t| (t as i64 + offset) as u64)
            .collect();
        for &t in &pairs {
            a.push(t);
            let bt = t as i64 + offset + rng.random_range(-2..=2);
            if bt >= 0 {
                b.push(bt as u64);
            }
        }
        a.sort_unstable();
        b.sort_unstable();
        let est = recover_offset(&events(&a), &events(&b), 640_000_000).unwrap();
        assert!((est.offset - offset).abs() <= 1, "{est:?}");
        assert!(est.confidence > 5.0);
    }

    #[test]
    fn narrow_search_around_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = poisson(1e-5, 1 << 28, &mut rng);
        let b: Vec<u64> = a.iter().map(|t| t + 777).collect();
        let cfg = OffsetConfig { center: 700, search_range: 64 * 6_400, ..OffsetConfig::default() };
        let est = recover_offset_with(&events(&a), &events(&b), &cfg).unwrap();
        assert_eq!(est.offset, 777);
    }

    #[test]
    fn empty_stream_is_an_error() {
        let a = events(&[1, 2, 3]);
        assert_eq!(recover_offset(&a, &[], 100).unwrap_err(), CoincidenceError::EmptyStream);
    }

    #[test]
    fn drift_fit_recovers_slope() {
        let points: Vec<(f64, f64)> =
            (0..200).map(|i| (i as f64 * 3.2e7, 50.0 + 1e-8 * i as f64 * 3.2e7)).collect();
        let (a, b) = fit_drift(&points, 60.0);
        assert!((a - 50.0).abs() < 1e-6);
        assert!((b - 1e-8).abs() < 1e-12);
    }

    #[test]
    fn deskew_undoes_drift() {
        let drift = 1e-8;
        let bob: Vec<DetectionEvent> = (0..100u64)
            .map(|i| {
                let x = i * 60_000_000;
                DetectionEvent::new(x + 1000 + (drift * x as f64) as u64, Channel::V)
            })
            .collect();
        let fixed = deskew(&bob, 1000.0, drift, TICKS_PER_SECOND);
        for (i, e) in fixed.iter().enumerate() {
            assert!((e.time.0 as i64 - (i as i64 * 60_000_000 + 1000)).abs() <= 1);
        }
    }
}
