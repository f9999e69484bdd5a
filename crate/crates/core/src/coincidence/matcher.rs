use crate::model::{CoincidentPair, DetectionEvent};

/// Sub-slice of a sorted stream with `start <= time < end`.
pub fn epoch_slice(events: &[DetectionEvent], start: u64, end: u64) -> &[DetectionEvent] {
    let lo = events.partition_point(|e| e.time.0 < start);
    let hi = events.partition_point(|e| e.time.0 < end);
    &events[lo..hi.max(lo)]
}

/// Index pairs `(alice, bob)` of coincidences: each Alice event, in time
/// order, takes the earliest unused Bob event with
/// `|tb - ta - offset| <= window / 2`.
pub fn find_coincidence_indices(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    offset: i64,
    window: u64,
) -> Vec<(usize, usize)> {
    let half = (window / 2) as i64;
    let mut out = Vec::new();
    let mut j = 0;
    for (i, a) in alice.iter().enumerate() {
        let ta = a.time.0 as i64;
        // Bob events left behind here are too early for every later Alice
        // event as well, and the earliest in-window event is always at `j`.
        while j < bob.len() && bob[j].time.0 as i64 - offset < ta - half {
            j += 1;
        }
        if j < bob.len() && bob[j].time.0 as i64 - offset <= ta + half {
            out.push((i, j));
            j += 1;
        }
    }
    out
}

pub fn find_coincidences(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    offset: i64,
    window: u64,
) -> Vec<CoincidentPair> {
    find_coincidence_indices(alice, bob, offset, window)
        .into_iter()
        .map(|(i, j)| CoincidentPair {
            alice_time: alice[i].time,
            bob_time: bob[j].time,
            alice_channel: alice[i].channel,
            bob_channel: bob[j].channel,
        })
        .collect()
}

/// Exhaustive quadratic matcher with the same greedy rule, used as an
/// oracle for `find_coincidences`.
pub fn reference_coincidences(
    alice: &[DetectionEvent],
    bob: &[DetectionEvent],
    offset: i64,
    window: u64,
) -> Vec<CoincidentPair> {
    let half = (window / 2) as i64;
    let mut used = vec![false; bob.len()];
    let mut out = Vec::new();
    for a in alice {
        let mut best: Option<usize> = None;
        for (j, b) in bob.iter().enumerate() {
            let d = b.time.0 as i64 - offset - a.time.0 as i64;
            if used[j] || d.abs() > half {
                continue;
            }
            if best.is_none_or(|k| (bob[k].time, k) > (b.time, j)) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[j] = true;
            out.push(CoincidentPair {
                alice_time: a.time,
                bob_time: bob[j].time,
                alice_channel: a.channel,
                bob_channel: bob[j].channel,
            });
        }
    }
    out
}
