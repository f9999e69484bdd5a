use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Channel, DetectionEvent};

/// Resolution of near-simultaneous clicks on different channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickPolicy {
    /// Uniformly random choice among the channels that fired.
    #[default]
    Randomize,
    /// Keep whichever click was recorded first.
    FirstWins,
    /// Drop the whole group.
    Discard,
}

impl std::str::FromStr for ClickPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "randomize" => Ok(ClickPolicy::Randomize),
            "first_wins" | "first-wins" => Ok(ClickPolicy::FirstWins),
            "discard" => Ok(ClickPolicy::Discard),
            _ => Err(format!("unknown double-click policy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClickConfig {
    pub dead_time: u64,
    pub double_click_window: u64,
    pub policy: ClickPolicy,
    pub dead_time_rejection: bool,
}

impl Default for ClickConfig {
    fn default() -> Self {
        ClickConfig { dead_time: 320, double_click_window: 6, policy: ClickPolicy::Randomize, dead_time_rejection: true }
    }
}

/// Collapses multi-channel click groups and, when enabled, rejects events
/// that follow a surviving event on another channel within the dead time.
pub fn apply_click_policies<R: Rng + ?Sized>(
    events: &[DetectionEvent],
    cfg: &ClickConfig,
    rng: &mut R,
) -> Vec<DetectionEvent> {
    let mut collapsed = Vec::with_capacity(events.len());
    let mut i = 0;
    while i < events.len() {
        let t0 = events[i].time.0;
        let mut j = i + 1;
        while j < events.len() && events[j].time.0 - t0 <= cfg.double_click_window {
            j += 1;
        }
        let mut fired: Vec<Channel> = Vec::with_capacity(4);
        for e in &events[i..j] {
            if !fired.contains(&e.channel) {
                fired.push(e.channel);
            }
        }
        let chosen = match (fired.len(), cfg.policy) {
            (1, _) | (_, ClickPolicy::FirstWins) => Some(events[i].channel),
            (_, ClickPolicy::Randomize) => Some(fired[rng.random_range(0..fired.len())]),
            (_, ClickPolicy::Discard) => None,
        };
        if let Some(channel) = chosen {
            collapsed.push(DetectionEvent { time: events[i].time, channel });
        }
        i = j;
    }
    if !cfg.dead_time_rejection || cfg.dead_time == 0 {
        return collapsed;
    }
    let mut last: [Option<u64>; 4] = [None; 4];
    collapsed.retain(|e| {
        let blocked = Channel::ALL
            .iter()
            .filter(|&&c| c != e.channel)
            .any(|c| last[c.index()].is_some_and(|t| e.time.0 - t < cfg.dead_time));
        if !blocked {
            last[e.channel.index()] = Some(e.time.0);
        }
        !blocked
    });
    collapsed
}
