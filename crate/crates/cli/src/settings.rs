//! Builds a validated session configuration from a scenario, an optional
//! TOML file and command-line overrides, in that order of precedence.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use qkd_core::coincidence::ClickPolicy;
use qkd_core::reconcile::Backtrack;
use qkd_core::sim::make_scenario;
use qkd_core::SessionConfig;

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file of session settings; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named physical setup (local, one-435m, two-435m, one-pi,
    /// two-link-night1, two-link-night2).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Simulated seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Key-generation epoch length, 1 or 2 seconds.
    #[arg(long)]
    pub epoch_seconds: Option<u32>,
    /// Cascade backtracking: full or first-pass-only.
    #[arg(long)]
    pub cascade_backtrack: Option<Backtrack>,
    /// Double-click handling: randomize, first-wins or discard.
    #[arg(long)]
    pub double_click: Option<ClickPolicy>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn file_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<toml::Table>().with_context(|| format!("parsing {}", path.display()))
}

impl ConfigArgs {
    /// The resolved configuration; rejects out-of-range values before any
    /// file or network activity.
    pub fn resolve(&self) -> Result<SessionConfig> {
        let file = self.config.as_deref().map(file_table).transpose()?;
        let file_scenario = file.as_ref().and_then(|t| t.get("scenario")).and_then(|v| v.as_str()).map(String::from);
        let scenario = self.scenario.clone().or(file_scenario);
        let base = match &scenario {
            Some(name) => make_scenario(name)?,
            None => SessionConfig::default(),
        };
        let mut table = toml::Table::try_from(&base).context("serializing base configuration")?;
        if let Some(f) = file {
            merge(&mut table, f);
        }
        let mut cfg: SessionConfig = table.try_into().context("invalid configuration")?;
        cfg.scenario = scenario;
        if let Some(v) = self.duration {
            cfg.duration = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epoch_seconds {
            cfg.epoch_seconds = v;
        }
        if let Some(v) = self.cascade_backtrack {
            cfg.cascade.backtrack = v;
        }
        if let Some(v) = self.double_click {
            cfg.double_click_policy = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("session.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_without_inputs() {
        assert_eq!(ConfigArgs::default().resolve().unwrap(), SessionConfig::default());
    }

    #[test]
    fn scenario_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "scenario = \"two-link-night2\"\nseed = 5\n[source]\npair_rate = 12345.0\n");
        let args = ConfigArgs { config: Some(path.clone()), ..Default::default() };
        let cfg = args.resolve().unwrap();
        let mut want = make_scenario("two-link-night2").unwrap();
        want.seed = 5;
        want.source.pair_rate = 12345.0;
        assert_eq!(cfg, want);

        let args = ConfigArgs {
            config: Some(path),
            seed: Some(9),
            epoch_seconds: Some(1),
            cascade_backtrack: Some(Backtrack::FirstPassOnly),
            double_click: Some(ClickPolicy::FirstWins),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.seed, cfg.epoch_seconds), (9, 1));
        assert_eq!(cfg.source.pair_rate, 12345.0);
        assert_eq!(cfg.cascade.backtrack, Backtrack::FirstPassOnly);
        assert_eq!(cfg.double_click_policy, ClickPolicy::FirstWins);
    }

    #[test]
    fn saved_config_resolves_to_itself() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = make_scenario("one-pi").unwrap();
        cfg.seed = 77;
        cfg.cascade.passes = 6;
        let path = dir.path().join("saved.toml");
        cfg.save(&path).unwrap();
        assert_eq!(ConfigArgs { config: Some(path), ..Default::default() }.resolve().unwrap(), cfg);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(ConfigArgs { epoch_seconds: Some(3), ..Default::default() }.resolve().is_err());
        assert!(ConfigArgs { duration: Some(-1.0), ..Default::default() }.resolve().is_err());
        assert!(ConfigArgs { scenario: Some("nowhere".into()), ..Default::default() }.resolve().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "window = 12\n");
        assert!(ConfigArgs { config: Some(path), ..Default::default() }.resolve().is_err());
        let path = write(dir.path(), "no_such_key = [");
        assert!(ConfigArgs { config: Some(path), ..Default::default() }.resolve().is_err());
    }
}
