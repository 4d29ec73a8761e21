//! Effective configuration: command-line flags over the config file over defaults.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;
use tdd_harness::prompting::{BackendConfig, BackendTarget};
use tdd_harness::sandbox::ExecLimits;
use tdd_harness::tddloop::{RunConfig, Strategy};

/// Runner command used when neither flag nor file names one.
pub const DEFAULT_RUNNER: &str = "tdd-runner";

/// Keys accepted in the TOML config file; all optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub tasks: Option<Vec<String>>,
    pub strategies: Option<Vec<String>>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub repair_budget: Option<u32>,
    pub reflection: Option<bool>,
    pub keep_order: Option<bool>,
    pub timeout: Option<f64>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub out: Option<PathBuf>,
    pub runner: Option<String>,
    pub api_key_env: Option<String>,
    pub max_tokens: Option<u32>,
    pub request_timeout: Option<f64>,
    pub retries: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Overrides from the command line (unset fields defer to the file).
#[derive(Debug, Default, Clone)]
pub struct FlagConfig {
    pub corpus: Option<PathBuf>,
    pub tasks: Option<Vec<String>>,
    pub strategies: Option<Vec<String>>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub repair_budget: Option<u32>,
    pub reflection: Option<bool>,
    pub keep_order: Option<bool>,
    pub timeout: Option<f64>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub out: Option<PathBuf>,
    pub runner: Option<String>,
}

/// Echoed into `run.json` and `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub corpus: PathBuf,
    pub tasks: Vec<String>,
    pub strategies: Vec<Strategy>,
    pub out: PathBuf,
    pub runner: String,
    pub parallel: usize,
    pub run: RunConfig,
}

pub fn resolve(flags: FlagConfig, file: FileConfig) -> Result<EffectiveConfig> {
    let corpus = flags
        .corpus
        .or(file.corpus)
        .context("no corpus given (--corpus or `corpus` in the config file)")?;
    let strategies: Vec<Strategy> = flags
        .strategies
        .or(file.strategies)
        .unwrap_or_else(|| vec!["tdd".to_string()])
        .iter()
        .map(|s| s.parse().map_err(anyhow::Error::msg))
        .collect::<Result<_>>()?;
    let strategies = {
        let mut s = strategies;
        s.sort();
        s.dedup();
        s
    };
    let backend = flags
        .backend
        .or(file.backend)
        .context("no backend given (--backend URL or mock:path)")?;
    let mut backend = BackendConfig::new(
        BackendTarget::parse(&backend),
        flags
            .model
            .or(file.model)
            .unwrap_or_else(|| "default".to_string()),
    );
    if let Some(k) = file.api_key_env {
        backend.api_key_env = k;
    }
    if let Some(m) = file.max_tokens {
        backend.max_tokens = m;
    }
    if let Some(r) = file.retries {
        backend.retries = r;
    }
    if let Some(t) = file.request_timeout {
        backend.request_timeout = secs(t, "request_timeout")?;
    }
    let parallel = flags.parallel.or(file.parallel).unwrap_or(1);
    if parallel == 0 {
        bail!("parallel must be at least 1");
    }
    backend.max_in_flight = parallel;

    let mut run = RunConfig::new(strategies[0], backend);
    run.repair_budget = flags
        .repair_budget
        .or(file.repair_budget)
        .unwrap_or(run.repair_budget);
    run.reflection_enabled = flags.reflection.or(file.reflection).unwrap_or(true);
    run.keep_predicted_order = flags.keep_order.or(file.keep_order).unwrap_or(true);
    run.limits = ExecLimits {
        timeout: match flags.timeout.or(file.timeout) {
            Some(t) => secs(t, "timeout")?,
            None => ExecLimits::default().timeout,
        },
        seed: flags.seed.or(file.seed).unwrap_or(0),
        scratch_root: None,
    };
    Ok(EffectiveConfig {
        corpus,
        tasks: flags.tasks.or(file.tasks).unwrap_or_default(),
        strategies,
        out: flags
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("out")),
        runner: flags
            .runner
            .or(file.runner)
            .unwrap_or_else(|| DEFAULT_RUNNER.to_string()),
        parallel,
        run,
    })
}

fn secs(v: f64, name: &str) -> Result<Duration> {
    if !v.is_finite() || v <= 0.0 {
        bail!("{name} must be a positive number of seconds");
    }
    Ok(Duration::from_secs_f64(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: FileConfig = toml::from_str(
            "corpus = \"c.json\"\nbackend = \"mock:m.json\"\nrepair_budget = 5\nseed = 7\nreflection = false\n",
        )
        .unwrap();
        let flags = FlagConfig {
            repair_budget: Some(1),
            ..Default::default()
        };
        let eff = resolve(flags, file).unwrap();
        assert_eq!(eff.run.repair_budget, 1);
        assert_eq!(eff.run.limits.seed, 7);
        assert!(!eff.run.reflection_enabled);
        assert!(eff.run.keep_predicted_order);
        assert_eq!(eff.run.limits.timeout, Duration::from_secs(30));
        assert_eq!(eff.run.backend.temperature, 0.0);
        assert_eq!(eff.strategies, [Strategy::Tdd]);
    }

    #[test]
    fn bad_values_are_rejected() {
        let base = || FlagConfig {
            corpus: Some("c".into()),
            backend: Some("mock:m".into()),
            ..Default::default()
        };
        let mut f = base();
        f.strategies = Some(vec!["greedy".into()]);
        assert!(resolve(f, FileConfig::default()).is_err());
        let mut f = base();
        f.parallel = Some(0);
        assert!(resolve(f, FileConfig::default()).is_err());
        let mut f = base();
        f.timeout = Some(0.0);
        assert!(resolve(f, FileConfig::default()).is_err());
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}
