//! Runs every (mode, k, seed) combination of an experiment.

use std::fmt;

use log::{info, warn};

use flaps_core::orchestrator::{
    run_with_restarts, Federation, Mode, OrchestratorError, RoundResult,
};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Identifies one sweep entry. Baselines carry no `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SweepKey {
    pub mode: Mode,
    pub k: Option<usize>,
    pub seed: u64,
}

impl SweepKey {
    pub fn of(result: &RoundResult) -> Self {
        Self {
            mode: result.mode,
            k: result.k,
            seed: result.seed,
        }
    }
}

impl fmt::Display for SweepKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k {
            Some(k) => write!(f, "mode={} k={k} seed={}", self.mode, self.seed),
            None => write!(f, "mode={} seed={}", self.mode, self.seed),
        }
    }
}

#[derive(Debug)]
pub struct SweepFailure {
    pub key: SweepKey,
    pub error: OrchestratorError,
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub results: Vec<RoundResult>,
    pub failures: Vec<SweepFailure>,
}

/// Entries of a sweep sorted by `(mode, k, seed)`.
pub fn sweep_keys(config: &ExperimentConfig) -> Vec<SweepKey> {
    let mut keys = Vec::new();
    for mode in config.modes() {
        for &seed in &config.seeds {
            match mode {
                Mode::Flaps => keys.extend(config.k_list.iter().map(|&k| SweepKey {
                    mode,
                    k: Some(k),
                    seed,
                })),
                _ => keys.push(SweepKey {
                    mode,
                    k: None,
                    seed,
                }),
            }
        }
    }
    keys.sort();
    keys.dedup();
    keys
}

/// Builds the federation used by every round with this seed.
pub fn federation(config: &ExperimentConfig, seed: u64) -> Result<Federation, CliError> {
    let data = config.dataset.load()?;
    let (train, test) = data.split(config.test_fraction, seed)?;
    Federation::new(train, test, config.n_clients, seed)
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Runs all entries, continuing past failed rounds. Aborted rounds are
/// restarted up to `max_attempts` times first.
pub fn run_sweep_collect(config: &ExperimentConfig) -> Result<SweepOutcome, CliError> {
    config.validate()?;
    let keys = sweep_keys(config);
    let mut outcome = SweepOutcome::default();
    let mut seeds: Vec<u64> = config.seeds.clone();
    seeds.sort();
    seeds.dedup();
    for seed in seeds {
        let fed = federation(config, seed)?;
        for key in keys.iter().filter(|k| k.seed == seed) {
            let round = config.round_config(seed, key.k.unwrap_or(0));
            match run_with_restarts(key.mode, &fed, &round) {
                Ok(result) => {
                    info!(
                        "{key}: fscore {:.4}, total {:.3}s",
                        result.metrics.fscore, result.timing.total
                    );
                    outcome.results.push(result);
                }
                Err(error) => {
                    warn!("{key}: {error}");
                    outcome.failures.push(SweepFailure { key: *key, error });
                }
            }
        }
    }
    outcome.results.sort_by_key(SweepKey::of);
    Ok(outcome)
}

/// Runs all entries and fails on the first failed round.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<RoundResult>, CliError> {
    let outcome = run_sweep_collect(config)?;
    match outcome.failures.into_iter().next() {
        Some(SweepFailure { key, error }) => Err(CliError::Round { key, source: error }),
        None => Ok(outcome.results),
    }
}

/// Per seed and k, FLaPS scores against the baselines.
pub fn compare_report(results: &[RoundResult]) -> String {
    let find = |mode: Mode, seed: u64| results.iter().find(|r| r.mode == mode && r.seed == seed);
    let mut out = String::new();
    for r in results.iter().filter(|r| r.mode == Mode::Flaps) {
        let k = r.k.unwrap_or(0);
        let m = &r.metrics;
        out += &format!(
            "seed {} k {k}: fscore {:.4} auc {:.4} loss {:.4}",
            r.seed, m.fscore, m.auc, m.loss
        );
        for (name, mode) in [("central", Mode::Central), ("fl", Mode::Fl)] {
            if let Some(b) = find(mode, r.seed) {
                out += &format!(
                    " | vs {name}: fscore {:+.4} auc {:+.4} t3 {:+.4}s",
                    m.fscore - b.metrics.fscore,
                    m.auc - b.metrics.auc,
                    r.timing.t3 - b.timing.t3
                );
            }
        }
        out.push('\n');
    }
    out
}
