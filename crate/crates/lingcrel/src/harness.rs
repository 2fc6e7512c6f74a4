//! Experiment orchestration: seeded end-to-end trials (generate, sample,
//! ICA, align, recover, evaluate), batch benchmarks with deterministic
//! reports, and minimal-sample-size scans.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ica::{
    align_environments, fast_ica, AlignOptions, AlignStrategy, IcaOptions, MixingEstimate,
};
use crate::metrics::{evaluate, ErrorReport};
use crate::recovery::{default_tl, learn_causal_model, RecoveredModel, RecoveryMode, RecoveryOptions};
use crate::rng::{derive_rng, derive_seed, tags};
use crate::scm::{
    gg_psi, psi_canonical_order, random_model, sample_environment, LinearScm,
};

fn default_n() -> Option<usize> {
    None
}
fn default_k() -> Option<usize> {
    None
}
fn default_n_list() -> Vec<usize> {
    vec![20_000]
}
fn default_num_graphs() -> usize {
    10
}
fn default_p() -> f64 {
    0.5
}
fn default_mode() -> RecoveryMode {
    RecoveryMode::FiniteSample
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("benchmark_out")
}
fn default_align_strategy() -> AlignStrategy {
    AlignStrategy::PsiSort
}
fn default_ica_max_iter() -> usize {
    500
}
fn default_ica_tol() -> f64 {
    1e-6
}
fn default_ica_restarts() -> usize {
    3
}

/// Full configuration of a benchmark batch. Loadable from JSON; every
/// field has a sensible default so partial configs are fine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub d: usize,
    /// Observed dimension; defaults to `d`.
    #[serde(default = "default_n")]
    pub n: Option<usize>,
    /// Environment count; defaults to `d`.
    #[serde(default = "default_k")]
    pub k_envs: Option<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Ascending sample sizes; trials run at the largest.
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    /// Rank threshold; defaults to the `c / sqrt(d)` rule.
    #[serde(default)]
    pub tl: Option<f64>,
    #[serde(default = "default_num_graphs")]
    pub num_graphs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_mode")]
    pub mode: RecoveryMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads for the batch; defaults to the rayon global choice.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Per-trial wall-clock budget in seconds.
    #[serde(default)]
    pub trial_budget_secs: Option<f64>,
    /// Ψ collision threshold; defaults to an adaptive value derived from
    /// the analytic Ψ gaps of the beta schedule.
    #[serde(default)]
    pub psi_split: Option<f64>,
    #[serde(default = "default_align_strategy")]
    pub align_strategy: AlignStrategy,
    #[serde(default = "default_ica_max_iter")]
    pub ica_max_iter: usize,
    #[serde(default = "default_ica_tol")]
    pub ica_tol: f64,
    #[serde(default = "default_ica_restarts")]
    pub ica_restarts: usize,
    /// Report measured wall times in results.csv. Off by default: the
    /// seconds column is zeroed so reruns are byte-identical; real
    /// timings always go to summary.json.
    #[serde(default)]
    pub timing_in_csv: bool,
}

impl BenchmarkConfig {
    pub fn new(d: usize, master_seed: u64) -> Self {
        BenchmarkConfig {
            d,
            n: None,
            k_envs: None,
            p: default_p(),
            n_list: default_n_list(),
            tl: None,
            num_graphs: default_num_graphs(),
            master_seed,
            mode: default_mode(),
            output_dir: default_output_dir(),
            workers: None,
            trial_budget_secs: None,
            psi_split: None,
            align_strategy: default_align_strategy(),
            ica_max_iter: default_ica_max_iter(),
            ica_tol: default_ica_tol(),
            ica_restarts: default_ica_restarts(),
            timing_in_csv: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter("d must be positive".into()));
        }
        if self.num_graphs == 0 {
            return Err(Error::InvalidParameter(
                "num_graphs must be at least 1".into(),
            ));
        }
        if self.n_list.is_empty() {
            return Err(Error::InvalidParameter("n_list must be nonempty".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "n_list must be strictly ascending".into(),
            ));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "edge probability must lie in (0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or(self.d)
    }

    pub fn k_envs(&self) -> usize {
        self.k_envs.unwrap_or(self.d)
    }

    pub fn tl(&self) -> f64 {
        self.tl.unwrap_or_else(|| default_tl(self.d))
    }

    pub fn max_samples(&self) -> usize {
        *self.n_list.last().expect("validated nonempty")
    }

    /// Collision threshold for Ψ alignment. The flat default of 0.02 is
    /// capped at half of the smallest analytic Ψ gap of the beta schedule,
    /// which otherwise triggers spurious aborts once shapes crowd together
    /// (large `d`).
    pub fn psi_split(&self) -> f64 {
        self.psi_split.unwrap_or_else(|| {
            let betas = crate::scm::beta_schedule(self.d);
            let mut psis: Vec<f64> = betas.iter().map(|&b| gg_psi(b)).collect();
            psis.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let min_gap = psis
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            (0.5 * min_gap).min(0.02)
        })
    }

    pub fn recovery_options(&self) -> RecoveryOptions {
        match self.mode {
            RecoveryMode::Population => RecoveryOptions::population(),
            RecoveryMode::FiniteSample => RecoveryOptions::finite_sample(self.tl()),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let config: BenchmarkConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }
}

/// Everything produced by one trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    /// Ground truth in the canonical (Ψ-sorted) labeling.
    pub model: LinearScm,
    pub estimate: MixingEstimate,
    pub recovered: RecoveredModel,
    pub report: ErrorReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub enum TrialOutcome {
    Completed(Box<TrialResult>),
    Failed { trial: usize, error: String },
}

impl TrialOutcome {
    pub fn trial(&self) -> usize {
        match self {
            TrialOutcome::Completed(r) => r.trial,
            TrialOutcome::Failed { trial, .. } => *trial,
        }
    }

    pub fn completed(&self) -> Option<&TrialResult> {
        match self {
            TrialOutcome::Completed(r) => Some(r),
            TrialOutcome::Failed { .. } => None,
        }
    }
}

fn check_budget(start: Instant, config: &BenchmarkConfig, trial: usize) -> Result<()> {
    if let Some(budget) = config.trial_budget_secs {
        if start.elapsed().as_secs_f64() > budget {
            return Err(Error::BudgetExceeded {
                trial,
                budget_secs: budget,
            });
        }
    }
    Ok(())
}

/// Draw the trial's ground-truth model, already relabeled into the
/// canonical Ψ order the alignment stage converges to.
pub fn trial_model(config: &BenchmarkConfig, trial: usize) -> Result<LinearScm> {
    let mut rng = derive_rng(config.master_seed, &[tags::TRIAL, trial as u64, tags::MODEL]);
    let raw = random_model(config.d, config.n(), config.k_envs(), config.p, &mut rng)?;
    let order = psi_canonical_order(raw.betas());
    Ok(raw
        .relabel(&order)?
        .with_seed(derive_seed(config.master_seed, &[tags::TRIAL, trial as u64])))
}

/// Run one trial at a given sample size.
pub fn run_trial_at(
    config: &BenchmarkConfig,
    trial: usize,
    n_samples: usize,
) -> Result<TrialResult> {
    let start = Instant::now();
    let model = trial_model(config, trial)?;
    check_budget(start, config, trial)?;

    let estimate = match config.mode {
        RecoveryMode::Population => MixingEstimate::from_population(&model),
        RecoveryMode::FiniteSample => {
            let mut blocks = Vec::with_capacity(model.n_envs());
            for k in 1..=model.n_envs() {
                let mut rng = derive_rng(
                    config.master_seed,
                    &[tags::TRIAL, trial as u64, tags::ENV, k as u64],
                );
                blocks.push(sample_environment(&model, k, n_samples, &mut rng)?);
                check_budget(start, config, trial)?;
            }
            let mut unmixing = Vec::with_capacity(blocks.len());
            for (idx, block) in blocks.iter().enumerate() {
                let opts = IcaOptions {
                    max_iter: config.ica_max_iter,
                    tol: config.ica_tol,
                    restarts: config.ica_restarts,
                    seed: derive_seed(
                        config.master_seed,
                        &[tags::TRIAL, trial as u64, tags::ICA, (idx + 1) as u64],
                    ),
                };
                unmixing.push(fast_ica(block, model.d(), &opts)?);
                check_budget(start, config, trial)?;
            }
            align_environments(
                &unmixing,
                &blocks,
                &AlignOptions {
                    split_threshold: config.psi_split(),
                    strategy: config.align_strategy,
                },
            )?
        }
    };

    let recovered = learn_causal_model(&estimate, &config.recovery_options())?;
    check_budget(start, config, trial)?;
    let report = evaluate(&model, &estimate, &recovered)?;

    Ok(TrialResult {
        trial,
        model,
        estimate,
        recovered,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Run one trial at the configured maximum sample size. Population mode
/// substitutes exact mixing matrices and never touches sampling or ICA.
pub fn run_trial(config: &BenchmarkConfig, trial: usize) -> Result<TrialResult> {
    run_trial_at(config, trial, config.max_samples())
}

/// Results of a whole batch, ordered by trial index.
#[derive(Debug)]
pub struct BatchResult {
    pub outcomes: Vec<TrialOutcome>,
}

impl BatchResult {
    pub fn completed(&self) -> impl Iterator<Item = &TrialResult> {
        self.outcomes.iter().filter_map(|o| o.completed())
    }

    pub fn n_failed(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.completed().is_none())
            .count()
    }

    pub fn n_recovered(&self) -> usize {
        self.completed()
            .filter(|r| r.report.graph_recovered)
            .count()
    }

    /// Median of all per-node effect-domination errors over trials whose
    /// graph was exactly recovered.
    pub fn median_eda_recovered(&self) -> Option<f64> {
        let mut values: Vec<f64> = self
            .completed()
            .filter(|r| r.report.graph_recovered)
            .flat_map(|r| r.report.eda_errors.iter().copied())
            .collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = values.len() / 2;
        Some(if values.len() % 2 == 1 {
            values[mid]
        } else {
            0.5 * (values[mid - 1] + values[mid])
        })
    }
}

/// Run every trial of the batch, in parallel up to the configured worker
/// count. Failed trials are recorded, not fatal. Deterministic for a
/// fixed seed at any worker count.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BatchResult> {
    config.validate()?;
    let run = || {
        (0..config.num_graphs)
            .into_par_iter()
            .map(|trial| match run_trial(config, trial) {
                Ok(result) => TrialOutcome::Completed(Box::new(result)),
                Err(error) => TrialOutcome::Failed {
                    trial,
                    error: error.to_string(),
                },
            })
            .collect::<Vec<_>>()
    };
    let outcomes = match config.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(BatchResult { outcomes })
}

/// Smallest sample size that exactly recovers the model's graph, scanned
/// over multiples of `step` up to the configured maximum; `None` if the
/// scan never succeeds. Fresh samples are drawn per probe from nested
/// seeds.
pub fn minimal_sample_size(
    config: &BenchmarkConfig,
    model: &LinearScm,
    step: usize,
) -> Result<Option<usize>> {
    if step == 0 {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    config.validate()?;
    if config.mode == RecoveryMode::Population {
        let estimate = MixingEstimate::from_population(model);
        let recovered = learn_causal_model(&estimate, &RecoveryOptions::population())?;
        return Ok(if crate::metrics::graph_match(model.g(), &recovered.g_hat) {
            Some(step)
        } else {
            None
        });
    }
    let max = config.max_samples();
    let mut probe = 0u64;
    let mut n = step;
    while n <= max {
        probe += 1;
        let mut blocks = Vec::with_capacity(model.n_envs());
        for k in 1..=model.n_envs() {
            let mut rng = derive_rng(
                config.master_seed,
                &[tags::SCAN, probe, tags::ENV, k as u64],
            );
            blocks.push(sample_environment(model, k, n, &mut rng)?);
        }
        let attempt: Result<RecoveredModel> = (|| {
            let mut unmixing = Vec::with_capacity(blocks.len());
            for (idx, block) in blocks.iter().enumerate() {
                let opts = IcaOptions {
                    max_iter: config.ica_max_iter,
                    tol: config.ica_tol,
                    restarts: config.ica_restarts,
                    seed: derive_seed(
                        config.master_seed,
                        &[tags::SCAN, probe, tags::ICA, (idx + 1) as u64],
                    ),
                };
                unmixing.push(fast_ica(block, model.d(), &opts)?);
            }
            let estimate = align_environments(
                &unmixing,
                &blocks,
                &AlignOptions {
                    split_threshold: config.psi_split(),
                    strategy: config.align_strategy,
                },
            )?;
            learn_causal_model(&estimate, &config.recovery_options())
        })();
        if let Ok(recovered) = attempt {
            if crate::metrics::graph_match(model.g(), &recovered.g_hat) {
                return Ok(Some(n));
            }
        }
        n += step;
    }
    Ok(None)
}

#[derive(Serialize)]
struct SummaryTrial {
    trial: usize,
    graph_id: Option<String>,
    recovered: Option<bool>,
    seconds: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a BenchmarkConfig,
    completed: usize,
    failed: usize,
    recovered: usize,
    median_eda_recovered: Option<f64>,
    trials: Vec<SummaryTrial>,
}

fn short_hash(model: &LinearScm) -> String {
    model.canonical_hash()[..12].to_string()
}

/// Write `results.csv`, `summary.json` and per-trial model/recovery/
/// estimate JSON files. The CSV is byte-stable for a fixed seed; measured
/// wall times live in `summary.json` (and in the CSV only when
/// `timing_in_csv` is set).
pub fn emit_report(
    batch: &BatchResult,
    config: &BenchmarkConfig,
    output_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(output_dir)?;
    let d = config.d;

    let mut writer = csv::Writer::from_path(output_dir.join("results.csv"))?;
    let mut header: Vec<String> = vec!["trial".into(), "graph_id".into(), "recovered".into()];
    header.extend((1..=d).map(|i| format!("eda_{i}")));
    header.extend((1..=d).map(|i| format!("true_{i}")));
    header.extend(["signal_min".into(), "noise_max".into(), "seconds".into()]);
    writer.write_record(&header)?;
    for outcome in &batch.outcomes {
        let Some(result) = outcome.completed() else {
            continue;
        };
        let mut record: Vec<String> = vec![
            result.trial.to_string(),
            short_hash(&result.model),
            result.report.graph_recovered.to_string(),
        ];
        record.extend(result.report.eda_errors.iter().map(|v| v.to_string()));
        record.extend(result.report.true_errors.iter().map(|v| v.to_string()));
        record.push(result.report.signal_min.to_string());
        record.push(result.report.noise_max.to_string());
        let seconds = if config.timing_in_csv {
            result.seconds
        } else {
            0.0
        };
        record.push(seconds.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;

    let summary = Summary {
        config,
        completed: batch.outcomes.len() - batch.n_failed(),
        failed: batch.n_failed(),
        recovered: batch.n_recovered(),
        median_eda_recovered: batch.median_eda_recovered(),
        trials: batch
            .outcomes
            .iter()
            .map(|outcome| match outcome {
                TrialOutcome::Completed(r) => SummaryTrial {
                    trial: r.trial,
                    graph_id: Some(short_hash(&r.model)),
                    recovered: Some(r.report.graph_recovered),
                    seconds: Some(r.seconds),
                    error: None,
                },
                TrialOutcome::Failed { trial, error } => SummaryTrial {
                    trial: *trial,
                    graph_id: None,
                    recovered: None,
                    seconds: None,
                    error: Some(error.clone()),
                },
            })
            .collect(),
    };
    std::fs::write(
        output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    for outcome in &batch.outcomes {
        let Some(result) = outcome.completed() else {
            continue;
        };
        let dir = output_dir.join(format!("trial_{:03}", result.trial));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("model.json"),
            serde_json::to_string_pretty(&result.model)?,
        )?;
        std::fs::write(
            dir.join("recovered.json"),
            serde_json::to_string_pretty(&result.recovered.to_json())?,
        )?;
        std::fs::write(
            dir.join("estimate.json"),
            serde_json::to_string_pretty(&result.estimate.to_json())?,
        )?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&result.report)?,
        )?;
    }
    Ok(())
}

/// Convenience wrapper: run the batch and write every report into the
/// configured output directory.
pub fn run_and_emit(config: &BenchmarkConfig) -> Result<BatchResult> {
    let batch = run_benchmark(config)?;
    emit_report(&batch, config, &config.output_dir)?;
    Ok(batch)
}
