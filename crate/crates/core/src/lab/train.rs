//! End-to-end training of the toy policy with RAPO or GRPO.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{PolicyView, ToyPolicy};
use super::rollout::{decode, rollout, score_group};
use super::task::{default_suite, SpecError, SuiteConfig, SyntheticTask};
use crate::eval::{answer_correct, ToolCounts};
use crate::exec::MockExecutor;
use crate::model::RolloutGroup;
use crate::rapo::{rapo_step, OptimizerMode, RapoConfig, RapoError};
use crate::reward::RewardConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub steps: usize,
    pub tasks_per_batch: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer_mode: OptimizerMode,
    pub temperature: f64,
    /// Gradient steps taken on each sampled batch.
    pub updates_per_batch: usize,
    pub suite: SuiteConfig,
    pub reward: RewardConfig,
    pub rapo: RapoConfig<f64>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            tasks_per_batch: 8,
            group_size: 8,
            learning_rate: 20.0,
            seed: 0,
            optimizer_mode: OptimizerMode::Rapo,
            temperature: 1.0,
            updates_per_batch: 2,
            suite: SuiteConfig::default(),
            reward: RewardConfig::default(),
            rapo: RapoConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Suite(#[from] SpecError),
    #[error("optimizer failed at step {step}: {source}")]
    Optimizer { step: usize, source: RapoError },
    #[error("parameters became non-finite at step {step}")]
    NonFiniteParameters { step: usize },
    #[error("could not write metrics: {0}")]
    Csv(#[from] csv::Error),
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.tasks_per_batch == 0 {
            return bad("tasks_per_batch must be positive");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.updates_per_batch == 0 {
            return bad("updates_per_batch must be positive");
        }
        if self.suite.n_tasks == 0 {
            return bad("suite must contain at least one task");
        }
        self.reward.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.rapo_config::<f64>().validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    /// Optimizer settings with the run's mode and group size applied.
    pub fn rapo_config<T: Scalar>(&self) -> RapoConfig<T> {
        RapoConfig {
            eps_low: T::lit(self.rapo.eps_low),
            eps_high: T::lit(self.rapo.eps_high),
            alpha: T::lit(self.rapo.alpha),
            group_size: self.group_size,
            mode: self.optimizer_mode,
            std_epsilon: T::lit(self.rapo.std_epsilon),
        }
    }
}

pub const METRICS_COLUMNS: [&str; 11] = [
    "step",
    "mode",
    "seed",
    "mean_reward",
    "oracle_accuracy",
    "tool_calls_ratio",
    "pass_ratio",
    "objective",
    "mean_gamma",
    "misaligned_pair_fraction",
    "clipped_fraction",
];

/// One row of the metrics CSV, logged before the step's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mode: OptimizerMode,
    pub seed: u64,
    pub mean_reward: f64,
    /// Greedy-decoding accuracy over the whole suite.
    pub oracle_accuracy: f64,
    pub tool_calls_ratio: f64,
    /// Empty when the batch made no tool calls.
    pub pass_ratio: Option<f64>,
    pub objective: f64,
    pub mean_gamma: f64,
    pub misaligned_pair_fraction: f64,
    pub clipped_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput<T> {
    pub metrics: Vec<StepMetrics>,
    pub policy: ToyPolicy<T>,
    /// Greedy accuracy of the final parameters.
    pub final_oracle_accuracy: f64,
}

pub fn write_metrics_csv<W: Write>(metrics: &[StepMetrics], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(METRICS_COLUMNS)?;
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of suite tasks the greedy policy answers correctly.
pub fn greedy_accuracy<T: Scalar>(policy: &ToyPolicy<T>, suite: &[SyntheticTask]) -> f64 {
    if suite.is_empty() {
        return 0.0;
    }
    let mut executor = MockExecutor::new();
    let hits = suite
        .iter()
        .filter(|t| {
            let traj = decode(t, policy.greedy(policy.context_of(t)), Vec::new(), &mut executor);
            answer_correct(&t.task, traj.final_answer.as_deref())
        })
        .count();
    hits as f64 / suite.len() as f64
}

/// Trains on the configured suite.
pub fn train<T: Scalar>(cfg: &TrainRunConfig) -> Result<TrainOutput<T>, TrainError> {
    cfg.validate()?;
    let suite = default_suite(&cfg.suite)?;
    train_on(cfg, &suite)
}

/// Trains on an explicit task list.
pub fn train_on<T: Scalar>(cfg: &TrainRunConfig, suite: &[SyntheticTask]) -> Result<TrainOutput<T>, TrainError> {
    cfg.validate()?;
    if suite.is_empty() {
        return Err(TrainError::InvalidConfig("suite is empty".into()));
    }
    let n_cols = suite.iter().map(|t| t.task.table.n_cols()).max().unwrap_or(1);
    let temperature = T::lit(cfg.temperature);
    let lr = T::lit(cfg.learning_rate);
    let rapo_cfg = cfg.rapo_config::<T>();
    let mut policy = ToyPolicy::<T>::uniform(n_cols, temperature);
    let contexts: HashMap<String, usize> = suite.iter().map(|t| (t.task.id.clone(), policy.context_of(t))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_batch = cfg.tasks_per_batch.min(suite.len());
    let mut metrics = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let picks = sample_indices(&mut rng, suite.len(), per_batch).into_vec();
        let seeds: Vec<u64> = picks.iter().map(|_| rng.gen()).collect();
        let batch: Vec<RolloutGroup> = picks
            .par_iter()
            .zip(&seeds)
            .map(|(&k, &seed)| {
                let task = &suite[k];
                let mut group_rng = ChaCha8Rng::seed_from_u64(seed);
                let mut g = rollout(&policy, task, cfg.group_size, temperature, &mut group_rng);
                score_group(&mut g, task, step as u64, &cfg.reward);
                g
            })
            .collect();

        let all = batch.iter().flat_map(|g| &g.trajectories);
        let counts = ToolCounts::from_trajectories(all.clone());
        let rewards: Vec<f64> = all.filter_map(|t| t.total_reward()).collect();
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let oracle_accuracy = greedy_accuracy(&policy, suite);

        let mut first_report = None;
        for _ in 0..cfg.updates_per_batch {
            let view = PolicyView { policy: &policy, contexts: &contexts };
            let (report, grad) =
                rapo_step(&batch, &view, &rapo_cfg).map_err(|source| TrainError::Optimizer { step, source })?;
            ascend(&mut policy.theta, &grad, lr, step)?;
            first_report.get_or_insert(report);
        }
        let report = first_report.expect("at least one update");
        metrics.push(StepMetrics {
            step,
            mode: cfg.optimizer_mode,
            seed: cfg.seed,
            mean_reward,
            oracle_accuracy,
            tool_calls_ratio: counts.tool_calls_ratio(),
            pass_ratio: counts.pass_ratio(),
            objective: report.objective_value.as_f64(),
            mean_gamma: report.mean_gamma.as_f64(),
            misaligned_pair_fraction: report.misaligned_pair_fraction.as_f64(),
            clipped_fraction: report.clipped_fraction.as_f64(),
        });
    }
    let final_oracle_accuracy = greedy_accuracy(&policy, suite);
    Ok(TrainOutput { metrics, policy, final_oracle_accuracy })
}

/// `theta += lr * grad`, refusing to leave non-finite parameters behind.
pub fn ascend<T: Scalar>(theta: &mut [T], grad: &[T], lr: T, step: usize) -> Result<(), TrainError> {
    for (p, &g) in theta.iter_mut().zip(grad) {
        *p += lr * g;
    }
    if theta.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::NonFiniteParameters { step })
    }
}

/// Mean of `mean_reward` over all steps: the area under the reward curve per step.
pub fn reward_auc(metrics: &[StepMetrics]) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    metrics.iter().map(|m| m.mean_reward).sum::<f64>() / metrics.len() as f64
}

/// Mean tool-calls ratio over the last `window` steps.
pub fn tail_tool_calls_ratio(metrics: &[StepMetrics], window: usize) -> f64 {
    let tail = &metrics[metrics.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|m| m.tool_calls_ratio).sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub rapo_curve: Vec<f64>,
    pub grpo_curve: Vec<f64>,
    pub rapo_auc: f64,
    pub grpo_auc: f64,
    pub rapo_final_accuracy: f64,
    pub grpo_final_accuracy: f64,
    pub rapo_tail_tool_ratio: f64,
    pub grpo_tail_tool_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<SeedComparison>,
    /// Fraction of seeds where RAPO's AUC is at least GRPO's.
    pub rapo_ge_fraction: f64,
    pub tail_window: usize,
}

impl ComparisonReport {
    /// Per-step mean reward averaged over seeds.
    pub fn mean_curve(&self, mode: OptimizerMode) -> Vec<f64> {
        let curves: Vec<&Vec<f64>> = self
            .seeds
            .iter()
            .map(|s| if mode == OptimizerMode::Rapo { &s.rapo_curve } else { &s.grpo_curve })
            .collect();
        let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
        (0..len).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64).collect()
    }
}

pub const TAIL_WINDOW: usize = 100;

/// Matched RAPO/GRPO runs on seeds `cfg.seed .. cfg.seed + n_seeds`.
pub fn compare_modes(cfg: &TrainRunConfig, n_seeds: usize) -> Result<(ComparisonReport, Vec<StepMetrics>), TrainError> {
    if n_seeds == 0 {
        return Err(TrainError::InvalidConfig("n_seeds must be positive".into()));
    }
    cfg.validate()?;
    let suite = default_suite(&cfg.suite)?;
    let jobs: Vec<(u64, OptimizerMode)> = (0..n_seeds as u64)
        .flat_map(|i| [(cfg.seed + i, OptimizerMode::Rapo), (cfg.seed + i, OptimizerMode::Grpo)])
        .collect();
    let runs: Vec<TrainOutput<f64>> = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let run_cfg = TrainRunConfig { seed, optimizer_mode: mode, ..cfg.clone() };
            train_on(&run_cfg, &suite)
        })
        .collect::<Result<_, _>>()?;
    let seeds: Vec<SeedComparison> = runs
        .chunks(2)
        .zip(jobs.chunks(2))
        .map(|(pair, job)| {
            let (r, g) = (&pair[0], &pair[1]);
            let curve = |o: &TrainOutput<f64>| o.metrics.iter().map(|m| m.mean_reward).collect();
            SeedComparison {
                seed: job[0].0,
                rapo_curve: curve(r),
                grpo_curve: curve(g),
                rapo_auc: reward_auc(&r.metrics),
                grpo_auc: reward_auc(&g.metrics),
                rapo_final_accuracy: r.final_oracle_accuracy,
                grpo_final_accuracy: g.final_oracle_accuracy,
                rapo_tail_tool_ratio: tail_tool_calls_ratio(&r.metrics, TAIL_WINDOW),
                grpo_tail_tool_ratio: tail_tool_calls_ratio(&g.metrics, TAIL_WINDOW),
            }
        })
        .collect();
    let wins = seeds.iter().filter(|s| s.rapo_auc >= s.grpo_auc).count();
    let report = ComparisonReport { rapo_ge_fraction: wins as f64 / seeds.len() as f64, seeds, tail_window: TAIL_WINDOW };
    let metrics = runs.into_iter().flat_map(|o| o.metrics).collect();
    Ok((report, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainRunConfig {
        TrainRunConfig {
            steps: 5,
            tasks_per_batch: 4,
            suite: SuiteConfig { n_tasks: 8, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_writes_header_only() {
        let out = train::<f64>(&TrainRunConfig { steps: 0, ..small() }).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&out.metrics, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", METRICS_COLUMNS.join(",")));
    }

    #[test]
    fn same_seed_same_csv() {
        let csv = |cfg: &TrainRunConfig| {
            let mut buf = Vec::new();
            write_metrics_csv(&train::<f64>(cfg).unwrap().metrics, &mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&small()), csv(&small()));
        assert_ne!(csv(&small()), csv(&TrainRunConfig { seed: 1, ..small() }));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let out = train::<f64>(&TrainRunConfig { learning_rate: 0.0, ..small() }).unwrap();
        assert!(out.policy.theta.iter().all(|&x| x == 0.0));
        let first = out.metrics[0].oracle_accuracy;
        assert!(out.metrics.iter().all(|m| m.oracle_accuracy == first));
    }

    #[test]
    fn ratios_in_unit_interval() {
        for m in train::<f64>(&small()).unwrap().metrics {
            assert!((0.0..=1.0).contains(&m.tool_calls_ratio));
            if let Some(p) = m.pass_ratio {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn runs_in_single_precision() {
        let out = train::<f32>(&small()).unwrap();
        assert!(out.policy.is_finite());
        assert_eq!(out.metrics.len(), 5);
    }

    #[test]
    fn invalid_configs() {
        assert!(train::<f64>(&TrainRunConfig { group_size: 1, ..small() }).is_err());
        assert!(train::<f64>(&TrainRunConfig { temperature: 0.0, ..small() }).is_err());
        assert!(train::<f64>(&TrainRunConfig { learning_rate: f64::NAN, ..small() }).is_err());
    }

    #[test]
    fn overflowing_update_names_the_step() {
        let mut theta = vec![0.0, 1e308];
        let err = ascend(&mut theta, &[1.0, 1.0], 1e308, 17).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteParameters { step: 17 }));
        let mut theta = vec![0.5f32];
        ascend(&mut theta, &[2.0], 0.25, 0).unwrap();
        assert_eq!(theta, vec![1.0]);
    }

    #[test]
    fn comparison_shape() {
        let (report, metrics) = compare_modes(&TrainRunConfig { steps: 1, ..small() }, 1).unwrap();
        assert_eq!(report.seeds.len(), 1);
        assert_eq!(report.mean_curve(OptimizerMode::Rapo).len(), 1);
        assert_eq!(report.mean_curve(OptimizerMode::Grpo).len(), 1);
        assert_eq!(metrics.len(), 2);
    }
}
