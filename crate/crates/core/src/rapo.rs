//! Rank-aware policy optimization.
//!
//! Each rollout group's rewards are normalized into advantages, then every
//! trajectory's advantage is scaled by a rank weight `gamma_i`. For each
//! (winner, loser) pair with a strictly higher winner reward the pair weight is
//! `1 + alpha` when the policy was more confident in the loser (lower mean
//! token log-probability for the winner) and `1` otherwise; `gamma_i` is the
//! mean pair weight over all pairs trajectory `i` takes part in.
//!
//! The surrogate is the token-level clipped objective with asymmetric clip
//! bounds and no KL term:
//!
//! ```text
//! J = mean_groups [ 1/sum_i |o_i| * sum_i sum_t min(r_it * A'_i, clip(r_it, 1-eps_low, 1+eps_high) * A'_i) ]
//! r_it = exp(logp_new - logp_old)
//! ```
//!
//! [`OptimizerMode::Grpo`] fixes every `gamma_i` to one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{length_normalized_logprob, RolloutGroup, Trajectory};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    #[default]
    #[serde(alias = "RAPO")]
    Rapo,
    #[serde(alias = "GRPO")]
    Grpo,
}

impl OptimizerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rapo => "rapo",
            Self::Grpo => "grpo",
        }
    }
}

impl std::fmt::Display for OptimizerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OptimizerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rapo" => Ok(Self::Rapo),
            "grpo" => Ok(Self::Grpo),
            other => Err(format!("unknown optimizer mode {other:?} (expected rapo or grpo)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct RapoConfig<T> {
    pub eps_low: T,
    pub eps_high: T,
    /// Extra weight applied to misaligned pairs.
    pub alpha: T,
    pub group_size: usize,
    pub mode: OptimizerMode,
    /// Added to the group reward std before dividing.
    pub std_epsilon: T,
}

impl<T: Scalar> Default for RapoConfig<T> {
    fn default() -> Self {
        Self {
            eps_low: T::lit(0.2),
            eps_high: T::lit(0.28),
            alpha: T::lit(0.5),
            group_size: 8,
            mode: OptimizerMode::Rapo,
            std_epsilon: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> RapoConfig<T> {
    pub fn validate(&self) -> Result<(), RapoError> {
        let bad = |m: String| Err(RapoError::InvalidConfig(m));
        if !(self.eps_low > T::zero() && self.eps_low <= self.eps_high && self.eps_high < T::one()) {
            return bad(format!(
                "need 0 < eps_low <= eps_high < 1, got eps_low={} eps_high={}",
                self.eps_low, self.eps_high
            ));
        }
        if self.alpha.is_nan() || self.alpha < T::zero() {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if self.std_epsilon.is_nan() || self.std_epsilon <= T::zero() {
            return bad(format!("std_epsilon must be > 0, got {}", self.std_epsilon));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: OptimizerMode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RapoError {
    #[error("group has {0} trajectories; advantages need at least 2")]
    GroupTooSmall(usize),
    #[error("expected {expected} new log-probabilities, got {got}")]
    AlignmentError { expected: usize, got: usize },
    #[error("group {group}, trajectory {traj}: reward not computed")]
    MissingReward { group: usize, traj: usize },
    #[error("group {group}, trajectory {traj}: no sampled tokens")]
    EmptyTrajectory { group: usize, traj: usize },
    #[error("gradient component {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("policy error: {0}")]
    Policy(String),
}

/// Per-trajectory advantage bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord<T> {
    pub traj_index: usize,
    pub base_advantage: T,
    pub gamma: T,
    pub weighted_advantage: T,
    /// Mean old-policy token log-probability, the confidence used for ranking.
    pub logprob_norm: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub objective_value: T,
    /// Raw per-token surrogate terms in batch order.
    pub per_token_terms: Vec<T>,
    /// Fraction of tokens on the clipped (constant) branch.
    pub clipped_fraction: T,
    pub mean_gamma: T,
    /// Misaligned pairs over all ranked pairs; zero when no pair was formed.
    pub misaligned_pair_fraction: T,
}

/// Gamma weights for one group plus pair counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSummary<T> {
    pub gammas: Vec<T>,
    pub n_pairs: usize,
    pub n_misaligned: usize,
}

/// `(R_i - mean) / (std + std_epsilon)` with the population standard deviation.
pub fn group_advantages<T: Scalar>(rewards: &[T], cfg: &RapoConfig<T>) -> Result<Vec<T>, RapoError> {
    if rewards.len() < 2 {
        return Err(RapoError::GroupTooSmall(rewards.len()));
    }
    let n = T::from_count(rewards.len());
    let mean = rewards.iter().copied().sum::<T>() / n;
    let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if std == T::zero() {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    Ok(rewards.iter().map(|&r| (r - mean) / (std + cfg.std_epsilon)).collect())
}

/// `1 + alpha` when the winner is strictly less confident than the loser, else `1`.
pub fn pairwise_gamma<T: Scalar>(logp_winner: T, logp_loser: T, alpha: T) -> T {
    if logp_winner < logp_loser {
        T::one() + alpha
    } else {
        T::one()
    }
}

/// Rank weights from raw rewards and confidences. Ties in reward form no pair.
pub fn gammas_from<T: Scalar>(rewards: &[T], confidences: &[T], alpha: T, mode: OptimizerMode) -> GammaSummary<T> {
    let g = rewards.len();
    debug_assert_eq!(g, confidences.len());
    // Per trajectory: pairs it appears in, and how many of those are misaligned.
    let mut counts = vec![0usize; g];
    let mut flagged = vec![0usize; g];
    let (mut n_pairs, mut n_misaligned) = (0, 0);
    for w in 0..g {
        for l in 0..g {
            if rewards[w] > rewards[l] {
                n_pairs += 1;
                counts[w] += 1;
                counts[l] += 1;
                if confidences[w] < confidences[l] {
                    n_misaligned += 1;
                    flagged[w] += 1;
                    flagged[l] += 1;
                }
            }
        }
    }
    if mode == OptimizerMode::Grpo {
        // Pair counts are still reported as a diagnostic.
        return GammaSummary { gammas: vec![T::one(); g], n_pairs, n_misaligned };
    }
    // Mean of pairwise gammas, written as 1 + alpha * share so rounding cannot leave [1, 1 + alpha].
    let gammas = counts
        .iter()
        .zip(&flagged)
        .map(|(&c, &m)| if c == 0 { T::one() } else { T::one() + alpha * (T::from_count(m) / T::from_count(c)) })
        .collect();
    GammaSummary { gammas, n_pairs, n_misaligned }
}

fn group_rewards<T: Scalar>(group: &RolloutGroup, group_index: usize) -> Result<Vec<T>, RapoError> {
    group
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.total_reward()
                .map(T::lit)
                .ok_or(RapoError::MissingReward { group: group_index, traj: i })
        })
        .collect()
}

fn group_confidences<T: Scalar>(group: &RolloutGroup, group_index: usize) -> Result<Vec<T>, RapoError> {
    group
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            length_normalized_logprob(t)
                .map(T::lit)
                .map_err(|_| RapoError::EmptyTrajectory { group: group_index, traj: i })
        })
        .collect()
}

/// Rank weight per trajectory of a scored group.
pub fn trajectory_gammas<T: Scalar>(group: &RolloutGroup, cfg: &RapoConfig<T>) -> Result<Vec<T>, RapoError> {
    let rewards = group_rewards(group, 0)?;
    let conf = group_confidences(group, 0)?;
    Ok(gammas_from(&rewards, &conf, cfg.alpha, cfg.mode).gammas)
}

fn records_for<T: Scalar>(
    group: &RolloutGroup,
    group_index: usize,
    cfg: &RapoConfig<T>,
) -> Result<(Vec<AdvantageRecord<T>>, GammaSummary<T>), RapoError> {
    let rewards = group_rewards(group, group_index)?;
    let conf = group_confidences(group, group_index)?;
    let base = group_advantages(&rewards, cfg)?;
    let summary = gammas_from(&rewards, &conf, cfg.alpha, cfg.mode);
    let records = (0..rewards.len())
        .map(|i| AdvantageRecord {
            traj_index: i,
            base_advantage: base[i],
            gamma: summary.gammas[i],
            weighted_advantage: summary.gammas[i] * base[i],
            logprob_norm: conf[i],
        })
        .collect();
    Ok((records, summary))
}

/// Advantage records for one scored group.
pub fn advantage_records<T: Scalar>(group: &RolloutGroup, cfg: &RapoConfig<T>) -> Result<Vec<AdvantageRecord<T>>, RapoError> {
    records_for(group, 0, cfg).map(|(r, _)| r)
}

/// `min(ratio * adv, clip(ratio, 1 - eps_low, 1 + eps_high) * adv)`.
pub fn clipped_token_term<T: Scalar>(ratio: T, adv: T, cfg: &RapoConfig<T>) -> T {
    let clipped = ratio.max(T::one() - cfg.eps_low).min(T::one() + cfg.eps_high);
    (ratio * adv).min(clipped * adv)
}

/// Whether the surrogate sits on its constant clipped branch.
pub fn is_clipped<T: Scalar>(ratio: T, adv: T, cfg: &RapoConfig<T>) -> bool {
    (adv > T::zero() && ratio > T::one() + cfg.eps_high) || (adv < T::zero() && ratio < T::one() - cfg.eps_low)
}

/// A policy that can score and differentiate the tokens of a trajectory.
pub trait DifferentiablePolicy<T: Scalar>: Sync {
    fn num_params(&self) -> usize;

    /// Current-policy log-probability of every sampled token of `traj`.
    fn sequence_logprobs(&self, traj: &Trajectory) -> Result<Vec<T>, RapoError>;

    /// Adds `sum_t weights[t] * d log pi(token_t) / d theta` into `grad`.
    fn accumulate_logprob_grad(&self, traj: &Trajectory, weights: &[T], grad: &mut [T]) -> Result<(), RapoError>;
}

struct GroupEval<T> {
    objective: T,
    terms: Vec<T>,
    n_clipped: usize,
    gamma_sum: T,
    n_traj: usize,
    n_pairs: usize,
    n_misaligned: usize,
    grad: Option<Vec<T>>,
}

fn eval_group<T: Scalar, P: DifferentiablePolicy<T> + ?Sized>(
    group: &RolloutGroup,
    group_index: usize,
    new_logprobs: &[T],
    policy: Option<&P>,
    grad_scale: T,
    cfg: &RapoConfig<T>,
) -> Result<GroupEval<T>, RapoError> {
    let (records, gammas) = records_for(group, group_index, cfg)?;
    let n_tokens = group.n_tokens();
    let norm = T::one() / T::from_count(n_tokens);
    let mut terms = Vec::with_capacity(n_tokens);
    let mut n_clipped = 0;
    let mut grad = policy.map(|p| vec![T::zero(); p.num_params()]);
    let mut offset = 0;
    for (traj, rec) in group.trajectories.iter().zip(&records) {
        let adv = rec.weighted_advantage;
        let mut weights = Vec::with_capacity(traj.tokens.len());
        for (tok, &new_lp) in traj.tokens.iter().zip(&new_logprobs[offset..offset + traj.tokens.len()]) {
            let ratio = (new_lp - T::lit(tok.logprob_old)).exp();
            terms.push(clipped_token_term(ratio, adv, cfg));
            if is_clipped(ratio, adv, cfg) {
                n_clipped += 1;
                weights.push(T::zero());
            } else {
                // d(ratio * adv)/d theta = ratio * adv * d logp/d theta
                weights.push(grad_scale * norm * adv * ratio);
            }
        }
        if let (Some(p), Some(g)) = (policy, grad.as_mut()) {
            p.accumulate_logprob_grad(traj, &weights, g)?;
        }
        offset += traj.tokens.len();
    }
    let objective = terms.iter().copied().sum::<T>() * norm;
    Ok(GroupEval {
        objective,
        terms,
        n_clipped,
        gamma_sum: gammas.gammas.iter().copied().sum(),
        n_traj: gammas.gammas.len(),
        n_pairs: gammas.n_pairs,
        n_misaligned: gammas.n_misaligned,
        grad,
    })
}

fn check_group(group: &RolloutGroup, group_index: usize) -> Result<(), RapoError> {
    if group.len() < 2 {
        return Err(RapoError::GroupTooSmall(group.len()));
    }
    if let Some(i) = group.trajectories.iter().position(|t| t.tokens.is_empty()) {
        return Err(RapoError::EmptyTrajectory { group: group_index, traj: i });
    }
    Ok(())
}

fn evaluate<T: Scalar, P: DifferentiablePolicy<T> + ?Sized>(
    batch: &[RolloutGroup],
    new_logprobs: &[T],
    policy: Option<&P>,
    cfg: &RapoConfig<T>,
) -> Result<(LossReport<T>, Option<Vec<T>>), RapoError> {
    cfg.validate()?;
    let expected: usize = batch.iter().map(RolloutGroup::n_tokens).sum();
    if new_logprobs.len() != expected {
        return Err(RapoError::AlignmentError { expected, got: new_logprobs.len() });
    }
    let mut offsets = Vec::with_capacity(batch.len());
    let mut acc = 0;
    for (gi, group) in batch.iter().enumerate() {
        check_group(group, gi)?;
        offsets.push(acc);
        acc += group.n_tokens();
    }
    if batch.is_empty() {
        let grad = policy.map(|p| vec![T::zero(); p.num_params()]);
        let zero = T::zero();
        let report = LossReport {
            objective_value: zero,
            per_token_terms: Vec::new(),
            clipped_fraction: zero,
            mean_gamma: T::one(),
            misaligned_pair_fraction: zero,
        };
        return Ok((report, grad));
    }
    let grad_scale = T::one() / T::from_count(batch.len());
    // Per-group work may run in parallel; the reduction below walks groups in
    // batch order so the result does not depend on scheduling.
    let evals: Vec<GroupEval<T>> = batch
        .par_iter()
        .enumerate()
        .map(|(gi, group)| {
            let start = offsets[gi];
            eval_group(group, gi, &new_logprobs[start..start + group.n_tokens()], policy, grad_scale, cfg)
        })
        .collect::<Result<_, _>>()?;

    let mut objective = T::zero();
    let mut terms = Vec::with_capacity(expected);
    let (mut n_clipped, mut n_traj, mut n_pairs, mut n_misaligned) = (0, 0, 0, 0);
    let mut gamma_sum = T::zero();
    let mut grad = policy.map(|p| vec![T::zero(); p.num_params()]);
    for e in evals {
        objective += e.objective;
        terms.extend(e.terms);
        n_clipped += e.n_clipped;
        gamma_sum += e.gamma_sum;
        n_traj += e.n_traj;
        n_pairs += e.n_pairs;
        n_misaligned += e.n_misaligned;
        if let (Some(total), Some(part)) = (grad.as_mut(), e.grad) {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
    }
    let report = LossReport {
        objective_value: objective / T::from_count(batch.len()),
        clipped_fraction: T::from_count(n_clipped) / T::from_count(expected.max(1)),
        per_token_terms: terms,
        mean_gamma: gamma_sum / T::from_count(n_traj.max(1)),
        misaligned_pair_fraction: if n_pairs == 0 {
            T::zero()
        } else {
            T::from_count(n_misaligned) / T::from_count(n_pairs)
        },
    };
    if let Some(g) = &grad {
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(RapoError::NonFiniteGradient { index });
        }
    }
    Ok((report, grad))
}

/// Objective over a batch given current-policy log-probabilities aligned with
/// every token record of the batch (group order, then trajectory, then token).
pub fn rapo_objective<T: Scalar>(
    batch: &[RolloutGroup],
    new_logprobs: &[T],
    cfg: &RapoConfig<T>,
) -> Result<LossReport<T>, RapoError> {
    evaluate::<T, NoPolicy>(batch, new_logprobs, None, cfg).map(|(r, _)| r)
}

/// Current-policy log-probabilities for every token of the batch, flattened.
pub fn batch_logprobs<T: Scalar, P: DifferentiablePolicy<T> + ?Sized>(
    batch: &[RolloutGroup],
    policy: &P,
) -> Result<Vec<T>, RapoError> {
    let mut out = Vec::new();
    for group in batch {
        for traj in &group.trajectories {
            let lps = policy.sequence_logprobs(traj)?;
            if lps.len() != traj.tokens.len() {
                return Err(RapoError::AlignmentError { expected: traj.tokens.len(), got: lps.len() });
            }
            out.extend(lps);
        }
    }
    Ok(out)
}

/// Analytic gradient of the objective with respect to the policy parameters.
pub fn rapo_gradient<T: Scalar, P: DifferentiablePolicy<T> + ?Sized>(
    batch: &[RolloutGroup],
    policy: &P,
    cfg: &RapoConfig<T>,
) -> Result<Vec<T>, RapoError> {
    rapo_step(batch, policy, cfg).map(|(_, g)| g)
}

/// Objective report and gradient in one pass.
pub fn rapo_step<T: Scalar, P: DifferentiablePolicy<T> + ?Sized>(
    batch: &[RolloutGroup],
    policy: &P,
    cfg: &RapoConfig<T>,
) -> Result<(LossReport<T>, Vec<T>), RapoError> {
    let lps = batch_logprobs(batch, policy)?;
    let (report, grad) = evaluate(batch, &lps, Some(policy), cfg)?;
    Ok((report, grad.expect("gradient requested")))
}

/// Placeholder policy type for objective-only evaluation.
enum NoPolicy {}

impl<T: Scalar> DifferentiablePolicy<T> for NoPolicy {
    fn num_params(&self) -> usize {
        match *self {}
    }
    fn sequence_logprobs(&self, _: &Trajectory) -> Result<Vec<T>, RapoError> {
        match *self {}
    }
    fn accumulate_logprob_grad(&self, _: &Trajectory, _: &[T], _: &mut [T]) -> Result<(), RapoError> {
        match *self {}
    }
}
