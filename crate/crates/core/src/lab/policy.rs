//! A tabular autoregressive softmax policy over a three-token program:
//! `{TOOL | ANSWER}`, then an operation, then a column.

use std::collections::HashMap;
use std::ops::Range;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::{QuestionFamily, SyntheticTask};
use crate::model::{TokenRecord, Trajectory};
use crate::rapo::{DifferentiablePolicy, RapoError};
use crate::scalar::{log_sum_exp, Scalar};

pub const TOOL: u32 = 0;
pub const ANSWER: u32 = 1;
pub const OP_BASE: u32 = 2;
pub const N_OPS: usize = 4;
pub const COL_BASE: u32 = OP_BASE + N_OPS as u32;
pub const SEQ_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyOp {
    Sum,
    Max,
    CountGt,
    Lookup,
}

impl ToyOp {
    pub const ALL: [ToyOp; N_OPS] = [ToyOp::Sum, ToyOp::Max, ToyOp::CountGt, ToyOp::Lookup];

    /// The operation that answers a question family.
    pub fn for_family(family: QuestionFamily) -> Self {
        match family {
            QuestionFamily::ColumnSum => Self::Sum,
            QuestionFamily::ColumnMax => Self::Max,
            QuestionFamily::CountWhere => Self::CountGt,
            QuestionFamily::CellLookup => Self::Lookup,
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|o| *o == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::Max => "max",
            Self::CountGt => "count_gt",
            Self::Lookup => "lookup",
        }
    }

    pub fn needs_param(self) -> bool {
        matches!(self, Self::CountGt | Self::Lookup)
    }
}

/// One decoded action sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToyAction {
    pub use_tool: bool,
    pub op: ToyOp,
    pub col: usize,
}

impl ToyAction {
    fn choices(self) -> [usize; SEQ_LEN] {
        [usize::from(!self.use_tool), self.op.index(), self.col]
    }

    fn from_choices(c: [usize; SEQ_LEN]) -> Self {
        Self { use_tool: c[0] == 0, op: ToyOp::ALL[c[1]], col: c[2] }
    }

    pub fn token_ids(self) -> [u32; SEQ_LEN] {
        let c = self.choices();
        [c[0] as u32, OP_BASE + c[1] as u32, COL_BASE + c[2] as u32]
    }
}

/// Parameters: one logit row per (context, position, prefix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ToyPolicy<T> {
    pub n_cols: usize,
    pub temperature: T,
    pub theta: Vec<T>,
}

impl<T: Scalar> ToyPolicy<T> {
    /// All-zero logits: uniform at every position.
    pub fn uniform(n_cols: usize, temperature: T) -> Self {
        let mut p = Self { n_cols, temperature, theta: Vec::new() };
        p.theta = vec![T::zero(); p.n_contexts() * p.block()];
        p
    }

    pub fn n_contexts(&self) -> usize {
        QuestionFamily::ALL.len() * self.n_cols
    }

    fn block(&self) -> usize {
        2 + 2 * N_OPS + 2 * N_OPS * self.n_cols
    }

    pub fn context_of(&self, task: &SyntheticTask) -> usize {
        task.family.index() * self.n_cols + task.target_col
    }

    /// Parameter range holding the logits for `pos` after `prefix`.
    pub fn slot(&self, ctx: usize, pos: usize, prefix: &[usize]) -> Range<usize> {
        let base = ctx * self.block();
        let (start, width) = match pos {
            0 => (base, 2),
            1 => (base + 2 + prefix[0] * N_OPS, N_OPS),
            2 => (base + 2 + 2 * N_OPS + (prefix[0] * N_OPS + prefix[1]) * self.n_cols, self.n_cols),
            _ => panic!("position {pos} out of range"),
        };
        start..start + width
    }

    /// Log-probabilities at one position at the given temperature (> 0).
    pub fn log_probs_at(&self, ctx: usize, pos: usize, prefix: &[usize], temperature: T) -> Vec<T> {
        let scaled: Vec<T> = self.theta[self.slot(ctx, pos, prefix)].iter().map(|&l| l / temperature).collect();
        let lse = log_sum_exp(&scaled);
        scaled.into_iter().map(|x| x - lse).collect()
    }

    pub fn probs_at(&self, ctx: usize, pos: usize, prefix: &[usize]) -> Vec<T> {
        self.log_probs_at(ctx, pos, prefix, self.temperature).into_iter().map(T::exp).collect()
    }

    /// Argmax decoding; ties go to the lowest index.
    pub fn greedy(&self, ctx: usize) -> ToyAction {
        let mut c = [0usize; SEQ_LEN];
        for pos in 0..SEQ_LEN {
            let row = &self.theta[self.slot(ctx, pos, &c[..pos])];
            c[pos] = (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best });
        }
        ToyAction::from_choices(c)
    }

    /// Samples one sequence and its per-token log-probabilities. Temperature
    /// zero means greedy decoding with probability one.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: usize, temperature: T, rng: &mut R) -> (ToyAction, [T; SEQ_LEN]) {
        if temperature <= T::zero() {
            return (self.greedy(ctx), [T::zero(); SEQ_LEN]);
        }
        let mut c = [0usize; SEQ_LEN];
        let mut lps = [T::zero(); SEQ_LEN];
        for pos in 0..SEQ_LEN {
            let lp = self.log_probs_at(ctx, pos, &c[..pos], temperature);
            let weights: Vec<f64> = lp.iter().map(|x| x.as_f64().exp()).collect();
            let k = WeightedIndex::new(&weights).expect("softmax weights are positive").sample(rng);
            c[pos] = k;
            lps[pos] = lp[k];
        }
        (ToyAction::from_choices(c), lps)
    }

    pub fn action_logprobs(&self, ctx: usize, action: ToyAction) -> [T; SEQ_LEN] {
        let c = action.choices();
        let mut out = [T::zero(); SEQ_LEN];
        for pos in 0..SEQ_LEN {
            out[pos] = self.log_probs_at(ctx, pos, &c[..pos], self.temperature)[c[pos]];
        }
        out
    }

    /// Adds `sum_pos weights[pos] * d log p(c_pos) / d theta` into `grad`.
    pub fn accumulate_action_grad(&self, ctx: usize, action: ToyAction, weights: &[T], grad: &mut [T]) {
        let c = action.choices();
        let inv_t = T::one() / self.temperature;
        for pos in 0..SEQ_LEN {
            let w = weights[pos];
            if w == T::zero() {
                continue;
            }
            let slot = self.slot(ctx, pos, &c[..pos]);
            let lp = self.log_probs_at(ctx, pos, &c[..pos], self.temperature);
            for (k, (g, l)) in grad[slot].iter_mut().zip(lp).enumerate() {
                let onehot = if k == c[pos] { T::one() } else { T::zero() };
                *g += w * inv_t * (onehot - l.exp());
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }
}

/// Recovers the action from the token ids of a toy trajectory.
pub fn decode_tokens(tokens: &[TokenRecord], n_cols: usize) -> Result<ToyAction, String> {
    let [t0, t1, t2] = match tokens {
        [a, b, c] => [a.token_id, b.token_id, c.token_id],
        _ => return Err(format!("expected {SEQ_LEN} tokens, got {}", tokens.len())),
    };
    let op = t1.checked_sub(OP_BASE).map(|i| i as usize).filter(|&i| i < N_OPS);
    let col = t2.checked_sub(COL_BASE).map(|i| i as usize).filter(|&i| i < n_cols);
    match (t0, op, col) {
        (TOOL | ANSWER, Some(op), Some(col)) => Ok(ToyAction { use_tool: t0 == TOOL, op: ToyOp::ALL[op], col }),
        _ => Err(format!("token ids {:?} are not a toy program", [t0, t1, t2])),
    }
}

/// Binds a policy to the tasks it is scored on.
pub struct PolicyView<'a, T> {
    pub policy: &'a ToyPolicy<T>,
    pub contexts: &'a HashMap<String, usize>,
}

impl<T: Scalar> PolicyView<'_, T> {
    fn resolve(&self, traj: &Trajectory) -> Result<(usize, ToyAction), RapoError> {
        let ctx = *self
            .contexts
            .get(&traj.task_id)
            .ok_or_else(|| RapoError::Policy(format!("unknown task {:?}", traj.task_id)))?;
        let action = decode_tokens(&traj.tokens, self.policy.n_cols).map_err(RapoError::Policy)?;
        Ok((ctx, action))
    }
}

impl<T: Scalar> DifferentiablePolicy<T> for PolicyView<'_, T> {
    fn num_params(&self) -> usize {
        self.policy.theta.len()
    }

    fn sequence_logprobs(&self, traj: &Trajectory) -> Result<Vec<T>, RapoError> {
        let (ctx, action) = self.resolve(traj)?;
        Ok(self.policy.action_logprobs(ctx, action).to_vec())
    }

    fn accumulate_logprob_grad(&self, traj: &Trajectory, weights: &[T], grad: &mut [T]) -> Result<(), RapoError> {
        if self.policy.temperature <= T::zero() {
            return Err(RapoError::Policy("greedy policy has no gradient".into()));
        }
        let (ctx, action) = self.resolve(traj)?;
        self.policy.accumulate_action_grad(ctx, action, weights, grad);
        Ok(())
    }
}
