//! Boosted forward/backward coordinate solver for the penalised logistic
//! objective.
//!
//! Every update moves a single `(feature, task)` weight by exactly `epsilon`.
//! The schedule follows the boosted-LASSO scheme:
//!
//! 1. Start from `W = 0`. The first forward step is the move with the lowest
//!    empirical loss, and it fixes `lambda_0 = (J(0) - J(W_1)) / epsilon`.
//! 2. Each iteration first looks for a backward step: a move of a nonzero
//!    weight toward zero that lowers the total loss at the current lambda by
//!    more than `xi`. If one exists it is taken and lambda is unchanged.
//! 3. Otherwise the best forward step is taken and lambda is lowered to the
//!    step's empirical gain per unit of added penalty, if that is smaller.
//! 4. Stop when lambda reaches `lambda_floor`, after `max_iters` steps, or when
//!    no move lowers the empirical loss.
//!
//! With several tasks the penalty is the L2,1 norm, so adding weight to a
//! feature that is already active for another task costs less penalty than
//! activating a fresh feature.
//!
//! Weights are tracked as integer step counts and only multiplied by
//! `epsilon` on output, so every weight is an exact multiple of the step and
//! untouched coordinates stay exactly zero.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::f1_score;
use crate::model::{
    classify_dataset, group_norm, log_loss_term, logits, mean_log_loss, Standardizer, TaskDataset,
    WeightMatrix,
};

pub const DEFAULT_MAX_ITERS: usize = 2000;

/// Candidate scans below this many sample-feature products run serially.
const PARALLEL_SCAN_MIN_WORK: usize = 1 << 16;

/// How a forward step is chosen once lambda is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardCriterion {
    /// Among moves that lower the empirical loss, pick the lowest total loss
    /// at the current lambda.
    #[default]
    Total,
    /// Pick the lowest empirical loss regardless of penalty.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSolverConfig", into = "RawSolverConfig")]
pub struct SolverConfig {
    epsilon: f64,
    xi: f64,
    max_iters: usize,
    lambda_floor: f64,
    forward: ForwardCriterion,
    standardize: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolverConfig {
    epsilon: f64,
    xi: f64,
    #[serde(default = "default_max_iters")]
    max_iters: usize,
    #[serde(default)]
    lambda_floor: f64,
    #[serde(default)]
    forward: ForwardCriterion,
    #[serde(default = "default_true")]
    standardize: bool,
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_true() -> bool {
    true
}

impl TryFrom<RawSolverConfig> for SolverConfig {
    type Error = Error;

    fn try_from(raw: RawSolverConfig) -> Result<Self> {
        SolverConfig::new(raw.epsilon, raw.xi)?
            .with_max_iters(raw.max_iters)?
            .with_lambda_floor(raw.lambda_floor)
            .map(|c| {
                c.with_forward(raw.forward)
                    .with_standardize(raw.standardize)
            })
    }
}

impl From<SolverConfig> for RawSolverConfig {
    fn from(c: SolverConfig) -> Self {
        Self {
            epsilon: c.epsilon,
            xi: c.xi,
            max_iters: c.max_iters,
            lambda_floor: c.lambda_floor,
            forward: c.forward,
            standardize: c.standardize,
        }
    }
}

impl SolverConfig {
    /// Requires `epsilon > xi > 0`.
    pub fn new(epsilon: f64, xi: f64) -> Result<Self> {
        if !(epsilon.is_finite() && xi.is_finite() && epsilon > 0.0 && xi > 0.0) {
            return Err(Error::invalid(format!(
                "step size and tolerance must be positive and finite (epsilon={epsilon}, xi={xi})"
            )));
        }
        if epsilon <= xi {
            return Err(Error::invalid(format!(
                "step size must exceed tolerance (epsilon={epsilon}, xi={xi})"
            )));
        }
        Ok(Self {
            epsilon,
            xi,
            max_iters: DEFAULT_MAX_ITERS,
            lambda_floor: 0.0,
            forward: ForwardCriterion::default(),
            standardize: true,
        })
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Result<Self> {
        if max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        self.max_iters = max_iters;
        Ok(self)
    }

    pub fn with_lambda_floor(mut self, lambda_floor: f64) -> Result<Self> {
        if !(lambda_floor >= 0.0 && lambda_floor.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_floor must be finite and nonnegative, got {lambda_floor}"
            )));
        }
        self.lambda_floor = lambda_floor;
        Ok(self)
    }

    pub fn with_forward(mut self, forward: ForwardCriterion) -> Self {
        self.forward = forward;
        self
    }

    /// Disable to fit on features exactly as given.
    pub fn with_standardize(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn lambda_floor(&self) -> f64 {
        self.lambda_floor
    }

    pub fn forward(&self) -> ForwardCriterion {
        self.forward
    }

    pub fn standardize(&self) -> bool {
        self.standardize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    LambdaFloor,
    MaxIters,
    NoImprovingStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub kind: StepKind,
    pub feature: usize,
    pub task: usize,
    pub sign: i8,
    /// Total loss before the move, at `lambda_after`.
    pub total_loss_before: f64,
    pub empirical_loss_after: f64,
    pub total_loss_after: f64,
    pub lambda_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub steps: Vec<StepRecord>,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub weights: WeightMatrix,
    pub trace: SolverTrace,
    pub lambda_final: f64,
    /// One per task, in task order.
    pub standardization: Vec<Standardizer>,
    pub epsilon: f64,
}

impl FitResult {
    /// Labels predicted by column `task` for raw (unstandardized) samples,
    /// scaled with that task's training statistics.
    pub fn classify(&self, task: usize, data: &TaskDataset) -> Result<Vec<u8>> {
        self.classify_with(task, data, &self.standardization[self.check_task(task)?])
    }

    /// Labels predicted by column `task` after scaling `data` with `scaling`.
    pub fn classify_with(
        &self,
        task: usize,
        data: &TaskDataset,
        scaling: &Standardizer,
    ) -> Result<Vec<u8>> {
        let task = self.check_task(task)?;
        let scaled = scaling.apply(data)?;
        classify_dataset(self.weights.column(task), &scaled)
    }

    pub fn f1(&self, task: usize, data: &TaskDataset) -> Result<f64> {
        f1_score(data.labels(), &self.classify(task, data)?)
    }

    fn check_task(&self, task: usize) -> Result<usize> {
        if task >= self.weights.n_tasks() {
            return Err(Error::dim(format!(
                "task column {task} out of range for {} tasks",
                self.weights.n_tasks()
            )));
        }
        Ok(task)
    }
}

/// A single-coordinate move of size epsilon and the losses it leads to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCandidate {
    pub feature: usize,
    pub task: usize,
    /// +1 or -1.
    pub sign: i8,
    pub empirical_after: f64,
    pub penalty_after: f64,
}

impl StepCandidate {
    pub fn total_after(&self, lambda: f64) -> f64 {
        self.empirical_after + lambda * self.penalty_after
    }
}

/// Lambda after a step: the step's empirical gain per unit of added penalty,
/// capped at the previous lambda. Steps that do not add penalty leave lambda
/// unchanged. Never negative.
pub fn lambda_schedule_update(
    prev_lambda: f64,
    empirical_before: f64,
    empirical_after: f64,
    penalty_before: f64,
    penalty_after: f64,
) -> f64 {
    let added = penalty_after - penalty_before;
    if added > 0.0 {
        prev_lambda
            .min((empirical_before - empirical_after) / added)
            .max(0.0)
    } else {
        prev_lambda
    }
}

struct PreparedTask {
    data: TaskDataset,
    /// Standardized features transposed to `M x N` so each feature is
    /// contiguous.
    by_feature: Array2<f64>,
    logits: Array1<f64>,
    loss: f64,
}

/// Weights plus cached logits and losses for each task.
struct BoostState {
    tasks: Vec<PreparedTask>,
    weights: Array2<f64>,
    epsilon: f64,
}

impl BoostState {
    fn new(tasks: Vec<TaskDataset>, weights: Array2<f64>, epsilon: f64) -> Self {
        let tasks = tasks
            .into_iter()
            .enumerate()
            .map(|(l, data)| {
                let by_feature = data.features().t().as_standard_layout().to_owned();
                let logits = logits(weights.column(l), data.features());
                let loss = mean_log_loss(&logits, data.labels());
                PreparedTask {
                    data,
                    by_feature,
                    logits,
                    loss,
                }
            })
            .collect();
        Self {
            tasks,
            weights,
            epsilon,
        }
    }

    fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    fn n_tasks(&self) -> usize {
        self.weights.ncols()
    }

    fn empirical(&self) -> f64 {
        self.empirical_with(usize::MAX, 0.0)
    }

    /// Mean over tasks with task `replace` swapped for `loss`, summed in task
    /// order so it matches a fresh evaluation bit-for-bit.
    fn empirical_with(&self, replace: usize, loss: f64) -> f64 {
        let sum: f64 = self
            .tasks
            .iter()
            .enumerate()
            .map(|(l, t)| if l == replace { loss } else { t.loss })
            .sum();
        sum / self.tasks.len() as f64
    }

    fn row_norm(&self, j: usize) -> f64 {
        group_norm(self.weights.row(j).iter().copied())
    }

    fn row_norm_with(&self, j: usize, task: usize, value: f64) -> f64 {
        group_norm(
            self.weights
                .row(j)
                .iter()
                .enumerate()
                .map(|(l, &w)| if l == task { value } else { w }),
        )
    }

    fn penalty(&self) -> f64 {
        (0..self.n_features()).map(|j| self.row_norm(j)).sum()
    }

    /// Task losses after moving weight `(j, l)` by `+epsilon` and `-epsilon`.
    fn shifted_losses(&self, j: usize, l: usize) -> (f64, f64) {
        let task = &self.tasks[l];
        let x = task.by_feature.row(j);
        let labels = task.data.labels();
        let step = self.epsilon;
        let (mut up, mut down) = (0.0, 0.0);
        for ((&z, &xi), &y) in task.logits.iter().zip(x.iter()).zip(labels) {
            up += log_loss_term(z + step * xi, y);
            down += log_loss_term(z - step * xi, y);
        }
        let n = labels.len() as f64;
        (up / n, down / n)
    }

    fn candidate(
        &self,
        j: usize,
        l: usize,
        sign: i8,
        task_loss: f64,
        penalty: f64,
    ) -> StepCandidate {
        let old = self.weights[[j, l]];
        let new = old + f64::from(sign) * self.epsilon;
        let penalty_after = penalty - self.row_norm(j) + self.row_norm_with(j, l, new);
        StepCandidate {
            feature: j,
            task: l,
            sign,
            empirical_after: self.empirical_with(l, task_loss),
            penalty_after,
        }
    }

    fn scan_features<F>(&self, per_feature: F) -> Option<StepCandidate>
    where
        F: Fn(usize) -> Option<(f64, StepCandidate)> + Sync,
    {
        let m = self.n_features();
        let work = m * self.tasks.iter().map(|t| t.data.n_samples()).sum::<usize>();
        let best: Vec<Option<(f64, StepCandidate)>> = if work >= PARALLEL_SCAN_MIN_WORK {
            (0..m).into_par_iter().map(&per_feature).collect()
        } else {
            (0..m).map(&per_feature).collect()
        };
        // strict < keeps the lowest (j, l, sign) among equal scores
        best.into_iter()
            .flatten()
            .fold(None::<(f64, StepCandidate)>, |acc, cur| match acc {
                Some(a) if a.0 <= cur.0 => Some(a),
                _ => Some(cur),
            })
            .map(|(_, c)| c)
    }

    /// Best forward move. Without a lambda (or with the empirical criterion)
    /// the score is the empirical loss after the move; otherwise it is the
    /// total loss. Only moves that lower the empirical loss qualify.
    fn forward(&self, criterion: ForwardCriterion, lambda: Option<f64>) -> Option<StepCandidate> {
        let current = self.empirical();
        let penalty = self.penalty();
        let by_total = match (criterion, lambda) {
            (ForwardCriterion::Total, Some(lam)) => Some(lam),
            _ => None,
        };
        self.scan_features(|j| {
            let mut best: Option<(f64, StepCandidate)> = None;
            for l in 0..self.n_tasks() {
                let (up, down) = self.shifted_losses(j, l);
                for (sign, loss) in [(1i8, up), (-1i8, down)] {
                    let c = self.candidate(j, l, sign, loss, penalty);
                    if !(c.empirical_after < current) {
                        continue;
                    }
                    let score = match by_total {
                        Some(lam) => c.total_after(lam),
                        None => c.empirical_after,
                    };
                    if best.is_none_or(|b| score < b.0) {
                        best = Some((score, c));
                    }
                }
            }
            best
        })
    }

    /// Lowest-empirical-loss move of a nonzero weight toward zero among those
    /// that cut the total loss at `lambda` by more than `xi`.
    fn backward(&self, lambda: f64, xi: f64) -> Option<StepCandidate> {
        let penalty = self.penalty();
        let total_before = self.empirical() + lambda * penalty;
        self.scan_features(|j| {
            let mut best: Option<(f64, StepCandidate)> = None;
            for l in 0..self.n_tasks() {
                let w = self.weights[[j, l]];
                if w == 0.0 {
                    continue;
                }
                let sign: i8 = if w > 0.0 { -1 } else { 1 };
                let (up, down) = self.shifted_losses(j, l);
                let loss = if sign > 0 { up } else { down };
                let c = self.candidate(j, l, sign, loss, penalty);
                if total_before - c.total_after(lambda) > xi
                    && best.is_none_or(|b| c.empirical_after < b.0)
                {
                    best = Some((c.empirical_after, c));
                }
            }
            best
        })
    }

    /// Moves the weight and refreshes the task's logits from scratch.
    fn apply(&mut self, c: &StepCandidate, new_value: f64) {
        self.weights[[c.feature, c.task]] = new_value;
        let task = &mut self.tasks[c.task];
        task.logits = logits(self.weights.column(c.task), task.data.features());
        task.loss = mean_log_loss(&task.logits, task.data.labels());
    }
}

fn validate_tasks(tasks: &[TaskDataset]) -> Result<usize> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::invalid("no tasks to fit"))?;
    let m = first.n_features();
    for t in tasks {
        if t.n_features() != m {
            return Err(Error::dim(format!(
                "task '{}' has {} features, expected {m}",
                t.task_id(),
                t.n_features()
            )));
        }
        let (neg, pos) = t.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::DegenerateTask {
                task: t.task_id().to_string(),
                n: t.n_samples(),
                label: u8::from(pos > 0),
            });
        }
    }
    Ok(m)
}

fn check_weights(weights: &WeightMatrix, tasks: &[TaskDataset]) -> Result<()> {
    let m = validate_tasks(tasks)?;
    if weights.n_features() != m || weights.n_tasks() != tasks.len() {
        return Err(Error::dim(format!(
            "weights are {}x{}, tasks need {m}x{}",
            weights.n_features(),
            weights.n_tasks(),
            tasks.len()
        )));
    }
    Ok(())
}

/// Best forward move from `weights` on already-scaled `tasks`. `lambda` is
/// `None` before the first step.
pub fn forward_step(
    weights: &WeightMatrix,
    tasks: &[TaskDataset],
    config: &SolverConfig,
    lambda: Option<f64>,
) -> Result<Option<StepCandidate>> {
    check_weights(weights, tasks)?;
    let state = BoostState::new(tasks.to_vec(), weights.values().clone(), config.epsilon);
    Ok(state.forward(config.forward, lambda))
}

/// Qualifying backward move from `weights` at `lambda`, if any.
pub fn backward_step(
    weights: &WeightMatrix,
    tasks: &[TaskDataset],
    config: &SolverConfig,
    lambda: f64,
) -> Result<Option<StepCandidate>> {
    check_weights(weights, tasks)?;
    let state = BoostState::new(tasks.to_vec(), weights.values().clone(), config.epsilon);
    Ok(state.backward(lambda, config.xi))
}

/// Fits one weight column per task. A single task gives the LASSO model; more
/// than one gives the joint L2,1 model.
pub fn fit(tasks: &[TaskDataset], config: &SolverConfig) -> Result<FitResult> {
    let m = validate_tasks(tasks)?;
    let n_tasks = tasks.len();
    let standardization: Vec<Standardizer> = tasks
        .iter()
        .map(|t| {
            if config.standardize {
                Standardizer::fit(t)
            } else {
                Standardizer::identity(m)
            }
        })
        .collect();
    let scaled = tasks
        .iter()
        .zip(&standardization)
        .map(|(t, s)| s.apply(t))
        .collect::<Result<Vec<_>>>()?;

    let eps = config.epsilon;
    let mut state = BoostState::new(scaled, Array2::zeros((m, n_tasks)), eps);
    let mut counts: Array2<i64> = Array2::zeros((m, n_tasks));
    let mut steps = Vec::new();
    let mut lambda: Option<f64> = None;

    let terminated_by = loop {
        if steps.len() >= config.max_iters {
            break Termination::MaxIters;
        }
        let empirical_before = state.empirical();
        let penalty_before = state.penalty();

        let backward = lambda.and_then(|lam| state.backward(lam, config.xi));
        let (kind, cand) = match backward {
            Some(c) => (StepKind::Backward, c),
            None => match state.forward(config.forward, lambda) {
                Some(c) => (StepKind::Forward, c),
                None => break Termination::NoImprovingStep,
            },
        };

        let k = &mut counts[[cand.feature, cand.task]];
        *k += i64::from(cand.sign);
        let new_value = *k as f64 * eps;
        state.apply(&cand, new_value);

        let empirical_after = state.empirical();
        let penalty_after = state.penalty();
        let lam = match (kind, lambda) {
            (StepKind::Backward, Some(lam)) => lam,
            (_, prev) => lambda_schedule_update(
                prev.unwrap_or(f64::INFINITY),
                empirical_before,
                empirical_after,
                penalty_before,
                penalty_after,
            ),
        };
        lambda = Some(lam);
        steps.push(StepRecord {
            iteration: steps.len(),
            kind,
            feature: cand.feature,
            task: cand.task,
            sign: cand.sign,
            total_loss_before: empirical_before + lam * penalty_before,
            empirical_loss_after: empirical_after,
            total_loss_after: empirical_after + lam * penalty_after,
            lambda_after: lam,
        });
        if lam <= config.lambda_floor {
            break Termination::LambdaFloor;
        }
    };

    let weights = WeightMatrix::new(counts.mapv(|k| k as f64 * eps))?;
    Ok(FitResult {
        weights,
        trace: SolverTrace {
            steps,
            terminated_by,
        },
        lambda_final: lambda.unwrap_or(0.0),
        standardization,
        epsilon: eps,
    })
}

/// Support of column `task` as a sorted index list.
pub fn support(weights: &WeightMatrix, task: usize) -> Vec<usize> {
    weights.support(task)
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets have overlap 1.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Checks the properties every completed fit must satisfy. Returns a
/// description of the first violation.
pub fn check_trace_invariants(fit: &FitResult, xi: f64) -> std::result::Result<(), String> {
    let eps = fit.epsilon;
    for w in fit.weights.values().iter() {
        let k = (w / eps).round();
        if (w - k * eps).abs() > 1e-9 {
            return Err(format!("weight {w} is not a multiple of {eps}"));
        }
    }
    let mut prev_lambda = f64::INFINITY;
    for s in &fit.trace.steps {
        if s.lambda_after > prev_lambda {
            return Err(format!(
                "lambda increased at step {}: {} -> {}",
                s.iteration, prev_lambda, s.lambda_after
            ));
        }
        prev_lambda = s.lambda_after;
        if s.kind == StepKind::Backward && !(s.total_loss_before - s.total_loss_after > xi) {
            return Err(format!(
                "backward step {} improved total loss by only {}",
                s.iteration,
                s.total_loss_before - s.total_loss_after
            ));
        }
    }
    let touched: std::collections::BTreeSet<(usize, usize)> = fit
        .trace
        .steps
        .iter()
        .filter(|s| s.kind == StepKind::Forward)
        .map(|s| (s.feature, s.task))
        .collect();
    for ((j, l), &w) in fit.weights.values().indexed_iter() {
        if !touched.contains(&(j, l)) && w != 0.0 {
            return Err(format!("untouched weight ({j}, {l}) is {w}"));
        }
    }
    Ok(())
}

/// Weights of column `task` as a plain vector.
pub fn column_vec(weights: &WeightMatrix, task: usize) -> Vec<f64> {
    let col: ArrayView1<'_, f64> = weights.column(task);
    col.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{empirical_loss_single, l21_norm, total_loss};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(id: &str, features: Array2<f64>, labels: Vec<u8>) -> TaskDataset {
        let m = features.ncols();
        TaskDataset::new(
            id,
            features,
            labels,
            (0..m).map(|j| 10.0 + j as f64).collect(),
        )
        .unwrap()
    }

    /// Feature 0 carries the label; features 1..m are uniform noise.
    fn one_informative(seed: u64, n: usize, m: usize) -> TaskDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, m));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            y.push(label);
            x[[i, 0]] = if label == 1 { 1.0 } else { -1.0 } + rng.random_range(-0.2..0.2);
            for j in 1..m {
                x[[i, j]] = rng.random_range(-1.0..1.0);
            }
        }
        dataset("informative", x, y)
    }

    fn cfg(eps: f64, xi: f64) -> SolverConfig {
        SolverConfig::new(eps, xi).unwrap()
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(SolverConfig::new(0.1, 0.1).is_err());
        assert!(SolverConfig::new(0.01, 0.1).is_err());
        assert!(SolverConfig::new(-1.0, 0.1).is_err());
        assert!(SolverConfig::new(0.1, 0.0).is_err());
        assert!(cfg(0.1, 0.01).with_max_iters(0).is_err());
        assert!(cfg(0.1, 0.01).with_lambda_floor(-1.0).is_err());
        let c = cfg(0.3, 0.01);
        assert_eq!(c.max_iters(), 2000);
        assert_eq!(c.lambda_floor(), 0.0);
    }

    #[test]
    fn config_serde_enforces_epsilon_above_xi() {
        let ok: SolverConfig = serde_json::from_str(r#"{"epsilon":0.2,"xi":0.01}"#).unwrap();
        assert_eq!(ok.max_iters(), DEFAULT_MAX_ITERS);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"epsilon":0.01,"xi":0.01}"#).is_err());
    }

    #[test]
    fn lambda_update_examples() {
        assert_eq!(
            lambda_schedule_update(f64::INFINITY, 0.7, 0.6, 0.0, 0.2),
            (0.7 - 0.6) / 0.2
        );
        assert!((lambda_schedule_update(1.0, 0.5, 0.45, 0.2, 0.4) - 0.25).abs() < 1e-12);
        assert_eq!(lambda_schedule_update(0.1, 0.5, 0.3, 0.2, 0.4), 0.1);
        assert_eq!(lambda_schedule_update(0.1, 0.5, 0.3, 0.4, 0.2), 0.1);
    }

    #[test]
    fn first_step_sets_initial_lambda() {
        let t = one_informative(3, 40, 3);
        let fit = fit(
            std::slice::from_ref(&t),
            &cfg(0.1, 0.001).with_max_iters(1).unwrap(),
        )
        .unwrap();
        let step = fit.trace.steps[0];
        let scaled = fit.standardization[0].apply(&t).unwrap();
        let j0 = empirical_loss_single(array![0.0, 0.0, 0.0].view(), &scaled).unwrap();
        let j1 = empirical_loss_single(fit.weights.column(0), &scaled).unwrap();
        assert_eq!(step.kind, StepKind::Forward);
        assert_eq!(step.feature, 0);
        assert_eq!(step.sign, 1);
        assert!((fit.lambda_final - (j0 - j1) / 0.1).abs() < 1e-12);
        assert_eq!(fit.trace.terminated_by, Termination::MaxIters);
    }

    #[test]
    fn forward_step_picks_correlated_feature() {
        let t = one_informative(5, 60, 4);
        let w = WeightMatrix::zeros(4, 1);
        let c = forward_step(&w, std::slice::from_ref(&t), &cfg(0.1, 0.001), None)
            .unwrap()
            .unwrap();
        assert_eq!((c.feature, c.task, c.sign), (0, 0, 1));

        // brute force over all 2M candidates
        let mut best = (f64::INFINITY, 0, 0i8);
        for j in 0..4 {
            for s in [1i8, -1] {
                let mut v = vec![0.0; 4];
                v[j] = f64::from(s) * 0.1;
                let l = empirical_loss_single(Array1::from(v).view(), &t).unwrap();
                if l < best.0 {
                    best = (l, j, s);
                }
            }
        }
        assert_eq!((c.feature, c.sign), (best.1, best.2));
        assert!((c.empirical_after - best.0).abs() < 1e-12);

        let mut flipped = t.features().clone();
        flipped.column_mut(0).mapv_inplace(|v| -v);
        let t2 = dataset("neg", flipped, t.labels().to_vec());
        let c = forward_step(&w, &[t2], &cfg(0.1, 0.001), None)
            .unwrap()
            .unwrap();
        assert_eq!((c.feature, c.sign), (0, -1));
    }

    #[test]
    fn forward_step_ties_go_to_lowest_index() {
        let t = one_informative(9, 30, 2);
        let mut x = t.features().clone();
        let col = x.column(0).to_owned();
        x.column_mut(1).assign(&col);
        let dup = dataset("dup", x, t.labels().to_vec());
        let c = forward_step(&WeightMatrix::zeros(2, 1), &[dup], &cfg(0.1, 0.001), None)
            .unwrap()
            .unwrap();
        assert_eq!(c.feature, 0);
    }

    #[test]
    fn forward_step_on_noise_returns_a_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0));
        let y = (0..20).map(|i| (i % 2) as u8).collect();
        let t = dataset("noise", x, y);
        let c = forward_step(&WeightMatrix::zeros(3, 1), &[t], &cfg(0.1, 0.001), None).unwrap();
        assert!(c.is_some());
    }

    #[test]
    fn backward_step_examples() {
        let t = one_informative(11, 40, 3);
        let tasks = std::slice::from_ref(&t);
        let config = cfg(0.5, 0.001);
        assert!(
            backward_step(&WeightMatrix::zeros(3, 1), tasks, &config, 1.0)
                .unwrap()
                .is_none()
        );

        // a step on a noise feature at a large lambda is worth undoing
        let w = WeightMatrix::from_column(&[0.0, 0.5, 0.0]).unwrap();
        let c = backward_step(&w, tasks, &config, 1.0).unwrap().unwrap();
        assert_eq!((c.feature, c.sign), (1, -1));
        assert_eq!(c.penalty_after, 0.0);

        // two qualifying moves: the lower empirical loss wins
        let w = WeightMatrix::from_column(&[0.5, 0.5, -0.5]).unwrap();
        let c = backward_step(&w, tasks, &config, 5.0).unwrap().unwrap();
        let before = total_loss(&w, tasks, 5.0).unwrap().total;
        let mut best = (f64::INFINITY, 0usize);
        for j in 0..3 {
            let mut v = column_vec(&w, 0);
            v[j] -= v[j].signum() * 0.5;
            let wm = WeightMatrix::from_column(&v).unwrap();
            let after = total_loss(&wm, tasks, 5.0).unwrap();
            if before - after.total > 0.001 && after.empirical < best.0 {
                best = (after.empirical, j);
            }
        }
        assert_eq!(c.feature, best.1);
        assert_ne!(c.feature, 0);
    }

    #[test]
    fn fit_selects_only_the_informative_feature() {
        let t = one_informative(21, 80, 4);
        let fit = fit(
            std::slice::from_ref(&t),
            &cfg(0.1, 0.001).with_lambda_floor(0.05).unwrap(),
        )
        .unwrap();
        assert_eq!(fit.weights.support(0), vec![0]);
        check_trace_invariants(&fit, 0.001).unwrap();
    }

    #[test]
    fn fit_rejects_degenerate_and_mismatched_tasks() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let single_class = dataset("ones", x.clone(), vec![1, 1]);
        assert!(matches!(
            fit(&[single_class], &cfg(0.1, 0.01)),
            Err(Error::DegenerateTask { label: 1, .. })
        ));
        let a = dataset("a", x, vec![0, 1]);
        let b = dataset("b", array![[1.0], [2.0]], vec![0, 1]);
        assert!(matches!(
            fit(&[a, b], &cfg(0.1, 0.01)),
            Err(Error::Dimension(_))
        ));
        assert!(fit(&[], &cfg(0.1, 0.01)).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_quantized() {
        let a = one_informative(31, 60, 6);
        let b = one_informative(32, 60, 6).with_task_id("b");
        let config = cfg(0.2, 0.01).with_max_iters(150).unwrap();
        let f1 = fit(&[a.clone(), b.clone()], &config).unwrap();
        let f2 = fit(&[a, b], &config).unwrap();
        assert_eq!(f1.trace, f2.trace);
        assert_eq!(f1.weights, f2.weights);
        check_trace_invariants(&f1, 0.01).unwrap();
        // total loss in the trace matches a fresh evaluation
        let last = f1.trace.steps.last().unwrap();
        let pen = l21_norm(&f1.weights);
        assert!(
            (last.total_loss_after - (last.empirical_loss_after + f1.lambda_final * pen)).abs()
                < 1e-12
        );
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&[], &[]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[2, 3]), 1.0 / 3.0);
        assert_eq!(jaccard(&[4], &[4]), 1.0);
    }
}
