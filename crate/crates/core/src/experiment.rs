//! Cross-validated hyperparameter search, independent-vs-joint model
//! comparison and transfer of trained weights to unseen tasks.
//!
//! Every frequency window is its own sub-problem: an independent model fits
//! one column per task separately, a joint (MTL) model fits all tasks of the
//! window together.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, window_split, WindowPlan};
use crate::error::{Error, Result};
use crate::metrics::{f1_score, gini_index};
use crate::model::{Standardizer, TaskDataset};
use crate::solver::{fit, FitResult, ForwardCriterion, SolverConfig, DEFAULT_MAX_ITERS};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_EPSILONS: [f64; 4] = [1.0, 0.3, 0.1, 0.03];
pub const DEFAULT_XIS: [f64; 3] = [0.1, 0.01, 0.001];
pub const DEFAULT_REFINE_EPSILONS: [f64; 3] = [0.3, 0.2, 0.1];
/// Window count used while tuning the step size and tolerance.
pub const DEFAULT_INITIAL_WINDOWS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Independent,
    Mtl,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Independent => "independent",
            ModelKind::Mtl => "mtl",
        })
    }
}

/// Solver settings that are not searched over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDefaults {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub lambda_floor: f64,
    #[serde(default)]
    pub forward: ForwardCriterion,
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl Default for SolverDefaults {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            lambda_floor: 0.0,
            forward: ForwardCriterion::default(),
        }
    }
}

impl SolverDefaults {
    pub fn solver(&self, epsilon: f64, xi: f64) -> Result<SolverConfig> {
        Ok(SolverConfig::new(epsilon, xi)?
            .with_max_iters(self.max_iters)?
            .with_lambda_floor(self.lambda_floor)?
            .with_forward(self.forward))
    }
}

/// One point of the hyperparameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub epsilon: f64,
    pub xi: f64,
    pub n_windows: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        SolverConfig::new(self.epsilon, self.xi)?;
        if self.n_windows == 0 {
            return Err(Error::invalid("n_windows must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    /// Tune (epsilon, xi) at a fixed window count, then the window count, then
    /// refine epsilon.
    #[default]
    Staged,
    /// Every (epsilon, xi, window count) combination.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub epsilons: Vec<f64>,
    pub xis: Vec<f64>,
    pub window_counts: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub seed: u64,
    #[serde(default)]
    pub strategy: SearchStrategy,
    #[serde(default = "default_initial_windows")]
    pub initial_windows: usize,
    #[serde(default = "default_refine")]
    pub refine_epsilons: Vec<f64>,
    #[serde(default)]
    pub solver: SolverDefaults,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_initial_windows() -> usize {
    DEFAULT_INITIAL_WINDOWS
}

fn default_refine() -> Vec<f64> {
    DEFAULT_REFINE_EPSILONS.to_vec()
}

impl GridSpec {
    /// The default search space: four step sizes, three tolerances, 1 to 16
    /// windows, five folds.
    pub fn standard(seed: u64) -> Self {
        Self {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            xis: DEFAULT_XIS.to_vec(),
            window_counts: (1..=16).collect(),
            folds: DEFAULT_FOLDS,
            seed,
            strategy: SearchStrategy::Staged,
            initial_windows: DEFAULT_INITIAL_WINDOWS,
            refine_epsilons: DEFAULT_REFINE_EPSILONS.to_vec(),
            solver: SolverDefaults::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.window_counts.is_empty() || self.window_counts.contains(&0) {
            return Err(Error::invalid(
                "window counts must be nonempty and positive",
            ));
        }
        if self.initial_windows == 0 {
            return Err(Error::invalid("initial_windows must be positive"));
        }
        if expand_pairs(&self.epsilons, &self.xis).is_empty() {
            return Err(Error::invalid(
                "no (epsilon, xi) pair satisfies epsilon > xi",
            ));
        }
        self.solver.solver(1.0, 0.5).map(|_| ())
    }
}

/// All `(epsilon, xi)` combinations with `epsilon > xi`, in input order.
pub fn expand_pairs(epsilons: &[f64], xis: &[f64]) -> Vec<(f64, f64)> {
    epsilons
        .iter()
        .flat_map(|&e| xis.iter().map(move |&x| (e, x)))
        .filter(|&(e, x)| e > x && x > 0.0)
        .collect()
}

/// Stratified folds: each class is shuffled and dealt round-robin, the second
/// class continuing where the first stopped so fold sizes differ by at most
/// one. Indices within each fold are sorted.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "{k} folds requested for {n} samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            return Err(Error::invalid(format!(
                "stratified split needs both classes; class {class} is absent"
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("non-binary label {bad}")));
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Indices not in `fold`.
pub fn complement_of(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut in_fold = vec![false; n];
    for &i in fold {
        in_fold[i] = true;
    }
    (0..n).filter(|&i| !in_fold[i]).collect()
}

/// Fits of one window.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowFits {
    /// One single-task fit per task.
    Independent(Vec<FitResult>),
    /// One fit with a column per task.
    Mtl(FitResult),
}

impl WindowFits {
    /// The fit and column that model task `task`.
    pub fn column_for(&self, task: usize) -> (&FitResult, usize) {
        match self {
            WindowFits::Independent(fits) => (&fits[task], 0),
            WindowFits::Mtl(fit) => (fit, task),
        }
    }

    pub fn fits(&self) -> Vec<&FitResult> {
        match self {
            WindowFits::Independent(fits) => fits.iter().collect(),
            WindowFits::Mtl(fit) => vec![fit],
        }
    }
}

fn check_same_features(tasks: &[TaskDataset]) -> Result<usize> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::invalid("no tasks given"))?;
    let m = first.n_features();
    for t in tasks {
        if t.n_features() != m || t.feature_freqs() != first.feature_freqs() {
            return Err(Error::dim(format!(
                "task '{}' does not share the frequency grid of task '{}'",
                t.task_id(),
                first.task_id()
            )));
        }
    }
    Ok(m)
}

fn fit_window(tasks: &[TaskDataset], kind: ModelKind, config: &SolverConfig) -> Result<WindowFits> {
    match kind {
        ModelKind::Independent => Ok(WindowFits::Independent(
            tasks
                .iter()
                .map(|t| fit(std::slice::from_ref(t), config))
                .collect::<Result<_>>()?,
        )),
        ModelKind::Mtl => Ok(WindowFits::Mtl(fit(tasks, config)?)),
    }
}

/// Models for every window of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub plan: WindowPlan,
    pub task_ids: Vec<String>,
    pub windows: Vec<WindowFits>,
}

pub fn train(
    tasks: &[TaskDataset],
    kind: ModelKind,
    spec: &ModelSpec,
    defaults: &SolverDefaults,
) -> Result<TrainedModel> {
    spec.validate()?;
    let m = check_same_features(tasks)?;
    let plan = window_split(m, spec.n_windows)?;
    let config = defaults.solver(spec.epsilon, spec.xi)?;
    let windows = plan
        .ranges
        .par_iter()
        .map(|r| {
            let sub = slice_tasks(tasks, r)?;
            fit_window(&sub, kind, &config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel {
        kind,
        spec: *spec,
        plan,
        task_ids: tasks.iter().map(|t| t.task_id().to_string()).collect(),
        windows,
    })
}

fn slice_tasks(tasks: &[TaskDataset], range: &Range<usize>) -> Result<Vec<TaskDataset>> {
    tasks
        .iter()
        .map(|t| t.select_features(range.clone()))
        .collect()
}

/// Cross-validated score of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub stage: SearchStage,
    pub epsilon: f64,
    pub xi: f64,
    pub n_windows: usize,
    pub mean_f1: f64,
    pub mean_gini: f64,
}

impl GridRow {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            epsilon: self.epsilon,
            xi: self.xi,
            n_windows: self.n_windows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStage {
    StepTolerance,
    Windows,
    Refine,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub mode: ModelKind,
    pub best: GridRow,
    pub table: Vec<GridRow>,
}

/// Higher mean F1 first, then higher mean Gini, then smaller epsilon.
fn rank(a: &GridRow, b: &GridRow) -> Ordering {
    b.mean_f1
        .total_cmp(&a.mean_f1)
        .then(b.mean_gini.total_cmp(&a.mean_gini))
        .then(a.epsilon.total_cmp(&b.epsilon))
}

fn best_of<'a>(rows: impl Iterator<Item = &'a GridRow>) -> Option<GridRow> {
    rows.min_by(|a, b| rank(a, b)).copied()
}

/// Mean validation F1 and mean Gini of one configuration over windows, folds
/// and tasks.
pub fn cross_validate(
    tasks: &[TaskDataset],
    folds: &[Vec<Vec<usize>>],
    kind: ModelKind,
    spec: &ModelSpec,
    defaults: &SolverDefaults,
) -> Result<(f64, f64)> {
    spec.validate()?;
    let m = check_same_features(tasks)?;
    let plan = window_split(m, spec.n_windows)?;
    let config = defaults.solver(spec.epsilon, spec.xi)?;
    let k = folds.first().map_or(0, Vec::len);
    if folds.len() != tasks.len() || folds.iter().any(|f| f.len() != k) || k < 2 {
        return Err(Error::dim(
            "one fold set per task, all with the same fold count",
        ));
    }
    let units: Vec<(usize, usize)> = (0..plan.n_windows)
        .flat_map(|w| (0..k).map(move |f| (w, f)))
        .collect();
    let scores = units
        .par_iter()
        .map(|&(w, f)| {
            let range = &plan.ranges[w];
            let mut train = Vec::with_capacity(tasks.len());
            let mut valid = Vec::with_capacity(tasks.len());
            for (t, task_folds) in tasks.iter().zip(folds) {
                let windowed = t.select_features(range.clone())?;
                let held = &task_folds[f];
                train.push(windowed.select_samples(&complement_of(t.n_samples(), held))?);
                valid.push(windowed.select_samples(held)?);
            }
            let fits = fit_window(&train, kind, &config)?;
            (0..tasks.len())
                .map(|l| {
                    let (fit, col) = fits.column_for(l);
                    let f1 = fit.f1(col, &valid[l])?;
                    let gini = gini_index(&fit.weights.column(col).to_vec())?;
                    Ok((f1, gini))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<(f64, f64)> = scores.into_iter().flatten().collect();
    let n = flat.len() as f64;
    Ok((
        flat.iter().map(|s| s.0).sum::<f64>() / n,
        flat.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

/// Stratified folds for every task, each from its own derived seed.
pub fn task_folds(tasks: &[TaskDataset], k: usize, seed: u64) -> Result<Vec<Vec<Vec<usize>>>> {
    tasks
        .iter()
        .enumerate()
        .map(|(l, t)| kfold_split(t.labels(), k, derive_seed(seed, &[l as u64])))
        .collect()
}

fn evaluate_rows(
    tasks: &[TaskDataset],
    folds: &[Vec<Vec<usize>>],
    kind: ModelKind,
    defaults: &SolverDefaults,
    stage: SearchStage,
    specs: &[ModelSpec],
) -> Result<Vec<GridRow>> {
    specs
        .par_iter()
        .map(|s| {
            let (mean_f1, mean_gini) = cross_validate(tasks, folds, kind, s, defaults)?;
            Ok(GridRow {
                stage,
                epsilon: s.epsilon,
                xi: s.xi,
                n_windows: s.n_windows,
                mean_f1,
                mean_gini,
            })
        })
        .collect()
}

/// Searches the grid with k-fold cross-validation on the training tasks.
pub fn grid_search(tasks: &[TaskDataset], grid: &GridSpec, mode: ModelKind) -> Result<GridResult> {
    grid.validate()?;
    let m = check_same_features(tasks)?;
    let folds = task_folds(tasks, grid.folds, grid.seed)?;
    let pairs = expand_pairs(&grid.epsilons, &grid.xis);
    let windows: Vec<usize> = grid
        .window_counts
        .iter()
        .copied()
        .filter(|&w| w <= m)
        .collect();
    if windows.is_empty() {
        return Err(Error::invalid(format!(
            "every window count exceeds the {m} available features"
        )));
    }
    let run = |stage, specs: Vec<ModelSpec>| {
        evaluate_rows(tasks, &folds, mode, &grid.solver, stage, &specs)
    };

    let (best, table) = match grid.strategy {
        SearchStrategy::Exhaustive => {
            let specs = pairs
                .iter()
                .flat_map(|&(epsilon, xi)| {
                    windows.iter().map(move |&n_windows| ModelSpec {
                        epsilon,
                        xi,
                        n_windows,
                    })
                })
                .collect();
            let table = run(SearchStage::Exhaustive, specs)?;
            (best_of(table.iter()), table)
        }
        SearchStrategy::Staged => {
            let initial = grid.initial_windows.min(m);
            let stage1 = run(
                SearchStage::StepTolerance,
                pairs
                    .iter()
                    .map(|&(epsilon, xi)| ModelSpec {
                        epsilon,
                        xi,
                        n_windows: initial,
                    })
                    .collect(),
            )?;
            let b1 = best_of(stage1.iter()).expect("nonempty pair list");
            let stage2 = run(
                SearchStage::Windows,
                windows
                    .iter()
                    .map(|&n_windows| ModelSpec {
                        n_windows,
                        ..b1.spec()
                    })
                    .collect(),
            )?;
            let b2 = best_of(stage2.iter()).expect("nonempty window list");
            let stage3 = run(
                SearchStage::Refine,
                grid.refine_epsilons
                    .iter()
                    .filter(|&&e| e > b2.xi)
                    .map(|&epsilon| ModelSpec {
                        epsilon,
                        ..b2.spec()
                    })
                    .collect(),
            )?;
            let best = best_of(std::iter::once(&b2).chain(stage3.iter()));
            let table = stage1.into_iter().chain(stage2).chain(stage3).collect();
            (best, table)
        }
    };
    Ok(GridResult {
        mode,
        best: best.ok_or_else(|| Error::invalid("empty grid"))?,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: ModelKind,
    pub window: usize,
    pub task: String,
    pub task_index: usize,
    pub freq_lo_hz: f64,
    pub freq_hi_hz: f64,
    pub f1: f64,
    pub gini: f64,
    pub n_active: usize,
    pub lambda_final: f64,
    pub epsilon: f64,
    pub xi: f64,
    pub n_windows: usize,
}

/// A nonzero weight of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveWeight {
    pub mode: ModelKind,
    pub window: usize,
    pub task: String,
    pub feature_index: usize,
    pub freq_hz: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub mode: ModelKind,
    pub window: usize,
    pub source_task: String,
    pub target_task: String,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub summary: Vec<SummaryRow>,
    pub active_weights: Vec<ActiveWeight>,
    #[serde(default)]
    pub grid: Vec<GridResult>,
    #[serde(default)]
    pub transfer: Vec<TransferRow>,
}

/// Fits every configured model on the full training sets and scores it on the
/// test sets, window by window.
pub fn run_comparison(
    train_tasks: &[TaskDataset],
    configs: &[(ModelKind, ModelSpec)],
    test_tasks: &[TaskDataset],
    defaults: &SolverDefaults,
) -> Result<(EvaluationReport, Vec<TrainedModel>)> {
    let m = check_same_features(train_tasks)?;
    if test_tasks.len() != train_tasks.len() {
        return Err(Error::dim(format!(
            "{} test sets for {} training tasks",
            test_tasks.len(),
            train_tasks.len()
        )));
    }
    for (tr, te) in train_tasks.iter().zip(test_tasks) {
        if te.n_features() != m || te.feature_freqs() != tr.feature_freqs() {
            return Err(Error::dim(format!(
                "test set for task '{}' does not match its training features",
                tr.task_id()
            )));
        }
    }
    let models = configs
        .iter()
        .map(|(kind, spec)| train(train_tasks, *kind, spec, defaults))
        .collect::<Result<Vec<_>>>()?;

    let mut report = EvaluationReport::default();
    for model in &models {
        for (w, range) in model.plan.ranges.iter().enumerate() {
            for (l, (tr, te)) in train_tasks.iter().zip(test_tasks).enumerate() {
                let (fit, col) = model.windows[w].column_for(l);
                let test = te.select_features(range.clone())?;
                let column = fit.weights.column(col).to_vec();
                let freqs = &tr.feature_freqs()[range.clone()];
                report.summary.push(SummaryRow {
                    mode: model.kind,
                    window: w,
                    task: tr.task_id().to_string(),
                    task_index: l,
                    freq_lo_hz: freqs[0],
                    freq_hi_hz: freqs[freqs.len() - 1],
                    f1: fit.f1(col, &test)?,
                    gini: gini_index(&column)?,
                    n_active: column.iter().filter(|v| **v != 0.0).count(),
                    lambda_final: fit.lambda_final,
                    epsilon: model.spec.epsilon,
                    xi: model.spec.xi,
                    n_windows: model.spec.n_windows,
                });
                for (j, &v) in column.iter().enumerate() {
                    if v != 0.0 {
                        report.active_weights.push(ActiveWeight {
                            mode: model.kind,
                            window: w,
                            task: tr.task_id().to_string(),
                            feature_index: range.start + j,
                            freq_hz: freqs[j],
                            weight: v,
                        });
                    }
                }
            }
        }
    }
    Ok((report, models))
}

/// Which statistics standardize the target task before applying transferred
/// weights.
#[derive(Debug, Clone, Copy)]
pub enum TransferScaling<'a> {
    /// The source task's training statistics stored in the fit.
    Source,
    /// Statistics of the evaluated samples themselves (labels unused).
    Target,
    /// Statistics of separate unlabelled reference samples of the target task.
    Reference(&'a TaskDataset),
}

/// F1 of weight column `source_column` of `fitted` on `target`.
pub fn transfer_evaluate(
    fitted: &FitResult,
    source_column: usize,
    target: &TaskDataset,
    scaling: TransferScaling<'_>,
) -> Result<f64> {
    if target.n_features() != fitted.weights.n_features() {
        return Err(Error::dim(format!(
            "weights cover {} features, target '{}' has {}",
            fitted.weights.n_features(),
            target.task_id(),
            target.n_features()
        )));
    }
    if source_column >= fitted.weights.n_tasks() {
        return Err(Error::dim(format!(
            "source column {source_column} out of range for {} tasks",
            fitted.weights.n_tasks()
        )));
    }
    let scaler = match scaling {
        TransferScaling::Source => fitted.standardization[source_column].clone(),
        TransferScaling::Target => Standardizer::fit(target),
        TransferScaling::Reference(r) => Standardizer::fit(r),
    };
    let pred = fitted.classify_with(source_column, target, &scaler)?;
    f1_score(target.labels(), &pred)
}

/// Scores every source column of every window of `models` on `target`.
pub fn transfer_report(
    models: &[TrainedModel],
    target: &TaskDataset,
    reference: Option<&TaskDataset>,
) -> Result<Vec<TransferRow>> {
    let mut rows = Vec::new();
    for model in models {
        if target.n_features() != model.plan.ranges.last().map_or(0, |r| r.end) {
            return Err(Error::dim(format!(
                "target '{}' has {} features, models were trained on {}",
                target.task_id(),
                target.n_features(),
                model.plan.ranges.last().map_or(0, |r| r.end)
            )));
        }
        for (w, range) in model.plan.ranges.iter().enumerate() {
            let sub = target.select_features(range.clone())?;
            let sub_ref = reference
                .map(|r| r.select_features(range.clone()))
                .transpose()?;
            let scaling = match &sub_ref {
                Some(r) => TransferScaling::Reference(r),
                None => TransferScaling::Target,
            };
            for (l, source) in model.task_ids.iter().enumerate() {
                let (fit, col) = model.windows[w].column_for(l);
                rows.push(TransferRow {
                    mode: model.kind,
                    window: w,
                    source_task: source.clone(),
                    target_task: target.task_id().to_string(),
                    f1: transfer_evaluate(fit, col, &sub, scaling)?,
                });
            }
        }
    }
    Ok(rows)
}
