//! Logistic prediction, empirical cross-entropy losses and the sparsity
//! penalties shared by the single-task and multi-task objectives.
//!
//! A single-task model is a [`WeightMatrix`] with one column. The penalty is
//! always the L2,1 group norm; with one column every group has size one and it
//! is exactly the L1 norm.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predicted probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

/// Classification threshold. A probability equal to the threshold maps to 1.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Samples of one binary classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    task_id: String,
    features: Array2<f64>,
    labels: Vec<u8>,
    feature_freqs: Vec<f64>,
}

impl TaskDataset {
    pub fn new(
        task_id: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<u8>,
        feature_freqs: Vec<f64>,
    ) -> Result<Self> {
        let task_id = task_id.into();
        let (n, m) = features.dim();
        if n == 0 || m == 0 {
            return Err(Error::invalid(format!(
                "task '{task_id}': dataset must have at least one sample and one feature (got {n}x{m})"
            )));
        }
        if labels.len() != n {
            return Err(Error::dim(format!(
                "task '{task_id}': {} labels for {n} samples",
                labels.len()
            )));
        }
        if feature_freqs.len() != m {
            return Err(Error::dim(format!(
                "task '{task_id}': {} frequencies for {m} features",
                feature_freqs.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::invalid(format!(
                "task '{task_id}': non-binary label {} at sample {i}",
                labels[i]
            )));
        }
        if feature_freqs.iter().any(|f| !f.is_finite())
            || feature_freqs.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(format!(
                "task '{task_id}': feature frequencies must be finite and strictly increasing"
            )));
        }
        if let Some(((i, j), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "task '{task_id}': non-finite feature value at sample {i}, feature {j}"
            )));
        }
        Ok(Self {
            task_id,
            features,
            labels,
            feature_freqs,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_freqs(&self) -> &[f64] {
        &self.feature_freqs
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.labels.len() - pos, pos)
    }

    pub fn positive_fraction(&self) -> f64 {
        self.class_counts().1 as f64 / self.n_samples() as f64
    }

    pub fn with_task_id(mut self, task_id: impl Into<String>) -> Self {
        self.task_id = task_id.into();
        self
    }

    /// Subset of samples, in the order given.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::dim(format!(
                "sample index {bad} out of range for {} samples",
                self.n_samples()
            )));
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(
            self.task_id.clone(),
            features,
            labels,
            self.feature_freqs.clone(),
        )
    }

    /// Contiguous block of features, e.g. one frequency window.
    pub fn select_features(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_features() {
            return Err(Error::dim(format!(
                "feature range {range:?} invalid for {} features",
                self.n_features()
            )));
        }
        let features = self
            .features
            .slice(ndarray::s![.., range.clone()])
            .to_owned();
        Self::new(
            self.task_id.clone(),
            features,
            self.labels.clone(),
            self.feature_freqs[range].to_vec(),
        )
    }
}

/// Per-feature affine scaling estimated on training samples only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per feature. Constant features
    /// get scale 1 so they map to zero.
    pub fn fit(data: &TaskDataset) -> Self {
        let n = data.n_samples() as f64;
        let mut mean = Vec::with_capacity(data.n_features());
        let mut scale = Vec::with_capacity(data.n_features());
        for col in data.features().columns() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            scale.push(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn identity(n_features: usize) -> Self {
        Self {
            mean: vec![0.0; n_features],
            scale: vec![1.0; n_features],
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &TaskDataset) -> Result<TaskDataset> {
        if data.n_features() != self.n_features() {
            return Err(Error::dim(format!(
                "standardizer has {} features, dataset '{}' has {}",
                self.n_features(),
                data.task_id(),
                data.n_features()
            )));
        }
        let mut features = data.features().clone();
        for (j, mut col) in features.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - mu) / sd);
        }
        TaskDataset::new(
            data.task_id(),
            features,
            data.labels().to_vec(),
            data.feature_freqs().to_vec(),
        )
    }
}

/// Weights of `L` tasks over `M` shared features, stored `M x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Array2<f64>,
}

impl WeightMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::invalid("weight matrix needs M >= 1 and L >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weight matrix contains non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn zeros(n_features: usize, n_tasks: usize) -> Self {
        Self {
            values: Array2::zeros((n_features.max(1), n_tasks.max(1))),
        }
    }

    pub fn from_column(column: &[f64]) -> Result<Self> {
        Self::new(
            Array2::from_shape_vec((column.len(), 1), column.to_vec())
                .map_err(|e| Error::invalid(format!("cannot build weight column: {e}")))?,
        )
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_tasks(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, task: usize) -> ArrayView1<'_, f64> {
        self.values.column(task)
    }

    /// Indices of features with a nonzero weight in column `task`.
    pub fn support(&self, task: usize) -> Vec<usize> {
        self.column(task)
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Empirical loss, penalty and their penalised sum at a given lambda.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub empirical: f64,
    pub penalty: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(empirical: f64, penalty: f64, lambda: f64) -> Self {
        Self {
            empirical,
            penalty,
            lambda,
            total: empirical + lambda * penalty,
        }
    }
}

#[inline]
pub(crate) fn sigmoid_unchecked(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of one sample with logit `z` and binary label `y`.
#[inline]
pub(crate) fn log_loss_term(z: f64, y: u8) -> f64 {
    let p = sigmoid_unchecked(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Logits `X w` for every sample.
pub(crate) fn logits(weights: ArrayView1<'_, f64>, features: &Array2<f64>) -> Array1<f64> {
    features.dot(&weights)
}

pub(crate) fn mean_log_loss(logits: &Array1<f64>, labels: &[u8]) -> f64 {
    let sum: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| log_loss_term(z, y))
        .sum();
    sum / labels.len() as f64
}

pub fn sigmoid(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::invalid(format!("sigmoid of non-finite value {z}")));
    }
    Ok(sigmoid_unchecked(z))
}

/// Probability of the positive class for one sample.
pub fn predict(weights: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> Result<f64> {
    if weights.len() != x.len() {
        return Err(Error::dim(format!(
            "{} weights for {} features",
            weights.len(),
            x.len()
        )));
    }
    sigmoid(weights.dot(&x))
}

pub fn classify(p: f64, threshold: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "probability {p} and threshold {threshold} must lie in [0, 1]"
        )));
    }
    Ok(u8::from(p >= threshold))
}

/// Predicted labels for every sample of `data` at [`DEFAULT_THRESHOLD`].
pub fn classify_dataset(weights: ArrayView1<'_, f64>, data: &TaskDataset) -> Result<Vec<u8>> {
    check_weight_len(weights.len(), data)?;
    logits(weights, data.features())
        .iter()
        .map(|&z| classify(sigmoid(z)?, DEFAULT_THRESHOLD))
        .collect()
}

fn check_weight_len(len: usize, data: &TaskDataset) -> Result<()> {
    if len != data.n_features() {
        return Err(Error::dim(format!(
            "{len} weights for task '{}' with {} features",
            data.task_id(),
            data.n_features()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of one weight column on one task.
pub fn empirical_loss_single(weights: ArrayView1<'_, f64>, data: &TaskDataset) -> Result<f64> {
    check_weight_len(weights.len(), data)?;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("non-finite weight"));
    }
    Ok(mean_log_loss(
        &logits(weights, data.features()),
        data.labels(),
    ))
}

pub fn lp_norm(v: ArrayView1<'_, f64>, p: f64) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::invalid(format!(
            "norm order must be positive, got {p}"
        )));
    }
    Ok(v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p))
}

/// Sum over features of the Euclidean norm of that feature's weights across
/// tasks.
pub fn l21_norm(weights: &WeightMatrix) -> f64 {
    weights
        .values()
        .rows()
        .into_iter()
        .map(|row| group_norm(row.iter().copied()))
        .sum()
}

/// Euclidean norm of one feature row. A single entry returns `|w|` exactly.
#[inline]
pub(crate) fn group_norm(row: impl Iterator<Item = f64>) -> f64 {
    let mut single = None;
    let mut sq = 0.0;
    let mut count = 0usize;
    for w in row {
        single = Some(w);
        sq += w * w;
        count += 1;
    }
    match (count, single) {
        (1, Some(w)) => w.abs(),
        _ => sq.sqrt(),
    }
}

fn check_tasks(weights: &WeightMatrix, tasks: &[TaskDataset]) -> Result<()> {
    if tasks.len() != weights.n_tasks() {
        return Err(Error::dim(format!(
            "{} tasks for a weight matrix with {} columns",
            tasks.len(),
            weights.n_tasks()
        )));
    }
    for t in tasks {
        check_weight_len(weights.n_features(), t)?;
    }
    Ok(())
}

/// Average over tasks of each task's mean cross-entropy.
pub fn empirical_loss_mtl(weights: &WeightMatrix, tasks: &[TaskDataset]) -> Result<f64> {
    check_tasks(weights, tasks)?;
    let mut sum = 0.0;
    for (l, task) in tasks.iter().enumerate() {
        sum += empirical_loss_single(weights.column(l), task)?;
    }
    Ok(sum / tasks.len() as f64)
}

pub fn total_loss(
    weights: &WeightMatrix,
    tasks: &[TaskDataset],
    lambda: f64,
) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "regularisation parameter must be finite and nonnegative, got {lambda}"
        )));
    }
    let empirical = empirical_loss_mtl(weights, tasks)?;
    Ok(LossBreakdown::new(empirical, l21_norm(weights), lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn task(features: Array2<f64>, labels: Vec<u8>) -> TaskDataset {
        let m = features.ncols();
        TaskDataset::new(
            "t",
            features,
            labels,
            (0..m).map(|j| j as f64 + 1.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0).unwrap(), 0.5);
        assert!((sigmoid(40.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((sigmoid(3f64.ln()).unwrap() - 0.75).abs() < 1e-15);
        assert!(sigmoid(f64::NAN).is_err());
        assert!(sigmoid(f64::INFINITY).is_err());
    }

    #[test]
    fn predict_examples() {
        let zeros = array![0.0, 0.0, 0.0];
        assert_eq!(
            predict(zeros.view(), array![1.0, -7.0, 2.0].view()).unwrap(),
            0.5
        );
        assert_eq!(
            predict(array![1.0, 0.0].view(), array![0.0, 5.0].view()).unwrap(),
            0.5
        );
        let p = predict(array![2.0, -1.0].view(), array![1.0, 1.0].view()).unwrap();
        assert!((p - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
        assert!((p - 0.7311).abs() < 1e-4);
        assert!(matches!(
            predict(array![1.0].view(), array![1.0, 2.0].view()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn classify_boundary_is_positive() {
        assert_eq!(classify(0.5, 0.5).unwrap(), 1);
        assert_eq!(classify(0.49, 0.5).unwrap(), 0);
        assert_eq!(classify(0.51, 0.5).unwrap(), 1);
        assert!(classify(1.2, 0.5).is_err());
    }

    #[test]
    fn empirical_loss_examples() {
        let ln2 = std::f64::consts::LN_2;
        let one = task(array![[1.0, 2.0]], vec![1]);
        let l = empirical_loss_single(array![0.0, 0.0].view(), &one).unwrap();
        assert!((l - ln2).abs() < 1e-15);

        let two = task(array![[1.0], [-3.0]], vec![1, 0]);
        let l = empirical_loss_single(array![0.0].view(), &two).unwrap();
        assert!((l - ln2).abs() < 1e-15);

        let sep = task(array![[1.0], [2.0], [-1.0], [-2.0]], vec![1, 1, 0, 0]);
        let l = empirical_loss_single(array![50.0].view(), &sep).unwrap();
        assert!(l <= 1e-6);
        // saturated predictions hit the clamp, not infinity
        let wrong = empirical_loss_single(array![-1000.0].view(), &sep).unwrap();
        assert!(wrong.is_finite() && (wrong - -(PROB_CLAMP.ln())).abs() < 1e-3);
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(TaskDataset::new("x", Array2::zeros((0, 2)), vec![], vec![1.0, 2.0]).is_err());
        assert!(TaskDataset::new("x", Array2::zeros((1, 2)), vec![2], vec![1.0, 2.0]).is_err());
        assert!(TaskDataset::new("x", Array2::zeros((1, 2)), vec![1], vec![2.0, 1.0]).is_err());
        assert!(TaskDataset::new("x", array![[f64::NAN, 1.0]], vec![1], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(lp_norm(array![3.0, -4.0].view(), 2.0).unwrap(), 5.0);
        assert_eq!(lp_norm(array![3.0, -4.0].view(), 1.0).unwrap(), 7.0);
        assert_eq!(lp_norm(array![0.0, 0.0].view(), 0.5).unwrap(), 0.0);
        assert!(lp_norm(array![1.0].view(), 0.0).is_err());

        let w = WeightMatrix::new(array![[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_eq!(l21_norm(&w), 5.0);
        let w = WeightMatrix::from_column(&[3.0, -4.0]).unwrap();
        assert_eq!(l21_norm(&w), 7.0);
        assert_eq!(l21_norm(&WeightMatrix::zeros(4, 3)), 0.0);
    }

    #[test]
    fn mtl_loss_examples() {
        let a = task(array![[1.0, 0.5], [-1.0, 2.0], [0.3, -0.2]], vec![1, 0, 1]);
        let b = task(array![[0.1, 0.5], [-2.0, 1.0], [0.7, 0.2]], vec![0, 0, 1]);
        let col = array![0.4, -0.3];
        let single = empirical_loss_single(col.view(), &a).unwrap();
        let w1 = WeightMatrix::from_column(col.as_slice().unwrap()).unwrap();
        assert_eq!(
            empirical_loss_mtl(&w1, std::slice::from_ref(&a)).unwrap(),
            single
        );

        let w2 = WeightMatrix::new(array![[0.4, 0.4], [-0.3, -0.3]]).unwrap();
        let same = empirical_loss_mtl(&w2, &[a.clone(), a.clone()]).unwrap();
        assert!((same - single).abs() < 1e-15);

        let lb = empirical_loss_single(col.view(), &b).unwrap();
        let mixed = empirical_loss_mtl(&w2, &[a.clone(), b.clone()]).unwrap();
        assert!((mixed - (single + lb) / 2.0).abs() < 1e-15);

        assert!(empirical_loss_mtl(&w2, std::slice::from_ref(&a)).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let t = task(array![[1.0, 0.5], [-1.0, 2.0]], vec![1, 0]);
        let w = WeightMatrix::from_column(&[1.0, -2.0]).unwrap();
        let e = empirical_loss_single(w.column(0), &t).unwrap();
        let b = total_loss(&w, std::slice::from_ref(&t), 0.5).unwrap();
        assert_eq!(b.penalty, 3.0);
        assert!((b.total - (e + 1.5)).abs() < 1e-15);

        let b0 = total_loss(&w, std::slice::from_ref(&t), 0.0).unwrap();
        assert_eq!(b0.total, b0.empirical);

        let z = WeightMatrix::zeros(2, 1);
        let bz = total_loss(&z, std::slice::from_ref(&t), 3.0).unwrap();
        assert_eq!(bz.penalty, 0.0);
        assert_eq!(bz.total, bz.empirical);

        assert!(total_loss(&w, std::slice::from_ref(&t), -0.1).is_err());
    }

    #[test]
    fn standardizer_round_trip_shape() {
        let t = task(array![[1.0, 5.0], [3.0, 5.0]], vec![1, 0]);
        let s = Standardizer::fit(&t);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        let z = s.apply(&t).unwrap();
        assert_eq!(z.features(), &array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    fn small_task() -> impl Strategy<Value = (TaskDataset, usize)> {
        (1usize..6, 1usize..4).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n * m),
                proptest::collection::vec(0u8..2, n),
            )
                .prop_map(move |(x, y)| (task(Array2::from_shape_vec((n, m), x).unwrap(), y), m))
        })
    }

    proptest! {
        #[test]
        fn sigmoid_bounds_and_symmetry(z in -700.0f64..700.0) {
            let s = sigmoid(z).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            if z.abs() < 30.0 {
                prop_assert!(s > 0.0 && s < 1.0);
            }
            prop_assert!((sigmoid(-z).unwrap() - (1.0 - s)).abs() < 1e-12);
        }

        #[test]
        fn losses_nonnegative((t, m) in small_task(), w in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let col = Array1::from(w[..m].to_vec());
            prop_assert!(empirical_loss_single(col.view(), &t).unwrap() >= 0.0);
        }

        #[test]
        fn single_column_l21_is_l1(w in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
            let wm = WeightMatrix::from_column(&w).unwrap();
            let l1 = lp_norm(wm.column(0), 1.0).unwrap();
            prop_assert!((l21_norm(&wm) - l1).abs() < 1e-12);
        }

        #[test]
        fn l21_row_sign_flip(w in proptest::collection::vec(-10.0f64..10.0, 6), row in 0usize..3) {
            let mut a = Array2::from_shape_vec((3, 2), w).unwrap();
            let before = l21_norm(&WeightMatrix::new(a.clone()).unwrap());
            a.row_mut(row).mapv_inplace(|v| -v);
            prop_assert_eq!(l21_norm(&WeightMatrix::new(a).unwrap()), before);
        }

        #[test]
        fn total_loss_convex(
            (t, m) in small_task(),
            // keeps |logit| below the clamp where the loss stops being convex
            w1 in proptest::collection::vec(-2.0f64..2.0, 3),
            w2 in proptest::collection::vec(-2.0f64..2.0, 3),
            s in 0.0f64..1.0,
            lambda in 0.0f64..2.0,
        ) {
            let a = WeightMatrix::from_column(&w1[..m]).unwrap();
            let b = WeightMatrix::from_column(&w2[..m]).unwrap();
            let mix = WeightMatrix::new(a.values() * s + b.values() * (1.0 - s)).unwrap();
            let tasks = std::slice::from_ref(&t);
            let la = total_loss(&a, tasks, lambda).unwrap().total;
            let lb = total_loss(&b, tasks, lambda).unwrap().total;
            let lm = total_loss(&mix, tasks, lambda).unwrap().total;
            prop_assert!(lm <= s * la + (1.0 - s) * lb + 1e-9);
        }
    }
}
