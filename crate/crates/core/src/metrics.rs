//! Classification accuracy (F1) and weight sparsity (Gini index).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WeightMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_labels(y_true: &[u8], y_pred: &[u8]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::dim(format!(
                "{} true labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::invalid("cannot score an empty label set"));
        }
        let mut c = Self::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fn_ += 1,
                _ => return Err(Error::invalid(format!("non-binary label pair ({t}, {p})"))),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `2 tp / (2 tp + fp + fn)`; a fold with no positives anywhere scores 1.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn f1_score(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    Ok(ConfusionCounts::from_labels(y_true, y_pred)?.f1())
}

/// Gini index of the weight magnitudes.
///
/// Magnitudes are sorted ascending and the index is
/// `1 - 2 * sum_j (|w|_(j) / ||w||_1) * (M - j + 1/2) / M` with 1-based `j`.
/// Absolute values are used in the mass term as well as for the ordering, so
/// signed weights cannot push the index outside `[0, 1]`. The zero vector has
/// index 0.
pub fn gini_index(w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::invalid("gini index of an empty vector"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("gini index of a non-finite vector"));
    }
    let mut mags: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let l1: f64 = mags.iter().sum();
    if l1 == 0.0 {
        return Ok(0.0);
    }
    let m = mags.len() as f64;
    let weighted: f64 = mags
        .iter()
        .enumerate()
        .map(|(idx, &a)| (a / l1) * ((m - (idx + 1) as f64 + 0.5) / m))
        .sum();
    Ok((1.0 - 2.0 * weighted).clamp(0.0, 1.0))
}

/// Gini index of every task column.
pub fn gini_index_mtl(weights: &WeightMatrix) -> Vec<f64> {
    (0..weights.n_tasks())
        .map(|l| {
            let col: Vec<f64> = weights.column(l).to_vec();
            // WeightMatrix guarantees finite, nonempty columns
            gini_index(&col).unwrap_or(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(f1_score(&[1, 1, 0], &[0, 0, 1]).unwrap(), 0.0);
        assert_eq!(f1_score(&[1, 1, 0], &[1, 0, 1]).unwrap(), 0.5);
        assert_eq!(f1_score(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(f1_score(&[0, 0], &[0, 1]).unwrap(), 0.0);
        assert!(f1_score(&[1], &[1, 0]).is_err());
        assert!(f1_score(&[], &[]).is_err());
        assert!(f1_score(&[2], &[1]).is_err());
    }

    #[test]
    fn confusion_counts_total() {
        let c = ConfusionCounts::from_labels(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
        assert_eq!(c.total(), 5);
    }

    #[test]
    fn gini_examples() {
        assert!(gini_index(&[2.5; 4]).unwrap().abs() < 1e-12);
        let mut hot = vec![0.0; 10];
        hot[3] = -4.0;
        assert!((gini_index(&hot).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(gini_index(&[0.0; 5]).unwrap(), 0.0);
        assert!(gini_index(&[]).is_err());
        assert!(gini_index(&[f64::NAN]).is_err());
    }

    #[test]
    fn gini_per_task() {
        let w = WeightMatrix::new(array![[1.0, 1.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let g = gini_index_mtl(&w);
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
        let single = WeightMatrix::from_column(&[0.3, 0.0, -1.0]).unwrap();
        assert_eq!(
            gini_index_mtl(&single),
            vec![gini_index(&[0.3, 0.0, -1.0]).unwrap()]
        );
        let twin = WeightMatrix::new(array![[0.3, 0.3], [2.0, 2.0]]).unwrap();
        let g = gini_index_mtl(&twin);
        assert_eq!(g[0], g[1]);
    }

    fn labels() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<usize>)> {
        (1usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec(0u8..2, n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    }

    proptest! {
        #[test]
        fn f1_permutation_invariant((t, p, perm) in labels()) {
            let tp: Vec<u8> = perm.iter().map(|&i| t[i]).collect();
            let pp: Vec<u8> = perm.iter().map(|&i| p[i]).collect();
            prop_assert_eq!(f1_score(&t, &p).unwrap(), f1_score(&tp, &pp).unwrap());
        }

        #[test]
        fn gini_range_scale_sign(w in proptest::collection::vec(-10.0f64..10.0, 1..40), c in 0.01f64..100.0, neg in any::<bool>()) {
            let g = gini_index(&w).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            let c = if neg { -c } else { c };
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            prop_assert!((gini_index(&scaled).unwrap() - g).abs() < 1e-12);
            let abs: Vec<f64> = w.iter().map(|v| v.abs()).collect();
            prop_assert!((gini_index(&abs).unwrap() - g).abs() < 1e-12);
        }

        #[test]
        fn gini_concentration_never_decreases(w in proptest::collection::vec(0.0f64..10.0, 2..30), frac in 0.0f64..=1.0) {
            let g0 = gini_index(&w).unwrap();
            let nz: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0).collect();
            prop_assume!(nz.len() >= 2);
            let small = *nz.iter().min_by(|&&a, &&b| w[a].total_cmp(&w[b])).unwrap();
            let large = *nz.iter().max_by(|&&a, &&b| w[a].total_cmp(&w[b])).unwrap();
            prop_assume!(small != large);
            let mut moved = w.clone();
            let amount = moved[small] * frac;
            moved[small] -= amount;
            moved[large] += amount;
            prop_assert!(gini_index(&moved).unwrap() >= g0 - 1e-12);
        }
    }
}
