//! Regression error and binary-scoring metrics.

use crate::error::{FglError, Result};

pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(FglError::config(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(FglError::EmptyDataset("mse of no samples".into()));
    }
    let total: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(total / predictions.len() as f64)
}

/// Scores with binary ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(FglError::config(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(FglError::domain("scores must be finite"));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|l| **l).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(FglError::UndefinedMetric(format!(
                "need both classes, got {pos} positive and {neg} negative"
            )));
        }
        Ok((pos, neg))
    }

    /// Indices sorted by ascending score.
    fn ascending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }
}

/// Probability that a random positive outscores a random negative, with
/// ties worth one half.
pub fn auc_roc(data: &ScoredLabels) -> Result<f64> {
    let (pos, neg) = data.class_counts()?;
    let idx = data.ascending();
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < idx.len() {
        let score = data.scores[idx[i]];
        let (mut p, mut n) = (0usize, 0usize);
        while i < idx.len() && data.scores[idx[i]] == score {
            if data.labels[idx[i]] {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        wins += (p * neg_below) as f64 + 0.5 * (p * n) as f64;
        neg_below += n;
    }
    Ok(wins / (pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Scores strictly above this are called positive.
    pub threshold: f64,
    pub sensitivity: f64,
    pub fpr: f64,
}

impl OperatingPoint {
    pub fn youden_j(&self) -> f64 {
        self.sensitivity - self.fpr
    }
}

/// Threshold maximizing `sensitivity - fpr` among the midpoints between
/// adjacent distinct scores and the two infinite sentinels. Ties go to the
/// higher threshold.
pub fn youden_threshold(data: &ScoredLabels) -> Result<OperatingPoint> {
    let (pos, neg) = data.class_counts()?;
    let mut idx = data.ascending();
    idx.reverse();
    let point = |tp: usize, fp: usize, threshold: f64| OperatingPoint {
        threshold,
        sensitivity: tp as f64 / pos as f64,
        fpr: fp as f64 / neg as f64,
    };
    let mut best = point(0, 0, f64::INFINITY);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let score = data.scores[idx[i]];
        while i < idx.len() && data.scores[idx[i]] == score {
            if data.labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < idx.len() {
            0.5 * (score + data.scores[idx[i]])
        } else {
            f64::NEG_INFINITY
        };
        let candidate = point(tp, fp, threshold);
        if candidate.youden_j() > best.youden_j() {
            best = candidate;
        }
    }
    Ok(best)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data(scores: &[f64], labels: &[u8]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.iter().map(|l| *l == 1).collect()).unwrap()
    }

    fn pair_count_auc(d: &ScoredLabels) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0usize);
        for (i, li) in d.labels().iter().enumerate() {
            for (j, lj) in d.labels().iter().enumerate() {
                if *li && !*lj {
                    pairs += 1;
                    let (a, b) = (d.scores()[i], d.scores()[j]);
                    if a > b {
                        wins += 1.0;
                    } else if a == b {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs as f64
    }

    fn best_j_over_scores(d: &ScoredLabels) -> f64 {
        let pos = d.labels().iter().filter(|l| **l).count() as f64;
        let neg = d.len() as f64 - pos;
        let mut best: f64 = 0.0; // both sentinels give J = 0
        for &thr in d.scores() {
            let tp = d
                .scores()
                .iter()
                .zip(d.labels())
                .filter(|(s, l)| **l && **s >= thr)
                .count() as f64;
            let fp = d
                .scores()
                .iter()
                .zip(d.labels())
                .filter(|(s, l)| !**l && **s >= thr)
                .count() as f64;
            best = best.max(tp / pos - fp / neg);
        }
        best
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        let base = mse(&[0.5, -0.25, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        let doubled = mse(&[1.0, -0.5, 4.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(doubled, 4.0 * base);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn auc_examples() {
        let d = data(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        assert_eq!(auc_roc(&d).unwrap(), 0.75);
        assert_eq!(auc_roc(&data(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(auc_roc(&data(&[0.5; 4], &[0, 1, 0, 1])).unwrap(), 0.5);
        assert!(matches!(
            auc_roc(&data(&[0.1, 0.2], &[1, 1])),
            Err(FglError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn youden_examples() {
        let d = data(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let p = youden_threshold(&d).unwrap();
        assert!((p.threshold - 0.6).abs() < 1e-12);
        assert_eq!((p.sensitivity, p.fpr), (0.5, 0.0));

        let p = youden_threshold(&data(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap();
        assert_eq!((p.sensitivity, p.fpr, p.youden_j()), (1.0, 0.0, 1.0));

        // inverted: no threshold beats the sentinels, the upper one wins the tie
        let p = youden_threshold(&data(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0])).unwrap();
        assert_eq!(p.threshold, f64::INFINITY);
        assert_eq!(p.youden_j(), 0.0);
        assert!(youden_threshold(&data(&[0.1], &[0])).is_err());
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    fn instance() -> impl Strategy<Value = ScoredLabels> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..12, n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_filter("both classes", |(_, l)| l.iter().any(|x| *x) && l.iter().any(|x| !*x))
                .prop_map(|(s, l)| ScoredLabels::new(s.into_iter().map(|v| v as f64 / 4.0).collect(), l).unwrap())
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(d in instance()) {
            prop_assert_eq!(auc_roc(&d).unwrap(), pair_count_auc(&d));
        }

        #[test]
        fn auc_complement_under_label_flip(d in instance()) {
            let flipped = ScoredLabels::new(d.scores().to_vec(), d.labels().iter().map(|l| !l).collect()).unwrap();
            prop_assert!((1.0 - auc_roc(&d).unwrap() - auc_roc(&flipped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(d in instance()) {
            let t = ScoredLabels::new(d.scores().iter().map(|s| (3.0 * s).exp() - 7.0).collect(), d.labels().to_vec()).unwrap();
            prop_assert_eq!(auc_roc(&d).unwrap(), auc_roc(&t).unwrap());
        }

        #[test]
        fn youden_matches_exhaustive_scan(d in instance()) {
            let p = youden_threshold(&d).unwrap();
            prop_assert!((p.youden_j() - best_j_over_scores(&d)).abs() < 1e-12);
        }
    }
}
