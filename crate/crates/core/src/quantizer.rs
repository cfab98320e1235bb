//! Equal-width binning of real targets into class labels, and the two
//! readouts that map a categorical distribution back to a real value.

use serde::{Deserialize, Serialize};

use crate::error::{FglError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BinSpec {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins < 2 {
            return Err(FglError::config(format!("need at least 2 bins, got {bins}")));
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(FglError::domain("bin range must be finite"));
        }
        if hi <= lo {
            return Err(FglError::DegenerateRange(lo));
        }
        Ok(Self { bins, lo, hi })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, index: usize) -> f64 {
        self.lo + (index as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|j| self.center(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(usize);

impl ClassLabel {
    pub fn new(index: usize, bins: usize) -> Result<Self> {
        if index >= bins {
            return Err(FglError::domain(format!("label {index} outside [0, {bins})")));
        }
        Ok(Self(index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// A categorical distribution: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(FglError::domain("empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FglError::domain("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FglError::domain(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn one_hot(label: ClassLabel, bins: usize) -> Self {
        let mut p = vec![0.0; bins];
        p[label.index()] = 1.0;
        Self(p)
    }

    pub fn uniform(bins: usize) -> Self {
        Self(vec![1.0 / bins as f64; bins])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Bin range from the minimum and maximum of the training values.
pub fn fit_bins(train_values: &[f64], bins: usize) -> Result<BinSpec> {
    if train_values.is_empty() {
        return Err(FglError::EmptyDataset("no values to fit bins on".into()));
    }
    if train_values.iter().any(|v| !v.is_finite()) {
        return Err(FglError::domain("non-finite training value"));
    }
    let lo = train_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(FglError::DegenerateRange(lo));
    }
    BinSpec::new(bins, lo, hi)
}

/// Out-of-range values clamp to the edge bins.
pub fn quantize(x: f64, spec: &BinSpec) -> Result<ClassLabel> {
    if !x.is_finite() {
        return Err(FglError::domain(format!("cannot quantize {x}")));
    }
    Ok(ClassLabel(quantize_index(x, spec)))
}

pub(crate) fn quantize_index(x: f64, spec: &BinSpec) -> usize {
    let raw = ((x - spec.lo) / spec.width()).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(spec.bins - 1)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = j;
        }
    }
    best
}

/// Center of the most probable bin.
pub fn dequantize_argmax(p: &ProbVector, spec: &BinSpec) -> Result<f64> {
    check_len(p, spec)?;
    Ok(spec.center(argmax(p.as_slice())))
}

/// Probability-weighted mean of the bin centers.
pub fn dequantize_expectation(p: &ProbVector, spec: &BinSpec) -> Result<f64> {
    check_len(p, spec)?;
    Ok(expectation(p.as_slice(), spec))
}

pub(crate) fn expectation(probs: &[f64], spec: &BinSpec) -> f64 {
    probs.iter().enumerate().map(|(j, p)| p * spec.center(j)).sum()
}

fn check_len(p: &ProbVector, spec: &BinSpec) -> Result<()> {
    if p.len() != spec.bins {
        return Err(FglError::config(format!(
            "distribution has {} entries, bin spec has {}",
            p.len(),
            spec.bins
        )));
    }
    Ok(())
}

/// How categorical outputs are turned into point forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Argmax,
    Expectation,
}

impl Readout {
    pub const ALL: [Readout; 2] = [Readout::Argmax, Readout::Expectation];

    pub fn as_str(self) -> &'static str {
        match self {
            Readout::Argmax => "argmax",
            Readout::Expectation => "expectation",
        }
    }

    pub(crate) fn apply(self, probs: &[f64], spec: &BinSpec) -> f64 {
        match self {
            Readout::Argmax => spec.center(argmax(probs)),
            Readout::Expectation => expectation(probs, spec),
        }
    }
}

impl std::str::FromStr for Readout {
    type Err = FglError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Readout::Argmax),
            "expectation" => Ok(Readout::Expectation),
            other => Err(FglError::config(format!("unknown readout {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit4() -> BinSpec {
        BinSpec::new(4, 0.0, 1.0).unwrap()
    }

    #[test]
    fn fit_examples() {
        let s = fit_bins(&[0.0, 1.0], 4).unwrap();
        assert_eq!((s.lo, s.hi, s.width()), (0.0, 1.0, 0.25));
        let s = fit_bins(&[0.4, 1.4], 25).unwrap();
        assert!((s.width() - 0.04).abs() < 1e-15);
        assert!(matches!(
            fit_bins(&[3.0, 3.0, 3.0], 4),
            Err(FglError::DegenerateRange(_))
        ));
        assert!(fit_bins(&[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn quantize_examples() {
        let s = unit4();
        assert_eq!(quantize(0.3, &s).unwrap().index(), 1);
        assert_eq!(quantize(1.0, &s).unwrap().index(), 3);
        assert_eq!(quantize(-0.5, &s).unwrap().index(), 0);
        assert_eq!(quantize(7.0, &s).unwrap().index(), 3);
        assert!(quantize(f64::NAN, &s).is_err());
    }

    #[test]
    fn argmax_readout() {
        let s = unit4();
        let one_hot = ProbVector::one_hot(ClassLabel::new(1, 4).unwrap(), 4);
        assert_eq!(dequantize_argmax(&one_hot, &s).unwrap(), 0.375);
        assert_eq!(dequantize_argmax(&ProbVector::uniform(4), &s).unwrap(), 0.125);
        let p = ProbVector::new(vec![0.2, 0.3, 0.5, 0.0]).unwrap();
        assert_eq!(dequantize_argmax(&p, &s).unwrap(), 0.625);
    }

    #[test]
    fn expectation_readout() {
        let s = unit4();
        let one_hot = ProbVector::one_hot(ClassLabel::new(1, 4).unwrap(), 4);
        assert_eq!(dequantize_expectation(&one_hot, &s).unwrap(), 0.375);
        assert!((dequantize_expectation(&ProbVector::uniform(4), &s).unwrap() - 0.5).abs() < 1e-15);
        let p = ProbVector::new(vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((dequantize_expectation(&p, &s).unwrap() - 0.5).abs() < 1e-15);
        assert!(dequantize_expectation(&ProbVector::uniform(3), &s).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ClassLabel::new(4, 4).is_err());
    }

    #[test]
    fn doubling_bins_halves_width() {
        let v = [0.41, 1.37, 0.9];
        let w25 = fit_bins(&v, 25).unwrap().width();
        let w50 = fit_bins(&v, 50).unwrap().width();
        assert!((w50 - w25 / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn roundtrip_within_half_width(lo in -5.0..5.0f64, span in 0.01..10.0f64, t in 0.0..=1.0f64, bins in 2usize..80) {
            let s = BinSpec::new(bins, lo, lo + span).unwrap();
            let x = lo + t * span;
            let label = quantize(x, &s).unwrap();
            let back = dequantize_argmax(&ProbVector::one_hot(label, bins), &s).unwrap();
            prop_assert!((back - x).abs() <= s.width() / 2.0 + 1e-12);
        }

        #[test]
        fn quantize_is_monotone(a in -2.0..3.0f64, b in -2.0..3.0f64) {
            let s = BinSpec::new(25, 0.0, 1.0).unwrap();
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(x, &s).unwrap() <= quantize(y, &s).unwrap());
        }

        #[test]
        fn readouts_agree_on_one_hot(idx in 0usize..50) {
            let s = BinSpec::new(50, 0.3, 1.4).unwrap();
            let p = ProbVector::one_hot(ClassLabel::new(idx, 50).unwrap(), 50);
            prop_assert_eq!(dequantize_argmax(&p, &s).unwrap(), dequantize_expectation(&p, &s).unwrap());
        }
    }
}
