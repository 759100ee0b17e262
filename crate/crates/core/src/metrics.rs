//! Agreement between detected user counts and ground-truth population.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hda::TowerVectors;
use crate::windows::{DurationClass, ObservationWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
pub enum UndefinedCorrelation {
    #[error("vectors differ in length")]
    LengthMismatch,
    #[error("fewer than two elements")]
    TooFewElements,
    #[error("non-finite element")]
    NonFinite,
    #[error("x is constant")]
    ConstantX,
    #[error("y is constant")]
    ConstantY,
}

impl UndefinedCorrelation {
    pub fn tag(self) -> &'static str {
        match self {
            UndefinedCorrelation::LengthMismatch => "length_mismatch",
            UndefinedCorrelation::TooFewElements => "too_few_elements",
            UndefinedCorrelation::NonFinite => "non_finite",
            UndefinedCorrelation::ConstantX => "constant_x",
            UndefinedCorrelation::ConstantY => "constant_y",
        }
    }
}

pub type Correlation = Result<f64, UndefinedCorrelation>;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Streaming Pearson correlation with Welford-style updates of the centred
/// moments and compensated accumulation of the update terms.
///
/// The co-moment update uses `dx * dy * (n - 1) / n` with both deltas taken
/// against the previous means, which keeps the result exactly symmetric in
/// its two arguments. Accumulators from disjoint chunks can be merged.
#[derive(Clone, Copy, Debug, Default)]
pub struct PearsonAccumulator {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2x: CompensatedSum,
    m2y: CompensatedSum,
    cxy: CompensatedSum,
    non_finite: bool,
}

impl PearsonAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn push(&mut self, x: f64, y: f64) {
        if !(x.is_finite() && y.is_finite()) {
            self.non_finite = true;
            return;
        }
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        let w = (n - 1.0) / n;
        self.m2x.add(dx * dx * w);
        self.m2y.add(dy * dy * w);
        self.cxy.add(dx * dy * w);
    }

    pub fn merge(&mut self, other: &PearsonAccumulator) {
        if other.n == 0 {
            self.non_finite |= other.non_finite;
            return;
        }
        if self.n == 0 {
            let nf = self.non_finite;
            *self = *other;
            self.non_finite |= nf;
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        let w = na * nb / n;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        for (acc, part, cross) in [
            (&mut self.m2x, &other.m2x, dx * dx * w),
            (&mut self.m2y, &other.m2y, dy * dy * w),
            (&mut self.cxy, &other.cxy, dx * dy * w),
        ] {
            acc.add(part.sum);
            acc.add(part.carry);
            acc.add(cross);
        }
        self.n += other.n;
        self.non_finite |= other.non_finite;
    }

    pub fn finish(&self) -> Correlation {
        if self.non_finite {
            return Err(UndefinedCorrelation::NonFinite);
        }
        if self.n < 2 {
            return Err(UndefinedCorrelation::TooFewElements);
        }
        let sxx = self.m2x.value();
        let syy = self.m2y.value();
        if sxx <= 0.0 {
            return Err(UndefinedCorrelation::ConstantX);
        }
        if syy <= 0.0 {
            return Err(UndefinedCorrelation::ConstantY);
        }
        let r = self.cxy.value() / (sxx.sqrt() * syy.sqrt());
        Ok(r.clamp(-1.0, 1.0))
    }
}

/// Pearson's R of two equal-length vectors, computed in a single pass.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Correlation {
    if x.len() != y.len() {
        return Err(UndefinedCorrelation::LengthMismatch);
    }
    let mut acc = PearsonAccumulator::new();
    for (&a, &b) in x.iter().zip(y) {
        acc.push(a, b);
    }
    acc.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogRatioGap {
    ZeroUsers,
    ZeroPopulation,
    ZeroBoth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LogRatio {
    Defined(f64),
    Undefined(LogRatioGap),
}

impl LogRatio {
    pub fn value(self) -> Option<f64> {
        match self {
            LogRatio::Defined(v) => Some(v),
            LogRatio::Undefined(_) => None,
        }
    }
}

impl fmt::Display for LogRatio {
    /// Defined values print as numbers, undefined ones as an empty string.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogRatio::Defined(v) => write!(f, "{v}"),
            LogRatio::Undefined(_) => Ok(()),
        }
    }
}

/// `ln(x / y)` for a user count `x` and population `y`.
pub fn log_ratio(x: f64, y: f64) -> LogRatio {
    match (x > 0.0, y > 0.0) {
        (true, true) => LogRatio::Defined((x / y).ln()),
        (false, true) => LogRatio::Undefined(LogRatioGap::ZeroUsers),
        (true, false) => LogRatio::Undefined(LogRatioGap::ZeroPopulation),
        (false, false) => LogRatio::Undefined(LogRatioGap::ZeroBoth),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileBin {
    /// 1-based decile of the population ranking (1 = lowest tenth).
    pub decile: u8,
    pub count: usize,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    pub mean_x: Option<f64>,
    /// Population standard deviation.
    pub std_x: Option<f64>,
}

/// Mean and spread of user counts within population deciles, top decile excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileSummary {
    pub bins: Vec<DecileBin>,
    /// Set when fewer than ten towers were available and some bins are empty.
    pub sparse: bool,
}

/// Towers are ranked by (y, x) and cut at `floor(k * n / 10)`; bins 1..=9 are kept.
pub fn decile_summary(x: &[f64], y: &[f64]) -> DecileSummary {
    assert_eq!(x.len(), y.len(), "decile_summary on vectors of different length");
    let mut pairs: Vec<(f64, f64)> = y.iter().copied().zip(x.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len();
    let bins = (0..9)
        .map(|b| {
            let slice = &pairs[b * n / 10..(b + 1) * n / 10];
            if slice.is_empty() {
                return DecileBin {
                    decile: b as u8 + 1,
                    count: 0,
                    y_min: None,
                    y_max: None,
                    mean_x: None,
                    std_x: None,
                };
            }
            let len = slice.len() as f64;
            let mean = slice.iter().map(|p| p.1).sum::<f64>() / len;
            let var = slice.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / len;
            DecileBin {
                decile: b as u8 + 1,
                count: slice.len(),
                y_min: Some(slice[0].0),
                y_max: Some(slice[slice.len() - 1].0),
                mean_x: Some(mean),
                std_x: Some(var.sqrt()),
            }
        })
        .collect();
    DecileSummary { bins, sparse: n < 10 }
}

/// Towers flagged as excludable because their user count is below a threshold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExclusionMask {
    pub threshold: u64,
    excluded: Vec<bool>,
}

impl ExclusionMask {
    pub fn is_excluded(&self, tower: usize) -> bool {
        self.excluded[tower]
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    pub fn excluded_indices(&self) -> Vec<usize> {
        self.excluded
            .iter()
            .enumerate()
            .filter_map(|(i, &e)| e.then_some(i))
            .collect()
    }

    /// Keeps the entries of `values` not excluded by the mask.
    pub fn keep<T: Copy>(&self, values: &[T]) -> Vec<T> {
        values
            .iter()
            .zip(&self.excluded)
            .filter_map(|(&v, &e)| (!e).then_some(v))
            .collect()
    }
}

pub fn exclusion_policy(x: &[u64], threshold: u64) -> ExclusionMask {
    ExclusionMask {
        threshold,
        excluded: x.iter().map(|&v| v < threshold).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub hda: String,
    pub window: String,
    pub class: DurationClass,
    /// Over the towers kept by the exclusion mask (all towers when the threshold is 0).
    pub pearson_r: Correlation,
    /// Over every registry tower regardless of the mask.
    pub pearson_r_all: Correlation,
    pub n_towers_used: usize,
    pub excluded_towers: usize,
    pub exclusion_threshold: u64,
    pub logratio: Vec<LogRatio>,
    pub deciles: DecileSummary,
}

pub fn evaluate(hda: &str, window: &ObservationWindow, vectors: &TowerVectors, exclusion_threshold: u64) -> MetricReport {
    let x = vectors.x_f64();
    let mask = exclusion_policy(&vectors.x, exclusion_threshold);
    let (xs, ys) = (mask.keep(&x), mask.keep(&vectors.y));
    MetricReport {
        hda: hda.to_string(),
        window: window.label.clone(),
        class: window.class,
        pearson_r: pearson_r(&xs, &ys),
        pearson_r_all: pearson_r(&x, &vectors.y),
        n_towers_used: xs.len(),
        excluded_towers: mask.excluded_count(),
        exclusion_threshold,
        logratio: x.iter().zip(&vectors.y).map(|(&a, &b)| log_ratio(a, b)).collect(),
        deciles: decile_summary(&xs, &ys),
    }
}
