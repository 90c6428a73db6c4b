//! Pixel metrics and crack-width bucketed detection accuracy.

use crate::error::{Error, Result};

/// Probabilities at or above this count as crack.
pub const THRESHOLD: f64 = 0.5;

/// Lower bounds (µm, exclusive) of the crack-width buckets.
pub const BUCKET_THRESHOLDS_UM: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(pred: &[f64], target: &[u8]) -> Result<Self> {
        Self::from_predictions_at(pred, target, THRESHOLD)
    }

    pub fn from_predictions_at(pred: &[f64], target: &[u8], threshold: f64) -> Result<Self> {
        if pred.len() != target.len() {
            return Err(Error::shape(
                "confusion",
                format!("{} predictions, {} targets", pred.len(), target.len()),
            ));
        }
        let mut c = Self::default();
        for (&p, &y) in pred.iter().zip(target) {
            match (p >= threshold, y != 0) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `2TP / (2TP + FP + FN)`; 1 when there are no positives anywhere.
    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// `(TP + TN) / total`.
    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// One evaluated sample for bucketed accuracy.
#[derive(Debug, Clone, Copy)]
pub struct BucketSample<'a> {
    pub prediction: &'a [f64],
    pub mask: &'a [u8],
    /// Width of the sample's narrowest crack.
    pub min_width_um: f64,
}

impl BucketSample<'_> {
    /// At least half of the ground-truth crack pixels are predicted as crack.
    /// `None` when the mask has no crack pixels.
    pub fn detected(&self) -> Option<bool> {
        self.detected_at(THRESHOLD)
    }

    pub fn detected_at(&self, threshold: f64) -> Option<bool> {
        let mut total = 0usize;
        let mut hit = 0usize;
        for (&p, &y) in self.prediction.iter().zip(self.mask) {
            if y != 0 {
                total += 1;
                if p >= threshold {
                    hit += 1;
                }
            }
        }
        (total > 0).then_some(2 * hit >= total)
    }
}

/// Bucket membership: samples with a crack and minimum width above `t`.
pub fn in_bucket(s: &BucketSample<'_>, t: f64) -> bool {
    s.min_width_um > t && s.mask.iter().any(|&m| m != 0)
}

/// Detection accuracy per threshold; `None` marks an empty bucket.
pub fn bucketed_accuracy(samples: &[BucketSample<'_>], thresholds: &[f64]) -> Result<Vec<Option<f64>>> {
    bucketed_accuracy_at(samples, thresholds, THRESHOLD)
}

/// [`bucketed_accuracy`] with a custom probability threshold.
pub fn bucketed_accuracy_at(
    samples: &[BucketSample<'_>],
    thresholds: &[f64],
    threshold: f64,
) -> Result<Vec<Option<f64>>> {
    for s in samples {
        if s.prediction.len() != s.mask.len() {
            return Err(Error::shape(
                "bucketed_accuracy",
                format!("{} predictions, {} mask pixels", s.prediction.len(), s.mask.len()),
            ));
        }
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (n, ok) = samples
                .iter()
                .filter(|s| in_bucket(s, t))
                .fold((0usize, 0usize), |(n, ok), s| (n + 1, ok + usize::from(s.detected_at(threshold) == Some(true))));
            (n > 0).then(|| ok as f64 / n as f64)
        })
        .collect())
}
