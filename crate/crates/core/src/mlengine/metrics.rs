//! Binary classification metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl Confusion {
    pub fn from_pairs<I: IntoIterator<Item = (bool, bool)>>(pairs: I) -> Self {
        let mut c = Confusion::default();
        for (truth, pred) in pairs {
            match (truth, pred) {
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (true, true) => c.tp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// Unweighted mean of the per-class F1 scores. A class that is neither
    /// present nor predicted scores 1.
    pub fn f1_macro(&self) -> f64 {
        let f1 = |tp: u64, fp: u64, fn_: u64| {
            let den = 2 * tp + fp + fn_;
            if den == 0 {
                1.0
            } else {
                (2 * tp) as f64 / den as f64
            }
        };
        (f1(self.tp, self.fp, self.fn_) + f1(self.tn, self.fn_, self.fp)) / 2.0
    }
}

pub fn confusion(labels: &[bool], predictions: &[bool]) -> Confusion {
    assert_eq!(labels.len(), predictions.len());
    Confusion::from_pairs(labels.iter().copied().zip(predictions.iter().copied()))
}

pub fn accuracy(labels: &[bool], predictions: &[bool]) -> f64 {
    confusion(labels, predictions).accuracy()
}

pub fn f1_macro(labels: &[bool], predictions: &[bool]) -> f64 {
    confusion(labels, predictions).f1_macro()
}

/// Encode booleans as a string of `0`/`1`.
pub fn encode_bits(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn decode_bits(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}
