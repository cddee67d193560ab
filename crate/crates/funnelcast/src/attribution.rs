//! Ground-truth label construction via attribution models.
//!
//! A user's per-session shopping-stage classes are expanded into a one-hot
//! indicator matrix; each class column is then turned into a running
//! probability using either linear attribution (equal credit to every session
//! so far) or time-decaying attribution (credit halves per step back from the
//! current session).

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Number of shopping-stage classes.
pub const NUM_CLASSES: usize = 6;

/// Which attribution rule produces the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributionModel {
    Linear,
    TimeDecay,
}

impl AttributionModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttributionModel::Linear => "linear",
            AttributionModel::TimeDecay => "timedecay",
        }
    }
}

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("class id {0} out of range 0..6")]
    BadClassId(usize),
    #[error("empty session sequence")]
    Empty,
}

/// N x 6 one-hot matrix: row n marks the class of session n.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    v: Array2<u8>,
}

impl IndicatorMatrix {
    /// Expand per-session class ids into one-hot rows.
    pub fn from_class_ids(class_ids: &[usize]) -> Result<Self, AttributionError> {
        if class_ids.is_empty() {
            return Err(AttributionError::Empty);
        }
        let mut v = Array2::zeros((class_ids.len(), NUM_CLASSES));
        for (n, &c) in class_ids.iter().enumerate() {
            if c >= NUM_CLASSES {
                return Err(AttributionError::BadClassId(c));
            }
            v[(n, c)] = 1;
        }
        Ok(Self { v })
    }

    pub fn n_sessions(&self) -> usize {
        self.v.nrows()
    }

    /// One class column as a 0/1 vector.
    pub fn column(&self, class: usize) -> Vec<u8> {
        self.v.column(class).to_vec()
    }
}

/// N x 6 matrix of attribution-derived target probabilities in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix<F: Scalar> {
    pub t: Array2<F>,
}

impl<F: Scalar> LabelMatrix<F> {
    pub fn n_sessions(&self) -> usize {
        self.t.nrows()
    }

    pub fn row(&self, n: usize) -> Vec<F> {
        self.t.row(n).to_vec()
    }
}

/// Linear attribution: t(n,c) = (sum of v(1..=n, c)) / n.
pub fn linear_attribution<F: Scalar>(v: &IndicatorMatrix) -> LabelMatrix<F> {
    let n = v.n_sessions();
    let mut t = Array2::zeros((n, NUM_CLASSES));
    let mut running = [0u64; NUM_CLASSES];
    for i in 0..n {
        for c in 0..NUM_CLASSES {
            running[c] += u64::from(v.v[(i, c)]);
            t[(i, c)] = F::from_f64_lossy(running[c] as f64 / (i + 1) as f64);
        }
    }
    LabelMatrix { t }
}

/// Time-decaying attribution with configurable half-life base (default 2).
///
/// For each prefix length n the weights are anchored at the current session:
/// w(i) = base^-(n-i), so the most recent session has weight 1 and credit
/// shrinks by the base per step back. t(n,c) = w . v / sum(w).
pub fn time_decay_attribution<F: Scalar>(v: &IndicatorMatrix) -> LabelMatrix<F> {
    time_decay_attribution_with_base(v, 2.0)
}

pub fn time_decay_attribution_with_base<F: Scalar>(
    v: &IndicatorMatrix,
    base: f64,
) -> LabelMatrix<F> {
    let n = v.n_sessions();
    let mut t = Array2::zeros((n, NUM_CLASSES));
    for i in 0..n {
        let mut denom = 0.0f64;
        let mut num = [0.0f64; NUM_CLASSES];
        for j in 0..=i {
            let w = base.powi(-((i - j) as i32));
            denom += w;
            for c in 0..NUM_CLASSES {
                num[c] += w * f64::from(v.v[(j, c)]);
            }
        }
        for c in 0..NUM_CLASSES {
            t[(i, c)] = F::from_f64_lossy(num[c] / denom);
        }
    }
    LabelMatrix { t }
}

/// One-hot expansion followed by the chosen attribution rule.
pub fn build_labels<F: Scalar>(
    class_ids: &[usize],
    model: AttributionModel,
) -> Result<LabelMatrix<F>, AttributionError> {
    let v = IndicatorMatrix::from_class_ids(class_ids)?;
    Ok(match model {
        AttributionModel::Linear => linear_attribution(&v),
        AttributionModel::TimeDecay => time_decay_attribution(&v),
    })
}
