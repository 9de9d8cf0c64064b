//! Datasets, preprocessing, counterfactual pairing and synthetic data.

mod noise;
mod pairs;
mod split;
mod synthetic;
mod tabular;

pub use noise::corrupt_sensitive;
pub use pairs::{build_counterfactual_pairs, PairSource, PairedDataset, PairingStrategy};
pub use split::{split, Splits};
pub use synthetic::{make_synthetic_spurious, SyntheticSpec};
pub use tabular::{load_tabular, write_tabular, ColumnKind, ColumnSpec, Schema, Standardizer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// A 0/1 column: a binary source column or one level of a one-hot group.
    Binary,
}

/// One expanded column of `X`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub source: String,
    pub kind: FeatureKind,
}

/// Features `x` `[n×x_dim]`, binary sensitive attribute `s` `[n×1]` and
/// binary target `y` `[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub s: Tensor,
    pub y: Tensor,
    pub features: Vec<Feature>,
}

impl Dataset {
    pub fn new(x: Tensor, s: Tensor, y: Tensor, features: Vec<Feature>) -> Result<Self> {
        x.expect_rank(2, "dataset x")?;
        s.expect_rank(2, "dataset s")?;
        y.expect_rank(1, "dataset y")?;
        let n = x.rows();
        if s.rows() != n || y.numel() != n {
            return Err(Error::dim("dataset rows", n, format!("s {} / y {}", s.rows(), y.numel())));
        }
        if features.len() != x.cols() {
            return Err(Error::dim("dataset feature descriptors", x.cols(), features.len()));
        }
        if s.cols() != 1 {
            return Err(Error::InvalidArgument("only a single binary sensitive column is supported".into()));
        }
        for (name, t) in [("s", &s), ("y", &y)] {
            if let Some(v) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must be binary, found {v}")));
            }
        }
        if !x.is_finite() {
            return Err(Error::InvalidArgument("x contains non-finite values".into()));
        }
        Ok(Self { x, s, y, features })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    /// Likelihood mask for the decoder: `true` where the column is 0/1.
    pub fn x_bernoulli(&self) -> Vec<bool> {
        self.features.iter().map(|f| f.kind == FeatureKind::Binary).collect()
    }

    pub fn y_column(&self) -> Tensor {
        Tensor::matrix(self.len(), 1, self.y.data().to_vec()).expect("sized")
    }

    pub fn s_values(&self) -> &[f64] {
        self.s.data()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            s: self.s.select_rows(idx),
            y: Tensor::vector(idx.iter().map(|&i| self.y.data()[i]).collect()),
            features: self.features.clone(),
        }
    }

    /// Fraction of rows with `s == 1`, and of rows with `y == 1`.
    pub fn positive_rates(&self) -> (f64, f64) {
        let n = self.len().max(1) as f64;
        (self.s.sum() / n, self.y.sum() / n)
    }
}

/// Aligned originals and counterfactual partners. Row `i` of `x_cf`/`s_cf`
/// is the partner of row `i` of `x`/`s`; both share label `y` (`[n×1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub x: Tensor,
    pub s: Tensor,
    pub y: Tensor,
    pub x_cf: Tensor,
    pub s_cf: Tensor,
}

impl PairBatch {
    pub fn new(x: Tensor, s: Tensor, y: Tensor, x_cf: Tensor, s_cf: Tensor) -> Result<Self> {
        let n = x.rows();
        for (name, t) in [("s", &s), ("y", &y), ("x_cf", &x_cf), ("s_cf", &s_cf)] {
            if t.rank() != 2 || t.rows() != n {
                return Err(Error::dim(format!("pair batch {name} rows"), n, format!("{:?}", t.shape())));
            }
        }
        if x_cf.cols() != x.cols() || s_cf.cols() != s.cols() {
            return Err(Error::dim("pair batch widths", format!("{}/{}", x.cols(), s.cols()), format!("{}/{}", x_cf.cols(), s_cf.cols())));
        }
        Ok(Self { x, s, y, x_cf, s_cf })
    }

    /// Every row paired with itself.
    pub fn self_paired(x: Tensor, s: Tensor, y: Tensor) -> Result<Self> {
        Self::new(x.clone(), s.clone(), y, x, s)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
pub(crate) fn toy_dataset(rows: &[(Vec<f64>, f64, f64)]) -> Dataset {
    let d = rows[0].0.len();
    let x = Tensor::from_rows(&rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>()).unwrap();
    let s = Tensor::matrix(rows.len(), 1, rows.iter().map(|r| r.1).collect()).unwrap();
    let y = Tensor::vector(rows.iter().map(|r| r.2).collect());
    let features = (0..d)
        .map(|j| Feature {
            name: format!("f{j}"),
            source: format!("f{j}"),
            kind: FeatureKind::Continuous,
        })
        .collect();
    Dataset::new(x, s, y, features).unwrap()
}
