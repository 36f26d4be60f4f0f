use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-major feature matrix with integer labels. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    feature_dim: usize,
    labels: Vec<u8>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(features: Vec<f32>, feature_dim: usize, labels: Vec<u8>, classes: usize, split: Split) -> Result<Self> {
        if labels.is_empty() {
            return Err(AreaError::config("dataset has no rows"));
        }
        if feature_dim == 0 || features.len() != labels.len() * feature_dim {
            return Err(AreaError::config(format!(
                "feature buffer of {} entries does not hold {} rows of {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(AreaError::config(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            features,
            feature_dim,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self, row: usize) -> &[f32] {
        &self.features[row * self.feature_dim..(row + 1) * self.feature_dim]
    }

    pub fn label(&self, row: usize) -> usize {
        self.labels[row] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Widens the label space, e.g. to 10 classes for a subset missing a digit.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(AreaError::config("cannot shrink the label space"));
        }
        self.classes = classes;
        Ok(self)
    }

    /// The first `rows` rows.
    pub fn head(&self, rows: usize) -> Result<Self> {
        let rows = rows.min(self.len());
        Dataset::new(
            self.features[..rows * self.feature_dim].to_vec(),
            self.feature_dim,
            self.labels[..rows].to_vec(),
            self.classes,
            self.split,
        )
    }

    /// The given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let fd = self.feature_dim;
        let mut features = Vec::with_capacity(rows.len() * fd);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(AreaError::config(format!("row {r} outside dataset of {} rows", self.len())));
            }
            features.extend_from_slice(self.features(r));
            labels.push(self.labels[r]);
        }
        Dataset::new(features, fd, labels, self.classes, self.split)
    }

    /// Largest squared feature norm; bounds the loss curvature.
    pub fn max_feature_norm_sq(&self) -> f64 {
        (0..self.len())
            .map(|j| self.features(j).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_rows() {
        let d = Dataset::new(vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1], 2, vec![0, 1, 2], 3, Split::Test).unwrap();
        let s = d.select(&[2, 0]).unwrap();
        assert_eq!(s.features(0), &[2.0, 2.1]);
        assert_eq!(s.label(1), 0);
        assert_eq!(s.classes(), 3);
        assert!(d.select(&[3]).is_err());
    }

    #[test]
    fn rejects_inconsistent_buffers() {
        assert!(Dataset::new(vec![0.0; 5], 2, vec![0, 1], 2, Split::Train).is_err());
        assert!(Dataset::new(vec![], 2, vec![], 2, Split::Train).is_err());
        assert!(Dataset::new(vec![0.0; 4], 2, vec![0, 2], 2, Split::Train).is_err());
    }

    #[test]
    fn rows_and_head() {
        let d = Dataset::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, vec![0, 1, 1], 2, Split::Test).unwrap();
        assert_eq!(d.features(1), &[3.0, 4.0]);
        assert_eq!(d.label(2), 1);
        let h = d.head(2).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.features(1), &[3.0, 4.0]);
        assert_eq!(d.max_feature_norm_sq(), 61.0);
        assert_eq!(d.with_classes(10).unwrap().classes(), 10);
    }
}
