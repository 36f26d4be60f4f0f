use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};

/// Dense model parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(AreaError::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ModelVector) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn add_assign(&mut self, x: &ModelVector) {
        self.axpy(1.0, x);
    }

    pub fn sub_assign(&mut self, x: &ModelVector) {
        self.axpy(-1.0, x);
    }

    pub fn scale(&mut self, a: f64) {
        self.0.iter_mut().for_each(|v| *v *= a);
    }

    pub fn set_zero(&mut self) {
        self.0.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn sub(&self, x: &ModelVector) -> ModelVector {
        debug_assert_eq!(self.dim(), x.dim());
        Self(self.0.iter().zip(&x.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, x: &ModelVector) -> ModelVector {
        debug_assert_eq!(self.dim(), x.dim());
        Self(self.0.iter().zip(&x.0).map(|(a, b)| a + b).collect())
    }

    pub fn scaled(&self, a: f64) -> ModelVector {
        Self(self.0.iter().map(|v| a * v).collect())
    }

    pub fn dot(&self, x: &ModelVector) -> f64 {
        self.0.iter().zip(&x.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, x: &ModelVector) -> f64 {
        self.0.iter().zip(&x.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn max_abs_diff(&self, x: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&x.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Arithmetic mean of a non-empty collection of equal-dimension vectors.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a ModelVector>) -> Option<ModelVector> {
        let mut iter = vectors.into_iter();
        let mut acc = iter.next()?.clone();
        let mut count = 1usize;
        for v in iter {
            acc.add_assign(v);
            count += 1;
        }
        acc.scale(1.0 / count as f64);
        Some(acc)
    }
}

impl Index<usize> for ModelVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ModelVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let mut a = ModelVector::from_vec(vec![1.0, 2.0]);
        let b = ModelVector::from_vec(vec![3.0, -1.0]);
        a.axpy(2.0, &b);
        assert_eq!(a.as_slice(), &[7.0, 0.0]);
        assert_eq!(a.dot(&b), 21.0);
        assert_eq!(b.norm_sq(), 10.0);
        assert_eq!(a.dist_sq(&b), 17.0);
        assert_eq!(a.max_abs_diff(&b), 4.0);
    }

    #[test]
    fn mean_of_vectors() {
        let vs = [
            ModelVector::from_vec(vec![0.0, 0.0]),
            ModelVector::from_vec(vec![2.0, 2.0]),
        ];
        assert_eq!(ModelVector::mean(&vs).unwrap().as_slice(), &[1.0, 1.0]);
        assert!(ModelVector::mean(std::iter::empty()).is_none());
    }

    #[test]
    fn dimension_check() {
        let v = ModelVector::zeros(3);
        assert!(v.check_dim(3).is_ok());
        assert!(matches!(
            v.check_dim(2),
            Err(AreaError::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn finiteness() {
        assert!(ModelVector::zeros(2).is_finite());
        assert!(!ModelVector::from_vec(vec![1.0, f64::NAN]).is_finite());
        assert!(!ModelVector::from_vec(vec![f64::INFINITY]).is_finite());
    }
}
