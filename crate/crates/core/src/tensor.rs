//! Flat parameter vectors and magnitude selection.
//!
//! Every model parameter set, weight update and residual in the simulator is a
//! [`FlatTensor`]: the whole model flattened into one `f32` vector. Compressors
//! operate on this view only.

use std::cmp::Ordering;
use std::ops::{Deref, DerefMut};

use crate::error::{check_len, Error, Result};

/// A flattened real-valued vector of fixed length.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FlatTensor(Vec<f32>);

impl FlatTensor {
    pub fn zeros(len: usize) -> Self {
        FlatTensor(vec![0.0; len])
    }

    /// Wraps `values`; rejects non-finite entries.
    pub fn from_vec(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::argument(format!("non-finite value at index {i}")));
        }
        Ok(FlatTensor(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn add(&self, other: &FlatTensor) -> Result<FlatTensor> {
        check_len(self.len(), other.len())?;
        Ok(FlatTensor(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &FlatTensor) -> Result<FlatTensor> {
        check_len(self.len(), other.len())?;
        Ok(FlatTensor(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, c: f32) -> FlatTensor {
        FlatTensor(self.0.iter().map(|a| c * a).collect())
    }

    pub fn add_assign(&mut self, other: &FlatTensor) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f32, other: &FlatTensor) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }

    /// Mean of `tensors`, accumulated in `f64` and in slice order.
    pub fn mean_of(tensors: &[&FlatTensor]) -> Result<FlatTensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::argument("mean of an empty set of tensors"))?;
        let mut acc = vec![0.0f64; first.len()];
        for t in tensors {
            check_len(first.len(), t.len())?;
            for (a, &v) in acc.iter_mut().zip(t.iter()) {
                *a += f64::from(v);
            }
        }
        let n = tensors.len() as f64;
        Ok(FlatTensor(acc.into_iter().map(|a| (a / n) as f32).collect()))
    }
}

impl From<Vec<f32>> for FlatTensor {
    fn from(values: Vec<f32>) -> Self {
        FlatTensor(values)
    }
}

impl Deref for FlatTensor {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl DerefMut for FlatTensor {
    fn deref_mut(&mut self) -> &mut [f32] {
        &mut self.0
    }
}

fn by_magnitude_desc(a: &f32, b: &f32) -> Ordering {
    b.abs().total_cmp(&a.abs())
}

/// Returns the `k`-th largest magnitude in `values` (1-based).
pub fn top_k_threshold(values: &[f32], k: usize) -> Result<f32> {
    if k == 0 || k > values.len() {
        return Err(Error::argument(format!(
            "k = {k} outside 1..={}",
            values.len()
        )));
    }
    let mut scratch = values.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, by_magnitude_desc);
    Ok(kth.abs())
}

/// Indices of the `k` largest-magnitude entries, ascending.
///
/// Entries strictly above the threshold are always kept; among entries equal
/// to the threshold the lowest indices are kept until exactly `k` survive.
pub fn top_k_indices(values: &[f32], k: usize) -> Result<Vec<usize>> {
    let threshold = top_k_threshold(values, k)?;
    let above = values.iter().filter(|v| v.abs() > threshold).count();
    let mut ties_left = k - above;
    let mut out = Vec::with_capacity(k);
    for (i, v) in values.iter().enumerate() {
        let m = v.abs();
        if m > threshold {
            out.push(i);
        } else if m == threshold && ties_left > 0 {
            out.push(i);
            ties_left -= 1;
        }
    }
    debug_assert_eq!(out.len(), k);
    Ok(out)
}
