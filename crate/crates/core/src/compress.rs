//! Update compressors and the error-feedback residual.
//!
//! * [`top_k_sparsify`] keeps the largest-magnitude fraction of an update at
//!   full precision.
//! * [`stc_compress`] additionally replaces every survivor by the mean
//!   survivor magnitude, giving a tensor over `{-mu, 0, +mu}`.
//! * [`sign_compress`] / [`majority_vote`] implement signSGD.
//!
//! Selection ties at the magnitude threshold are resolved towards lower
//! indices so that exactly `k` entries survive.

use crate::error::{check_len, Error, Result};
use crate::tensor::{top_k_indices, FlatTensor};

/// Anything that can be expanded back into a dense update.
pub trait Densify {
    fn densify(&self) -> FlatTensor;
}

impl Densify for FlatTensor {
    fn densify(&self) -> FlatTensor {
        self.clone()
    }
}

/// Number of survivors for sparsity `p`: `max(floor(p * len), 1)`.
pub fn survivors(len: usize, p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::argument(format!("sparsity {p} outside (0, 1]")));
    }
    if len == 0 {
        return Err(Error::argument("cannot compress an empty tensor"));
    }
    // the epsilon absorbs products such as 0.29 * 100 = 28.999999999999996
    let k = (p * len as f64 + 1e-9).floor() as usize;
    Ok(k.clamp(1, len))
}

/// Sparse ternary tensor: `mu * sign` at `positions`, zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTernaryUpdate {
    len: usize,
    positions: Vec<usize>,
    negative: Vec<bool>,
    mu: f32,
}

impl SparseTernaryUpdate {
    /// `negative[i]` is the sign of `positions[i]`.
    pub fn new(len: usize, positions: Vec<usize>, negative: Vec<bool>, mu: f32) -> Result<Self> {
        check_len(positions.len(), negative.len())?;
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::argument(format!("mu = {mu} must be finite and >= 0")));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::argument("positions must be strictly increasing"));
        }
        if positions.last().is_some_and(|&p| p >= len) {
            return Err(Error::argument("position beyond tensor length"));
        }
        Ok(SparseTernaryUpdate {
            len,
            positions,
            negative,
            mu,
        })
    }

    pub fn empty(len: usize) -> Self {
        SparseTernaryUpdate {
            len,
            positions: Vec::new(),
            negative: Vec::new(),
            mu: 0.0,
        }
    }

    /// Dense length.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn negative(&self) -> &[bool] {
        &self.negative
    }

    pub fn signs(&self) -> impl Iterator<Item = i8> + '_ {
        self.negative.iter().map(|&n| if n { -1 } else { 1 })
    }

    pub fn mu(&self) -> f32 {
        self.mu
    }

    /// Number of transmitted positions.
    pub fn count(&self) -> usize {
        self.positions.len()
    }
}

impl Densify for SparseTernaryUpdate {
    fn densify(&self) -> FlatTensor {
        let mut out = FlatTensor::zeros(self.len);
        if self.mu == 0.0 {
            return out;
        }
        for (&p, &neg) in self.positions.iter().zip(&self.negative) {
            out[p] = if neg { -self.mu } else { self.mu };
        }
        out
    }
}

/// Sparse tensor with arbitrary values at strictly increasing positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseUpdate {
    len: usize,
    positions: Vec<usize>,
    values: Vec<f32>,
}

impl SparseUpdate {
    pub fn new(len: usize, positions: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        check_len(positions.len(), values.len())?;
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::argument("positions must be strictly increasing"));
        }
        if positions.last().is_some_and(|&p| p >= len) {
            return Err(Error::argument("position beyond tensor length"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("non-finite sparse value"));
        }
        Ok(SparseUpdate {
            len,
            positions,
            values,
        })
    }

    /// Nonzero entries of `t`.
    pub fn from_dense(t: &FlatTensor) -> Self {
        let (positions, values) = t
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        SparseUpdate {
            len: t.len(),
            positions,
            values,
        }
    }

    /// Dense length.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }
}

impl Densify for SparseUpdate {
    fn densify(&self) -> FlatTensor {
        let mut out = FlatTensor::zeros(self.len);
        for (&p, &v) in self.positions.iter().zip(&self.values) {
            out[p] = v;
        }
        out
    }
}

/// Keeps the `max(floor(p * len), 1)` largest-magnitude entries.
pub fn top_k_sparsify(t: &FlatTensor, p: f64) -> Result<FlatTensor> {
    let k = survivors(t.len(), p)?;
    let mut out = FlatTensor::zeros(t.len());
    for i in top_k_indices(t, k)? {
        out[i] = t[i];
    }
    Ok(out)
}

/// [`top_k_sparsify`] in sparse form, dropping survivors that are exactly zero.
pub fn top_k_sparse(t: &FlatTensor, p: f64) -> Result<SparseUpdate> {
    let k = survivors(t.len(), p)?;
    let (positions, values) = top_k_indices(t, k)?
        .into_iter()
        .filter(|&i| t[i] != 0.0)
        .map(|i| (i, t[i]))
        .unzip();
    Ok(SparseUpdate {
        len: t.len(),
        positions,
        values,
    })
}

/// Sparse ternary compression.
///
/// Selects `k = max(floor(p * len), 1)` entries by magnitude, sets
/// `mu = (1/k) * sum |selected|`, and keeps the sign of each selected entry.
/// Selected entries that are exactly zero carry no sign and are dropped; an
/// all-zero input yields the empty update.
pub fn stc_compress(t: &FlatTensor, p: f64) -> Result<SparseTernaryUpdate> {
    let k = survivors(t.len(), p)?;
    let selected = top_k_indices(t, k)?;
    let total: f64 = selected.iter().map(|&i| f64::from(t[i].abs())).sum();
    if total == 0.0 {
        return Ok(SparseTernaryUpdate::empty(t.len()));
    }
    let mu = (total / k as f64) as f32;
    let (positions, negative) = selected
        .into_iter()
        .filter(|&i| t[i] != 0.0)
        .map(|i| (i, t[i] < 0.0))
        .unzip();
    Ok(SparseTernaryUpdate {
        len: t.len(),
        positions,
        negative,
        mu,
    })
}

/// Elementwise sign with `sign(0) = +1`.
pub fn sign_compress(t: &[f32]) -> Vec<i8> {
    t.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect()
}

/// Coordinatewise sign of the vote sum; a tied coordinate votes `+1`.
pub fn majority_vote(votes: &[Vec<i8>]) -> Result<Vec<i8>> {
    let first = votes
        .first()
        .ok_or_else(|| Error::argument("majority vote needs at least one voter"))?;
    let mut sum = vec![0i64; first.len()];
    for v in votes {
        check_len(first.len(), v.len())?;
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += i64::from(x);
        }
    }
    Ok(sum.into_iter().map(|s| if s < 0 { -1 } else { 1 }).collect())
}

/// Error-feedback accumulator owned by one client or by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    acc: FlatTensor,
}

impl Residual {
    pub fn zeros(len: usize) -> Self {
        Residual {
            acc: FlatTensor::zeros(len),
        }
    }

    pub fn acc(&self) -> &FlatTensor {
        &self.acc
    }

    /// Compresses `acc + delta` and keeps whatever the compressor dropped.
    pub fn apply<C, F>(&mut self, delta: &FlatTensor, compressor: F) -> Result<C>
    where
        C: Densify,
        F: FnOnce(&FlatTensor) -> Result<C>,
    {
        let corrected = self.acc.add(delta)?;
        let compressed = compressor(&corrected)?;
        let sent = compressed.densify();
        check_len(corrected.len(), sent.len())?;
        self.acc = corrected.sub(&sent)?;
        Ok(compressed)
    }
}
