//! Differentiable classifiers and the momentum-SGD optimizer that produces
//! local weight updates.
//!
//! Two model kinds are supported, both trained with mean softmax
//! cross-entropy:
//!
//! * multinomial logistic regression, parameters laid out as
//!   `[W (classes x input), b (classes)]`;
//! * a one-hidden-layer ReLU perceptron, laid out as
//!   `[W1 (hidden x input), b1 (hidden), W2 (classes x hidden), b2 (classes)]`.
//!
//! Forward and backward passes accumulate in `f64` and round the result to
//! `f32`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::tensor::FlatTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    LogReg,
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn logreg(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LogReg,
            input_dim,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp { hidden },
            input_dim,
            num_classes,
        }
    }

    pub fn num_params(&self) -> usize {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LogReg => c * d + c,
            ModelKind::Mlp { hidden: h } => h * d + h + c * h + c,
        }
    }

    /// Zeros for logistic regression; Glorot-uniform weights and zero biases
    /// for the perceptron.
    pub fn init_params(&self, seed: u64) -> FlatTensor {
        match self.kind {
            ModelKind::LogReg => FlatTensor::zeros(self.num_params()),
            ModelKind::Mlp { hidden: h } => {
                let (d, c) = (self.input_dim, self.num_classes);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut glorot = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f32> {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
                };
                let mut p = glorot(d, h, h * d);
                p.extend(std::iter::repeat_n(0.0, h));
                p.extend(glorot(h, c, c * h));
                p.extend(std::iter::repeat_n(0.0, c));
                FlatTensor::from(p)
            }
        }
    }

    fn check(&self, params: &FlatTensor, batch: &Batch<'_>) -> Result<()> {
        check_len(self.num_params(), params.len())?;
        for row in &batch.inputs {
            check_len(self.input_dim, row.len())?;
        }
        if let Some(&l) = batch.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Data(format!(
                "label {l} outside 0..{}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// A borrowed mini-batch: input rows and their labels.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    inputs: Vec<&'a [f32]>,
    labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a [f32]>, labels: Vec<usize>) -> Result<Self> {
        check_len(inputs.len(), labels.len())?;
        Ok(Batch { inputs, labels })
    }

    pub fn from_indices(ds: &'a Dataset, indices: &[usize]) -> Self {
        Batch {
            inputs: indices.iter().map(|&i| ds.row(i)).collect(),
            labels: indices.iter().map(|&i| ds.label(i)).collect(),
        }
    }

    pub fn whole(ds: &'a Dataset) -> Self {
        Batch {
            inputs: (0..ds.len()).map(|i| ds.row(i)).collect(),
            labels: ds.labels().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn dot(w: &[f32], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

struct Forward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(params: &[f32], spec: &ModelSpec, x: &[f32]) -> Forward {
    let (d, c) = (spec.input_dim, spec.num_classes);
    match spec.kind {
        ModelKind::LogReg => {
            let (w, b) = params.split_at(c * d);
            let logits = (0..c)
                .map(|k| dot(&w[k * d..(k + 1) * d], x) + f64::from(b[k]))
                .collect();
            Forward {
                hidden: Vec::new(),
                logits,
            }
        }
        ModelKind::Mlp { hidden: h } => {
            let (w1, rest) = params.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let hidden: Vec<f64> = (0..h)
                .map(|j| (dot(&w1[j * d..(j + 1) * d], x) + f64::from(b1[j])).max(0.0))
                .collect();
            let logits = (0..c)
                .map(|k| {
                    let row = &w2[k * h..(k + 1) * h];
                    row.iter().zip(&hidden).map(|(&a, &b)| f64::from(a) * b).sum::<f64>()
                        + f64::from(b2[k])
                })
                .collect();
            Forward { hidden, logits }
        }
    }
}

/// Mean softmax cross-entropy over `batch`.
pub fn loss(params: &FlatTensor, spec: &ModelSpec, batch: &Batch<'_>) -> Result<f64> {
    spec.check(params, batch)?;
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let total: f64 = batch
        .inputs
        .iter()
        .zip(&batch.labels)
        .map(|(x, &y)| {
            let f = forward(params, spec, x);
            log_sum_exp(&f.logits) - f.logits[y]
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of [`loss`] with respect to `params`.
pub fn grad(params: &FlatTensor, spec: &ModelSpec, batch: &Batch<'_>) -> Result<FlatTensor> {
    spec.check(params, batch)?;
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let (d, c) = (spec.input_dim, spec.num_classes);
    let mut acc = vec![0.0f64; params.len()];
    for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
        let mut f = forward(params, spec, x);
        softmax_in_place(&mut f.logits);
        let mut delta = f.logits;
        delta[y] -= 1.0;
        match spec.kind {
            ModelKind::LogReg => {
                let (gw, gb) = acc.split_at_mut(c * d);
                for (k, &dk) in delta.iter().enumerate() {
                    if dk == 0.0 {
                        continue;
                    }
                    for (g, &xj) in gw[k * d..(k + 1) * d].iter_mut().zip(x.iter()) {
                        *g += dk * f64::from(xj);
                    }
                    gb[k] += dk;
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let w2 = &params[h * d + h..h * d + h + c * h];
                let (gw1, rest) = acc.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                let mut dh = vec![0.0f64; h];
                for (k, &dk) in delta.iter().enumerate() {
                    for j in 0..h {
                        gw2[k * h + j] += dk * f.hidden[j];
                        dh[j] += dk * f64::from(w2[k * h + j]);
                    }
                    gb2[k] += dk;
                }
                for j in 0..h {
                    if f.hidden[j] <= 0.0 {
                        continue;
                    }
                    let dj = dh[j];
                    for (g, &xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x.iter()) {
                        *g += dj * f64::from(xi);
                    }
                    gb1[j] += dj;
                }
            }
        }
    }
    let n = batch.len() as f64;
    Ok(FlatTensor::from(
        acc.into_iter().map(|g| (g / n) as f32).collect::<Vec<_>>(),
    ))
}

/// Top-1 accuracy; ties between logits resolve to the lowest class index.
pub fn evaluate(params: &FlatTensor, spec: &ModelSpec, test_set: &Dataset) -> Result<f64> {
    check_len(spec.num_params(), params.len())?;
    check_len(spec.input_dim, test_set.dim())?;
    if test_set.is_empty() {
        return Ok(0.0);
    }
    let correct = (0..test_set.len())
        .filter(|&i| {
            let f = forward(params, spec, test_set.row(i));
            let mut best = 0;
            for (k, &z) in f.logits.iter().enumerate() {
                if z > f.logits[best] {
                    best = k;
                }
            }
            best == test_set.label(i)
        })
        .count();
    Ok(correct as f64 / test_set.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be a positive real"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Parameters plus the heavy-ball velocity buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub params: FlatTensor,
    pub velocity: FlatTensor,
}

impl SgdState {
    pub fn new(params: FlatTensor) -> Self {
        let velocity = FlatTensor::zeros(params.len());
        SgdState { params, velocity }
    }
}

/// One heavy-ball step: `v <- m*v + g; params <- params - lr*v`.
pub fn sgd_update(state: &mut SgdState, spec: &ModelSpec, cfg: &OptimConfig, batch: &Batch<'_>) -> Result<()> {
    check_len(state.params.len(), state.velocity.len())?;
    let g = grad(&state.params, spec, batch)?;
    apply_momentum_step(state, cfg, &g);
    Ok(())
}

fn apply_momentum_step(state: &mut SgdState, cfg: &OptimConfig, g: &FlatTensor) {
    for ((p, v), &gi) in state
        .params
        .iter_mut()
        .zip(state.velocity.iter_mut())
        .zip(g.iter())
    {
        *v = cfg.momentum * *v + gi;
        *p -= cfg.lr * *v;
    }
}

/// Epoch-shuffling sampler over a shard. Each epoch visits every shard entry
/// once in a fresh random order; the final short batch of an epoch is kept.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    /// `stream` separates independent samplers drawn from the same seed
    /// (one per client).
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        BatchSampler {
            rng,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn next_batch(&mut self, shard: &[usize], batch_size: usize) -> Result<Vec<usize>> {
        if shard.is_empty() {
            return Err(Error::Data("cannot sample from an empty shard".into()));
        }
        if self.order.len() != shard.len() || self.cursor >= self.order.len() {
            self.order = (0..shard.len()).collect();
            shuffle(&mut self.order, &mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].iter().map(|&i| shard[i]).collect();
        self.cursor = end;
        Ok(batch)
    }
}

/// Fisher-Yates, written out so the permutation depends only on the RNG stream.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Everything a worker carries between communication rounds.
#[derive(Clone, Debug)]
pub struct LocalState {
    pub sgd: SgdState,
    pub sampler: BatchSampler,
}

impl LocalState {
    pub fn new(params: FlatTensor, seed: u64, stream: u64) -> Self {
        LocalState {
            sgd: SgdState::new(params),
            sampler: BatchSampler::new(seed, stream),
        }
    }
}

/// Runs `iters` SGD steps on batches from `shard` and returns
/// `params_after - params_before`.
pub fn local_round(
    state: &mut LocalState,
    spec: &ModelSpec,
    cfg: &OptimConfig,
    dataset: &Dataset,
    shard: &[usize],
    iters: usize,
) -> Result<FlatTensor> {
    if iters == 0 {
        return Err(Error::argument("local_round needs at least one iteration"));
    }
    let before = state.sgd.params.clone();
    for _ in 0..iters {
        let idx = state.sampler.next_batch(shard, cfg.batch_size)?;
        let batch = Batch::from_indices(dataset, &idx);
        sgd_update(&mut state.sgd, spec, cfg, &batch)?;
    }
    state.sgd.params.sub(&before)
}
