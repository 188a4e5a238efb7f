//! How often the sign of a minibatch gradient agrees with the sign of the
//! full-data gradient, averaged over parameters and sampled batches.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stc_core::data::Dataset;
use stc_core::model::{grad, Batch, ModelSpec};
use stc_core::{Error, FlatTensor, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Uniform batches drawn from the whole dataset.
    Iid,
    /// Every batch drawn from a single, uniformly chosen class.
    SingleClass,
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(BatchMode::Iid),
            "single_class" | "single-class" => Ok(BatchMode::SingleClass),
            _ => Err(Error::Config {
                key: "mode".into(),
                reason: format!("{s:?}: expected iid or single_class"),
            }),
        }
    }
}

/// Per-coordinate agreement score between a batch gradient and the full
/// gradient. Coordinates whose full gradient is exactly zero carry no sign and
/// are left out by the caller; a zero batch coordinate is a coin flip.
fn agreement(batch: f32, full: f32) -> f64 {
    if batch == 0.0 {
        0.5
    } else if (batch > 0.0) == (full > 0.0) {
        1.0
    } else {
        0.0
    }
}

/// Monte-Carlo estimate of the sign congruence at batch size `k`.
pub fn congruence_alpha(
    params: &FlatTensor,
    spec: &ModelSpec,
    dataset: &Dataset,
    k: usize,
    mode: BatchMode,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if k == 0 || trials == 0 {
        return Err(Error::Argument("batch size and trial count must be positive".into()));
    }
    let full = grad(params, spec, &Batch::whole(dataset))?;
    let signed: Vec<usize> = (0..full.len()).filter(|&w| full[w] != 0.0).collect();
    if signed.is_empty() {
        return Err(Error::Data("full-data gradient is identically zero".into()));
    }
    let classes = dataset.class_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let idx: Vec<usize> = match mode {
            BatchMode::Iid => {
                if k > dataset.len() {
                    return Err(Error::Data(format!("batch of {k} from {} samples", dataset.len())));
                }
                sample(&mut rng, dataset.len(), k).into_vec()
            }
            BatchMode::SingleClass => {
                let c = rng.random_range(0..classes.len());
                let pool = &classes[c];
                if pool.len() < k {
                    return Err(Error::Data(format!("class {c} has {} samples, batch needs {k}", pool.len())));
                }
                sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
            }
        };
        let g = grad(params, spec, &Batch::from_indices(dataset, &idx))?;
        let agree: f64 = signed.iter().map(|&w| agreement(g[w], full[w])).sum();
        total += agree / signed.len() as f64;
    }
    Ok(total / trials as f64)
}
