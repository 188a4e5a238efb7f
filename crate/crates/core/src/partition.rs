//! Splitting a labeled dataset across clients.
//!
//! Every client gets a volume budget `round(phi_i * N)` and a random starting
//! class; it then walks the classes in order, taking up to
//! `ceil(budget / classes_per_client)` samples from each class pool until its
//! budget is filled. Pools are shuffled once, so each take is a random subset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::shuffle;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub num_clients: usize,
    pub classes_per_client: usize,
    pub num_classes: usize,
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    /// Equal volume for every client.
    pub fn uniform(num_clients: usize, classes_per_client: usize, num_classes: usize, seed: u64) -> Self {
        SplitSpec {
            num_clients,
            classes_per_client,
            num_classes,
            fractions: vec![1.0 / num_clients.max(1) as f64; num_clients],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Partition("need at least one client".into()));
        }
        if self.fractions.len() != self.num_clients {
            return Err(Error::Partition(format!(
                "{} fractions for {} clients",
                self.fractions.len(),
                self.num_clients
            )));
        }
        if self.fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Partition("fractions must be non-negative".into()));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Partition(format!("fractions sum to {total}, not 1")));
        }
        if self.classes_per_client == 0 || self.classes_per_client > self.num_classes {
            return Err(Error::Partition(format!(
                "classes_per_client {} outside 1..={}",
                self.classes_per_client, self.num_classes
            )));
        }
        Ok(())
    }
}

/// `phi_i = alpha / n + (1 - alpha) * gamma^i / sum_j gamma^j` for `i = 0..n`.
pub fn volume_fractions(alpha: f64, gamma: f64, n: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..n).map(|i| gamma.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| alpha / n as f64 + (1.0 - alpha) * w / total)
        .collect()
}

/// Returns one ascending index list per client. Shards never share a sample.
pub fn split(labels: &[usize], spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); spec.num_classes];
    for (i, &y) in labels.iter().enumerate() {
        let pool = pools
            .get_mut(y)
            .ok_or_else(|| Error::Partition(format!("label {y} outside 0..{}", spec.num_classes)))?;
        pool.push(i);
    }
    for pool in &mut pools {
        shuffle(pool, &mut rng);
    }

    let n = labels.len() as f64;
    let mut shards = Vec::with_capacity(spec.num_clients);
    for (client, &phi) in spec.fractions.iter().enumerate() {
        let mut budget = (phi * n).round() as usize;
        let per_class = budget.div_ceil(spec.classes_per_client);
        let mut k = rng.random_range(0..spec.num_classes);
        let mut shard = Vec::with_capacity(budget);
        let mut dry_classes = 0;
        while budget > 0 {
            let pool = &mut pools[k];
            let t = budget.min(per_class).min(pool.len());
            if t == 0 {
                dry_classes += 1;
                if dry_classes == spec.num_classes {
                    return Err(Error::Partition(format!(
                        "dataset exhausted while filling client {client} ({budget} samples short)"
                    )));
                }
            } else {
                dry_classes = 0;
                shard.extend(pool.drain(pool.len() - t..));
                budget -= t;
            }
            k = (k + 1) % spec.num_classes;
        }
        shard.sort_unstable();
        shards.push(shard);
    }
    Ok(shards)
}

/// Per-class sample counts of one shard.
pub fn histogram(labels: &[usize], shard: &[usize], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &i in shard {
        h[labels[i]] += 1;
    }
    h
}
