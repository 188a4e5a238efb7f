use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::OptimConfig;

/// How updates are compressed on the way up and down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Sparse ternary compression both ways, with residuals.
    Stc,
    /// Top-k sparsification both ways with 32-bit values, with residuals.
    TopK,
    /// Signs of momentum up, majority vote down.
    SignSgd,
    /// Local SGD for `delay_n` iterations, dense model averaging.
    FedAvg,
    /// Dense exchange after every iteration.
    Baseline,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Stc, Method::TopK, Method::SignSgd, Method::FedAvg, Method::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Stc => "stc",
            Method::TopK => "topk",
            Method::SignSgd => "signsgd",
            Method::FedAvg => "fedavg",
            Method::Baseline => "baseline",
        }
    }

    pub(crate) fn is_sparse(self) -> bool {
        matches!(self, Method::Stc | Method::TopK)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method {s:?} (expected stc, topk, signsgd, fedavg or baseline)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    pub num_clients: usize,
    /// Fraction of clients taking part in each round.
    pub participation: f64,
    pub classes_per_client: usize,
    pub batch_size: usize,
    /// Volume balancedness; 1 gives every client the same amount of data.
    pub gamma: f64,
    /// Share of the data spread evenly regardless of `gamma`.
    pub alpha: f64,
    pub method: Method,
    pub p_up: f64,
    pub p_down: f64,
    /// Local iterations per communication round.
    pub delay_n: usize,
    pub lr: f32,
    pub momentum: f32,
    /// Server step size for signSGD.
    pub signsgd_delta: f32,
    pub total_iterations: usize,
    /// Test-set evaluation interval, in iterations.
    pub eval_every: usize,
    /// Rounds for which partial sums of global updates are kept.
    pub cache_horizon: usize,
    pub seed: u64,
}

impl FedConfig {
    /// 100 clients, 10% participation, all classes on every client, batch 20,
    /// balanced volumes, sparsity 1/400. Momentum is off except for signSGD,
    /// which signs a 0.9-momentum buffer.
    pub fn base(method: Method) -> Self {
        FedConfig {
            num_clients: 100,
            participation: 0.1,
            classes_per_client: 10,
            batch_size: 20,
            gamma: 1.0,
            alpha: 0.1,
            method,
            p_up: 0.0025,
            p_down: 0.0025,
            delay_n: 1,
            lr: 0.04,
            momentum: if method == Method::SignSgd { 0.9 } else { 0.0 },
            signsgd_delta: 0.0002,
            total_iterations: 5000,
            eval_every: 100,
            cache_horizon: 50,
            seed: 0,
        }
    }

    pub fn participants_per_round(&self) -> usize {
        ((self.participation * self.num_clients as f64).ceil() as usize).clamp(1, self.num_clients)
    }

    pub fn rounds(&self) -> usize {
        self.total_iterations / self.delay_n
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients", "must be positive"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config("participation", "must lie in (0, 1]"));
        }
        if self.classes_per_client == 0 {
            return Err(Error::config("classes_per_client", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1]"));
        }
        if self.method.is_sparse() {
            for (key, p) in [("p_up", self.p_up), ("p_down", self.p_down)] {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::config(key, "must lie in (0, 1)"));
                }
            }
        }
        if self.delay_n == 0 {
            return Err(Error::config("delay_n", "must be positive"));
        }
        if matches!(self.method, Method::SignSgd | Method::Baseline) && self.delay_n != 1 {
            return Err(Error::config("delay_n", format!("{} communicates every iteration; use 1", self.method)));
        }
        if self.method == Method::SignSgd && !(self.signsgd_delta.is_finite() && self.signsgd_delta > 0.0) {
            return Err(Error::config("signsgd_delta", "must be positive"));
        }
        if self.total_iterations == 0 {
            return Err(Error::config("total_iterations", "must be positive"));
        }
        if !self.total_iterations.is_multiple_of(self.delay_n) {
            return Err(Error::config(
                "total_iterations",
                format!("{} is not a multiple of delay_n = {}", self.total_iterations, self.delay_n),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be positive"));
        }
        self.optim().validate()
    }
}
