//! Parameter-server simulation: clients train locally on their shards,
//! upload compressed updates, and the server aggregates, compresses and
//! serves the result back. All traffic is serialized and metered.

mod config;
mod ledger;
mod server;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{FedConfig, Method};
pub use ledger::{CommLedger, RoundBits};
pub use server::{apply_payload, decode_upload, Aggregate, Payload, ServerState, Session, Upload};

use crate::codec::{encode_sparse, golomb_encode};
use crate::compress::{sign_compress, stc_compress, top_k_sparse, Residual};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{grad, local_round, shuffle, Batch, LocalState, ModelSpec, OptimConfig};
use crate::partition::{split, volume_fractions, SplitSpec};
use crate::tensor::FlatTensor;

/// Keeps participant draws apart from the per-client sampler streams.
const PARTICIPATION_STREAM: u64 = 1 << 48;

/// Clients taking part in `round`, ascending. Depends only on the seed and
/// the round number.
pub fn select_participants(round: usize, cfg: &FedConfig) -> Vec<usize> {
    let n = cfg.num_clients;
    let k = cfg.participants_per_round();
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PARTICIPATION_STREAM + round as u64);
    let mut ids: Vec<usize> = (0..n).collect();
    shuffle(&mut ids, &mut rng);
    let mut chosen = ids[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Everything one client keeps between rounds.
#[derive(Clone, Debug)]
pub struct ClientRecord {
    pub id: usize,
    /// Copy of the global model as of `last_synced`.
    pub model: FlatTensor,
    /// Parameters, momentum buffer and batch sampler.
    pub local: LocalState,
    pub residual: Residual,
    pub last_synced: usize,
    pub shard: Vec<usize>,
}

impl ClientRecord {
    pub fn new(id: usize, params: FlatTensor, shard: Vec<usize>, seed: u64) -> Self {
        let len = params.len();
        ClientRecord {
            id,
            model: params.clone(),
            local: LocalState::new(params, seed, id as u64),
            residual: Residual::zeros(len),
            last_synced: 0,
            shard,
        }
    }
}

/// Brings `client` up to the server's round. Returns the download size in bits.
pub fn client_sync(client: &mut ClientRecord, server: &mut ServerState) -> Result<usize> {
    let payload = server.payload(client.last_synced)?;
    apply_payload(server.session(), &mut client.model, &payload)?;
    client.last_synced = server.round();
    Ok(payload.bits())
}

/// Local training plus compression; returns the serialized upload.
fn client_upload(
    client: &mut ClientRecord,
    session: &Session,
    spec: &ModelSpec,
    optim: &OptimConfig,
    train: &Dataset,
    delay: usize,
) -> Result<Upload> {
    match session.method {
        Method::Stc | Method::TopK => {
            client.local.sgd.params.clone_from(&client.model);
            let delta = local_round(&mut client.local, spec, optim, train, &client.shard, delay)?;
            let p = session.p_up;
            if session.method == Method::Stc {
                let u = client.residual.apply(&delta, |t| stc_compress(t, p))?;
                Ok(Upload::Bits(golomb_encode(&u, p)?.to_wire()))
            } else {
                let u = client.residual.apply(&delta, |t| top_k_sparse(t, p))?;
                Ok(Upload::Bits(encode_sparse(&u).to_wire()))
            }
        }
        Method::SignSgd => {
            let idx = client.local.sampler.next_batch(&client.shard, optim.batch_size)?;
            let g = grad(&client.model, spec, &Batch::from_indices(train, &idx))?;
            let m = optim.momentum;
            for (v, &gi) in client.local.sgd.velocity.iter_mut().zip(g.iter()) {
                *v = m * *v + gi;
            }
            // vote on the descent direction
            let direction = client.local.sgd.velocity.scale(-1.0);
            Ok(Upload::Bits(server::encode_signs(&sign_compress(&direction))))
        }
        Method::FedAvg | Method::Baseline => {
            client.local.sgd.params.clone_from(&client.model);
            local_round(&mut client.local, spec, optim, train, &client.shard, delay)?;
            Ok(Upload::Dense(client.local.sgd.params.clone()))
        }
    }
}

/// Test-set evaluation taken during a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub round: usize,
    pub iterations: usize,
    pub test_accuracy: f64,
    pub bits_up: u64,
    pub bits_down: u64,
}

/// Outcome of one communication round.
#[derive(Clone, Debug)]
pub struct RoundReport {
    pub round: usize,
    pub participants: Vec<usize>,
    pub aggregate: Aggregate,
    pub bits: RoundBits,
}

/// A complete simulated federation over one training set.
pub struct Federation<'a> {
    cfg: FedConfig,
    spec: ModelSpec,
    train: &'a Dataset,
    server: ServerState,
    clients: Vec<ClientRecord>,
    ledger: CommLedger,
}

impl<'a> Federation<'a> {
    /// Splits `train` across clients and initializes every party with the
    /// same starting model.
    pub fn new(cfg: FedConfig, spec: ModelSpec, train: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if train.dim() != spec.input_dim || train.num_classes() > spec.num_classes {
            return Err(Error::Data(format!(
                "dataset ({} features, {} classes) does not fit the model ({} inputs, {} outputs)",
                train.dim(),
                train.num_classes(),
                spec.input_dim,
                spec.num_classes
            )));
        }
        let split_spec = SplitSpec {
            num_clients: cfg.num_clients,
            classes_per_client: cfg.classes_per_client,
            num_classes: train.num_classes(),
            fractions: volume_fractions(cfg.alpha, cfg.gamma, cfg.num_clients),
            seed: cfg.seed,
        };
        let shards = split(train.labels(), &split_spec)?;
        Self::with_shards(cfg, spec, train, shards)
    }

    /// Like [`Federation::new`] with a caller-provided split.
    pub fn with_shards(cfg: FedConfig, spec: ModelSpec, train: &'a Dataset, shards: Vec<Vec<usize>>) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.num_clients {
            return Err(Error::config("num_clients", format!("{} shards for {} clients", shards.len(), cfg.num_clients)));
        }
        if let Some(i) = shards.iter().flatten().find(|&&i| i >= train.len()) {
            return Err(Error::Data(format!("shard index {i} beyond dataset of {}", train.len())));
        }
        let w0 = spec.init_params(cfg.seed);
        let session = Session::new(&cfg, w0.len())?;
        let server = ServerState::new(session, w0.clone(), cfg.cache_horizon);
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| ClientRecord::new(id, w0.clone(), shard, cfg.seed))
            .collect();
        let ledger = CommLedger::new(cfg.num_clients);
        Ok(Federation {
            cfg,
            spec,
            train,
            server,
            clients,
            ledger,
        })
    }

    pub fn config(&self) -> &FedConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientRecord] {
        &self.clients
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    /// One communication round: sync, local work, upload, aggregate.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.server.round();
        let participants = select_participants(round, &self.cfg);
        let mut active = vec![false; self.clients.len()];
        for &i in &participants {
            active[i] = true;
            let bits = client_sync(&mut self.clients[i], &mut self.server)?;
            self.ledger.record_down(i, bits);
        }

        let session = *self.server.session();
        let (spec, optim, train, delay) = (&self.spec, self.cfg.optim(), self.train, self.cfg.delay_n);
        let uploads: Vec<(usize, Result<Upload>)> = self
            .clients
            .par_iter_mut()
            .filter(|c| active[c.id])
            .map(|c| (c.id, client_upload(c, &session, spec, &optim, train, delay)))
            .collect();

        let mut decoded = Vec::with_capacity(uploads.len());
        for (id, upload) in uploads {
            let upload = upload?;
            self.ledger.record_up(id, upload.bits());
            decoded.push(decode_upload(&session, &upload)?);
        }
        let aggregate = self.server.aggregate(&decoded)?;
        self.ledger.close_round(round);
        let bits = *self.ledger.rounds().last().expect("round just closed");
        Ok(RoundReport {
            round,
            participants,
            aggregate,
            bits,
        })
    }

    /// Runs the whole iteration budget, evaluating the server model every
    /// `eval_every` iterations and after the last round.
    pub fn run(&mut self, test: &Dataset, mut on_eval: impl FnMut(&EvalRecord)) -> Result<Vec<EvalRecord>> {
        let rounds = self.cfg.rounds();
        let mut records = Vec::new();
        for r in 0..rounds {
            self.run_round()?;
            let before = r * self.cfg.delay_n;
            let after = before + self.cfg.delay_n;
            if after / self.cfg.eval_every > before / self.cfg.eval_every || r + 1 == rounds {
                let rec = EvalRecord {
                    round: r + 1,
                    iterations: after,
                    test_accuracy: crate::model::evaluate(self.server.params(), &self.spec, test)?,
                    bits_up: self.ledger.total_up(),
                    bits_down: self.ledger.total_down(),
                };
                on_eval(&rec);
                records.push(rec);
            }
        }
        Ok(records)
    }
}

/// Splits the data, runs the configured experiment and returns its
/// evaluation series.
pub fn run_experiment(cfg: &FedConfig, spec: ModelSpec, train: &Dataset, test: &Dataset) -> Result<Vec<EvalRecord>> {
    Federation::new(cfg.clone(), spec, train)?.run(test, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn blobs() -> (Dataset, Dataset) {
        let all = synth_blobs(4, 85, 8, 0.6, 1).unwrap();
        let (a, b): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|&i| i < 240);
        (all.subset(&a).unwrap(), all.subset(&b).unwrap())
    }

    fn small(method: Method) -> FedConfig {
        FedConfig {
            num_clients: 6,
            participation: 0.5,
            classes_per_client: 4,
            p_up: 0.1,
            p_down: 0.1,
            total_iterations: 60,
            eval_every: 20,
            lr: 0.1,
            ..FedConfig::base(method)
        }
    }

    #[test]
    fn participant_selection() {
        let mut cfg = FedConfig::base(Method::Stc);
        let a = select_participants(7, &cfg);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, select_participants(7, &cfg));
        assert_ne!(a, select_participants(8, &cfg));
        cfg.participation = 1.0;
        assert_eq!(select_participants(3, &cfg), (0..100).collect::<Vec<_>>());
        cfg.participation = 0.001;
        assert_eq!(select_participants(3, &cfg).len(), 1);
    }

    #[test]
    fn every_method_runs_and_meters() {
        let (train, test) = blobs();
        for method in Method::ALL {
            let mut cfg = small(method);
            if method == Method::FedAvg {
                cfg.delay_n = 5;
            }
            let mut fed = Federation::new(cfg.clone(), ModelSpec::logreg(8, 4), &train).unwrap();
            let recs = fed.run(&test, |_| {}).unwrap();
            assert_eq!(recs.last().unwrap().iterations, 60, "{method}");
            assert_eq!(recs.len(), 3, "{method}");
            assert!(fed.ledger().is_consistent());
            assert!(recs.windows(2).all(|w| w[0].bits_up <= w[1].bits_up && w[0].bits_down <= w[1].bits_down));
            let per_upload = fed.ledger().total_up() as f64 / (cfg.rounds() * 3) as f64;
            match method {
                Method::SignSgd => assert_eq!(per_upload, 36.0),
                Method::FedAvg | Method::Baseline => assert_eq!(per_upload, 36.0 * 32.0),
                _ => assert!(per_upload < 36.0 * 32.0),
            }
        }
    }

    #[test]
    fn absent_clients_stay_frozen() {
        let (train, _) = blobs();
        let mut fed = Federation::new(small(Method::Stc), ModelSpec::logreg(8, 4), &train).unwrap();
        fed.run_round().unwrap();
        let before = fed.clients().to_vec();
        let report = fed.run_round().unwrap();
        for (b, a) in before.iter().zip(fed.clients()) {
            if !report.participants.contains(&a.id) {
                assert_eq!(b.model, a.model);
                assert_eq!(b.residual, a.residual);
                assert_eq!(b.local.sgd.velocity, a.local.sgd.velocity);
                assert_eq!(b.last_synced, a.last_synced);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (train, _) = blobs();
        let mut cfg = small(Method::Stc);
        cfg.total_iterations = 61;
        cfg.delay_n = 2;
        assert!(matches!(Federation::new(cfg, ModelSpec::logreg(8, 4), &train), Err(Error::Config { .. })));
        let mut cfg = small(Method::SignSgd);
        cfg.delay_n = 2;
        cfg.total_iterations = 60;
        assert!(Federation::new(cfg, ModelSpec::logreg(8, 4), &train).is_err());
        assert!(Federation::new(small(Method::Stc), ModelSpec::logreg(9, 4), &train).is_err());
    }
}
