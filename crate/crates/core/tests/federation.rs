use stc_core::data::{synth_blobs, Dataset};
use stc_core::federation::{apply_payload, Federation, FedConfig, Method, Payload};
use stc_core::model::{evaluate, sgd_update, Batch, BatchSampler, ModelSpec, SgdState};
use stc_core::FlatTensor;

fn blobs(per_class: usize, seed: u64) -> Dataset {
    synth_blobs(10, per_class, 784, 1.0, seed).unwrap()
}

/// Train and test sets drawn from the same class means.
fn train_test(train_per_class: usize, test_per_class: usize, seed: u64) -> (Dataset, Dataset) {
    let all = blobs(train_per_class + test_per_class, seed);
    let cut = 10 * train_per_class;
    let (a, b): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|&i| i < cut);
    (all.subset(&a).unwrap(), all.subset(&b).unwrap())
}

fn rel_dist(a: &FlatTensor, b: &FlatTensor) -> f64 {
    a.sub(b).unwrap().l2_norm() / b.l2_norm().max(1e-30)
}

/// Plain minibatch SGD over the whole training set, written independently of
/// the federation code.
fn centralized(spec: &ModelSpec, cfg: &FedConfig, train: &Dataset, iters: usize) -> FlatTensor {
    let mut state = SgdState::new(spec.init_params(cfg.seed));
    let mut sampler = BatchSampler::new(cfg.seed, 0);
    let all: Vec<usize> = (0..train.len()).collect();
    for _ in 0..iters {
        let idx = sampler.next_batch(&all, cfg.batch_size).unwrap();
        sgd_update(&mut state, spec, &cfg.optim(), &Batch::from_indices(train, &idx)).unwrap();
    }
    state.params
}

#[test]
fn single_client_fedavg_is_centralized_sgd() {
    let train = blobs(30, 1);
    let spec = ModelSpec::logreg(784, 10);
    for (delay, momentum) in [(1, 0.0), (7, 0.0), (5, 0.9)] {
        let cfg = FedConfig {
            num_clients: 1,
            participation: 1.0,
            classes_per_client: 1,
            delay_n: delay,
            momentum,
            total_iterations: 35,
            ..FedConfig::base(Method::FedAvg)
        };
        let mut fed = Federation::new(cfg.clone(), spec, &train).unwrap();
        for _ in 0..cfg.rounds() {
            fed.run_round().unwrap();
        }
        let reference = centralized(&spec, &cfg, &train, 35);
        assert_eq!(fed.server().params(), &reference, "delay {delay}");
    }
}

#[test]
fn server_residual_telescopes() {
    let train = blobs(40, 2);
    let cfg = FedConfig {
        num_clients: 10,
        participation: 1.0,
        total_iterations: 50,
        ..FedConfig::base(Method::Stc)
    };
    let mut fed = Federation::new(cfg, ModelSpec::logreg(784, 10), &train).unwrap();
    let len = fed.server().params().len();
    let mut computed = FlatTensor::zeros(len);
    let mut applied = FlatTensor::zeros(len);
    for _ in 0..50 {
        let r = fed.run_round().unwrap();
        computed.add_assign(&r.aggregate.mean).unwrap();
        applied.add_assign(&r.aggregate.applied).unwrap();
    }
    let lhs = fed.server().residual().add(&applied).unwrap();
    assert!(rel_dist(&lhs, &computed) <= 1e-3, "{}", rel_dist(&lhs, &computed));
}

#[test]
fn synced_clients_match_the_server() {
    let train = blobs(40, 3);
    for method in [Method::Stc, Method::TopK, Method::SignSgd] {
        let cfg = FedConfig {
            num_clients: 8,
            participation: 0.25,
            total_iterations: 60,
            cache_horizon: 5,
            p_up: 0.01,
            p_down: 0.01,
            ..FedConfig::base(method)
        };
        let mut fed = Federation::new(cfg, ModelSpec::logreg(784, 10), &train).unwrap();
        for _ in 0..60 {
            let before = fed.server().params().clone();
            let report = fed.run_round().unwrap();
            for &i in &report.participants {
                let d = rel_dist(&fed.clients()[i].model, &before);
                assert!(d <= 1e-5, "{method}: client {i} off by {d}");
            }
        }
        assert!(fed.ledger().is_consistent());
    }
}

#[test]
fn cached_sums_respect_the_linear_bound() {
    let train = blobs(40, 4);
    let cfg = FedConfig {
        num_clients: 10,
        participation: 1.0,
        total_iterations: 30,
        ..FedConfig::base(Method::Stc)
    };
    let mut fed = Federation::new(cfg, ModelSpec::logreg(784, 10), &train).unwrap();
    let mut snapshots = vec![fed.server().params().clone()];
    let mut broadcast_bits = vec![];
    for _ in 0..30 {
        fed.run_round().unwrap();
        snapshots.push(fed.server().params().clone());
        let mut srv = fed.server().clone();
        broadcast_bits.push(srv.payload(srv.round() - 1).unwrap().bits());
    }
    let mut srv = fed.server().clone();
    let t = srv.round();
    for s in [1usize, 2, 5] {
        let payload = srv.payload(t - s).unwrap();
        assert!(matches!(payload, Payload::Partial { .. }));
        let mut model = snapshots[t - s].clone();
        apply_payload(srv.session(), &mut model, &payload).unwrap();
        assert!(rel_dist(&model, &snapshots[t]) <= 1e-5);
        let window = &broadcast_bits[t - s..t];
        let mean = window.iter().sum::<usize>() as f64 / s as f64;
        let overhead = if s == 1 { 0.0 } else { 8.0 };
        assert!(payload.bits() as f64 <= s as f64 * mean + overhead, "s={s}");
    }
}

#[test]
fn full_participation_stc_traffic() {
    let train = blobs(40, 5);
    let cfg = FedConfig {
        num_clients: 10,
        participation: 1.0,
        total_iterations: 40,
        ..FedConfig::base(Method::Stc)
    };
    let mut fed = Federation::new(cfg, ModelSpec::logreg(784, 10), &train).unwrap();
    for _ in 0..40 {
        fed.run_round().unwrap();
    }
    let rounds = &fed.ledger().rounds()[1..];
    let per_client: f64 = rounds.iter().map(|r| (r.bits_up + r.bits_down) as f64).sum::<f64>() / (10 * rounds.len()) as f64;
    let factor = 2.0 * 32.0 * 7850.0 / per_client;
    assert!(factor >= 900.0, "{factor}");
}

#[test]
fn runs_are_deterministic() {
    let (train, test) = train_test(30, 10, 6);
    let cfg = FedConfig {
        num_clients: 20,
        participation: 0.2,
        classes_per_client: 2,
        total_iterations: 200,
        eval_every: 50,
        lr: 0.1,
        ..FedConfig::base(Method::Stc)
    };
    let spec = ModelSpec::logreg(784, 10);
    let a = stc_core::federation::run_experiment(&cfg, spec, &train, &test).unwrap();
    let b = stc_core::federation::run_experiment(&cfg, spec, &train, &test).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
}

#[test]
fn stc_learns_separable_blobs() {
    let (train, test) = train_test(60, 20, 8);
    let spec = ModelSpec::logreg(784, 10);
    let cfg = FedConfig {
        num_clients: 10,
        participation: 0.5,
        total_iterations: 400,
        p_up: 0.01,
        p_down: 0.01,
        lr: 0.01,
        ..FedConfig::base(Method::Stc)
    };
    let mut fed = Federation::new(cfg, spec, &train).unwrap();
    let recs = fed.run(&test, |_| {}).unwrap();
    let acc = recs.last().unwrap().test_accuracy;
    assert!(acc >= 0.9, "{acc}");
    assert_eq!(acc, evaluate(fed.server().params(), &spec, &test).unwrap());
}
