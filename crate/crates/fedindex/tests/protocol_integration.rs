//! Integration tests of the round loop: determinism, execution-order
//! independence, and the degeneracies between the aggregation rules.

mod common;

use common::{dataset_from, homogeneous_spec};
use fedindex::index::{IndexCoefficients, ProducerDataset};
use fedindex::io::traces_to_csv;
use fedindex::protocol::{
    local_update, run_round, run_training, AggregatorConfig, LocalUpdateConfig, ServerState,
};
use fedindex::seeds::derive_rng;
use fedindex::synth::{datasets, generate_population};
use fedindex::tweedie::TweedieParams;

fn small_population(n_producers: usize, n_obs: usize, seed: u64) -> Vec<ProducerDataset> {
    let spec = homogeneous_spec(n_producers, n_obs, vec![0.5, 0.3], 1.0, 1.5, 1.0);
    datasets(&generate_population(&spec, seed).unwrap())
}

fn quick_cfg() -> LocalUpdateConfig {
    LocalUpdateConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 0.02,
        prox_beta: 0.0,
        floor: 1e-6,
    }
}

#[test]
fn identical_clients_track_the_single_client_trajectory() {
    // Two clients holding the same data and fed the same streams return the
    // same update, and averaging identical updates is the identity.
    let params = TweedieParams::new(1.0, 1.5, 1.0).unwrap();
    let rows = vec![
        (1.0, vec![2.0, 1.0]),
        (0.0, vec![1.5, 2.5]),
        (2.0, vec![2.5, 2.0]),
        (0.5, vec![1.0, 1.0]),
    ];
    let solo = dataset_from(0, &rows, params, 1.0);
    let twin = dataset_from(1, &rows, params, 3.0);
    let cfg = quick_cfg();

    let mut solo_server = ServerState::new(IndexCoefficients::constant(2, 0.1).unwrap());
    let mut pair_server = solo_server.clone();
    for round in 0..5u64 {
        let mut solo_rngs = vec![derive_rng(77, &[round])];
        let (next_solo, _) = run_round(
            solo_server,
            std::slice::from_ref(&solo),
            &AggregatorConfig::FedAvg,
            &cfg,
            &mut solo_rngs,
        )
        .unwrap();
        solo_server = next_solo;

        let mut pair_rngs = vec![derive_rng(77, &[round]), derive_rng(77, &[round])];
        let (next_pair, _) = run_round(
            pair_server,
            &[solo.clone(), twin.clone()],
            &AggregatorConfig::FedAvg,
            &cfg,
            &mut pair_rngs,
        )
        .unwrap();
        pair_server = next_pair;

        assert_eq!(solo_server.coeffs(), pair_server.coeffs(), "round {round}");
    }
}

#[test]
fn fedprox_with_zero_beta_reproduces_fedavg_bit_for_bit() {
    let clients = small_population(4, 64, 5);
    let cfg = LocalUpdateConfig {
        prox_beta: 0.0,
        ..quick_cfg()
    };
    let (coeffs_avg, traces_avg) =
        run_training(&clients, &AggregatorConfig::FedAvg, &cfg, 8, 99).unwrap();
    let (coeffs_prox, traces_prox) =
        run_training(&clients, &AggregatorConfig::FedProx, &cfg, 8, 99).unwrap();
    assert_eq!(coeffs_avg, coeffs_prox);
    assert_eq!(traces_avg, traces_prox);
    assert_eq!(
        traces_to_csv(&[traces_avg]).unwrap(),
        traces_to_csv(&[traces_prox]).unwrap()
    );
}

#[test]
fn positive_prox_beta_changes_the_trajectory() {
    let clients = small_population(4, 64, 5);
    let plain = quick_cfg();
    let pulled = LocalUpdateConfig {
        prox_beta: 5.0,
        ..quick_cfg()
    };
    let (a, _) = run_training(&clients, &AggregatorConfig::FedProx, &plain, 4, 99).unwrap();
    let (b, _) = run_training(&clients, &AggregatorConfig::FedProx, &pulled, 4, 99).unwrap();
    assert_ne!(a, b);
}

#[test]
fn client_order_does_not_change_the_round() {
    let clients = small_population(6, 32, 13);
    let cfg = quick_cfg();
    let (coeffs, traces) = run_training(&clients, &AggregatorConfig::FedAvg, &cfg, 3, 7).unwrap();

    let mut reversed = clients.clone();
    reversed.reverse();
    let (coeffs_rev, traces_rev) =
        run_training(&reversed, &AggregatorConfig::FedAvg, &cfg, 3, 7).unwrap();

    assert_eq!(coeffs, coeffs_rev);
    assert_eq!(traces, traces_rev);
}

#[cfg(feature = "parallel")]
#[test]
fn single_thread_pool_matches_the_default_pool_bit_for_bit() {
    let clients = small_population(6, 48, 21);
    let cfg = quick_cfg();
    let agg = AggregatorConfig::FedOpt(Default::default());
    let parallel = run_training(&clients, &agg, &cfg, 4, 3).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let sequential = pool.install(|| run_training(&clients, &agg, &cfg, 4, 3).unwrap());
    assert_eq!(parallel, sequential);
}

#[test]
fn aggregation_consumes_parameter_vectors_only() {
    // The server side never sees datasets: updates are bare
    // (weight, coefficients) pairs, so data stays client-local.
    let updates = vec![
        (2.0, IndexCoefficients::new(vec![0.4, 0.1]).unwrap()),
        (1.0, IndexCoefficients::new(vec![0.1, 0.4]).unwrap()),
    ];
    let averaged = fedindex::protocol::aggregate_fedavg(&updates).unwrap();
    assert_eq!(averaged.sensitivities(), &[0.3, 0.2]);
}

#[test]
fn local_update_streams_are_stable_across_rng_types() {
    // Generic over the rng: the same logical stream gives the same result
    // whether it is boxed, borrowed, or owned.
    let params = TweedieParams::new(1.0, 1.5, 1.0).unwrap();
    let data = dataset_from(
        0,
        &[
            (1.0, vec![2.0, 1.0]),
            (0.3, vec![1.0, 2.0]),
            (2.1, vec![2.0, 2.0]),
        ],
        params,
        1.0,
    );
    let start = IndexCoefficients::constant(2, 0.1).unwrap();
    let cfg = quick_cfg();

    let mut owned = derive_rng(4, &[2]);
    let first = local_update(&data, &start, &cfg, &mut owned).unwrap();
    let mut boxed: Box<dyn rand::RngCore> = Box::new(derive_rng(4, &[2]));
    let second = local_update(&data, &start, &cfg, &mut *boxed).unwrap();
    assert_eq!(first, second);
}

#[test]
fn fixed_intercept_rides_along_untouched() {
    let clients = small_population(3, 48, 33);
    let cfg = quick_cfg();
    let with_offset = IndexCoefficients::with_intercept(vec![0.1, 0.1], 0.4).unwrap();
    let (final_offset, traces) = fedindex::protocol::run_training_with_init(
        with_offset,
        &clients,
        &AggregatorConfig::FedAvg,
        &cfg,
        5,
        2,
    )
    .unwrap();
    // The intercept is never trained and survives aggregation verbatim.
    assert_eq!(final_offset.intercept(), Some(0.4));
    for trace in &traces {
        assert_eq!(trace.coeffs_after.intercept(), Some(0.4));
    }

    // It does shift the index, so the fitted sensitivities move.
    let plain = IndexCoefficients::constant(2, 0.1).unwrap();
    let (final_plain, _) = fedindex::protocol::run_training_with_init(
        plain,
        &clients,
        &AggregatorConfig::FedAvg,
        &cfg,
        5,
        2,
    )
    .unwrap();
    assert_eq!(final_plain.intercept(), None);
    assert_ne!(final_offset.sensitivities(), final_plain.sensitivities());
}
