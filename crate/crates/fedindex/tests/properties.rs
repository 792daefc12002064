//! Property tests for the numerical invariants.

mod common;

use common::{deviance_by_quadrature, finite_difference_risk_gradient, l2, l2_diff};
use fedindex::index::{
    index_value, local_risk_gradient, prox_local_risk_gradient, IndexCoefficients, Observation,
    ProducerDataset,
};
use fedindex::protocol::{
    aggregate_fedavg, fedopt_step, pseudo_gradient, FedOptConfig, ServerState,
};
use fedindex::tweedie::{deviance_dmu, scaled_deviance, unit_deviance, TweedieParams};
use proptest::prelude::*;

const FLOOR: f64 = 1e-6;

fn coeff_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.5f64, dim)
}

fn covariates(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.5..4.0f64, dim)
}

proptest! {
    #[test]
    fn deviance_is_nonnegative_and_zero_only_at_the_mean(
        x in 0.0..10.0f64,
        mu in 0.1..10.0f64,
        q in 1.05..1.95f64,
    ) {
        let d = unit_deviance(x, mu, q).unwrap();
        prop_assert!(d >= 0.0);
        if (x - mu).abs() > 1e-3 * (1.0 + mu) {
            prop_assert!(d > 0.0);
        }
        prop_assert!(unit_deviance(mu, mu, q).unwrap() < 1e-12);
    }

    #[test]
    fn deviance_matches_the_quadrature_oracle(
        x in 0.0..10.0f64,
        mu in 0.1..10.0f64,
        q in 1.05..1.95f64,
    ) {
        let closed = unit_deviance(x, mu, q).unwrap();
        let quad = deviance_by_quadrature(x, mu, q);
        prop_assert!((closed - quad).abs() < 1e-6, "closed {closed} vs quadrature {quad}");
    }

    #[test]
    fn deviance_dmu_matches_finite_differences(
        x in 0.0..10.0f64,
        mu in 0.2..10.0f64,
        q in 1.05..1.95f64,
        phi in 0.5..2.0f64,
    ) {
        // The relative comparison degenerates at the stationary point x = mu.
        prop_assume!((x - mu).abs() > 1e-2 * (1.0 + mu));
        let params = TweedieParams::new(1.0, q, phi).unwrap();
        let analytic = deviance_dmu(x, mu, &params).unwrap();
        let step = 1e-6 * mu.max(1.0);
        let fd = (scaled_deviance(x, mu + step, &params).unwrap()
            - scaled_deviance(x, mu - step, &params).unwrap())
            / (2.0 * step);
        let scale = analytic.abs().max(fd.abs()).max(1e-8);
        prop_assert!((analytic - fd).abs() / scale < 1e-4, "analytic {analytic} vs fd {fd}");
    }

    #[test]
    fn index_is_scale_covariant(
        a in coeff_vec(3),
        y in covariates(3),
        c in -5.0..5.0f64,
    ) {
        let coeffs = IndexCoefficients::new(a.clone()).unwrap();
        let scaled = IndexCoefficients::new(a.iter().map(|v| c * v).collect()).unwrap();
        let direct = index_value(&scaled, &y).unwrap();
        let derived = c * index_value(&coeffs, &y).unwrap();
        prop_assert!((direct - derived).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn risk_gradient_matches_finite_differences(
        a in coeff_vec(2),
        rows in prop::collection::vec((0.0..6.0f64, covariates(2)), 1..6),
        q in 1.1..1.9f64,
        phi in 0.5..2.0f64,
        p in 0.8..1.2f64,
    ) {
        let params = TweedieParams::new(p, q, phi).unwrap();
        let coeffs = IndexCoefficients::new(a).unwrap();
        // Stay clear of the clamp so the objective is smooth.
        for (_, y) in &rows {
            prop_assume!(index_value(&coeffs, y).unwrap() > 2.0 * FLOOR);
        }
        let observations: Vec<Observation> = rows
            .iter()
            .map(|(loss, y)| Observation { loss: *loss, covariates: y.clone() })
            .collect();
        let data = ProducerDataset::new(0, observations.clone(), params, 1.0).unwrap();
        let analytic = local_risk_gradient(&coeffs, &observations, &params, FLOOR).unwrap();
        let fd = finite_difference_risk_gradient(&coeffs, &data, FLOOR, 1e-6);
        let scale = l2(&analytic).max(l2(&fd)).max(1e-8);
        prop_assert!(l2_diff(&analytic, &fd) / scale < 1e-4, "analytic {analytic:?} vs fd {fd:?}");
    }

    #[test]
    fn prox_gradient_with_zero_beta_is_bitwise_plain(
        a in coeff_vec(2),
        anchor in coeff_vec(2),
        rows in prop::collection::vec((0.0..6.0f64, covariates(2)), 1..5),
    ) {
        let params = TweedieParams::new(1.0, 1.5, 1.0).unwrap();
        let coeffs = IndexCoefficients::new(a).unwrap();
        let anchor = IndexCoefficients::new(anchor).unwrap();
        let observations: Vec<Observation> = rows
            .iter()
            .map(|(loss, y)| Observation { loss: *loss, covariates: y.clone() })
            .collect();
        let plain = local_risk_gradient(&coeffs, &observations, &params, FLOOR).unwrap();
        let prox =
            prox_local_risk_gradient(&coeffs, &observations, &params, &anchor, 0.0, FLOOR).unwrap();
        prop_assert!(plain.iter().zip(&prox).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn fedavg_stays_in_the_convex_hull_and_ignores_order(
        updates in prop::collection::vec(
            (0.1..5.0f64, prop::collection::vec(-2.0..2.0f64, 3)),
            1..6,
        ),
        seed in any::<u64>(),
    ) {
        let typed: Vec<(f64, IndexCoefficients)> = updates
            .iter()
            .map(|(w, a)| (*w, IndexCoefficients::new(a.clone()).unwrap()))
            .collect();
        let averaged = aggregate_fedavg(&typed).unwrap();
        for j in 0..3 {
            let lo = typed.iter().map(|(_, c)| c.sensitivities()[j]).fold(f64::INFINITY, f64::min);
            let hi = typed
                .iter()
                .map(|(_, c)| c.sensitivities()[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let v = averaged.sensitivities()[j];
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "coordinate {j}: {v} outside [{lo}, {hi}]");
        }

        // Client order must not matter beyond floating-point reordering.
        let mut shuffled = typed.clone();
        let n = shuffled.len();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let again = aggregate_fedavg(&shuffled).unwrap();
        for j in 0..3 {
            let a = averaged.sensitivities()[j];
            let b = again.sensitivities()[j];
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn pseudo_gradient_rearranges_to_fedavg(
        global in prop::collection::vec(-2.0..2.0f64, 2),
        updates in prop::collection::vec(
            (0.1..5.0f64, prop::collection::vec(-2.0..2.0f64, 2)),
            1..5,
        ),
    ) {
        let global = IndexCoefficients::new(global).unwrap();
        let typed: Vec<(f64, IndexCoefficients)> = updates
            .iter()
            .map(|(w, a)| (*w, IndexCoefficients::new(a.clone()).unwrap()))
            .collect();
        let grad = pseudo_gradient(&global, &typed).unwrap();
        let averaged = aggregate_fedavg(&typed).unwrap();
        for j in 0..2 {
            let via_gradient = global.sensitivities()[j] - grad[j];
            let direct = averaged.sensitivities()[j];
            prop_assert!((via_gradient - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn fedopt_second_moment_never_goes_negative(
        grads in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 1..10),
    ) {
        let cfg = FedOptConfig::default();
        let mut state = ServerState::new(IndexCoefficients::new(vec![0.1, 0.1]).unwrap());
        for g in &grads {
            state = fedopt_step(&state, g, &cfg).unwrap();
            prop_assert!(state.second_moment().iter().all(|&v| v >= 0.0));
            prop_assert!(state.coeffs().sensitivities().iter().all(|a| a.is_finite()));
        }
    }
}
