mod common;

use std::sync::Arc;

use capnmpc::vehicle::{Bicycle, BicycleParams};
use capnmpc::{
    augment, backward_reweight, forward_pass, nmpc_step, NmpcProblem, NoiseSpec, VirtualState,
};
use common::{ess, reference, LinearGaussian};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CASE: LinearGaussian = LinearGaussian {
    a: 0.9,
    b: 0.5,
    qx: 0.3,
    qu: 1.0,
    rv: 0.5,
    x0: 1.0,
};

fn refs(values: &[f64]) -> Vec<DVector<f64>> {
    values
        .iter()
        .map(|&r| DVector::from_element(1, r))
        .collect()
}

#[test]
fn filter_and_smoother_match_kalman_rts() {
    let r = reference(20);
    let oracle = CASE.kalman(&r);
    let sys = CASE.system();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let history = forward_pass(&sys, &[CASE.x0], &refs(&r), None, 5000, &mut rng).unwrap();

    for (t, (step, exact)) in history.steps.iter().zip(&oracle.filtered).enumerate() {
        let w = &step.ensemble.weights;
        let mean = step.ensemble.weighted_mean(w);
        let n_eff = ess(w);
        for (c, est) in [mean.x[0], mean.u[0]].into_iter().enumerate() {
            let var = exact.cov[(c, c)];
            if var == 0.0 {
                assert!(
                    (est - exact.mean[c]).abs() < 1e-12,
                    "t={t} component {c}: {est}"
                );
                continue;
            }
            let z = (est - exact.mean[c]) / (var / n_eff).sqrt();
            assert!(z.abs() < 3.0, "filtered t={t} component {c}: z = {z:.2}");
        }
    }

    let smoothed = backward_reweight(&history, &sys).unwrap();
    let first = &history.steps[0].ensemble;
    let est = first.weighted_mean(smoothed.first()).u[0];
    let exact = &oracle.smoothed[0];
    let z = (est - exact.mean[1]) / (exact.cov[(1, 1)] / ess(smoothed.first())).sqrt();
    assert!(
        z.abs() < 3.0,
        "smoothed u_k: {est} vs {} (z = {z:.2})",
        exact.mean[1]
    );
}

#[test]
fn deterministic_plant_estimate_matches_least_squares() {
    let case = LinearGaussian { qx: 0.0, ..CASE };
    let r = reference(4);
    let (u_star, var) = case.least_squares_first_input(&r);
    let problem = NmpcProblem::new(case.system(), None, 3, 5000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let out = nmpc_step(&problem, &[case.x0], &refs(&r), &mut rng).unwrap();
    // Resampling-induced loss is not in ESS, so the bound uses N / 4.
    let se = (var / 1250.0).sqrt();
    assert!(
        (out.control[0] - u_star).abs() < 3.0 * se,
        "estimate {} vs least squares {u_star}",
        out.control[0]
    );
}

#[test]
fn input_draws_have_configured_covariance() {
    let sys = augment(
        Arc::new(Bicycle::default()),
        NoiseSpec {
            q_wbar: vec![0.0, 0.0, 0.0, 0.0, 0.8, 0.4],
            q_v: vec![0.01, 0.01, 0.0, 0.0],
            q_eta: vec![],
            epsilon: 1e-6,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prev = VirtualState::from_slices(&[0.0, 0.0, 3.0, 0.0], &[0.0, 0.0]);
    let n = 100_000;
    let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let next = sys.propagate(&prev, &mut rng).unwrap();
        // Zero state noise: the state part is exactly the plant step.
        assert_eq!(next.x.as_slice(), &[0.30000000000000004, 0.0, 3.0, 0.0]);
        s00 += next.u[0] * next.u[0];
        s11 += next.u[1] * next.u[1];
        s01 += next.u[0] * next.u[1];
    }
    let n = n as f64;
    assert!((s00 / n / 0.8 - 1.0).abs() < 0.05, "var(a) = {}", s00 / n);
    assert!(
        (s11 / n / 0.4 - 1.0).abs() < 0.05,
        "var(delta) = {}",
        s11 / n
    );
    assert!((s01 / n).abs() < 0.05 * (0.8f64 * 0.4).sqrt());
}

#[test]
fn bicycle_transition_density_matches_reference_value() {
    let params = BicycleParams::new(0.5, 0.5, 0.1).unwrap();
    let sys = augment(
        Arc::new(Bicycle { params }),
        NoiseSpec {
            q_wbar: vec![1e-6, 1e-6, 1e-6, 1e-6, 0.8, 0.4],
            q_v: vec![0.01, 0.01, 0.0, 0.0],
            q_eta: vec![],
            epsilon: 1e-6,
        },
    )
    .unwrap();
    let prev = VirtualState::from_slices(&[1.0, 2.0, 3.0, 0.3], &[0.5, 0.1]);
    let next = VirtualState::from_slices(&[1.3, 2.1, 3.05, 0.31], &[0.7, -0.2]);
    let lp = sys.log_density_transition(&next, &prev).unwrap();
    // High-precision evaluation of the same Gaussian log density.
    let expected = -348.781_162_358_846_2;
    assert!(
        (lp - expected).abs() < 1e-9 * expected.abs(),
        "{lp} vs {expected}"
    );
}

#[test]
fn propagation_is_reproducible_for_a_seed() {
    let sys = CASE.system();
    let prev = VirtualState::from_slices(&[0.2], &[-0.4]);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..10)
            .map(|_| sys.propagate(&prev, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(17), draw(17));
    assert_ne!(draw(17), draw(18));
}
