use anld::models::{CostModel, DataSet, Datum, GaussianMixtureModel, QuadraticModel};
use anld::rng::stream;
use anld::samplers::{
    alg2_step, alg3_step, run_sampler, Algorithm, InitSpec, RunSpec, SamplerConfig, SamplerState,
    SkewInit,
};
use rand::Rng;

fn mixture_data() -> (GaussianMixtureModel, DataSet) {
    let model = GaussianMixtureModel::mixture2(100).unwrap();
    let data = model
        .generate_dataset(&[0.0, 1.0], 100, &mut stream(2024, 5))
        .unwrap();
    (model, data)
}

#[test]
fn alg3_without_adaptation_matches_accelerated_bitwise() {
    // Regression: the inner coupled chains must not leak into θ.
    let (model, data) = mixture_data();
    let cfg = SamplerConfig {
        eps: 1e-4,
        alpha: 0.0,
        inner_steps: 3,
        ..SamplerConfig::default()
    };
    let init = InitSpec::at(vec![4.0, 4.0]).with_skew(SkewInit::Fixed(vec![-0.8]));
    let run = RunSpec {
        iterations: 2000,
        seed: 5,
        ..RunSpec::default()
    };
    let a3 = run_sampler(Algorithm::Alg3, &model, Some(&data), &cfg, &init, &run).unwrap();
    let acc = run_sampler(
        Algorithm::Accelerated,
        &model,
        Some(&data),
        &cfg,
        &init,
        &run,
    )
    .unwrap();
    for r in 0..a3.len() {
        assert_eq!(a3.theta(r), acc.theta(r), "record {r}");
    }
}

#[test]
fn alg3_with_one_inner_step_moves_s_like_alg2() {
    // Noise off: Δ is the first aux draw in both schemes, and the single inner
    // step of alg3 is the coupled step alg2 takes on the same datum.
    let model = GaussianMixtureModel::mixture2(100).unwrap();
    let cfg = SamplerConfig {
        eps: 1e-3,
        alpha: 1e-2,
        mu: 0.1,
        inner_steps: 1,
        noise: false,
        ..SamplerConfig::default()
    };
    let init = InitSpec::at(vec![0.3, 1.2]).with_skew(SkewInit::Fixed(vec![0.5]));
    let mut s2 = SamplerState::new(&init, 9).unwrap();
    let mut s3 = SamplerState::new(&init, 9).unwrap();
    let (y0, y1) = (0.7, -1.1);
    alg2_step(&mut s2, &model, Datum::obs(y1), &cfg).unwrap();
    alg3_step(&mut s3, &model, &[Datum::obs(y0), Datum::obs(y1)], &cfg).unwrap();
    assert_eq!(s2.skew.upper(), s3.skew.upper());
    assert_eq!(s2.theta_plus, s3.theta_plus);
    assert_ne!(s3.theta, s3.theta_plus);
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let (model, data) = mixture_data();
    let cfg = SamplerConfig::default();
    let init = InitSpec::at(vec![4.0, 4.0]).with_skew(SkewInit::Tridiagonal);
    for a in [
        Algorithm::Sgld,
        Algorithm::Alg1,
        Algorithm::Alg2,
        Algorithm::Alg3,
        Algorithm::Mh,
    ] {
        let run = |seed| {
            let spec = RunSpec {
                iterations: 500,
                seed,
                snapshot_every: 100,
                ..RunSpec::default()
            };
            run_sampler(a, &model, Some(&data), &cfg, &init, &spec).unwrap()
        };
        assert_eq!(run(3), run(3), "{a}");
        assert_ne!(run(3), run(4), "{a}");
    }
}

#[test]
fn metropolis_hastings_recovers_a_gaussian() {
    // exp(-½ θᵀ diag(1, 4) θ): means 0, variances 1 and 1/4.
    let model = QuadraticModel::diagonal(&[1.0, 4.0], 0.0).unwrap();
    let cfg = SamplerConfig {
        mh_proposal_std: 0.8,
        ..SamplerConfig::default()
    };
    let run = RunSpec {
        iterations: 400_000,
        seed: 1,
        ..RunSpec::default()
    };
    let traj = run_sampler(
        Algorithm::Mh,
        &model,
        None,
        &cfg,
        &InitSpec::at(vec![2.0, 2.0]),
        &run,
    )
    .unwrap();
    let acc = traj.accepted as f64 / run.iterations as f64;
    assert!((0.2..0.8).contains(&acc), "acceptance {acc}");
    for (i, var) in [(0, 1.0), (1, 0.25)] {
        let xs = traj.marginal_samples(i, 0.1, false);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(m.abs() < 0.05, "mean {i}: {m}");
        assert!((v / var - 1.0).abs() < 0.05, "variance {i}: {v}");
    }
}

#[test]
fn mixture_mode_jump_is_a_likelihood_preserving_involution() {
    let model = GaussianMixtureModel::mixture10(100, 7).unwrap();
    let mut rng = stream(8, 0);
    for _ in 0..50 {
        let theta: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut once = vec![0.0; 10];
        let mut twice = vec![0.0; 10];
        assert!(model.mode_jump(&theta, &mut once));
        assert!(model.mode_jump(&once, &mut twice));
        for (a, b) in theta.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-10);
        }
        // The two component means trade places.
        let (m, n) = (model.component_means(&theta), model.component_means(&once));
        assert!((m[0] - n[1]).abs() < 1e-10 && (m[1] - n[0]).abs() < 1e-10);
        for y in [-2.0, 0.3, 1.7] {
            assert!(
                (model.log_likelihood(&theta, y) - model.log_likelihood(&once, y)).abs() < 1e-10
            );
        }
    }
}

#[test]
fn swap_moves_keep_mh_on_the_posterior() {
    // Both modes of the two-parameter posterior are visited once jumps are on.
    let (model, data) = mixture_data();
    let cfg = SamplerConfig {
        mh_proposal_std: 0.25,
        mh_swap_prob: 0.1,
        ..SamplerConfig::default()
    };
    let run = RunSpec {
        iterations: 200_000,
        seed: 2,
        ..RunSpec::default()
    };
    let traj = run_sampler(
        Algorithm::Mh,
        &model,
        Some(&data),
        &cfg,
        &InitSpec::at(vec![0.0, 1.0]),
        &run,
    )
    .unwrap();
    let near_truth = (0..traj.len())
        .filter(|&r| traj.theta(r)[0].abs() < 0.5)
        .count();
    let frac = near_truth as f64 / traj.len() as f64;
    assert!(
        frac > 0.05 && frac < 0.95,
        "fraction near the generating mode {frac}"
    );
}

#[test]
fn alg1_learns_a_nonzero_skew() {
    let (model, data) = mixture_data();
    let cfg = SamplerConfig {
        eps: 4e-4,
        alpha: 4e-4,
        skew_bounds: [-4.0, 4.0],
        ..SamplerConfig::default()
    };
    let run = RunSpec {
        iterations: 20_000,
        seed: 0,
        snapshot_every: 20_000,
        ..RunSpec::default()
    };
    let traj = run_sampler(
        Algorithm::Alg1,
        &model,
        Some(&data),
        &cfg,
        &InitSpec::at(vec![4.0, 4.0]),
        &run,
    )
    .unwrap();
    let s = traj.skew_snapshots().last().unwrap().1.upper()[0];
    assert!(s != 0.0 && s.abs() <= 4.0, "final skew {s}");
}
