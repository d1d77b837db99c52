mod common;

use proptest::prelude::*;

use mfkl::chain::{
    kernel_step, run_chain, verlet_step, ChainParams, ParticleStreams, PositionLaw, RngStream,
};
use mfkl::model::grad_un;
use mfkl::risk::{discrete_divergence, quadratic_risk, DivergenceKind, Observable};
use mfkl::theory::{
    contraction_constants, entropy_bound, euclidean_lyapunov_constants, lsi_constants, risk_bounds,
    LsiConstants, RiskMode,
};

use common::*;

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|v| v.to_bits()).collect()
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), d in 1usize..=3, n in 2usize..=5, which in 0usize..4) {
        let models = builtin_models(d);
        let (name, model) = &models[which];
        let mut rng = RngStream::new(seed);
        let s = random_state(model.as_ref(), n, 1.0, &mut rng);
        let err = fd_relative_error(model.as_ref(), &s.positions, 1e-5);
        prop_assert!(err <= 1e-5, "{name}: {err}");
    }

    #[test]
    fn gradient_is_permutation_equivariant(seed in any::<u64>(), d in 1usize..=3, n in 2usize..=7, which in 0usize..4) {
        let models = builtin_models(d);
        let m = models[which].1.as_ref();
        let mut rng = RngStream::new(seed);
        let s = random_state(m, n, 2.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.index(i + 1));
        }
        let g = grad_un(m, &s.positions).unwrap();
        let gp = grad_un(m, &s.positions.permuted(&perm)).unwrap();
        prop_assert_eq!(bits(g.permuted(&perm).as_slice()), bits(gp.as_slice()));
    }

    #[test]
    fn verlet_is_reversible(seed in any::<u64>(), d in 1usize..=3, n in 1usize..=5, which in 0usize..4, h in 0.001f64..0.1) {
        let models = builtin_models(d);
        let m = models[which].1.as_ref();
        let mut rng = RngStream::new(seed);
        let s = random_state(m, n, 1.0, &mut rng);
        let fwd = verlet_step(m, &s, h).unwrap();
        let back = verlet_step(m, &negate_velocities(&fwd), h).unwrap();
        prop_assert!(state_distance(&negate_velocities(&back), &s) <= 1e-9);
    }

    #[test]
    fn cached_gradients_match_naive_steps(seed in any::<u64>(), which in 0usize..4, steps in 0u64..40) {
        let models = builtin_models(2);
        let m = models[which].1.as_ref();
        let mut rng = RngStream::new(seed);
        let s0 = random_state(m, 4, 1.0, &mut rng);
        let params = ChainParams::new(0.05, 1.0, steps, seed).unwrap();
        let cached = run_chain(m, &s0, &params, &mut [], &mut RngStream::new(seed)).unwrap();
        let mut naive = s0.clone();
        let mut noise = RngStream::new(seed);
        for _ in 0..steps {
            naive = kernel_step(m, &naive, &params, &mut noise).unwrap();
        }
        prop_assert_eq!(bits(cached.positions.as_slice()), bits(naive.positions.as_slice()));
        prop_assert_eq!(bits(cached.velocities.as_slice()), bits(naive.velocities.as_slice()));
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), which in 0usize..4) {
        let models = builtin_models(1);
        let m = models[which].1.as_ref();
        let s0 = random_state(m, 3, 1.0, &mut RngStream::new(seed));
        let params = ChainParams::new(0.05, 1.0, 50, seed).unwrap();
        let a = run_chain(m, &s0, &params, &mut [], &mut RngStream::new(seed)).unwrap();
        let b = run_chain(m, &s0, &params, &mut [], &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relabeled_particles_give_relabeled_trajectories(seed in any::<u64>(), which in 0usize..4, n in 2usize..=6) {
        let models = builtin_models(2);
        let m = models[which].1.as_ref();
        let mut rng = RngStream::new(seed);
        let s0 = random_state(m, n, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.index(i + 1));
        }
        let params = ChainParams::new(0.05, 1.0, 30, seed).unwrap();
        let streams = ParticleStreams::new(seed, n);
        let a = run_chain(m, &s0, &params, &mut [], &mut streams.clone()).unwrap();
        let b = run_chain(m, &s0.permuted(&perm), &params, &mut [], &mut streams.permuted(&perm)).unwrap();
        prop_assert_eq!(a.permuted(&perm), b);
    }

    #[test]
    fn torus_positions_stay_in_unit_cube(seed in any::<u64>(), d in 1usize..=3) {
        let models = builtin_models(d);
        let m = models[2].1.as_ref();
        let s0 = random_state(m, 4, 3.0, &mut RngStream::new(seed));
        let params = ChainParams::new(0.1, 1.0, 100, seed).unwrap();
        let s = run_chain(m, &s0, &params, &mut [], &mut RngStream::new(seed)).unwrap();
        prop_assert!(s.positions.as_slice().iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn divergences_are_consistent(
        a in prop::collection::vec(0.0f64..1.0, 12),
        b in prop::collection::vec(0.01f64..1.0, 12),
        c in prop::collection::vec(0.01f64..1.0, 12),
    ) {
        prop_assume!(a.iter().sum::<f64>() > 0.0);
        let (p, q, r) = (normalized(&a), normalized(&b), normalized(&c));
        let (kl, inf) = discrete_divergence(&p, &q, DivergenceKind::Kl);
        let (tv, _) = discrete_divergence(&p, &q, DivergenceKind::Tv);
        prop_assert!(!inf && kl >= 0.0);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert!(tv <= (kl / 2.0).sqrt() + 1e-12);
        let (tv_pr, _) = discrete_divergence(&p, &r, DivergenceKind::Tv);
        let (tv_rq, _) = discrete_divergence(&r, &q, DivergenceKind::Tv);
        prop_assert!(tv <= tv_pr + tv_rq + 1e-12);
    }

    #[test]
    fn entropy_bound_decreases_in_n(gamma in 0.1f64..3.0, rho in 0.1f64..5.0, h in 0.001f64..0.1, h0 in 0.0f64..10.0, i0 in 0.0f64..10.0) {
        let tc = contraction_constants(gamma, rho, 1.0).unwrap().with_delta_n(0.3).unwrap();
        let limit = tc.delta_n / tc.rho + tc.c2 * 4.0 * h.powi(4);
        let mut prev = f64::INFINITY;
        for n in (0..10_000u64).step_by(97) {
            let b = entropy_bound(n, 4, 1, h, h0, i0, &tc);
            prop_assert!(b <= prev && b >= limit * (1.0 - 1e-12));
            prev = b;
        }
        let far = entropy_bound(u64::MAX / 2, 4, 1, h, h0, i0, &tc);
        prop_assert!((far - limit).abs() <= 1e-12 * limit.max(1.0));
    }

    #[test]
    fn lambda0_grows_with_n(gamma in 0.1f64..3.0, r in 0.1f64..4.0, c0 in 0.05f64..1.0, extra in 0.0f64..1.0) {
        let c1 = c0 + extra;
        let mut prev = 0.0;
        for n in [1usize, 2, 5, 10, 100, 10_000] {
            let l = euclidean_lyapunov_constants(gamma, r, c0, c1, n).unwrap();
            prop_assert!(l.alpha <= (c0 / 2.0).sqrt() + 1e-15);
            prop_assert!(l.lambda0 >= prev);
            prev = l.lambda0;
        }
    }

    #[test]
    fn risk_bounds_decrease_in_n(f_sup in 0.0f64..10.0, h in 0.0f64..2.0, tv in 0.0f64..1.0, r in 0.0f64..3.0, eta in 0.0f64..3.0) {
        for mode in [RiskMode::Tv2 { tv }, RiskMode::Entropy { r, eta_n: eta }] {
            let mut prev = f64::INFINITY;
            for n in [1usize, 2, 8, 64, 1000] {
                let b = risk_bounds(f_sup, n, h, mode).unwrap();
                prop_assert!(b <= prev);
                prev = b;
            }
        }
    }

    #[test]
    fn rho_star_below_rho_prime(mmm in 0.0f64..2.0, lam in 0.0f64..0.45, alpha in 0.0f64..1.0, rho_n in 0.5f64..5.0, n in 1usize..1000) {
        let lc = LsiConstants {
            rho_bar: 1.0,
            mmm,
            eps: 0.5,
            lambda_flat: lam,
            alpha_n: alpha,
            alpha_n_prime: alpha,
            lambda_prime: 0.1,
            rho_n,
        };
        let out = lsi_constants(&lc, n, 2).unwrap();
        if let (Some(rs), Some(rp)) = (out.rho_star, out.rho_prime_star) {
            prop_assert!(rs <= rp);
        }
    }
}

#[test]
fn constant_observable_has_zero_risk_for_every_model() {
    for (name, model) in builtin_models(2) {
        let init = if model.space().is_torus() {
            PositionLaw::UniformTorus
        } else {
            PositionLaw::Gaussian {
                mean: 0.0,
                std: 1.0,
                wrap: false,
            }
        };
        let params = ChainParams::new(0.05, 1.0, 20, 5).unwrap();
        let f = Observable::Constant { value: 2.5 };
        let r = quadratic_risk(model.as_ref(), &f, &params, 3, 8, 2.5, &init).unwrap();
        assert_eq!(r.value, 0.0, "{name}");
    }
}
