use proptest::prelude::*;

use slotpricing::cuts::{CutVfa, Hyperplane};
use slotpricing::exact_dp::{bellman_apply, fixed_point, solve_exact};
use slotpricing::model::{choice_probabilities, CostModel, Instance, MnlParams, Price};
use slotpricing::pricing::{bellman_value, solve_with, PriceOracle, StageProblem, StageSolveConfig};
use slotpricing::trainer::{train, Algorithm, TrainConfig};
use slotpricing::validation::dkw_bound;
use slotpricing::value::{ValueFamily, ValueFn};
use slotpricing::vfa_affine::{affine_update, evaluate_affine, AffineVfa, GammaRule, StepSizes};
use slotpricing::vfa_gbdp::{gbdp_update, interpolating_plane, submodularity_check, GbdpCase, GbdpConfig};
use slotpricing::vfa_nlsddp::{lagrangian_cut, BiconcaveSolveConfig, InnerSolver, NlsddpConfig};

fn newton() -> PriceOracle {
    PriceOracle::Newton(StageSolveConfig::default())
}

prop_compose! {
    fn mnl(max_slots: usize)(n in 1..=max_slots)(
        beta_c in -3.0..0.5f64,
        beta_d in -0.4..-0.02f64,
        beta_s in prop::collection::vec(-2.0..1.0f64, n),
    ) -> MnlParams {
        MnlParams::new(beta_c, beta_d, beta_s).unwrap()
    }
}

prop_compose! {
    fn instance(max_slots: usize, max_cap: u32, max_horizon: usize)(
        mnl in mnl(max_slots),
        capacity in 1..=max_cap,
        horizon in 1..=max_horizon,
        lambda in 0.1..1.0f64,
        revenue in 5.0..50.0f64,
        high in 2.0..15.0f64,
    ) -> Instance {
        let cost = CostModel::from_geometry(0.25, 25.0, capacity);
        Instance::new(horizon, capacity, lambda, revenue, (0.0, high), mnl, cost).unwrap()
    }
}

/// An instance together with stage margins, some slots blocked.
fn stage_case(max_slots: usize) -> impl Strategy<Value = (Instance, Vec<Option<f64>>)> {
    instance(max_slots, 3, 2).prop_flat_map(|inst| {
        let n = inst.n_slots;
        let margins = prop::collection::vec(prop::option::weighted(0.85, -20.0..60.0f64), n);
        (Just(inst), margins)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_normalise((mnl, d) in mnl(6).prop_flat_map(|m| {
        let n = m.n_slots();
        (Just(m), prop::collection::vec(prop::option::weighted(0.8, 0.0..20.0f64), n))
    })) {
        let prices: Vec<Price> = d.iter().map(|p| p.map_or(Price::Unavailable, Price::Charge)).collect();
        let probs = choice_probabilities(&mnl, &prices);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&p| p >= 0.0));
        for (s, p) in prices.iter().enumerate() {
            if !p.is_available() {
                prop_assert_eq!(probs[s + 1], 0.0);
            }
        }
    }

    #[test]
    fn raising_a_charge_moves_demand_away(
        (mnl, d, s, bump) in mnl(5).prop_flat_map(|m| {
            let n = m.n_slots();
            (Just(m), prop::collection::vec(0.0..10.0f64, n), 0..n, 0.01..5.0f64)
        })
    ) {
        let before: Vec<Price> = d.iter().map(|&c| Price::Charge(c)).collect();
        let mut after = before.clone();
        after[s] = Price::Charge(d[s] + bump);
        let p0 = choice_probabilities(&mnl, &before);
        let p1 = choice_probabilities(&mnl, &after);
        prop_assert!(p1[s + 1] < p0[s + 1]);
        for j in 0..p0.len() {
            if j != s + 1 {
                prop_assert!(p1[j] > p0[j]);
            }
        }
    }

    #[test]
    fn returned_charges_respect_the_box((inst, margins) in stage_case(4)) {
        let sol = solve_with(&StageProblem::new(&inst, margins.clone()), &newton());
        for (p, m) in sol.prices.iter().zip(&margins) {
            if let Some(c) = p.charge() {
                prop_assert!(m.is_some());
                prop_assert!(c >= inst.price_low && c <= inst.price_high, "{c}");
            }
        }
    }

    #[test]
    fn small_perturbations_never_improve((inst, margins) in stage_case(4)) {
        let problem = StageProblem::new(&inst, margins);
        let sol = solve_with(&problem, &newton());
        let base = problem.objective(&sol.prices);
        prop_assert!((base - sol.objective).abs() <= 1e-9 * (1.0 + base.abs()));
        for s in 0..inst.n_slots {
            let Some(c) = sol.prices[s].charge() else { continue };
            for delta in [-0.01, 0.01] {
                let moved = (c + delta).clamp(inst.price_low, inst.price_high);
                let mut d = sol.prices.0.clone();
                d[s] = Price::Charge(moved);
                prop_assert!(problem.objective(&d) <= base + 1e-9, "slot {s} delta {delta}");
            }
        }
    }

    #[test]
    fn exact_values_stay_below_the_fixed_point(inst in instance(2, 2, 3)) {
        let table = solve_exact(&inst, &newton()).unwrap();
        for t in 1..=inst.horizon {
            for x in inst.state_space().iter() {
                let bound = fixed_point(&inst, &x);
                prop_assert!(table.value(t, &x) <= bound + 1e-9 * (1.0 + bound.abs()));
            }
        }
    }

    #[test]
    fn dkw_scales_with_the_samples(
        samples in prop::collection::vec(0.0..100.0f64, 1..200),
        scale in 0.01..50.0f64,
        alpha in 0.001..0.3f64,
    ) {
        let scaled: Vec<f64> = samples.iter().map(|v| v * scale).collect();
        let a = dkw_bound(&samples, alpha).unwrap() * scale;
        let b = dkw_bound(&scaled, alpha).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn newton_matches_a_fine_grid((inst, margins) in stage_case(3)) {
        let problem = StageProblem::new(&inst, margins);
        let fast = solve_with(&problem, &newton());
        let slow = solve_with(&problem, &PriceOracle::Grid { points: 201 });
        prop_assert!(
            (fast.objective - slow.objective).abs() <= 1e-3 * (1.0 + fast.objective.abs()),
            "newton {} grid {}", fast.objective, slow.objective
        );
        prop_assert!(fast.objective >= slow.objective - 1e-9 * (1.0 + slow.objective.abs()));
    }

    #[test]
    fn bellman_operator_is_monotone(
        (inst, low, bump) in instance(2, 2, 1).prop_flat_map(|inst| {
            let size = inst.state_space().len() as usize;
            (
                Just(inst),
                prop::collection::vec(-100.0..100.0f64, size),
                prop::collection::vec(0.0..20.0f64, size),
            )
        })
    ) {
        let space = inst.state_space();
        let high: Vec<f64> = low.iter().zip(&bump).map(|(a, b)| a + b).collect();
        for x in space.iter() {
            let (a, _) = bellman_apply(&inst, |y| low[space.index(y)], &x, &newton()).unwrap();
            let (b, _) = bellman_apply(&inst, |y| high[space.index(y)], &x, &newton()).unwrap();
            prop_assert!(a <= b + 1e-9 * (1.0 + b.abs()), "{a} > {b} at {x}");
        }
    }

    #[test]
    fn affine_step_is_the_gradient_of_the_squared_error(
        gamma0 in -100.0..100.0f64,
        gamma in prop::collection::vec(-50.0..50.0f64, 3),
        theta in -5.0..5.0f64,
        x in prop::collection::vec(0u32..=4, 3),
        t in 1usize..=6,
        target in -200.0..200.0f64,
    ) {
        let steps = StepSizes { gamma_rule: GammaRule::Gradient, ..StepSizes::default() };
        let cost = CostModel::from_geometry(0.25, 25.0, 4);
        let v = AffineVfa::new(gamma0, gamma.clone(), theta, steps, 6, cost.clone()).unwrap();
        let e = evaluate_affine(&v, t, &x) - target;
        let u = affine_update(&v, t, &x, e);

        let loss = |p: &[f64]| {
            let w = AffineVfa::new(p[0], p[1..4].to_vec(), p[4], steps, 6, cost.clone()).unwrap();
            0.5 * (evaluate_affine(&w, t, &x) - target).powi(2)
        };
        let params = [vec![gamma0], gamma.clone(), vec![theta]].concat();
        let moved = [vec![u.gamma0], u.gamma.clone(), vec![u.theta]].concat();
        let rates = [vec![steps.gamma0], vec![steps.gamma; 3], vec![steps.theta]].concat();
        for i in 0..params.len() {
            let h = 1e-3;
            let mut up = params.clone();
            let mut down = params.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            let step = (params[i] - moved[i]) / rates[i];
            prop_assert!(
                (step - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "coordinate {i}: step {step} vs finite difference {fd}"
            );
        }
    }

    #[test]
    fn gbdp_updates_only_lower_the_approximation(
        (inst, x) in instance(3, 2, 1).prop_flat_map(|inst| {
            let n = inst.n_slots;
            let cap = inst.capacity;
            (Just(inst), prop::collection::vec(0..=cap, n))
        })
    ) {
        let q_next = CutVfa::new(Hyperplane::terminal(&inst.cost, inst.n_slots));
        let mut q = CutVfa::new(Hyperplane::fixed_point(&inst));
        let before: Vec<f64> = inst.state_space().iter().map(|y| q.eval(&y)).collect();
        gbdp_update(&inst, &mut q, &q_next, &x, 1, &GbdpConfig::default()).unwrap();
        for (y, b) in inst.state_space().iter().zip(&before) {
            prop_assert!(q.eval(&y) <= *b);
        }
    }

    #[test]
    fn interpolated_planes_reproduce_the_bellman_image(
        (inst, x) in instance(3, 3, 1).prop_flat_map(|inst| {
            let n = inst.n_slots;
            let cap = inst.capacity;
            (Just(inst), prop::collection::vec(0..cap, n))
        })
    ) {
        let q_next = CutVfa::new(Hyperplane::fixed_point(&inst));
        prop_assert!(submodularity_check(&q_next, &x, inst.capacity));
        let stage = StageSolveConfig::default();
        let plane = interpolating_plane(&inst, &q_next, &x, &stage).unwrap();
        let tq = |y: &[u32]| bellman_value(&inst, |z| q_next.eval(z), y, &newton()).unwrap().0;
        let scale = 1.0 + tq(&x).abs();
        prop_assert!((plane.eval(&x) - tq(&x)).abs() <= 1e-9 * scale);
        for s in 0..inst.n_slots {
            let mut y = x.clone();
            y[s] += 1;
            prop_assert!((plane.eval(&y) - tq(&y)).abs() <= 1e-9 * scale);
        }
        let mut q = CutVfa::new(Hyperplane::fixed_point(&inst));
        let case = gbdp_update(&inst, &mut q, &q_next, &x, 1, &GbdpConfig::default()).unwrap();
        prop_assert_eq!(case, GbdpCase::Interpolated);
    }

    #[test]
    fn lagrangian_cut_passes_through_its_value(
        (inst, x) in instance(2, 2, 1).prop_flat_map(|inst| {
            let n = inst.n_slots;
            let cap = inst.capacity;
            (Just(inst), prop::collection::vec(0..=cap, n))
        }),
        exhaustive in any::<bool>(),
    ) {
        let q_next = CutVfa::new(Hyperplane::terminal(&inst.cost, inst.n_slots));
        let cfg = NlsddpConfig {
            inner: if exhaustive { InnerSolver::Exhaustive(newton()) } else { InnerSolver::Local },
            biconcave: BiconcaveSolveConfig { golden_iters: 30, outer_mu_iters: 2, ..BiconcaveSolveConfig::default() },
            ..NlsddpConfig::default()
        };
        let cut = lagrangian_cut(&inst, &q_next, &x, &cfg).unwrap();
        prop_assert!((cut.plane.eval(&x) - cut.v).abs() <= 1e-9 * (1.0 + cut.v.abs()));
        prop_assert_eq!(cut.plane.certified, exhaustive);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn cut_approximations_never_rise_during_training(
        inst in instance(2, 2, 4),
        seed in any::<u64>(),
        gbdp in any::<bool>(),
    ) {
        let alg = if gbdp { Algorithm::Gbdp } else { Algorithm::Nlsddp };
        let mut cfg = TrainConfig::new(alg, 6, seed);
        cfg.nlsddp.biconcave.golden_iters = 20;
        cfg.nlsddp.biconcave.outer_mu_iters = 1;
        let model = train(&inst, &cfg).unwrap();
        let mut previous: Option<ValueFn> = None;
        for it in 0..=6 {
            let snap = model.snapshot(it);
            if let Some(prev) = &previous {
                for t in 1..=inst.horizon {
                    for x in inst.state_space().iter() {
                        prop_assert!(snap.value(t, &x) <= prev.value(t, &x), "iteration {it} t {t} x {x}");
                    }
                }
            }
            previous = Some(snap);
        }
    }
}
