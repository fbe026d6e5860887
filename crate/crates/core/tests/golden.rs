//! Reference values computed independently at high precision by
//! `data/gen_golden.py`.

use serde_json::Value;

use slotpricing::exact_dp::fixed_point;
use slotpricing::model::{choice_probabilities, Price, PriceVector};
use slotpricing::pricing::{solve_with, PriceOracle, StageProblem, StageSolveConfig};
use slotpricing::scenario::{derive_geometry, derive_horizon, nominal_config, nominal_instance, restrict_slots};
use slotpricing::validation::bernstein_bound;
use slotpricing::Instance;

fn golden() -> Value {
    serde_json::from_str(include_str!("data/golden.json")).unwrap()
}

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(1.0)
}

#[test]
fn logit_probabilities_at_uniform_charge() {
    let g = golden();
    let want: Vec<f64> = serde_json::from_value(g["mnl_nominal_all_5"].clone()).unwrap();
    let inst = nominal_instance();
    let got = choice_probabilities(&inst.mnl, &PriceVector::uniform(17, Price::Charge(5.0)));
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn cost_and_fixed_point_arithmetic() {
    let g = golden();
    let inst = nominal_instance();
    assert!(close(
        inst.cost.var_cost_per_order,
        g["c_var_cap6"].as_f64().unwrap(),
        1e-15
    ));
    let full = inst.full_state();
    assert!(close(
        inst.cost.total(&full),
        g["full_cost_cap6_n17"].as_f64().unwrap(),
        1e-14
    ));
    let v0 = fixed_point(&inst, &[0; 17]);
    assert!(close(v0, g["fixed_point_zero_cap6_n17"].as_f64().unwrap(), 1e-14));
    let geo = derive_geometry(6, 25.0, 0.25).unwrap();
    assert!(close(geo.var_cost, g["c_var_cap6"].as_f64().unwrap(), 1e-15));
}

#[test]
fn horizon_arithmetic() {
    let g = golden();
    let raw1 = g["horizon_phi1"].as_f64().unwrap();
    let raw8 = g["horizon_phi_eighth"].as_f64().unwrap();
    assert_eq!(derive_horizon(1.0, 17, 6, 0.8), (raw1 + 0.5).floor() as usize);
    assert_eq!(derive_horizon(0.125, 17, 6, 0.8), (raw8 + 0.5).floor() as usize);
}

#[test]
fn two_slot_stage_problem() {
    let g = &golden()["stage_two_slot_grid"];
    let mut cfg = restrict_slots(&nominal_config(), 2).unwrap();
    cfg.capacity = 2;
    cfg.horizon = 3;
    let inst = Instance::from_config(&cfg).unwrap();
    let r = inst.revenue_per_order;
    let problem = StageProblem::new(&inst, vec![Some(r - 5.0), Some(r - 10.0)]);
    let sol = solve_with(&problem, &PriceOracle::Newton(StageSolveConfig::default()));
    let want = g["objective"].as_f64().unwrap();
    // the reference is a 0.001 grid search, so it can only be lower
    assert!(sol.objective >= want - 1e-12);
    assert!(sol.objective - want < 1e-6, "{} vs {want}", sol.objective);
    let prices: Vec<f64> = serde_json::from_value(g["prices"].clone()).unwrap();
    for (p, w) in sol.prices.iter().zip(&prices) {
        assert!((p.charge().unwrap() - w).abs() <= 1e-3);
    }
}

#[test]
fn bernstein_on_uniform_grid() {
    let want = golden()["bernstein_uniform_grid_k1000"].as_f64().unwrap();
    let samples: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
    let got = bernstein_bound(&samples, 0.0, 1.0, 0.01).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}
