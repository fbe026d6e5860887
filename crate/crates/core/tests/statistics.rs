use rand::Rng;
use rand_distr::{Beta, Distribution};

use slotpricing::model::{
    choice_probabilities, sample_transition, CostModel, Instance, MnlParams, Price, TransitionOutcome,
};
use slotpricing::rng::{stream, Domain};
use slotpricing::validation::{bernstein_bound, best_bound, dkw_bound, BernsteinForm, ValidationReport};

/// Upper `1 - alpha` quantile of chi-square with `dof` degrees of freedom,
/// Wilson-Hilferty approximation; `z` is the matching normal quantile.
fn chi_square_quantile(dof: f64, z: f64) -> f64 {
    let c = 2.0 / (9.0 * dof);
    dof * (1.0 - c + z * c.sqrt()).powi(3)
}

const Z_999: f64 = 3.090_232_306_167_813;

#[test]
fn arrivals_follow_the_choice_model() {
    let mnl = MnlParams::new(-2.5087, -0.0766, vec![-1.0305, -0.3591, 0.2, -0.7]).unwrap();
    let inst = Instance::new(
        10,
        3,
        0.8,
        34.53,
        (0.0, 10.0),
        mnl,
        CostModel::from_geometry(0.25, 25.0, 3),
    )
    .unwrap();
    // slot 2 is full, slot 3 is closed
    let x = [0, 1, 3, 2];
    let d = [
        Price::Charge(2.0),
        Price::Charge(7.5),
        Price::Charge(0.0),
        Price::Unavailable,
    ];
    let probs = choice_probabilities(&inst.mnl, &d);
    let mut expected = vec![0.0; inst.n_slots + 1];
    for s in 0..inst.n_slots {
        if x[s] < inst.capacity {
            expected[s + 1] = inst.arrival_rate * probs[s + 1];
        }
    }
    expected[0] = 1.0 - expected.iter().sum::<f64>();

    let draws = 100_000;
    let mut counts = vec![0u64; inst.n_slots + 1];
    let mut rng = stream(7, Domain::Synthetic, 0);
    for _ in 0..draws {
        match sample_transition(&inst, &x, &d, &mut rng).unwrap() {
            TransitionOutcome::NoPurchase => counts[0] += 1,
            TransitionOutcome::Slot(s) => counts[s + 1] += 1,
        }
    }
    assert_eq!(counts[3], 0, "a full slot was booked");
    assert_eq!(counts[4], 0, "a closed slot was booked");
    let mut stat = 0.0;
    let mut cells = 0;
    for (c, p) in counts.iter().zip(&expected) {
        if *p > 0.0 {
            let e = p * draws as f64;
            stat += (*c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    let limit = chi_square_quantile((cells - 1) as f64, Z_999);
    assert!(stat < limit, "chi-square {stat} above {limit}");
}

/// `int_0^inf max(0, 1 - F(l) - eps) dl` by the midpoint rule on a uniform
/// grid.
fn dkw_by_quadrature(samples: &[f64], alpha: f64, upper: f64, h: f64) -> f64 {
    let k = samples.len() as f64;
    let eps = ((1.0 / alpha).ln() / (2.0 * k)).sqrt();
    let steps = (upper / h).round() as usize;
    let mut total = 0.0;
    for i in 0..steps {
        let l = (i as f64 + 0.5) * h;
        let cdf = samples.iter().filter(|&&v| v <= l).count() as f64 / k;
        total += (1.0 - cdf - eps).max(0.0) * h;
    }
    total
}

#[test]
fn dkw_matches_numerical_integration() {
    let upper = 50.0;
    let h = 1e-4 * upper;
    let mut rng = stream(11, Domain::Synthetic, 1);
    for case in 0..5 {
        let k = 20 + 40 * case;
        // samples on the grid, so the integrand is constant on every cell
        let samples: Vec<f64> = (0..k).map(|_| rng.random_range(0..=10_000u32) as f64 * h).collect();
        let exact = dkw_bound(&samples, 0.05).unwrap();
        let numeric = dkw_by_quadrature(&samples, 0.05, upper, h);
        assert!(
            (exact - numeric).abs() <= 1e-6 * upper,
            "case {case}: {exact} vs {numeric}"
        );
    }
}

fn naive_bernstein(samples: &[f64], lo: f64, hi: f64, alpha: f64) -> f64 {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let mut ss = 0.0;
    for v in samples {
        ss += (v - mean) * (v - mean);
    }
    let sigma = (ss / (k - 1.0)).sqrt();
    let log = (2.0 / alpha).ln();
    mean - (2.0 * sigma * log / k).sqrt() - 7.0 * (hi - lo) * log / (3.0 * (k - 1.0))
}

/// Sum of `max(0, P(V > v_(j)) estimate - eps)` over the gaps between order
/// statistics, written independently of the library's loop.
fn naive_dkw(samples: &[f64], alpha: f64) -> f64 {
    let k = samples.len();
    let eps = ((1.0 / alpha).ln() / (2.0 * k as f64)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut points = vec![0.0];
    points.extend(sorted.iter().copied());
    let mut total = 0.0;
    for j in 1..points.len() {
        let above = (k - (j - 1)) as f64 / k as f64;
        total += (points[j] - points[j - 1]) * (above - eps).max(0.0);
    }
    total
}

#[test]
fn bounds_match_brute_force_recomputation() {
    let mut rng = stream(3, Domain::Synthetic, 2);
    for case in 0..100 {
        let k = rng.random_range(2..400);
        let hi = rng.random_range(1.0..5000.0);
        let alpha = rng.random_range(0.001..0.2);
        let samples: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..hi)).collect();
        let b = bernstein_bound(&samples, 0.0, hi, alpha).unwrap();
        let nb = naive_bernstein(&samples, 0.0, hi, alpha);
        assert!((b - nb).abs() <= 1e-9 * nb.abs().max(1.0), "case {case}: {b} vs {nb}");
        let d = dkw_bound(&samples, alpha).unwrap();
        let nd = naive_dkw(&samples, alpha);
        assert!((d - nd).abs() <= 1e-9 * nd.abs().max(1.0), "case {case}: {d} vs {nd}");
    }
}

/// Fraction of experiments whose best bound stays below the true mean.
fn coverage(experiments: usize, k: usize, alpha: f64, seed: u64) -> f64 {
    // profit-like scale: Beta(2, 5) stretched to [0, 200], support [0, 250]
    let dist = Beta::new(2.0, 5.0).unwrap();
    let scale = 200.0;
    let upper = 250.0;
    let truth = scale * 2.0 / 7.0;
    let mut covered = 0;
    for e in 0..experiments {
        let mut rng = stream(seed, Domain::Synthetic, 1000 + e as u64);
        let samples: Vec<f64> = (0..k).map(|_| scale * dist.sample(&mut rng)).collect();
        let report = ValidationReport::from_samples(samples, 0.0, upper, alpha, BernsteinForm::Verbatim).unwrap();
        if report.bound_best <= truth {
            covered += 1;
        }
    }
    covered as f64 / experiments as f64
}

#[test]
fn best_bound_covers_the_mean() {
    let rate = coverage(2000, 100, 0.01, 0);
    assert!(rate >= 1.0 - 0.01 - 0.02, "coverage {rate}");
}

#[test]
fn best_bound_is_floored_at_the_support() {
    assert_eq!(best_bound(-5.0, -1.0, 0.0), 0.0);
    assert_eq!(best_bound(3.0, 4.0, 0.0), 4.0);
}
