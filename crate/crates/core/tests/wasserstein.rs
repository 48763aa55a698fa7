use mfg_core::rng::StreamRng;
use mfg_core::wasserstein::rate::Law1d;
use mfg_core::wasserstein::{empirical_rate_experiment, w1_exact, w2, w2_1d, w2_exact, RateConfig};
use mfg_core::{DiscreteMeasure, Sequential};
use proptest::prelude::*;

fn measure(dim: usize) -> impl Strategy<Value = DiscreteMeasure> {
    (1usize..7).prop_flat_map(move |n| {
        (
            proptest::collection::vec(-5.0f64..5.0, n * dim),
            proptest::collection::vec(0.05f64..1.0, n),
        )
            .prop_map(move |(pts, w)| DiscreteMeasure::normalized(dim, pts, w).unwrap())
    })
}

fn pair(dim: usize) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    (measure(dim), measure(dim))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_and_zero_on_diagonal((a, b) in pair(2)) {
        let ab = w2_exact(&a, &b).unwrap();
        let ba = w2_exact(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-10 * (1.0 + ab));
        prop_assert!(w2_exact(&a, &a).unwrap() <= 1e-7);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn triangle_inequality(a in measure(2), b in measure(2), c in measure(2)) {
        let ac = w2_exact(&a, &c).unwrap();
        let ab = w2_exact(&a, &b).unwrap();
        let bc = w2_exact(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn dilation_and_translation((a, b) in pair(2), s in -3.0f64..3.0, dx in -2.0f64..2.0, dy in -2.0f64..2.0) {
        let base = w2_exact(&a, &b).unwrap();
        let dilated = w2_exact(&a.dilate(s), &b.dilate(s)).unwrap();
        prop_assert!((dilated - s.abs() * base).abs() <= 1e-8 * (1.0 + base));
        let shifted = w2_exact(&a.translate(&[dx, dy]), &b.translate(&[dx, dy])).unwrap();
        prop_assert!((shifted - base).abs() <= 1e-8 * (1.0 + base));
    }

    #[test]
    fn one_dimensional_route_agrees((a, b) in pair(1)) {
        let lp = w2_exact(&a, &b).unwrap();
        let q = w2_1d(&a, &b).unwrap();
        prop_assert!((lp - q).abs() <= 1e-10 * (1.0 + lp), "{lp} vs {q}");
        prop_assert_eq!(w2(&a, &b).unwrap(), q);
    }

    #[test]
    fn w1_below_w2((a, b) in pair(2)) {
        prop_assert!(w1_exact(&a, &b).unwrap() <= w2_exact(&a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn dirac_distance_is_euclidean(x in proptest::collection::vec(-4.0f64..4.0, 2), y in proptest::collection::vec(-4.0f64..4.0, 2)) {
        let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let got = w2_exact(&DiscreteMeasure::dirac(&x), &DiscreteMeasure::dirac(&y)).unwrap();
        prop_assert!((got - d).abs() <= 1e-12 * (1.0 + d));
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn exhaustive_permutations_match_exact_solver() {
    let perms = permutations(6);
    assert_eq!(perms.len(), 720);
    let mut rng = StreamRng::new(2024, "test", &[]);
    for _ in 0..50 {
        let xs: Vec<f64> = (0..12).map(|_| 3.0 * rng.normal()).collect();
        let ys: Vec<f64> = (0..12).map(|_| 3.0 * rng.normal() + 1.0).collect();
        let cost = |i: usize, j: usize| (xs[2 * i] - ys[2 * j]).powi(2) + (xs[2 * i + 1] - ys[2 * j + 1]).powi(2);
        let best = perms
            .iter()
            .map(|p| (0..6).map(|i| cost(i, p[i])).sum::<f64>() / 6.0)
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        let a = DiscreteMeasure::uniform(2, xs.clone()).unwrap();
        let b = DiscreteMeasure::uniform(2, ys.clone()).unwrap();
        let got = w2_exact(&a, &b).unwrap();
        assert!((got - best).abs() <= 1e-10, "{got} vs {best}");
    }
}

#[test]
fn random_eight_atom_measures_agree_across_routes() {
    let mut rng = StreamRng::new(8, "test", &[]);
    for _ in 0..50 {
        let pts = |rng: &mut StreamRng| (0..8).map(|_| rng.normal()).collect::<Vec<_>>();
        let wts = |rng: &mut StreamRng| (0..8).map(|_| 0.1 + rng.uniform()).collect::<Vec<_>>();
        let a = DiscreteMeasure::normalized(1, pts(&mut rng), wts(&mut rng)).unwrap();
        let b = DiscreteMeasure::normalized(1, pts(&mut rng), wts(&mut rng)).unwrap();
        let (x, y) = (w2_1d(&a, &b).unwrap(), w2_exact(&a, &b).unwrap());
        assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
    }
}

/// For `U(0,1)` the order statistics are Beta distributed, so
/// `E W_2²(μ_N, U) = Σ_i ∫_{(i-1)/N}^{i/N} [Var X_(i) + (E X_(i) - u)²] du`
/// in closed form.
fn uniform_expected_w2sq(n: usize) -> f64 {
    let nf = n as f64;
    (1..=n)
        .map(|i| {
            let i = i as f64;
            let mean = i / (nf + 1.0);
            let var = i * (nf + 1.0 - i) / ((nf + 1.0).powi(2) * (nf + 2.0));
            let (lo, hi) = ((i - 1.0) / nf, i / nf);
            var / nf + ((mean - lo).powi(3) - (mean - hi).powi(3)) / 3.0
        })
        .sum()
}

#[test]
fn uniform_rate_matches_order_statistics() {
    let cfg = RateConfig {
        ns: vec![4, 16, 64, 256],
        reps: 400,
        seed: 5,
        reference_atoms: 100_000,
    };
    let table = empirical_rate_experiment(&Law1d::Uniform { lo: 0.0, hi: 1.0 }, &cfg, &Sequential).unwrap();
    assert!(table.reference_bias_ok);
    for row in &table.rows {
        let exact = uniform_expected_w2sq(row.n);
        assert!(
            (row.mean_w2sq - exact).abs() <= 3.0 * row.stderr + 1e-6,
            "N={}: {} vs {exact} (stderr {})",
            row.n,
            row.mean_w2sq,
            row.stderr
        );
    }
}

#[test]
fn gaussian_rate_bound() {
    let cfg = RateConfig {
        ns: vec![16, 64, 256, 1024],
        reps: 100,
        seed: 9,
        reference_atoms: 100_000,
    };
    let table = empirical_rate_experiment(&Law1d::Gaussian { mean: 0.0, sd: 1.0 }, &cfg, &Sequential).unwrap();
    assert!(table.bound_holds, "{table:?}");
    assert!(table.slope.unwrap() < -0.4);
}
