//! D-vine ordering, estimation, sampling and density.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vinerisk_core::copulas::{empirical_kendall_tau, Family, HDirection, PairCopula, Rotation};
use vinerisk_core::distributions::{norm_cdf, norm_quantile};
use vinerisk_core::dvine::{
    fit_dvine, partial_correlation, sample_conditional, sample_conditional_one, sample_conditional_two,
    sample_unconditional, select_order, DVine,
};
use vinerisk_core::numerics::seeded_rng;

fn std_normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gauss(r: f64) -> PairCopula {
    PairCopula::new(Family::Gaussian, Rotation::R0, &[r]).unwrap()
}

fn indep() -> PairCopula {
    PairCopula::independence()
}

/// Copula data from a Gaussian vector with correlation `corr`, one column per variable.
fn gaussian_copula_data(corr: &DMatrix<f64>, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = corr.nrows();
    let l = corr.clone().cholesky().unwrap().l();
    let mut r = seeded_rng(seed);
    let mut cols = vec![Vec::with_capacity(n); d];
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| std_normal(&mut r)).collect();
        for i in 0..d {
            let x: f64 = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
            cols[i].push(norm_cdf(x));
        }
    }
    cols
}

/// Largest distance between the empirical CDF of `x` and the uniform CDF.
fn ks_uniform(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, u)| (u - i as f64 / n).abs().max(((i + 1) as f64 / n - u).abs()))
        .fold(0.0, f64::max)
}

/// Recursion formula for partial correlations.
fn partial_by_recursion(r: &DMatrix<f64>, a: usize, b: usize, given: &[usize]) -> f64 {
    match given.split_last() {
        None => r[(a, b)],
        Some((&k, rest)) => {
            let ab = partial_by_recursion(r, a, b, rest);
            let ak = partial_by_recursion(r, a, k, rest);
            let bk = partial_by_recursion(r, b, k, rest);
            (ab - ak * bk) / ((1.0 - ak * ak) * (1.0 - bk * bk)).sqrt()
        }
    }
}

fn random_correlation(d: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d + 2, |_, _| std_normal(r));
    let s = &a * a.transpose();
    let scale: Vec<f64> = (0..d).map(|i| s[(i, i)].sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| s[(i, j)] / (scale[i] * scale[j]))
}

#[test]
fn partial_correlation_examples() {
    let zero = DMatrix::<f64>::identity(3, 3);
    assert_eq!(partial_correlation(&zero, 0, 1, &[2]), 0.0);
    let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0]);
    assert!((partial_correlation(&r, 0, 1, &[2]) - 1.0 / 3.0).abs() < 1e-12);
    let mut rng = seeded_rng(4);
    for _ in 0..50 {
        let r = random_correlation(4, &mut rng);
        for (a, b, given) in [(0, 1, vec![2, 3]), (0, 3, vec![1]), (2, 3, vec![0, 1]), (1, 2, vec![])] {
            let (m, rec) = (partial_correlation(&r, a, b, &given), partial_by_recursion(&r, a, b, &given));
            assert!((m - rec).abs() < 1e-10, "{m} vs {rec}");
        }
    }
}

#[test]
fn order_puts_the_most_index_correlated_asset_next_to_the_index() {
    // |rho(A1, I)| = 0.8, |rho(A2, I)| = 0.3
    let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.24, 0.8, 0.24, 1.0, 0.3, 0.8, 0.3, 1.0]);
    let data = gaussian_copula_data(&c, 5000, 1);
    assert_eq!(select_order(&data, 1, None).unwrap(), vec![1, 0, 2]);
}

#[test]
fn order_recovers_a_planted_chain() {
    // X0 - X1 - X2 - I with Markov structure and correlations 0.9 / 0.8 / 0.7
    let (a, b, c) = (0.9, 0.8, 0.7);
    let m = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, a, a * b, a * b * c,
            a, 1.0, b, b * c,
            a * b, b, 1.0, c,
            a * b * c, b * c, c, 1.0,
        ],
    );
    let data = gaussian_copula_data(&m, 5000, 2);
    assert_eq!(select_order(&data, 1, None).unwrap(), vec![0, 1, 2, 3]);
}

#[test]
fn full_cutoff_equals_default() {
    let mut rng = seeded_rng(6);
    for d in 3..7 {
        let data = gaussian_copula_data(&random_correlation(d, &mut rng), 400, d as u64);
        for n_cond in 0..=2 {
            let full = select_order(&data, n_cond, None).unwrap();
            assert_eq!(select_order(&data, n_cond, Some(d - n_cond)).unwrap(), full);
        }
    }
}

#[test]
fn independent_data_mostly_fits_independence() {
    // min-AIC selection over every family and rotation admits some
    // spurious weak edges, so the claim is checked as a rate
    let (reps, mut indep_edges) = (40, 0);
    for rep in 0..reps {
        let mut r = seeded_rng(900 + rep);
        let data: Vec<Vec<f64>> = (0..3).map(|_| (0..2000).map(|_| r.random_range(0.0..1.0)).collect()).collect();
        let fit = fit_dvine(&data, &[0, 1, 2], 0, &Family::ALL).unwrap();
        indep_edges += fit.vine.edges().iter().flatten().filter(|c| c.family() == Family::Independence).count();
        assert!(fit.vine.edges().iter().flatten().all(|c| c.kendall_tau().abs() < 0.05), "{:?}", fit.vine);
    }
    let rate = indep_edges as f64 / (3 * reps) as f64;
    println!("independence selected on {rate:.3} of edges");
    assert!(rate >= 0.5, "independence selected on {rate:.3} of edges");
}

#[test]
fn single_asset_with_index_has_one_edge() {
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let data = gaussian_copula_data(&c, 500, 3);
    let fit = fit_dvine(&data, &[0, 1], 1, &Family::ALL).unwrap();
    assert_eq!(fit.vine.edges().len(), 1);
    assert_eq!(fit.vine.edges()[0].len(), 1);
}

fn three_dim_truth() -> DVine {
    let clayton = PairCopula::new(Family::Clayton, Rotation::R0, &[1.0]).unwrap();
    DVine::new(vec![0, 1, 2], 0, vec![vec![gauss(0.6), gauss(0.6)], vec![clayton]]).unwrap()
}

#[test]
fn fit_recovers_a_known_vine() {
    let truth = three_dim_truth();
    let data = sample_unconditional(&truth, 5000, 17);
    let fit = fit_dvine(&data, &[0, 1, 2], 0, &Family::ALL).unwrap();
    for (t, tree) in truth.edges().iter().enumerate() {
        for (i, c) in tree.iter().enumerate() {
            let got = fit.vine.edge(t + 1, i).kendall_tau();
            assert!((got - c.kendall_tau()).abs() < 0.05, "edge ({}, {i}): {got} vs {}", t + 1, c.kendall_tau());
        }
    }
}

#[test]
fn unconditional_samples_match_the_edges() {
    let vine = DVine::new(vec![0, 1, 2], 0, vec![vec![gauss(0.7), gauss(-0.4)], vec![gauss(0.3)]]).unwrap();
    let n = 100_000;
    let cols = sample_unconditional(&vine, n, 5);
    for (i, c) in vine.edges()[0].iter().enumerate() {
        let tau = empirical_kendall_tau(&cols[i], &cols[i + 1]).unwrap();
        assert!((tau - c.kendall_tau()).abs() < 0.02);
    }
    // 1% critical value of the Kolmogorov distribution
    let crit = 1.6276 / (n as f64).sqrt();
    for c in &cols {
        assert!(ks_uniform(c) < crit);
    }
    assert_eq!(cols, sample_unconditional(&vine, n, 5));
}

#[test]
fn density_integrates_to_one() {
    let vine = three_dim_truth();
    let m = 40;
    let mut mass = 0.0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let p = |a: usize| (a as f64 + 0.5) / m as f64;
                // the likelihood needs two rows; use the point twice
                let row = [vec![p(i); 2], vec![p(j); 2], vec![p(k); 2]];
                mass += (0.5 * vine.log_likelihood(&row).unwrap()).exp();
            }
        }
    }
    mass /= (m * m * m) as f64;
    assert!((mass - 1.0).abs() < 2e-2, "mass {mass}");
}

#[test]
fn log_likelihood_special_cases() {
    let mut r = seeded_rng(12);
    let data: Vec<Vec<f64>> = (0..3).map(|_| (0..50).map(|_| r.random_range(0.01..0.99)).collect()).collect();
    let iv = DVine::new(vec![2, 0, 1], 0, vec![vec![indep(), indep()], vec![indep()]]).unwrap();
    assert_eq!(iv.log_likelihood(&data).unwrap(), 0.0);
    let g = gauss(0.45);
    let two = DVine::new(vec![0, 1], 0, vec![vec![g]]).unwrap();
    let direct: f64 = data[0].iter().zip(&data[1]).map(|(a, b)| g.log_density(*a, *b)).sum();
    assert!((two.log_likelihood(&data[..2]).unwrap() - direct).abs() < 1e-10);
}

#[test]
fn conditional_sampling_of_independence_vines_returns_uniforms() {
    let v1 = DVine::new(vec![0, 1, 2], 1, vec![vec![indep(), indep()], vec![indep()]]).unwrap();
    let a = sample_conditional_one(&v1, 0.1, 300, 4).unwrap();
    let b = sample_conditional_one(&v1, 0.9, 300, 4).unwrap();
    assert_eq!(a, b);
    let v2 = DVine::new(vec![0, 1, 2], 2, vec![vec![indep(), indep()], vec![indep()]]).unwrap();
    let c = sample_conditional_two(&v2, 0.3, 0.7, 300, 4).unwrap();
    assert_eq!(c, sample_conditional_two(&v2, 0.6, 0.1, 300, 4).unwrap());
}

#[test]
fn single_conditional_reference_point() {
    let v = DVine::new(vec![0, 1], 1, vec![vec![gauss(0.5)]]).unwrap();
    // the h-inverse of w = 0.5 given 0.5 is 0.5 for any Gaussian edge; check by inverting
    let mut out = [0.0; 2];
    v.inverse_rosenblatt(&[0.5, 0.0], &[0.5], &mut out);
    assert!((out[0] - 0.5).abs() < 1e-12);
    // and the general closed form rho * z_cond + sqrt(1 - rho^2) * z_w
    v.inverse_rosenblatt(&[0.2, 0.0], &[0.7], &mut out);
    let z = 0.5 * norm_quantile(0.7) + 0.75f64.sqrt() * norm_quantile(0.2);
    assert!((out[0] - norm_cdf(z)).abs() < 1e-9);
}

#[test]
fn two_index_sampler_collapses_to_one_index() {
    // asset edge Gaussian, both index edges independence
    let two = DVine::new(vec![0, 1, 2], 2, vec![vec![gauss(0.5), indep()], vec![indep()]]).unwrap();
    let one = DVine::new(vec![0, 1], 1, vec![vec![gauss(0.5)]]).unwrap();
    let a = sample_conditional_two(&two, 0.3, 0.8, 2000, 21).unwrap();
    let b = sample_conditional_one(&one, 0.3, 2000, 21).unwrap();
    for (x, y) in a[0].iter().zip(&b[0]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn mixing_conditionals_reproduces_the_joint() {
    let vine = DVine::new(
        vec![1, 0, 2],
        1,
        vec![vec![gauss(0.6), PairCopula::new(Family::Gumbel, Rotation::R0, &[1.8]).unwrap()], vec![gauss(0.2)]],
    )
    .unwrap();
    let uncond = sample_unconditional(&vine, 100_000, 1);
    let mut r = seeded_rng(2);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for k in 0..20_000 {
        let u: f64 = r.random_range(0.0..1.0);
        let s = sample_conditional_one(&vine, u.max(1e-12), 5, 100 + k).unwrap();
        a.extend(&s[0]);
        b.extend(&s[1]);
    }
    let mixed = empirical_kendall_tau(&a, &b).unwrap();
    let joint = empirical_kendall_tau(&uncond[0], &uncond[1]).unwrap();
    assert!((mixed - joint).abs() < 0.02, "mixture {mixed} vs joint {joint}");
}

fn edge() -> impl Strategy<Value = PairCopula> {
    prop_oneof![
        (-0.95f64..0.95).prop_map(gauss),
        (0.1f64..6.0).prop_map(|d| PairCopula::new(Family::Clayton, Rotation::R90, &[d]).unwrap()),
        (1.05f64..4.0).prop_map(|d| PairCopula::new(Family::Gumbel, Rotation::R180, &[d]).unwrap()),
        ((-0.9f64..0.9), (2.5f64..20.0)).prop_map(|(r, nu)| PairCopula::new(Family::StudentT, Rotation::R0, &[r, nu]).unwrap()),
        Just(indep()),
    ]
}

fn vine(max_dim: usize) -> impl Strategy<Value = DVine> {
    (2..=max_dim, 0usize..=2)
        .prop_flat_map(|(n, c)| {
            let trees: Vec<_> = (1..n).map(|t| prop::collection::vec(edge(), n - t)).collect();
            (Just(n), Just(c.min(n - 1)), Just((0..n).collect::<Vec<_>>()).prop_shuffle(), trees)
        })
        .prop_map(|(_, c, order, edges)| DVine::new(order, c, edges).unwrap())
}

/// Right-to-left conditional recursion written out with pair-copula calls;
/// also reports whether any argument or result came within 1e-10 of 0 or 1.
fn conditional_recursion(v: &DVine, w: &[f64], fixed: &[f64]) -> (Vec<f64>, bool) {
    let n = v.dim();
    let m = n - v.n_cond();
    let edge = |t: usize, j: usize| v.edge(t, j);
    let mut clamped = false;
    let mut seen = |x: f64| {
        clamped |= x.min(1.0 - x) < 1e-10;
        x
    };
    let mut out = vec![0.0; n];
    out[n - 1] = seen(if m == n { w[n - 1] } else { fixed[n - 1 - m] });
    let mut cond = vec![out[n - 1]];
    for j in (0..n - 1).rev() {
        let depth = n - 1 - j;
        let mut val = vec![0.0; depth + 1];
        if j >= m {
            val[0] = seen(fixed[j - m]);
            for t in 1..=depth {
                val[t] = seen(edge(t, j).h(val[t - 1], cond[t - 1], HDirection::FirstGivenSecond));
            }
        } else {
            val[depth] = seen(w[j]);
            for t in (1..=depth).rev() {
                val[t - 1] = seen(edge(t, j).h_inverse(val[t], cond[t - 1], HDirection::FirstGivenSecond));
            }
        }
        out[j] = val[0];
        let mut next = vec![val[0]];
        for t in 1..=depth {
            next.push(seen(edge(t, j).h(val[t - 1], cond[t - 1], HDirection::SecondGivenFirst)));
        }
        cond = next;
    }
    (out, clamped)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conditional_sampler_is_inverted_by_the_rosenblatt_transform(
        v in vine(6),
        w in prop::collection::vec(0.02f64..0.98, 6),
        fixed in prop::collection::vec(0.02f64..0.98, 2),
    ) {
        let n = v.dim();
        let m = n - v.n_cond();
        let mut out = vec![0.0; n];
        v.inverse_rosenblatt(&w[..n], &fixed[..v.n_cond()], &mut out);
        prop_assert_eq!(&out[m..], &fixed[..v.n_cond()]);
        let (replica, clamped) = conditional_recursion(&v, &w[..n], &fixed[..v.n_cond()]);
        prop_assert_eq!(&out, &replica);
        // the round trip is exact only where no value reaches the
        // [1e-10, 1 - 1e-10] copula-scale clamp
        prop_assume!(!clamped);
        let back = v.rosenblatt(&out);
        for j in 0..m {
            prop_assert!((back[j] - w[j]).abs() < 1e-8, "position {}: {} vs {}", j, back[j], w[j]);
        }
    }

    #[test]
    fn order_is_a_permutation_with_conditioning_rightmost(
        d in 1usize..6,
        n_cond in 0usize..=2,
        cutoff in prop::option::of(1usize..6),
        seed in any::<u64>(),
    ) {
        let mut r = seeded_rng(seed);
        let n = d + n_cond;
        prop_assume!(n >= 2);
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..60).map(|_| r.random_range(0.001..0.999)).collect()).collect();
        let mut order = select_order(&data, n_cond, cutoff).unwrap();
        prop_assert_eq!(order.len(), n);
        let tail: Vec<usize> = order[d..].to_vec();
        let mut cond: Vec<usize> = (d..n).collect();
        let mut t = tail.clone();
        t.sort_unstable();
        cond.sort_unstable();
        prop_assert_eq!(t, cond);
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn conditional_samples_lie_in_the_unit_cube(v in vine(5), u in 0.001f64..0.999, seed in any::<u64>()) {
        let fixed = vec![u; v.n_cond()];
        let s = sample_conditional(&v, &fixed, 50, seed).unwrap();
        prop_assert_eq!(s.len(), v.dim() - v.n_cond());
        prop_assert!(s.iter().flatten().all(|x| *x > 0.0 && *x < 1.0));
    }
}
