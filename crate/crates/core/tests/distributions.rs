//! Properties of the univariate laws.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, StudentsT};
use vinerisk_core::distributions::Univariate;
use vinerisk_core::numerics::{integrate, seeded_rng};

fn law() -> impl Strategy<Value = Univariate> {
    prop_oneof![
        Just(Univariate::Normal),
        (2.5f64..40.0).prop_map(|nu| Univariate::StudentT { nu, standardized: true }),
        (1.0f64..40.0).prop_map(|nu| Univariate::StudentT { nu, standardized: false }),
        (2.5f64..40.0, 0.5f64..2.0).prop_map(|(nu, xi)| Univariate::SkewedStudentT { nu, xi }),
    ]
}

/// `∫ g` over the real line through `x = tan(θ)`, in pieces so the adaptive
/// rule resolves the algebraic tails.
fn integrate_line(g: impl Fn(f64) -> f64) -> f64 {
    let h = std::f64::consts::PI / 64.0;
    (0..64)
        .map(|i| {
            let (a, b) = (-std::f64::consts::FRAC_PI_2 + i as f64 * h, -std::f64::consts::FRAC_PI_2 + (i + 1) as f64 * h);
            integrate(
                |t| {
                    let c = t.cos();
                    g(t.tan()) / (c * c)
                },
                a,
                b,
                1e-13,
            )
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pit_round_trip(d in law(), x in -10.0f64..10.0) {
        let u = d.pit(x).unwrap();
        prop_assert!((1e-10..=1.0 - 1e-10).contains(&u));
        // values clamped at the copula boundary cannot be inverted
        if u > 1e-10 && u < 1.0 - 1e-10 {
            let back = d.inverse_pit(u).unwrap();
            prop_assert!((back - x).abs() <= 1e-6 * x.abs().max(1.0), "{d:?} x {x} back {back}");
        }
    }

    #[test]
    fn quantile_inverts_cdf(d in law(), p in 1e-9f64..(1.0 - 1e-9)) {
        let q = d.quantile(p).unwrap();
        let c = d.cdf(q).unwrap();
        prop_assert!((c - p).abs() <= 1e-8, "{d:?} p {p} q {q} cdf {c}");
    }

    #[test]
    fn cdf_is_monotone(d in law()) {
        let mut prev = 0.0;
        for i in -600..=600 {
            let c = d.cdf(i as f64 * 0.01).unwrap();
            // strictness is only representable while 1 - F is above a few ulps of 1
            prop_assert!(c > prev || prev > 1.0 - 1e-12, "{d:?} not increasing at {}", i as f64 * 0.01);
            prev = c;
        }
        let mut prev = 0.0;
        for i in -500..=500 {
            let c = d.cdf(i as f64 * 0.1).unwrap();
            prop_assert!((0.0..=1.0).contains(&c) && c >= prev);
            prev = c;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn innovation_laws_are_standardised(nu in 3.0f64..40.0, xi in 0.5f64..2.0, skewed in any::<bool>()) {
        let d = if skewed {
            Univariate::SkewedStudentT { nu, xi }
        } else {
            Univariate::StudentT { nu, standardized: true }
        };
        let p = d.prepare().unwrap();
        let mean = integrate_line(|x| x * p.logpdf(x).exp());
        let var = integrate_line(|x| x * x * p.logpdf(x).exp()) - mean * mean;
        prop_assert!(mean.abs() <= 1e-4, "{d:?} mean {mean}");
        prop_assert!((var - 1.0).abs() <= 1e-3, "{d:?} variance {var}");
    }
}

// Reference samplers built from uniforms only.

fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Marsaglia–Tsang gamma variate with unit scale.
fn gamma(r: &mut ChaCha8Rng, k: f64) -> f64 {
    if k < 1.0 {
        let u: f64 = 1.0 - r.random::<f64>();
        return gamma(r, k + 1.0) * u.powf(1.0 / k);
    }
    let d = k - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = normal(r);
        let v = (1.0 + c * z).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = 1.0 - r.random::<f64>();
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn student(r: &mut ChaCha8Rng, nu: f64) -> f64 {
    normal(r) / (2.0 * gamma(r, 0.5 * nu) / nu).sqrt()
}

fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

const N_KS: usize = 100_000;
// asymptotic 1% critical value of the Kolmogorov distribution
const KS_1PCT: f64 = 1.6276;

#[test]
fn pit_of_samples_is_uniform() {
    let mut r = seeded_rng(2024);
    let crit = KS_1PCT / (N_KS as f64).sqrt();

    let d = Univariate::Normal;
    let u: Vec<f64> = (0..N_KS).map(|_| d.pit(normal(&mut r)).unwrap()).collect();
    assert!(ks_uniform(u) < crit);

    for nu in [3.0, 6.5] {
        let d = Univariate::StudentT { nu, standardized: true };
        let scale = ((nu - 2.0) / nu).sqrt();
        let u: Vec<f64> = (0..N_KS).map(|_| d.pit(scale * student(&mut r, nu)).unwrap()).collect();
        let ks = ks_uniform(u);
        assert!(ks < crit, "t({nu}) KS {ks}");
    }

    // Fernández–Steel: a half-t on each side of zero, stretched by xi or 1/xi
    for (nu, xi) in [(5.0, 0.7), (9.0, 1.5)] {
        let d = Univariate::SkewedStudentT { nu, xi };
        let scale = ((nu - 2.0) / nu).sqrt();
        let base = StudentsT::new(0.0, scale, nu).unwrap();
        let abs_mean = 2.0 * integrate_line(|x| if x > 0.0 { x * base.pdf(x) } else { 0.0 });
        let m = abs_mean * (xi - 1.0 / xi);
        let s = (xi * xi - 1.0 + 1.0 / (xi * xi) - m * m).sqrt();
        let right = xi * xi / (1.0 + xi * xi);
        let u: Vec<f64> = (0..N_KS)
            .map(|_| {
                let t = (scale * student(&mut r, nu)).abs();
                let y = if r.random::<f64>() < right { xi * t } else { -t / xi };
                d.pit((y - m) / s).unwrap()
            })
            .collect();
        let ks = ks_uniform(u);
        assert!(ks < crit, "skewed t({nu}, {xi}) KS {ks}");
    }
}

#[test]
fn reference_points() {
    assert_eq!(Univariate::Normal.pit(0.0).unwrap(), 0.5);
    let d = Univariate::SkewedStudentT { nu: 5.0, xi: 1.0 };
    assert!(d.inverse_pit(0.5).unwrap().abs() < 1e-12);
    let d = Univariate::StudentT { nu: 4.0, standardized: false };
    let x = d.inverse_pit(d.pit(1.234).unwrap()).unwrap();
    assert!((x - 1.234).abs() < 1e-10);
    assert!(Univariate::Normal.inverse_pit(0.0).is_err());
}
