//! Synthetic data for integration tests.
#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn std_normal(r: &mut ChaCha8Rng) -> f64 {
    // Box–Muller keeps the generator independent of the library's quantiles
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn phi_inv(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// One-factor Gaussian panel: `d` assets loading `rho` on an index.
/// Returns `(assets, index)` in log-return units.
pub fn factor_panel(seed: u64, t: usize, d: usize, rho: f64, scale: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng(seed);
    let mut assets = vec![Vec::with_capacity(t); d];
    let mut index = Vec::with_capacity(t);
    let s = (1.0 - rho * rho).sqrt();
    for _ in 0..t {
        let f = std_normal(&mut r);
        index.push(scale * f);
        for a in assets.iter_mut() {
            a.push(scale * (rho * f + s * std_normal(&mut r)));
        }
    }
    (assets, index)
}

/// Equicorrelated Gaussian columns with correlation `rho`.
pub fn equicorrelated(seed: u64, t: usize, d: usize, rho: f64, scale: f64) -> Vec<Vec<f64>> {
    let (mut a, _) = factor_panel(seed, t, d, rho.sqrt(), scale);
    a.truncate(d);
    a
}

pub fn write_panel(path: &Path, names: &[&str], cols: &[Vec<f64>]) {
    let mut f = std::fs::File::create(path).unwrap();
    write!(f, "date").unwrap();
    for n in names {
        write!(f, ",{n}").unwrap();
    }
    writeln!(f).unwrap();
    for t in 0..cols[0].len() {
        write!(f, "{}", chrono_like_date(t)).unwrap();
        for c in cols {
            write!(f, ",{}", c[t]).unwrap();
        }
        writeln!(f).unwrap();
    }
}

/// ISO date `t` days after 2000-01-01 (proleptic Gregorian).
pub fn chrono_like_date(t: usize) -> String {
    let mut days = t as i64;
    let mut y = 2000;
    loop {
        let len = if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 { 366 } else { 365 };
        if days < len {
            break;
        }
        days -= len;
        y += 1;
    }
    let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let months = [31, if leap { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let mut m = 0;
    while days >= months[m] {
        days -= months[m];
        m += 1;
    }
    format!("{y:04}-{:02}-{:02}", m + 1, days + 1)
}
