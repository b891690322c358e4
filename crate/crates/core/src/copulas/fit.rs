//! Maximum-likelihood selection of a pair copula by AIC.

use rayon::prelude::*;
use serde::Serialize;

use super::families::{self, gaussian_ln_pdf, student_ln_pdf, t_ln_const};
use super::{Family, PairCopula, Rotation};
use crate::distributions::{norm_quantile, t_quantile};
use crate::error::{invalid, Error, Result};
use crate::numerics::{bisect_increasing, brent_minimize, nelder_mead};

/// One evaluated (family, rotation) candidate.
#[derive(Debug, Clone, Serialize)]
pub struct FitCandidate {
    pub family: Family,
    pub rotation: Rotation,
    pub params: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
}

/// Outcome of pair-copula selection.
#[derive(Debug, Clone)]
pub struct PairFit {
    pub copula: PairCopula,
    pub loglik: f64,
    pub aic: f64,
    pub n_obs: usize,
    /// Every candidate that produced a finite likelihood, in evaluation order.
    pub candidates: Vec<FitCandidate>,
    /// Candidates skipped because estimation failed.
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Kendall's tau (Knight's O(n log n) algorithm, tau-b)
// ---------------------------------------------------------------------------

/// Sample Kendall's tau-b.
pub fn empirical_kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return invalid("Kendall's tau needs samples of equal length");
    }
    let n = x.len();
    if n < 2 {
        return invalid("Kendall's tau needs at least two observations");
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n * (n - 1) / 2) as f64;
    let mut n1 = 0.0; // ties in x
    let mut n3 = 0.0; // joint ties
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        n1 += t * (t - 1.0) / 2.0;
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && pairs[l].1 == pairs[k].1 {
                l += 1;
            }
            let u = (l - k) as f64;
            n3 += u * (u - 1.0) / 2.0;
            k = l;
        }
        i = j;
    }

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as f64;

    let mut n2 = 0.0; // ties in y (ys now sorted)
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        n2 += t * (t - 1.0) / 2.0;
        i = j;
    }
    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((n0 - n1 - n2 + n3 - 2.0 * swaps) / denom)
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = v[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = v[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&buf[..n]);
    swaps
}

// ---------------------------------------------------------------------------
// Starting values
// ---------------------------------------------------------------------------

/// Parameter of a one-parameter family matching a (non-negative for
/// rotated families) Kendall's tau, clipped to the estimation box.
fn tau_inversion(family: Family, tau: f64) -> [f64; 2] {
    let b = family.fit_bounds();
    let clip = |v: f64, k: usize| v.clamp(b[k].0, b[k].1);
    let t = tau.abs().min(0.95);
    match family {
        Family::Independence => [0.0, 0.0],
        Family::Gaussian => [clip((std::f64::consts::FRAC_PI_2 * tau).sin(), 0), 0.0],
        Family::StudentT => [clip((std::f64::consts::FRAC_PI_2 * tau).sin(), 0), 8.0],
        Family::Clayton => [clip(2.0 * t / (1.0 - t), 0), 0.0],
        Family::Gumbel => [clip(1.0 / (1.0 - t), 0), 0.0],
        Family::Frank => {
            if tau.abs() < 1e-6 {
                return [1e-3, 0.0];
            }
            let tau_of = |d: f64| families::kendall_tau(Family::Frank, [d, 0.0]);
            let d = bisect_increasing(tau_of, t, 1e-4, 35.0, 1e-6, 100);
            [if tau < 0.0 { -d } else { d }, 0.0]
        }
        Family::Joe => {
            let tau_of = |d: f64| families::kendall_tau(Family::Joe, [d, 0.0]);
            [bisect_increasing(tau_of, t, 1.0, 30.0, 1e-6, 100), 0.0]
        }
        Family::Bb1 => {
            let delta = 1.2;
            [clip(2.0 / (delta * (1.0 - t)) - 2.0, 0).max(0.05), delta]
        }
        Family::Bb7 => [1.2, clip(2.0 * t / (1.0 - t), 1).max(0.05)],
        Family::Bb8 => {
            let tau_of = |d: f64| families::kendall_tau(Family::Joe, [d, 0.0]);
            [clip(bisect_increasing(tau_of, t, 1.0, 8.0, 1e-6, 100) + 0.5, 0), 0.8]
        }
    }
}

/// Candidate starting points for the two-parameter BB families, all with
/// roughly the target tau; `base` comes first.
fn two_parameter_starts(family: Family, tau: f64, base: [f64; 2]) -> Vec<[f64; 2]> {
    let b = family.fit_bounds();
    let clip = |v: f64, k: usize| v.clamp(b[k].0, b[k].1);
    let t = tau.abs().min(0.95);
    let mut out = vec![base];
    match family {
        Family::Bb1 => {
            // tau = 1 - 2 / (delta (theta + 2))
            for delta in [1.5, 2.0, 3.0, 5.0] {
                out.push([clip(2.0 / (delta * (1.0 - t)) - 2.0, 0).max(0.05), delta]);
            }
        }
        Family::Bb7 => {
            let d = clip(2.0 * t / (1.0 - t), 1).max(0.05);
            for theta in [1.6, 2.4, 4.0] {
                out.push([theta, d]);
                out.push([theta, clip(0.5 * d, 1).max(0.05)]);
            }
        }
        Family::Bb8 => {
            for delta in [0.5, 0.95] {
                out.push([base[0], delta]);
                out.push([clip(1.5 * base[0] + 1.0, 0), delta]);
            }
        }
        _ => {}
    }
    out
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

const PAIR_MAX_EVAL: usize = 100;
const PAIR_TOL: f64 = 1e-6;
const Z_WALL: f64 = 14.0;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn to_box(z: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * logistic(z)
}

fn from_box(x: f64, (lo, hi): (f64, f64)) -> f64 {
    let s = ((x - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
    (s / (1.0 - s)).ln()
}

/// Data rotated so that the unrotated density applies.
fn rotate_data(rot: Rotation, u1: &[f64], u2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let flip = |v: &[f64]| v.iter().map(|x| 1.0 - x).collect::<Vec<_>>();
    match rot {
        Rotation::R0 => (u1.to_vec(), u2.to_vec()),
        Rotation::R90 => (flip(u1), u2.to_vec()),
        Rotation::R180 => (flip(u1), flip(u2)),
        Rotation::R270 => (u1.to_vec(), flip(u2)),
    }
}

fn base_loglik(family: Family, p: [f64; 2], a: &[f64], b: &[f64]) -> f64 {
    families::ln_pdf_sum(family, p, a, b)
}

/// Maximise the likelihood of one (family, rotation) pair.
fn fit_candidate(family: Family, rot: Rotation, tau: f64, u1: &[f64], u2: &[f64]) -> Result<FitCandidate> {
    let (a, b) = rotate_data(rot, u1, u2);
    let bounds = family.fit_bounds();
    let start = tau_inversion(family, tau);

    let params: [f64; 2] = match family {
        Family::Independence => [0.0, 0.0],
        Family::Gaussian => {
            let x: Vec<f64> = a.iter().map(|&v| norm_quantile(families::clamp(v))).collect();
            let y: Vec<f64> = b.iter().map(|&v| norm_quantile(families::clamp(v))).collect();
            let nll = |r: f64| -x.iter().zip(&y).map(|(&p, &q)| gaussian_ln_pdf(r, p, q)).sum::<f64>();
            let (r, _) = brent_minimize(nll, bounds[0].0, bounds[0].1, 1e-8, 200);
            [r, 0.0]
        }
        Family::StudentT => {
            // profile likelihood: for each nu the correlation is a cheap 1-d
            // problem once the margins are on the t scale
            let n = a.len();
            let mut x = vec![0.0; n];
            let mut y = vec![0.0; n];
            let mut best = (f64::INFINITY, start[0], 8.0);
            let mut profile = |nu: f64| {
                for i in 0..n {
                    x[i] = t_quantile(families::clamp(a[i]), nu);
                    y[i] = t_quantile(families::clamp(b[i]), nu);
                }
                let lc = t_ln_const(nu);
                let nll = |r: f64| -x.iter().zip(&y).map(|(&p, &q)| student_ln_pdf(r, nu, lc, p, q)).sum::<f64>();
                let (r, f) = brent_minimize(nll, bounds[0].0, bounds[0].1, 1e-7, 100);
                if f < best.0 {
                    best = (f, r, nu);
                }
                f
            };
            brent_minimize(|l| profile(l.exp()), bounds[1].0.ln(), bounds[1].1.ln(), 1e-2, 30);
            [best.1, best.2]
        }
        f if f.n_params() == 1 => {
            let nll = |d: f64| -base_loglik(f, [d, 0.0], &a, &b);
            let (lo, hi) = bounds[0];
            let (lo, hi) = if f == Family::Frank {
                if tau >= 0.0 {
                    (1e-4, hi)
                } else {
                    (lo, -1e-4)
                }
            } else {
                (lo, hi)
            };
            let (d, fd) = brent_minimize(nll, lo, hi, 1e-8, 200);
            let f0 = nll(start[0]);
            if f0 < fd {
                [start[0], 0.0]
            } else {
                [d, 0.0]
            }
        }
        f => {
            // the likelihood ridge follows the tau contour closely, so the
            // simplex starts from the best of a few points spread along it
            let start = two_parameter_starts(f, tau, start)
                .into_iter()
                .map(|p| (base_loglik(f, p, &a, &b), p))
                .filter(|(l, _)| l.is_finite())
                .fold((f64::NEG_INFINITY, start), |best, c| if c.0 > best.0 { c } else { best })
                .1;
            let z0 = [from_box(start[0], bounds[0]), from_box(start[1], bounds[1])];
            let m = nelder_mead(
                |z| {
                    // a wall in z keeps the simplex from drifting along a
                    // saturated coordinate when the optimum sits on a bound
                    if z.iter().any(|v| v.abs() > Z_WALL) {
                        return f64::INFINITY;
                    }
                    -base_loglik(f, [to_box(z[0], bounds[0]), to_box(z[1], bounds[1])], &a, &b)
                },
                &z0,
                &[0.5, 0.5],
                PAIR_MAX_EVAL,
                PAIR_TOL,
            );
            [to_box(m.x[0], bounds[0]), to_box(m.x[1], bounds[1])]
        }
    };

    let copula = PairCopula::new(family, rot, &params[..family.n_params()])?;
    let loglik = if family == Family::Independence {
        0.0
    } else {
        base_loglik(family, params, &a, &b)
    };
    if !loglik.is_finite() {
        return Err(Error::Fit(format!("{} {:?}: non-finite likelihood", family, rot)));
    }
    let k = family.n_params() as f64;
    Ok(FitCandidate {
        family,
        rotation: copula.rotation(),
        params: copula.params().to_vec(),
        loglik,
        aic: -2.0 * loglik + 2.0 * k,
    })
}

/// Select the AIC-minimising pair copula among `families`.
///
/// Independence is always a candidate (AIC 0). Rotatable families are tried
/// at 0°/180° when the sample tau is non-negative and at 90°/270° otherwise.
/// Ties keep the earlier candidate in family order.
pub fn fit_pair(u1: &[f64], u2: &[f64], families: &[Family]) -> Result<PairFit> {
    if u1.len() != u2.len() {
        return invalid("pair data columns differ in length");
    }
    if u1.len() < 2 {
        return invalid("pair copula fitting needs at least two observations");
    }
    if u1.iter().chain(u2).any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("pair data must lie in [0, 1]");
    }
    let tau = empirical_kendall_tau(u1, u2)?;

    let mut list: Vec<(Family, Rotation)> = vec![(Family::Independence, Rotation::R0)];
    let mut fams: Vec<Family> = families.to_vec();
    fams.sort();
    fams.dedup();
    for f in fams {
        if f == Family::Independence {
            continue;
        }
        if f.is_rotatable() {
            if tau >= 0.0 {
                list.push((f, Rotation::R0));
                list.push((f, Rotation::R180));
            } else {
                list.push((f, Rotation::R90));
                list.push((f, Rotation::R270));
            }
        } else {
            list.push((f, Rotation::R0));
        }
    }

    let results: Vec<Result<FitCandidate>> = list
        .par_iter()
        .map(|&(f, r)| fit_candidate(f, r, tau, u1, u2))
        .collect();

    let mut candidates = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for (res, (f, r)) in results.into_iter().zip(&list) {
        match res {
            Ok(c) => candidates.push(c),
            Err(e) => {
                let msg = format!("skipped {} rotation {}: {e}", f, u16::from(*r));
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    let best = candidates
        .iter()
        .fold(None::<&FitCandidate>, |acc, c| match acc {
            Some(b) if b.aic <= c.aic => Some(b),
            _ => Some(c),
        })
        .expect("independence candidate always present");
    let copula = PairCopula::new(best.family, best.rotation, &best.params)?;
    Ok(PairFit {
        copula,
        loglik: best.loglik,
        aic: best.aic,
        n_obs: u1.len(),
        candidates: candidates.clone(),
        warnings,
    })
}
