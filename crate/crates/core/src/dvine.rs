//! D-vine copulas with the conditioning variables at the right end of the
//! path: ordering heuristic, sequential fitting, likelihood, unconditional
//! and conditional simulation.
//!
//! Positions are numbered left to right from 0. The edge in tree `t`
//! (1-based) at position `i` couples the variables at positions `i` and
//! `i + t` given everything strictly between them; the left variable is the
//! copula's first argument.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copulas::{fit_pair, Family, HDirection, PairCopula};
use crate::distributions::norm_quantile;
use crate::error::{invalid, Error, Result};
use crate::numerics::{derive_seed, open_unit, seeded_rng};

/// Rows simulated per independently seeded shard.
pub const SHARD_ROWS: usize = 512;

/// A fitted D-vine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DVineRepr", try_from = "DVineRepr")]
pub struct DVine {
    order: Vec<usize>,
    n_cond: usize,
    /// `edges[t - 1][i]`: tree `t`, position `i`.
    edges: Vec<Vec<PairCopula>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRepr {
    tree: usize,
    position: usize,
    #[serde(flatten)]
    copula: PairCopula,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DVineRepr {
    order: Vec<usize>,
    n_cond: usize,
    edges: Vec<EdgeRepr>,
}

impl From<DVine> for DVineRepr {
    fn from(v: DVine) -> Self {
        let mut edges = Vec::new();
        for (t, tree) in v.edges.iter().enumerate() {
            for (i, c) in tree.iter().enumerate() {
                edges.push(EdgeRepr {
                    tree: t + 1,
                    position: i + 1,
                    copula: *c,
                });
            }
        }
        DVineRepr {
            order: v.order,
            n_cond: v.n_cond,
            edges,
        }
    }
}

impl TryFrom<DVineRepr> for DVine {
    type Error = Error;

    fn try_from(r: DVineRepr) -> Result<Self> {
        let n = r.order.len();
        let mut slots: Vec<Vec<Option<PairCopula>>> = (1..n).map(|t| vec![None; n - t]).collect();
        for e in r.edges {
            if e.tree == 0 || e.tree >= n || e.position == 0 || e.position > n - e.tree {
                return invalid(format!("edge (tree {}, position {}) out of range", e.tree, e.position));
            }
            slots[e.tree - 1][e.position - 1] = Some(e.copula);
        }
        let edges = slots
            .into_iter()
            .map(|tree| tree.into_iter().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidInput("vine is missing edges".into()))?;
        DVine::new(r.order, r.n_cond, edges)
    }
}

impl DVine {
    pub fn new(order: Vec<usize>, n_cond: usize, edges: Vec<Vec<PairCopula>>) -> Result<Self> {
        let n = order.len();
        check_permutation(&order)?;
        if n < 2 {
            return invalid("a vine needs at least two variables");
        }
        if n_cond >= n {
            return invalid("at least one variable must remain unconditioned");
        }
        if edges.len() != n - 1 || edges.iter().enumerate().any(|(t, e)| e.len() != n - 1 - t) {
            return invalid("edge layout does not match the dimension");
        }
        Ok(DVine { order, n_cond, edges })
    }

    /// Variable identifiers from left to right.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n_cond(&self) -> usize {
        self.n_cond
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    /// Edge in tree `tree` (1-based) at position `pos` (0-based).
    pub fn edge(&self, tree: usize, pos: usize) -> &PairCopula {
        &self.edges[tree - 1][pos]
    }

    pub fn edges(&self) -> &[Vec<PairCopula>] {
        &self.edges
    }

    /// Identifiers of the conditioning variables, left to right.
    pub fn conditioning_ids(&self) -> &[usize] {
        &self.order[self.dim() - self.n_cond..]
    }

    /// Identifiers of the simulated variables in ascending order.
    pub fn free_ids(&self) -> Vec<usize> {
        let mut v = self.order[..self.dim() - self.n_cond].to_vec();
        v.sort_unstable();
        v
    }

    /// Total number of copula parameters.
    pub fn n_params(&self) -> usize {
        self.edges.iter().flatten().map(|c| c.n_params()).sum()
    }

    /// Log-likelihood of column data indexed by variable identifier.
    pub fn log_likelihood(&self, data: &[Vec<f64>]) -> Result<f64> {
        check_data(data, self.dim())?;
        let n = self.dim();
        let mut left: Vec<Vec<f64>> = (0..n - 1).map(|i| data[self.order[i]].clone()).collect();
        let mut right: Vec<Vec<f64>> = (0..n - 1).map(|i| data[self.order[i + 1]].clone()).collect();
        let mut total = 0.0;
        for t in 1..n {
            for i in 0..n - t {
                total += self.edges[t - 1][i].log_likelihood(&left[i], &right[i]);
            }
            if t < n - 1 {
                (left, right) = next_tree(&self.edges[t - 1], &left, &right);
            }
        }
        Ok(total)
    }

    /// Right-to-left Rosenblatt transform of one row given by position:
    /// `w[j] = C(u_j | u_{j+1}, ..., u_{n-1})`.
    pub fn rosenblatt(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut w = vec![0.0; n];
        let mut cond = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        w[n - 1] = u[n - 1];
        cond[0] = u[n - 1];
        for j in (0..n - 1).rev() {
            let depth = n - 1 - j;
            v[0] = u[j];
            for t in 1..=depth {
                v[t] = self.edges[t - 1][j].h(v[t - 1], cond[t - 1], HDirection::FirstGivenSecond);
            }
            w[j] = v[depth];
            self.advance_right(j, &v, &cond, &mut next);
            std::mem::swap(&mut cond, &mut next);
        }
        w
    }

    /// Inverse of [`DVine::rosenblatt`]: positions `>= n - n_cond` take the
    /// fixed values in `fixed` (left to right); the free positions are
    /// produced from the uniforms `w` (indexed by position).
    pub fn inverse_rosenblatt(&self, w: &[f64], fixed: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let m = n - self.n_cond;
        let mut cond = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        self.inverse_rosenblatt_with(w, fixed, out, &mut cond, &mut v, &mut next, m);
    }

    // scratch buffers are swapped, so they must be owned vectors
    #[allow(clippy::too_many_arguments, clippy::ptr_arg)]
    fn inverse_rosenblatt_with(
        &self,
        w: &[f64],
        fixed: &[f64],
        out: &mut [f64],
        cond: &mut Vec<f64>,
        v: &mut Vec<f64>,
        next: &mut Vec<f64>,
        m: usize,
    ) {
        let n = self.dim();
        out[n - 1] = if m == n { w[n - 1] } else { fixed[n - 1 - m] };
        cond[0] = out[n - 1];
        for j in (0..n - 1).rev() {
            let depth = n - 1 - j;
            if j >= m {
                v[0] = fixed[j - m];
                for t in 1..=depth {
                    v[t] = self.edges[t - 1][j].h(v[t - 1], cond[t - 1], HDirection::FirstGivenSecond);
                }
            } else {
                v[depth] = w[j];
                for t in (1..=depth).rev() {
                    v[t - 1] = self.edges[t - 1][j].h_inverse(v[t], cond[t - 1], HDirection::FirstGivenSecond);
                }
            }
            out[j] = v[0];
            if j > 0 {
                self.advance_right(j, v, cond, next);
                std::mem::swap(cond, next);
            }
        }
    }

    /// Update the right frontier after position `j` is known:
    /// `next[t] = C(u_{j+t} | u_j, ..., u_{j+t-1})`.
    #[inline]
    fn advance_right(&self, j: usize, v: &[f64], cond: &[f64], next: &mut [f64]) {
        let depth = self.dim() - 1 - j;
        next[0] = v[0];
        for t in 1..=depth {
            next[t] = self.edges[t - 1][j].h(v[t - 1], cond[t - 1], HDirection::SecondGivenFirst);
        }
    }

    /// Left-to-right simulation of one unconditional row from uniforms `w`
    /// (indexed by position).
    pub fn simulate_row(&self, w: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut cond = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut v = vec![0.0; n];
        simulate_row_with(self, w, out, &mut cond, &mut next, &mut v);
    }
}

#[allow(clippy::ptr_arg)]
fn simulate_row_with(vine: &DVine, w: &[f64], out: &mut [f64], cond: &mut Vec<f64>, next: &mut Vec<f64>, v: &mut Vec<f64>) {
    let n = vine.dim();
    out[0] = w[0];
    cond[0] = w[0];
    for j in 1..n {
        // v[t] = C(u_j | u_{j-t}, ..., u_{j-1})
        v[j] = w[j];
        for t in (1..=j).rev() {
            v[t - 1] = vine.edges[t - 1][j - t].h_inverse(v[t], cond[t - 1], HDirection::SecondGivenFirst);
        }
        out[j] = v[0];
        if j + 1 < n {
            next[0] = v[0];
            for t in 1..=j {
                next[t] = vine.edges[t - 1][j - t].h(cond[t - 1], v[t - 1], HDirection::FirstGivenSecond);
            }
            std::mem::swap(cond, next);
        }
    }
}

fn next_tree(edges: &[PairCopula], left: &[Vec<f64>], right: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = left.len() - 1;
    let new_left: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            left[i]
                .iter()
                .zip(&right[i])
                .map(|(&a, &b)| edges[i].h(a, b, HDirection::FirstGivenSecond))
                .collect()
        })
        .collect();
    let new_right: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            left[i + 1]
                .iter()
                .zip(&right[i + 1])
                .map(|(&a, &b)| edges[i + 1].h(a, b, HDirection::SecondGivenFirst))
                .collect()
        })
        .collect();
    (new_left, new_right)
}

fn check_permutation(order: &[usize]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &o in order {
        if o >= order.len() || seen[o] {
            return invalid(format!("order {:?} is not a permutation of 0..{}", order, order.len()));
        }
        seen[o] = true;
    }
    Ok(())
}

fn check_data(data: &[Vec<f64>], n: usize) -> Result<usize> {
    if data.len() != n {
        return invalid(format!("expected {n} data columns, got {}", data.len()));
    }
    let len = data[0].len();
    if data.iter().any(|c| c.len() != len) {
        return invalid("data columns differ in length");
    }
    if len < 2 {
        return invalid("at least two observations are required");
    }
    if data.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("copula data must lie in [0, 1]");
    }
    Ok(len)
}

// ---------------------------------------------------------------------------
// Ordering
// ---------------------------------------------------------------------------

/// Pearson correlation matrix of normal scores.
fn score_correlation(data: &[Vec<f64>]) -> DMatrix<f64> {
    let n = data.len();
    let len = data[0].len();
    let scores: Vec<Vec<f64>> = data
        .iter()
        .map(|c| {
            let z: Vec<f64> = c.iter().map(|&u| norm_quantile(u.clamp(1e-10, 1.0 - 1e-10))).collect();
            let m = z.iter().sum::<f64>() / len as f64;
            z.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let mut r = DMatrix::<f64>::identity(n, n);
    let norms: Vec<f64> = scores.iter().map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    for a in 0..n {
        for b in a + 1..n {
            let c: f64 = scores[a].iter().zip(&scores[b]).map(|(x, y)| x * y).sum();
            let denom = norms[a] * norms[b];
            let v = if denom > 0.0 { c / denom } else { 0.0 };
            r[(a, b)] = v;
            r[(b, a)] = v;
        }
    }
    r
}

/// Partial correlation of `a` and `b` given `given`, by inverting the
/// correlation submatrix (pseudo-inverse when singular).
pub fn partial_correlation(r: &DMatrix<f64>, a: usize, b: usize, given: &[usize]) -> f64 {
    if given.is_empty() {
        return r[(a, b)];
    }
    let idx: Vec<usize> = [a, b].iter().chain(given).copied().collect();
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |i, j| r[(idx[i], idx[j])]);
    let p = match sub.clone().try_inverse() {
        Some(p) if p.iter().all(|v| v.is_finite()) => p,
        _ => sub.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::zeros(k, k)),
    };
    let d = p[(0, 0)] * p[(1, 1)];
    if d <= 0.0 {
        return 0.0;
    }
    (-p[(0, 1)] / d.sqrt()).clamp(-1.0, 1.0)
}

/// Greedy ordering on normal-score partial correlations.
///
/// `data` holds `d + n_cond` columns; the last `n_cond` are the conditioning
/// variables, which end up at the right of the returned order. `cutoff_depth`
/// limits how many trees each greedy score looks into (default `d + 1`).
pub fn select_order(data: &[Vec<f64>], n_cond: usize, cutoff_depth: Option<usize>) -> Result<Vec<usize>> {
    let n = data.len();
    if n_cond > 2 {
        return invalid("at most two conditioning variables are supported");
    }
    if n < n_cond + 1 || n < 2 {
        return invalid("not enough variables to order");
    }
    check_data(data, n)?;
    let d = n - n_cond;
    let c = cutoff_depth.unwrap_or(d + 1) as isize;
    if c < 1 {
        return invalid("cutoff depth must be at least 1");
    }
    let r = score_correlation(data);

    // seq[off + k] holds j_k; j_0 (and j_{-1}) are the seeds
    let mut seq: Vec<usize> = Vec::with_capacity(n);
    let mut remaining: Vec<usize> = (0..d).collect();
    let off: isize;
    let first_l: isize;
    match n_cond {
        0 => {
            let totals: Vec<f64> = (0..n)
                .map(|a| (0..n).filter(|&b| b != a).map(|b| r[(a, b)].abs()).sum())
                .collect();
            let j0 = argmax(&remaining, |a| totals[a]);
            remaining.retain(|&v| v != j0);
            seq.push(j0);
            off = 0;
            first_l = 1;
        }
        1 => {
            seq.push(d);
            off = 0;
            first_l = 1;
        }
        _ => {
            let (mut best, mut best_v) = ((0, 0), f64::NEG_INFINITY);
            for &a in &remaining {
                for k in 0..2 {
                    let v = r[(a, d + k)].abs();
                    if v > best_v {
                        best_v = v;
                        best = (a, k);
                    }
                }
            }
            let (j1, k1) = best;
            seq.push(d + 1 - k1); // j_{-1}
            seq.push(d + k1); // j_0
            seq.push(j1); // j_1
            remaining.retain(|&v| v != j1);
            off = 1;
            first_l = 2;
        }
    }

    let k_floor: isize = -(n_cond.saturating_sub(1) as isize);
    let mut l = first_l;
    while !remaining.is_empty() {
        let lo = (l - c).max(k_floor);
        let pick = argmax(&remaining, |delta| {
            let mut s = 0.0;
            for k in lo..l {
                let jk = seq[(off + k) as usize];
                let given: Vec<usize> = ((k + 1)..l).map(|q| seq[(off + q) as usize]).collect();
                s += partial_correlation(&r, delta, jk, &given).abs();
            }
            s
        });
        remaining.retain(|&v| v != pick);
        seq.push(pick);
        l += 1;
    }
    seq.reverse();
    Ok(seq)
}

fn argmax(cands: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = cands[0];
    let mut best_v = f64::NEG_INFINITY;
    for &c in cands {
        let v = score(c);
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// A fitted vine together with fit diagnostics.
#[derive(Debug, Clone)]
pub struct DVineFit {
    pub vine: DVine,
    pub loglik: f64,
    pub aic: f64,
    pub warnings: Vec<String>,
}

/// Sequential tree-by-tree maximum-likelihood fit along `order`.
pub fn fit_dvine(data: &[Vec<f64>], order: &[usize], n_cond: usize, families: &[Family]) -> Result<DVineFit> {
    let n = data.len();
    if order.len() != n {
        return invalid("order length does not match the number of data columns");
    }
    check_permutation(order)?;
    check_data(data, n)?;
    if n_cond >= n {
        return invalid("at least one variable must remain unconditioned");
    }

    let mut left: Vec<Vec<f64>> = (0..n - 1).map(|i| data[order[i]].clone()).collect();
    let mut right: Vec<Vec<f64>> = (0..n - 1).map(|i| data[order[i + 1]].clone()).collect();
    let mut edges = Vec::with_capacity(n - 1);
    let mut loglik = 0.0;
    let mut aic = 0.0;
    let mut warnings = Vec::new();
    for t in 1..n {
        let fits: Vec<Result<_>> = (0..n - t)
            .into_par_iter()
            .map(|i| fit_pair(&left[i], &right[i], families))
            .collect();
        let mut tree = Vec::with_capacity(n - t);
        for (i, f) in fits.into_iter().enumerate() {
            let f = f.map_err(|e| Error::Fit(format!("tree {t} edge {}: {e}", i + 1)))?;
            loglik += f.loglik;
            aic += f.aic;
            warnings.extend(f.warnings.into_iter().map(|w| format!("tree {t} edge {}: {w}", i + 1)));
            tree.push(f.copula);
        }
        if t < n - 1 {
            (left, right) = next_tree(&tree, &left, &right);
        }
        edges.push(tree);
    }
    Ok(DVineFit {
        vine: DVine::new(order.to_vec(), n_cond, edges)?,
        loglik,
        aic,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

fn shards(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(SHARD_ROWS))
        .map(|k| (k * SHARD_ROWS, ((k + 1) * SHARD_ROWS).min(n)))
        .collect()
}

/// Collect per-position rows into columns indexed by variable identifier,
/// keeping only the free variables.
fn to_columns(vine: &DVine, rows: Vec<Vec<f64>>, n: usize) -> Vec<Vec<f64>> {
    let free = vine.free_ids();
    let pos_of: Vec<usize> = free
        .iter()
        .map(|id| vine.order.iter().position(|o| o == id).expect("id in order"))
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); free.len()];
    for row in &rows {
        for (c, &p) in pos_of.iter().enumerate() {
            cols[c].push(row[p]);
        }
    }
    cols
}

/// Draw `n` rows from the unconditional vine.
///
/// Returns one column per variable, indexed by identifier. Rows are
/// generated in shards with seeds derived from `(seed, shard)`, so the
/// result does not depend on the number of worker threads.
pub fn sample_unconditional(vine: &DVine, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = vine.dim();
    let rows: Vec<Vec<f64>> = shards(n)
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(k, (a, b))| {
            let mut rng = seeded_rng(derive_seed(seed, &[k as u64]));
            let mut w = vec![0.0; dim];
            let (mut c1, mut c2, mut c3) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
            (a..b)
                .map(|_| {
                    w.iter_mut().for_each(|x| *x = open_unit(&mut rng));
                    let mut out = vec![0.0; dim];
                    simulate_row_with(vine, &w, &mut out, &mut c1, &mut c2, &mut c3);
                    out
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut v = vine.clone();
    v.n_cond = 0;
    to_columns(&v, rows, n)
}

/// Draw `n` rows of the free variables given the conditioning values
/// `fixed` (copula scale, left to right over the conditioning positions).
///
/// Returns one column per free variable in ascending identifier order.
pub fn sample_conditional(vine: &DVine, fixed: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if fixed.len() != vine.n_cond {
        return invalid(format!("expected {} conditioning values, got {}", vine.n_cond, fixed.len()));
    }
    if fixed.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
        return Err(Error::Domain(format!("conditioning values {:?} must lie in (0, 1)", fixed)));
    }
    let dim = vine.dim();
    let m = dim - vine.n_cond;
    let rows: Vec<Vec<f64>> = shards(n)
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(k, (a, b))| {
            let mut rng = seeded_rng(derive_seed(seed, &[k as u64]));
            let mut w = vec![0.0; dim];
            let (mut c1, mut c2, mut c3) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
            (a..b)
                .map(|_| {
                    // draw in sampling order (right to left)
                    for j in (0..m).rev() {
                        w[j] = open_unit(&mut rng);
                    }
                    let mut out = vec![0.0; dim];
                    vine.inverse_rosenblatt_with(&w, fixed, &mut out, &mut c1, &mut c2, &mut c3, m);
                    out
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(to_columns(vine, rows, n))
}

/// Conditional simulation given one index value.
pub fn sample_conditional_one(vine: &DVine, u_index: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if vine.n_cond != 1 {
        return invalid("vine does not have exactly one conditioning variable");
    }
    sample_conditional(vine, &[u_index], n, seed)
}

/// Conditional simulation given the two index values at the second-to-last
/// (`u_inner`) and last (`u_outer`) positions.
pub fn sample_conditional_two(vine: &DVine, u_inner: f64, u_outer: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if vine.n_cond != 2 {
        return invalid("vine does not have exactly two conditioning variables");
    }
    sample_conditional(vine, &[u_inner, u_outer], n, seed)
}

/// Value of the outermost index implied by setting the inner index to `alpha`
/// and the outer index's conditional distribution given the inner one to
/// `alpha` as well.
pub fn outer_index_value(vine: &DVine, alpha: f64) -> f64 {
    let n = vine.dim();
    vine.edge(1, n - 2).h_inverse(alpha, alpha, HDirection::SecondGivenFirst)
}
