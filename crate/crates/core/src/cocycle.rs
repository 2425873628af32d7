//! SL(2,R) cocycles over i.i.d. words: one-step maps, products, Lyapunov
//! Monte Carlo, large deviations, Lipschitz and Avalanche Principle checks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::{Mat2, ScaledMat2};
use crate::model::{substream, EnvironmentWord, SingleGenDistribution, SiteParams};

/// `(c, s)` with `c = cos(sqrt(E) x)`, `s = sin(sqrt(E) x) / sqrt(E)`, continued
/// analytically to `E <= 0`.
pub fn cs(e: f64, x: f64) -> (f64, f64) {
    let z = e * x * x;
    if z.abs() < 1e-8 {
        // c = 1 - z/2 + z^2/24 - ..., s = x (1 - z/6 + z^2/120 - ...)
        let c = 1.0 - z / 2.0 + z * z / 24.0 - z * z * z / 720.0;
        let s = x * (1.0 - z / 6.0 + z * z / 120.0 - z * z * z / 5040.0);
        (c, s)
    } else if e > 0.0 {
        let k = e.sqrt();
        ((k * x).cos(), (k * x).sin() / k)
    } else {
        let k = (-e).sqrt();
        ((k * x).cosh(), (k * x).sinh() / k)
    }
}

/// Free propagation along an edge of length `ell`.
pub fn rotation_block(e: f64, ell: f64) -> Mat2 {
    let (c, s) = cs(e, ell);
    Mat2::new(c, s, -e * s, c)
}

/// `D(b) S(q) R(E, ell)`.
pub fn continuum_step(e: f64, site: &SiteParams) -> Mat2 {
    let sb = (site.b as f64).sqrt();
    let d = Mat2::diag(sb, 1.0 / sb);
    let s = Mat2::new(1.0, 0.0, site.q, 1.0);
    d * s * rotation_block(e, site.ell)
}

/// Jacobi transfer matrix on states `(u_{j+1}, alpha_j u_j)`.
pub fn discrete_step(e: f64, site: &SiteParams, prev_p: f64) -> Result<Mat2> {
    let alpha = site.hopping_amplitude();
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput("hopping amplitude must be positive".into()));
    }
    let beta = (site.b as f64 * site.ell + prev_p) * site.q;
    Ok(Mat2::new((e - beta) / alpha, -1.0 / alpha, alpha, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OneStepMap {
    ContinuumKirchhoff,
    DiscreteJacobi,
}

impl OneStepMap {
    /// One-step matrix at `site`; `prev` is the previous site (discrete map only).
    pub fn step(&self, e: f64, site: &SiteParams, prev: Option<&SiteParams>) -> Mat2 {
        match self {
            OneStepMap::ContinuumKirchhoff => continuum_step(e, site),
            OneStepMap::DiscreteJacobi => {
                let pp = prev.map_or(0.0, |p| p.ell);
                discrete_step(e, site, pp).expect("site parameters were validated")
            }
        }
    }
}

/// `M(last) ... M(first)` in log-scaled form. The discrete map chains `p_{j-1}`
/// from step to step and starts from `p_{-1} = first_prev_p`.
pub fn transfer_product_from(
    e: f64,
    word: &EnvironmentWord,
    map: OneStepMap,
    first_prev_p: f64,
) -> ScaledMat2 {
    let mut acc = ScaledMat2::IDENTITY;
    let mut prev: Option<SiteParams> = None;
    for s in &word.params {
        let m = match (map, prev) {
            (OneStepMap::DiscreteJacobi, None) => {
                discrete_step(e, s, first_prev_p).expect("site parameters were validated")
            }
            _ => map.step(e, s, prev.as_ref()),
        };
        acc.push(&m);
        prev = Some(*s);
    }
    acc
}

pub fn transfer_product(e: f64, word: &EnvironmentWord, map: OneStepMap) -> ScaledMat2 {
    transfer_product_from(e, word, map, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub energy: f64,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Step matrices for each atom, and for the discrete map for each
/// (atom, previous atom) pair plus the first step.
struct StepTable {
    map: OneStepMap,
    k: usize,
    first: Vec<Mat2>,
    pairs: Vec<Mat2>,
}

impl StepTable {
    fn new(e: f64, dist: &SingleGenDistribution, map: OneStepMap) -> Self {
        let sites = dist.sites();
        let k = sites.len();
        let first: Vec<Mat2> = sites.iter().map(|s| map.step(e, s, None)).collect();
        let pairs = match map {
            OneStepMap::ContinuumKirchhoff => Vec::new(),
            OneStepMap::DiscreteJacobi => {
                let mut v = Vec::with_capacity(k * k);
                for s in &sites {
                    for p in &sites {
                        v.push(map.step(e, s, Some(p)));
                    }
                }
                v
            }
        };
        Self { map, k, first, pairs }
    }

    fn get(&self, cur: usize, prev: Option<usize>) -> &Mat2 {
        match (self.map, prev) {
            (OneStepMap::DiscreteJacobi, Some(p)) => &self.pairs[cur * self.k + p],
            _ => &self.first[cur],
        }
    }
}

/// `log ||M_n||` for each requested prefix length of one sampled word.
fn sampled_log_norms<R: Rng>(
    table: &StepTable,
    dist: &SingleGenDistribution,
    checkpoints: &[usize],
    rng: &mut R,
) -> Vec<f64> {
    let n_max = *checkpoints.iter().max().unwrap_or(&0);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut acc = ScaledMat2::IDENTITY;
    let mut prev = None;
    let mut next_cp = 0;
    let mut sorted: Vec<(usize, usize)> = checkpoints.iter().copied().enumerate().map(|(i, n)| (n, i)).collect();
    sorted.sort_unstable();
    out.resize(checkpoints.len(), 0.0);
    for step in 1..=n_max {
        let cur = dist.sample_index(rng);
        acc.push(table.get(cur, prev));
        prev = Some(cur);
        while next_cp < sorted.len() && sorted[next_cp].0 == step {
            out[sorted[next_cp].1] = acc.log_norm();
            next_cp += 1;
        }
    }
    out
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-trial finite-n exponents `(1/n) log ||M_n||`, trial `t` drawn from
/// substream `t` of `seed`.
pub fn finite_n_exponents(
    e: f64,
    dist: &SingleGenDistribution,
    map: OneStepMap,
    n: usize,
    trials: usize,
    seed: u64,
) -> Vec<f64> {
    let table = StepTable::new(e, dist, map);
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t as u64);
            sampled_log_norms(&table, dist, &[n], &mut rng)[0] / n as f64
        })
        .collect()
}

pub fn lyapunov_mc(
    e: f64,
    dist: &SingleGenDistribution,
    map: OneStepMap,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if n < 1 || trials < 2 {
        return Err(Error::InvalidInput("lyapunov_mc needs n >= 1 and trials >= 2".into()));
    }
    let samples = finite_n_exponents(e, dist, map, n, trials, seed);
    let (value, stderr) = mean_stderr(&samples);
    Ok(LyapunovEstimate { energy: e, value, stderr, n, trials, seed })
}

/// One estimate per energy; energy `i` uses seed `seed + i`.
pub fn lyapunov_curve(
    grid: &[f64],
    dist: &SingleGenDistribution,
    map: OneStepMap,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<LyapunovEstimate>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty energy grid".into()));
    }
    grid.iter()
        .enumerate()
        .map(|(i, &e)| lyapunov_mc(e, dist, map, n, trials, seed.wrapping_add(i as u64)))
        .collect()
}

pub fn lyapunov_csv(curve: &[LyapunovEstimate]) -> String {
    let mut s = String::from("energy,value,stderr,n,trials,seed\n");
    for r in curve {
        s.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{},{},{}\n",
            r.energy, r.value, r.stderr, r.n, r.trials, r.seed
        ));
    }
    s
}

/// Per-unit-length rate `L / <ell>`.
pub fn continuum_rate(l: f64, dist: &SingleGenDistribution) -> Result<f64> {
    if l < 0.0 {
        return Err(Error::InvalidInput("Lyapunov exponent must be >= 0".into()));
    }
    Ok(l / dist.mean_ell())
}

/// Least-squares fit of a power law `C h^beta` to adjacent differences of a curve.
pub fn holder_fit(curve: &[LyapunovEstimate]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = curve
        .windows(2)
        .filter_map(|w| {
            let h = (w[1].energy - w[0].energy).abs();
            let d = (w[1].value - w[0].value).abs();
            (h > 0.0 && d > 0.0).then(|| (h.ln(), d.ln()))
        })
        .collect();
    let fit = linear_fit(&pts)?;
    Some((fit.intercept.exp(), fit.slope))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<LinearFit> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub lhs: f64,
    pub bound: f64,
    pub c: f64,
    pub rho: f64,
}

fn sites_distance(a: &SiteParams, b: &SiteParams) -> f64 {
    ((a.b as f64) - (b.b as f64)).abs().max((a.ell - b.ell).abs()).max((a.q - b.q).abs())
}

/// Sum of partial-derivative norms of the one-step map in (E, b, ell, q).
fn one_step_gradient_norm(map: OneStepMap, e: f64, s: &SiteParams, prev: Option<&SiteParams>) -> f64 {
    let h = 1e-6;
    let f = |e: f64, b: f64, ell: f64, q: f64| -> Mat2 {
        // b enters only through sqrt(b), which extends smoothly to real b
        let sb = b.sqrt();
        match map {
            OneStepMap::ContinuumKirchhoff => {
                Mat2::diag(sb, 1.0 / sb) * Mat2::new(1.0, 0.0, q, 1.0) * rotation_block(e, ell)
            }
            OneStepMap::DiscreteJacobi => {
                let pp = prev.map_or(0.0, |p| p.ell);
                let alpha = sb * ell;
                let beta = (b * ell + pp) * q;
                Mat2::new((e - beta) / alpha, -1.0 / alpha, alpha, 0.0)
            }
        }
    };
    let (b, ell, q) = (s.b as f64, s.ell, s.q);
    let d = |m1: Mat2, m2: Mat2, h: f64| (m1 - m2).scale(0.5 / h).norm();
    d(f(e + h, b, ell, q), f(e - h, b, ell, q), h)
        + d(f(e, b + h, ell, q), f(e, b - h, ell, q), h)
        + d(f(e, b, ell + h, q), f(e, b, ell - h, q), h)
        + d(f(e, b, ell, q + h), f(e, b, ell, q - h), h)
}

/// Compares `||M_n^{E1}(w1) - M_n^{E2}(w2)||` with `C n rho^{n-1} (|dE| + ||dw||)`.
///
/// `rho` is the largest one-step norm over a grid of the parameter box spanned
/// by the inputs together with the actual steps; `C` is the larger of the grid
/// estimate of the one-step Lipschitz constant and the observed one-step
/// difference quotients, so the telescoping bound applies.
pub fn lipschitz_probe(
    e1: f64,
    e2: f64,
    w1: &EnvironmentWord,
    w2: &EnvironmentWord,
    map: OneStepMap,
) -> Result<LipschitzProbe> {
    if w1.len() != w2.len() {
        return Err(Error::InvalidInput("words must have equal length".into()));
    }
    let n = w1.len();
    let p1 = transfer_product(e1, w1, map).to_mat();
    let p2 = transfer_product(e2, w2, map).to_mat();
    let lhs = (p1 - p2).norm();

    let all = w1.params.iter().chain(w2.params.iter());
    let (mut blo, mut bhi, mut llo, mut lhi, mut qlo, mut qhi) =
        (u32::MAX, 0u32, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in all {
        blo = blo.min(s.b);
        bhi = bhi.max(s.b);
        llo = llo.min(s.ell);
        lhi = lhi.max(s.ell);
        qlo = qlo.min(s.q);
        qhi = qhi.max(s.q);
    }
    let (elo, ehi) = (e1.min(e2), e1.max(e2));
    let lin = |lo: f64, hi: f64, i: usize, m: usize| if m == 0 { lo } else { lo + (hi - lo) * i as f64 / m as f64 };
    let m = 6;
    let mut rho: f64 = 1.0;
    let mut c: f64 = 0.0;
    for ie in 0..=m {
        let e = lin(elo, ehi, ie, m);
        for b in blo..=bhi {
            for il in 0..=m {
                for iq in 0..=m {
                    let s = SiteParams::new(b, lin(llo, lhi, il, m), lin(qlo, qhi, iq, m));
                    let prev = SiteParams::new(b, lin(llo, lhi, il, m), 0.0);
                    for pv in [None, Some(&prev)] {
                        rho = rho.max(map.step(e, &s, pv).norm());
                        c = c.max(one_step_gradient_norm(map, e, &s, pv));
                    }
                }
            }
        }
    }
    let de = (e1 - e2).abs();
    let dw = w1.params.iter().zip(&w2.params).map(|(a, b)| sites_distance(a, b)).fold(0.0, f64::max);
    let mut prev1: Option<&SiteParams> = None;
    let mut prev2: Option<&SiteParams> = None;
    for (a, b) in w1.params.iter().zip(&w2.params) {
        let ma = map.step(e1, a, prev1);
        let mb = map.step(e2, b, prev2);
        rho = rho.max(ma.norm()).max(mb.norm());
        if de + dw > 0.0 {
            c = c.max((ma - mb).norm() / (de + dw));
        }
        prev1 = Some(a);
        prev2 = Some(b);
    }
    let bound = c * n as f64 * rho.powi(n as i32 - 1) * (de + dw);
    Ok(LipschitzProbe { lhs, bound, c, rho })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdtReport {
    pub reference: LyapunovEstimate,
    pub eps: f64,
    /// `(n, deviation probability)`
    pub points: Vec<(usize, f64)>,
    /// Fit of `log p` against `n` over points with `p > 0`.
    pub fit: Option<LinearFit>,
}

/// Empirical large-deviation probabilities `P(|L_ref - F_n| >= eps)`.
///
/// The reference uses `n = 10 max(n_grid)` and `4 trials`.
pub fn ldt_empirical(
    e: f64,
    dist: &SingleGenDistribution,
    map: OneStepMap,
    eps: f64,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<LdtReport> {
    if !(eps > 0.0) || trials < 100 || n_grid.is_empty() {
        return Err(Error::InvalidInput("ldt_empirical needs eps > 0, trials >= 100 and a grid".into()));
    }
    let n_max = *n_grid.iter().max().unwrap();
    let reference = lyapunov_mc(e, dist, map, 10 * n_max, 4 * trials, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let table = StepTable::new(e, dist, map);
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t as u64);
            sampled_log_norms(&table, dist, n_grid, &mut rng)
        })
        .collect();
    let points: Vec<(usize, f64)> = n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let hits = per_trial.iter().filter(|v| (reference.value - v[i] / n as f64).abs() >= eps).count();
            (n, hits as f64 / trials as f64)
        })
        .collect();
    let logs: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(n, p)| (n as f64, p.ln())).collect();
    Ok(LdtReport { reference, eps, points, fit: linear_fit(&logs) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvalancheReport {
    pub hypotheses_hold: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Avalanche Principle with constant `c`.
pub fn avalanche_check(blocks: &[Mat2], lambda: f64, c: f64) -> Result<AvalancheReport> {
    let n = blocks.len();
    if n < 3 {
        return Err(Error::InvalidInput("avalanche check needs at least three blocks".into()));
    }
    let log_norm = |m: &Mat2| m.norm().ln();
    let min_norm = blocks.iter().map(|m| m.norm()).fold(f64::INFINITY, f64::min);
    let mut aligned = true;
    let mut pair_sum = 0.0;
    for j in 0..n - 1 {
        let pair = ScaledMat2::from_mat(&blocks[j]);
        let mut pair = pair;
        pair.push(&blocks[j + 1]);
        let lp = pair.log_norm();
        pair_sum += lp;
        if (log_norm(&blocks[j + 1]) + log_norm(&blocks[j]) - lp).abs() >= 0.5 * lambda.ln() {
            aligned = false;
        }
    }
    let mut total = ScaledMat2::IDENTITY;
    for b in blocks {
        total.push(b);
    }
    let inner: f64 = blocks[1..n - 1].iter().map(log_norm).sum();
    let lhs = (total.log_norm() + inner - pair_sum).abs();
    let hypotheses_hold = min_norm >= lambda && lambda > n as f64 && aligned;
    Ok(AvalancheReport { hypotheses_hold, lhs, rhs: c * n as f64 / lambda })
}

/// Block products of consecutive length-`block_len` pieces of a word.
pub fn word_blocks(e: f64, word: &EnvironmentWord, map: OneStepMap, block_len: usize) -> Vec<Mat2> {
    let mut out = Vec::new();
    let mut prev_p = 0.0;
    for chunk in word.params.chunks(block_len) {
        let w = EnvironmentWord::explicit(chunk.to_vec());
        out.push(transfer_product_from(e, &w, map, prev_p).to_mat());
        prev_p = chunk.last().map_or(0.0, |s| s.ell);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{periodic_word, sample_word};
    use std::f64::consts::PI;

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (*a - *b).max_abs() <= tol
    }

    fn rbm() -> SingleGenDistribution {
        SingleGenDistribution::uniform(&[SiteParams::new(2, 1.0, 0.0), SiteParams::new(3, 1.0, 0.0)]).unwrap()
    }

    #[test]
    fn rotation_block_examples() {
        assert!(close(&rotation_block(PI * PI, 1.0), &Mat2::diag(-1.0, -1.0), 1e-15));
        assert_eq!(rotation_block(0.0, 1.0), Mat2::new(1.0, 1.0, 0.0, 1.0));
        let (ch, sh) = (1f64.cosh(), 1f64.sinh());
        assert!(close(&rotation_block(-1.0, 1.0), &Mat2::new(ch, sh, sh, ch), 1e-15));
    }

    #[test]
    fn series_branch_matches_closed_form_at_switch() {
        for &x in &[0.5, 1.0, 3.0] {
            for &sign in &[1.0, -1.0] {
                let e = sign * 0.99e-8 / (x * x);
                let (c, s) = cs(e, x);
                let k = e.abs().sqrt();
                let (c0, s0) = if sign > 0.0 {
                    ((k * x).cos(), (k * x).sin() / k)
                } else {
                    ((k * x).cosh(), (k * x).sinh() / k)
                };
                assert!((c - c0).abs() < 1e-15 && (s - s0).abs() < 1e-15 * x);
            }
        }
        assert!((rotation_block(-1e-12, 2.0) - rotation_block(1e-12, 2.0)).max_abs() < 1e-11);
    }

    #[test]
    fn continuum_step_examples() {
        let r2 = 2f64.sqrt();
        let m = continuum_step(PI * PI, &SiteParams::new(2, 1.0, 0.0));
        assert!(close(&m, &Mat2::diag(-r2, -1.0 / r2), 1e-15));
        assert_eq!(continuum_step(0.0, &SiteParams::new(1, 1.0, 0.0)), Mat2::new(1.0, 1.0, 0.0, 1.0));
        let m = continuum_step(PI * PI / 4.0, &SiteParams::new(2, 1.0, 0.0));
        assert!(close(&m, &Mat2::new(0.0, 2.0 * r2 / PI, -PI / (2.0 * r2), 0.0), 1e-15));
        assert!(m.trace().abs() < 1e-15);
    }

    #[test]
    fn discrete_step_examples() {
        let r2 = 2f64.sqrt();
        let m = discrete_step(0.0, &SiteParams::new(2, 1.0, 0.0), 1.0).unwrap();
        assert!(close(&m, &Mat2::new(0.0, -1.0 / r2, r2, 0.0), 1e-15));
        for e in [-2.0, 0.3, 5.0] {
            let m = discrete_step(e, &SiteParams::new(1, 1.0, 0.0), 0.0).unwrap();
            assert_eq!(m, Mat2::new(e, -1.0, 1.0, 0.0));
        }
        let m = discrete_step(3.0, &SiteParams::new(2, 1.0, 1.0), 1.0).unwrap();
        assert!(close(&m, &Mat2::new(0.0, -1.0 / r2, r2, 0.0), 1e-15));
    }

    #[test]
    fn identical_steps_give_diagonal_power() {
        let r2 = 2f64.sqrt();
        for k in 0..6 {
            let w = periodic_word(&[SiteParams::new(2, 1.0, 0.0)], k.max(1)).unwrap();
            let w = if k == 0 { EnvironmentWord::explicit(vec![]) } else { w };
            let p = transfer_product(PI * PI, &w, OneStepMap::ContinuumKirchhoff).to_mat();
            let expect = Mat2::diag((-r2).powi(k as i32), (-1.0 / r2).powi(k as i32));
            assert!(close(&p, &expect, 1e-12 * expect.max_abs()));
        }
    }

    #[test]
    fn long_products_keep_unit_determinant() {
        let w = sample_word(&rbm(), 1000, 3).unwrap();
        for e in [-10.0, 0.0, 4.0, 100.0] {
            for map in [OneStepMap::ContinuumKirchhoff, OneStepMap::DiscreteJacobi] {
                let p = transfer_product(e, &w, map);
                assert!((p.det() - 1.0).abs() <= 1e-9 * 1000.0, "E={e} det={}", p.det());
            }
        }
    }

    #[test]
    fn lyapunov_positive_for_rbm() {
        let est = lyapunov_mc(4.0, &rbm(), OneStepMap::ContinuumKirchhoff, 10_000, 50, 11).unwrap();
        assert!(est.value > 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn lyapunov_zero_at_elliptic_commuting_energy() {
        let d = SingleGenDistribution::uniform(&[SiteParams::new(2, 1.0, 0.0), SiteParams::new(2, 3.0, 0.0)]).unwrap();
        let est = lyapunov_mc(PI * PI / 4.0, &d, OneStepMap::ContinuumKirchhoff, 10_000, 20, 5).unwrap();
        assert!(est.value.abs() < 0.02, "{est:?}");
    }

    #[test]
    fn lyapunov_is_deterministic_and_singleton_curve_matches() {
        let a = lyapunov_mc(1.0, &rbm(), OneStepMap::ContinuumKirchhoff, 500, 8, 42).unwrap();
        let b = lyapunov_mc(1.0, &rbm(), OneStepMap::ContinuumKirchhoff, 500, 8, 42).unwrap();
        assert_eq!(a, b);
        let c = lyapunov_curve(&[1.0], &rbm(), OneStepMap::ContinuumKirchhoff, 500, 8, 42).unwrap();
        assert_eq!(c[0], a);
    }

    #[test]
    fn continuum_rate_examples() {
        assert_eq!(continuum_rate(0.7, &rbm()).unwrap(), 0.7);
        let d = SingleGenDistribution::uniform(&[SiteParams::new(2, 1.0, 0.0), SiteParams::new(2, 3.0, 0.0)]).unwrap();
        assert!((continuum_rate(0.8, &d).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(continuum_rate(0.0, &d).unwrap(), 0.0);
    }

    #[test]
    fn lipschitz_examples() {
        let w = sample_word(&rbm(), 20, 9).unwrap();
        let r = lipschitz_probe(2.0, 2.0, &w, &w, OneStepMap::ContinuumKirchhoff).unwrap();
        assert_eq!((r.lhs, r.bound), (0.0, 0.0));
        let w2 = sample_word(&rbm(), 20, 10).unwrap();
        let r = lipschitz_probe(2.0, 2.3, &w, &w2, OneStepMap::ContinuumKirchhoff).unwrap();
        assert!(r.lhs <= r.bound);
        let slopes: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&h| lipschitz_probe(2.0, 2.0 + h, &w, &w, OneStepMap::ContinuumKirchhoff).unwrap().lhs / h)
            .collect();
        assert!((slopes[1] - slopes[2]).abs() < 1e-2 * slopes[2]);
        assert!((slopes[0] - slopes[2]).abs() < 0.1 * slopes[2]);
    }

    #[test]
    fn avalanche_examples() {
        let blocks = vec![Mat2::diag(100.0, 0.01); 5];
        let r = avalanche_check(&blocks, 100.0, 10.0).unwrap();
        assert!(r.hypotheses_hold);
        assert!(r.lhs < 1e-9 && r.lhs <= r.rhs);
        let mut blocks = blocks;
        blocks[2] = Mat2::new(0.0, -1.0, 1.0, 0.0);
        assert!(!avalanche_check(&blocks, 100.0, 10.0).unwrap().hypotheses_hold);
        assert!(avalanche_check(&blocks[..2], 100.0, 10.0).is_err());
    }

    #[test]
    fn avalanche_on_positive_exponent_cocycle() {
        let w = sample_word(&rbm(), 500, 21).unwrap();
        let blocks = word_blocks(9.0, &w, OneStepMap::ContinuumKirchhoff, 50);
        let lambda = blocks.iter().map(|m| m.norm()).fold(f64::INFINITY, f64::min);
        let r = avalanche_check(&blocks, lambda, 10.0).unwrap();
        assert!(r.hypotheses_hold, "{r:?}");
        assert!(r.lhs <= r.rhs, "{r:?}");
    }
}
