//! Discrete radial trees: dense tree operators, the orthogonal decomposition
//! into half-line Jacobi blocks, localization diagnostics and band spectra.
//!
//! Words follow the discrete convention: `params[g]` is generation `g`, with
//! `b_g` children per vertex, hopping `p_g` to the next generation (stored in
//! `ell`) and coupling `q_g`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{continuum_step, discrete_step, linear_fit, lyapunov_mc, LinearFit, LyapunovEstimate, OneStepMap};
use crate::error::{Error, Result};
use crate::furstenberg::{exceptional_set_discrete, DiscreteRegime};
use crate::mat2::Mat2;
use crate::model::{derive_seed, sample_word, EnvironmentWord, SingleGenDistribution, SiteParams};
use crate::treeops::VertexAddress;

const MAX_TREE_VERTICES: usize = 10_000_000;
const MAX_DENSE_VERTICES: usize = 10_000;

/// Symmetric tridiagonal matrix with diagonal `beta` and positive off-diagonal `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiMatrix {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl JacobiMatrix {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    /// Dense form with off-diagonal `sign * alpha`.
    pub fn to_dense(&self, sign: f64) -> DMatrix<f64> {
        let n = self.size();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
        }
        for (i, &a) in self.offdiag.iter().enumerate() {
            m[(i, i + 1)] = sign * a;
            m[(i + 1, i)] = sign * a;
        }
        m
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_dense(1.0)).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Eigenpairs sorted by eigenvalue.
    pub fn eigenpairs(&self) -> Vec<(f64, Vec<f64>)> {
        let eig = SymmetricEigen::new(self.to_dense(1.0));
        let mut out: Vec<(f64, Vec<f64>)> = (0..self.size())
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

/// Jacobi block of generation `n`: `alpha_j = sqrt(b_j) p_j`,
/// `beta_j = (b_j p_j + p_{j-1}) q_j`, with `p_{-1} = 0`.
pub fn jacobi_from_word(word: &EnvironmentWord, n: usize, size: usize) -> Result<JacobiMatrix> {
    if size < 1 || n + size > word.len() {
        return Err(Error::OutOfRange { index: n + size, max: word.len() });
    }
    let w = &word.params;
    let diag = (n..n + size)
        .map(|j| {
            let prev = if j == 0 { 0.0 } else { w[j - 1].ell };
            (w[j].b as f64 * w[j].ell + prev) * w[j].q
        })
        .collect();
    let offdiag = (n..n + size - 1).map(|j| w[j].hopping_amplitude()).collect();
    Ok(JacobiMatrix { diag, offdiag })
}

/// The word seen by a regime: adjacency drops `q`, Schroedinger sets `p = 1`.
pub fn regime_word(word: &EnvironmentWord, regime: DiscreteRegime) -> EnvironmentWord {
    let mut w = word.clone();
    for s in &mut w.params {
        match regime {
            DiscreteRegime::Adjacency => s.q = 0.0,
            DiscreteRegime::Schroedinger => s.ell = 1.0,
        }
    }
    w
}

/// Truncated radial tree, generations `0..=depth`, vertices stored generation
/// by generation in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTree {
    pub depth: usize,
    /// Children per vertex of generation `g`, `g = 0..=depth` (the last entry
    /// describes the cut-off generation).
    pub branchings: Vec<u32>,
    pub gen_start: Vec<usize>,
    /// Word with `b_0` replaced by the root branching.
    pub word: EnvironmentWord,
}

pub fn build_finite_tree(word: &EnvironmentWord, depth: usize, root_branching: u32) -> Result<FiniteTree> {
    if depth < 1 {
        return Err(Error::InvalidInput("depth must be >= 1".into()));
    }
    if word.len() < depth + 1 {
        return Err(Error::OutOfRange { index: depth, max: word.len().saturating_sub(1) });
    }
    if root_branching < 1 {
        return Err(Error::InvalidInput("root branching must be >= 1".into()));
    }
    let mut word = word.slice(0, depth + 1);
    word.params[0].b = root_branching;
    let branchings: Vec<u32> = word.params.iter().map(|s| s.b).collect();
    let mut gen_start = vec![0usize];
    let mut count = 1usize;
    for g in 0..=depth {
        let next = gen_start[g] + count;
        if next > MAX_TREE_VERTICES {
            return Err(Error::InvalidInput(format!("tree exceeds {MAX_TREE_VERTICES} vertices")));
        }
        gen_start.push(next);
        count *= branchings[g] as usize;
    }
    Ok(FiniteTree { depth, branchings, gen_start, word })
}

impl FiniteTree {
    pub fn vertex_count(&self) -> usize {
        self.gen_start[self.depth + 1]
    }

    pub fn generation_size(&self, g: usize) -> usize {
        self.gen_start[g + 1] - self.gen_start[g]
    }

    pub fn generation_of(&self, i: usize) -> usize {
        self.gen_start.partition_point(|&s| s <= i) - 1
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        let g = self.generation_of(i);
        (g > 0).then(|| self.gen_start[g - 1] + (i - self.gen_start[g]) / self.branchings[g - 1] as usize)
    }

    pub fn children(&self, i: usize) -> std::ops::Range<usize> {
        let g = self.generation_of(i);
        if g == self.depth {
            return 0..0;
        }
        let b = self.branchings[g] as usize;
        let first = self.gen_start[g + 1] + (i - self.gen_start[g]) * b;
        first..first + b
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.parent(i).into_iter().chain(self.children(i)).collect()
    }

    pub fn index_of(&self, v: &VertexAddress) -> Option<usize> {
        let g = v.generation();
        if g > self.depth {
            return None;
        }
        let mut local = 0usize;
        for (d, &c) in v.path.iter().enumerate() {
            if c < 1 || c > self.branchings[d] {
                return None;
            }
            local = local * self.branchings[d] as usize + (c as usize - 1);
        }
        Some(self.gen_start[g] + local)
    }

    pub fn address(&self, i: usize) -> VertexAddress {
        let mut path = Vec::new();
        let mut cur = i;
        while let Some(p) = self.parent(cur) {
            path.push((cur - self.children(p).start) as u32 + 1);
            cur = p;
        }
        path.reverse();
        VertexAddress { path }
    }

    fn diagonal(&self, g: usize) -> f64 {
        let w = &self.word.params;
        let prev = if g == 0 { 0.0 } else { w[g - 1].ell };
        (w[g].b as f64 * w[g].ell + prev) * w[g].q
    }

    /// `(J f)(u) = sum_{v ~ u} p(u,v) (q(u) f(u) - f(v))`, the cut-off
    /// generation keeping its full diagonal.
    pub fn apply(&self, f: &[Complex64]) -> Vec<Complex64> {
        let w = &self.word.params;
        let mut out = vec![Complex64::new(0.0, 0.0); f.len()];
        for g in 0..=self.depth {
            let d = self.diagonal(g);
            for i in self.gen_start[g]..self.gen_start[g + 1] {
                out[i] += d * f[i];
                for c in self.children(i) {
                    out[i] -= w[g].ell * f[c];
                    out[c] -= w[g].ell * f[i];
                }
            }
        }
        out
    }
}

/// Dense tree operator in the given regime; the cut-off generation keeps the
/// diagonal of the infinite tree, so truncations match truncated Jacobi blocks.
pub fn dense_operator(tree: &FiniteTree, regime: DiscreteRegime) -> Result<DMatrix<f64>> {
    let n = tree.vertex_count();
    if n > MAX_DENSE_VERTICES {
        return Err(Error::Precondition(format!("dense operator limited to {MAX_DENSE_VERTICES} vertices")));
    }
    let t = FiniteTree { word: regime_word(&tree.word, regime), ..tree.clone() };
    let w = &t.word.params;
    let mut m = DMatrix::zeros(n, n);
    for g in 0..=t.depth {
        let d = t.diagonal(g);
        for i in t.gen_start[g]..t.gen_start[g + 1] {
            m[(i, i)] = d;
            for c in t.children(i) {
                m[(i, c)] = -w[g].ell;
                m[(c, i)] = -w[g].ell;
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreuerVector {
    /// Seed generation.
    pub n: usize,
    pub k: u32,
    /// Position along the chain; the support is generation `n + j`.
    pub j: usize,
    pub chain: usize,
    pub support: Vec<(usize, Complex64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreuerBasis {
    pub vectors: Vec<BreuerVector>,
    /// Vector indices of each chain, ordered by `j`.
    pub chains: Vec<Vec<usize>>,
}

/// `phi_{j+1}(v) = phi_j(parent v) / sqrt(b_{gen(parent)})` on children.
pub fn forward_image(tree: &FiniteTree, support: &[(usize, Complex64)]) -> Vec<(usize, Complex64)> {
    let mut out = Vec::new();
    for &(v, z) in support {
        let g = tree.generation_of(v);
        let s = (tree.branchings[g] as f64).sqrt();
        for c in tree.children(v) {
            out.push((c, z / s));
        }
    }
    out
}

/// Seeds: the root indicator, and for each vertex `u` of generation `n - 1`
/// the sibling Fourier modes `(omega^{jk} / sqrt(b))_j`, `k = 1..b-1`, on its
/// children. Each seed is pushed forward to the cut-off generation.
pub fn breuer_basis(tree: &FiniteTree) -> Result<BreuerBasis> {
    let mut vectors = Vec::with_capacity(tree.vertex_count());
    let mut chains = Vec::new();
    let mut push_chain = |n: usize, k: u32, seed: Vec<(usize, Complex64)>, vectors: &mut Vec<BreuerVector>| {
        let chain = chains.len();
        let mut ids = Vec::new();
        let mut support = seed;
        for j in 0..=tree.depth - n {
            if j > 0 {
                support = forward_image(tree, &support);
            }
            ids.push(vectors.len());
            vectors.push(BreuerVector { n, k, j, chain, support: support.clone() });
        }
        chains.push(ids);
    };
    push_chain(0, 0, vec![(0, Complex64::new(1.0, 0.0))], &mut vectors);
    for n in 1..=tree.depth {
        let b = tree.branchings[n - 1];
        let norm = (b as f64).sqrt();
        for u in tree.gen_start[n - 1]..tree.gen_start[n] {
            for k in 1..b {
                let seed = tree
                    .children(u)
                    .enumerate()
                    .map(|(c, v)| {
                        let angle = 2.0 * PI * ((c as u64 + 1) * k as u64 % b as u64) as f64 / b as f64;
                        (v, Complex64::from_polar(1.0 / norm, angle))
                    })
                    .collect();
                push_chain(n, k, seed, &mut vectors);
            }
        }
    }
    if vectors.len() != tree.vertex_count() {
        return Err(Error::Numerical(format!(
            "Breuer basis has {} vectors for {} vertices",
            vectors.len(),
            tree.vertex_count()
        )));
    }
    Ok(BreuerBasis { vectors, chains })
}

impl BreuerBasis {
    /// Number of chains seeded at generation `n`.
    pub fn seeds_at(&self, n: usize) -> usize {
        self.chains.iter().filter(|c| self.vectors[c[0]].n == n).count()
    }

    /// `max |<phi_a, phi_b> - delta_ab|`, computed per support generation.
    pub fn gram_residual(&self, tree: &FiniteTree) -> f64 {
        (0..=tree.depth)
            .into_par_iter()
            .map(|g| {
                let ids: Vec<&BreuerVector> = self.vectors.iter().filter(|v| v.n + v.j == g).collect();
                let start = tree.gen_start[g];
                let mut m = DMatrix::<Complex64>::zeros(tree.generation_size(g), ids.len());
                for (col, v) in ids.iter().enumerate() {
                    for &(i, z) in &v.support {
                        m[(i - start, col)] = z;
                    }
                }
                let gram = m.adjoint() * &m;
                let mut worst: f64 = 0.0;
                for a in 0..ids.len() {
                    for b in 0..ids.len() {
                        let expect = if a == b { 1.0 } else { 0.0 };
                        worst = worst.max((gram[(a, b)] - expect).norm());
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EquivalenceReport {
    pub vertex_count: usize,
    pub depth: usize,
    pub regime: DiscreteRegime,
    pub max_eig_gap: f64,
    /// Seed generation of the block owning the eigenvalue nearest the worst gap.
    pub offending_block: Option<usize>,
    pub conjugation_residual: f64,
    pub gram_residual: f64,
    /// `(n, number of blocks seeded at n)`
    pub multiplicities: Vec<(usize, usize)>,
    pub pass: bool,
}

impl EquivalenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Compares the dense spectrum with the union of Jacobi block spectra and
/// measures how far the Breuer basis is from conjugating one into the other.
pub fn decomposition_equivalence(tree: &FiniteTree, regime: DiscreteRegime) -> Result<EquivalenceReport> {
    let dense = dense_operator(tree, regime)?;
    let t = FiniteTree { word: regime_word(&tree.word, regime), ..tree.clone() };
    let mut dense_ev: Vec<f64> = SymmetricEigen::new(dense).eigenvalues.iter().copied().collect();
    dense_ev.sort_by(f64::total_cmp);

    let basis = breuer_basis(&t)?;
    let blocks: Vec<JacobiMatrix> =
        (0..=t.depth).map(|n| jacobi_from_word(&t.word, n, t.depth - n + 1)).collect::<Result<_>>()?;
    let mut mult = vec![0usize; t.depth + 1];
    for c in &basis.chains {
        mult[basis.vectors[c[0]].n] += 1;
    }
    let mut block_ev: Vec<(f64, usize)> = Vec::with_capacity(dense_ev.len());
    for (n, block) in blocks.iter().enumerate() {
        let ev = block.eigenvalues();
        for _ in 0..mult[n] {
            block_ev.extend(ev.iter().map(|&e| (e, n)));
        }
    }
    block_ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut gap, mut offending) = (0.0f64, None);
    for (d, (e, n)) in dense_ev.iter().zip(&block_ev) {
        if (d - e).abs() > gap {
            gap = (d - e).abs();
            offending = Some(*n);
        }
    }
    if dense_ev.len() != block_ev.len() {
        gap = f64::INFINITY;
    }

    // J phi_j should equal beta_j phi_j - alpha_j phi_{j+1} - alpha_{j-1} phi_{j-1}
    let nv = t.vertex_count();
    let conj = basis
        .vectors
        .par_iter()
        .map(|v| {
            let mut f = vec![Complex64::new(0.0, 0.0); nv];
            for &(i, z) in &v.support {
                f[i] = z;
            }
            let mut r = t.apply(&f);
            let block = &blocks[v.n];
            let chain = &basis.chains[v.chain];
            let mut sub = |idx: usize, coef: f64| {
                for &(i, z) in &basis.vectors[idx].support {
                    r[i] -= coef * z;
                }
            };
            sub(chain[v.j], block.diag[v.j]);
            if v.j + 1 < chain.len() {
                sub(chain[v.j + 1], -block.offdiag[v.j]);
            }
            if v.j > 0 {
                sub(chain[v.j - 1], -block.offdiag[v.j - 1]);
            }
            r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        })
        .reduce(|| 0.0, f64::max);
    let gram = basis.gram_residual(&t);
    if gram > 1e-8 {
        return Err(Error::Numerical(format!("Breuer basis is not orthonormal (Gram residual {gram:e})")));
    }
    let multiplicities: Vec<(usize, usize)> = mult.iter().copied().enumerate().collect();
    Ok(EquivalenceReport {
        vertex_count: nv,
        depth: t.depth,
        regime,
        max_eig_gap: gap,
        offending_block: offending,
        conjugation_residual: conj,
        gram_residual: gram,
        multiplicities,
        pass: gap < 1e-8 && conj < 1e-9 && gram < 1e-10,
    })
}

/// Decay rate of an eigenvector about its maximum: least squares of the log
/// envelope `hypot(v_j, v_{j+1})` against the distance to the peak, over
/// samples above `1e-12` of the peak, the nearest 10% excluded.
pub fn eigenvector_decay_rate(v: &[f64]) -> Option<LinearFit> {
    if v.len() < 4 {
        return None;
    }
    let env: Vec<f64> = (0..v.len() - 1).map(|j| v[j].hypot(v[j + 1])).collect();
    let (zeta, peak) = env.iter().enumerate().fold((0, 0.0f64), |a, (j, &x)| if x > a.1 { (j, x) } else { a });
    if peak == 0.0 {
        return None;
    }
    let reach = zeta.max(env.len() - 1 - zeta);
    let skip = (reach / 10).max(1);
    let pts: Vec<(f64, f64)> = env
        .iter()
        .enumerate()
        .filter_map(|(j, &x)| {
            let d = j.abs_diff(zeta);
            (d >= skip && x > 1e-12 * peak).then(|| (d as f64, x.ln()))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    linear_fit(&pts).map(|f| LinearFit { slope: -f.slope, ..f })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LocalizationReport {
    pub window: (f64, f64),
    pub lyapunov_center: LyapunovEstimate,
    /// Smallest Lyapunov estimate over five window points.
    pub min_lyapunov: f64,
    pub fitted_rates: Vec<f64>,
    pub median_rate: f64,
    /// `median_rate / L(center)`
    pub rate_ratio: f64,
    /// Off-diagonal decay rate of `sum_k |phi_k(x) phi_k(0)|`.
    pub kernel_rate: f64,
    pub kernel_r_squared: f64,
    pub kernel_decays: bool,
    /// `(R, (sum_{|x| >= R} K_tree(x, o)^2)^{1/2})` for the tree lift of the
    /// first trial, `K_tree(x, o) = K(|x|, 0) / sqrt(w_o(|x|))`.
    pub tree_tail: Vec<(usize, f64)>,
    pub tree_tail_slope: f64,
}

impl LocalizationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn detect_regime(dist: &SingleGenDistribution) -> Option<DiscreteRegime> {
    let sites = dist.sites();
    if sites.iter().all(|s| s.q == 0.0) {
        Some(DiscreteRegime::Adjacency)
    } else if sites.iter().all(|s| s.ell == 1.0) {
        Some(DiscreteRegime::Schroedinger)
    } else {
        None
    }
}

/// Eigenvector decay, dynamical kernel decay and its tree lift on truncated
/// half-line Jacobi blocks of size `n` drawn from `dist`.
pub fn discrete_localization_suite(
    dist: &SingleGenDistribution,
    window: (f64, f64),
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<LocalizationReport> {
    if !(window.0 < window.1) || n < 20 || trials < 1 {
        return Err(Error::InvalidInput("need a proper window, n >= 20 and trials >= 1".into()));
    }
    if let Some(regime) = detect_regime(dist) {
        if let Ok(set) = exceptional_set_discrete(dist, regime) {
            if let Some(e) = set.energies.iter().find(|&&e| e > window.0 - 0.1 && e < window.1 + 0.1) {
                return Err(Error::Precondition(format!("window within 0.1 of exceptional energy {e}")));
            }
        }
    }
    let per_trial: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let word = sample_word(dist, n + 1, derive_seed(seed, t as u64))?;
            let jac = jacobi_from_word(&word, 0, n)?;
            let mut rates = Vec::new();
            let mut kernel = vec![0.0; n];
            for (e, v) in jac.eigenpairs() {
                if e < window.0 || e > window.1 {
                    continue;
                }
                for x in 0..n {
                    kernel[x] += (v[x] * v[0]).abs();
                }
                let zeta = (0..n).fold(0, |a, j| if v[j].abs() > v[a].abs() { j } else { a });
                if zeta < n / 10 || zeta > n - n / 10 {
                    continue;
                }
                if let Some(fit) = eigenvector_decay_rate(&v) {
                    if fit.r_squared >= 0.5 {
                        rates.push(fit.slope);
                    }
                }
            }
            let weights: Vec<f64> = word.params.iter().map(|s| s.b as f64).collect();
            Ok((rates, kernel, weights))
        })
        .collect();
    let mut fitted_rates = Vec::new();
    let mut first: Option<(Vec<f64>, Vec<f64>)> = None;
    for r in per_trial {
        let (rates, kernel, weights) = r?;
        fitted_rates.extend(rates);
        if first.is_none() {
            first = Some((kernel, weights));
        }
    }
    let (kernel, _) = first.expect("at least one trial");
    let center = 0.5 * (window.0 + window.1);
    let map = OneStepMap::DiscreteJacobi;
    let lyapunov_center = lyapunov_mc(center, dist, map, 10_000, 32, seed)?;
    let min_lyapunov = (0..5)
        .map(|i| {
            let e = window.0 + (window.1 - window.0) * i as f64 / 4.0;
            lyapunov_mc(e, dist, map, 10_000, 16, derive_seed(seed, 1000 + i)).map(|l| l.value)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let mut sorted = fitted_rates.clone();
    sorted.sort_by(f64::total_cmp);
    let median_rate = if sorted.is_empty() { f64::NAN } else { sorted[sorted.len() / 2] };

    let k0 = kernel.iter().copied().fold(0.0, f64::max);
    let kpts: Vec<(f64, f64)> = (1..n / 2)
        .filter(|&x| kernel[x] > 1e-12 * k0)
        .map(|x| (x as f64, kernel[x].ln()))
        .collect();
    let kfit = linear_fit(&kpts);
    let (kernel_rate, kernel_r_squared) = kfit.map_or((f64::NAN, 0.0), |f| (-f.slope, f.r_squared));

    // tail of the tree kernel; the 1/sqrt(w) factor cancels against the w(g) vertices of generation g
    let mut tail = vec![0.0; n + 1];
    for g in (0..n).rev() {
        tail[g] = tail[g + 1] + kernel[g] * kernel[g];
    }
    let tree_tail: Vec<(usize, f64)> = (0..n / 2).step_by(5).map(|r| (r, tail[r].sqrt())).collect();
    let tpts: Vec<(f64, f64)> = tree_tail.iter().filter(|p| p.1 > 1e-12 * tail[0].sqrt()).map(|&(r, v)| (r as f64, v.ln())).collect();
    let tree_tail_slope = linear_fit(&tpts).map_or(f64::NAN, |f| f.slope);

    Ok(LocalizationReport {
        window,
        rate_ratio: median_rate / lyapunov_center.value,
        lyapunov_center,
        min_lyapunov,
        fitted_rates,
        median_rate,
        kernel_rate,
        kernel_r_squared,
        kernel_decays: kernel_rate > 0.0 && kernel_r_squared >= 0.5,
        tree_tail,
        tree_tail_slope,
    })
}

/// Merged intervals of `{E in window : |f(E)| <= 2}`; `step(E)` sets the scan
/// resolution and edges are bisected to adjacent floats.
pub fn band_set<F: Fn(f64) -> f64, S: Fn(f64) -> f64>(trace: F, window: (f64, f64), step: S) -> Vec<(f64, f64)> {
    let inside = |e: f64| trace(e).abs() <= 2.0;
    let edge = |mut a: f64, mut b: f64| {
        // inside(a) != inside(b)
        let ia = inside(a);
        loop {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if inside(m) == ia {
                a = m;
            } else {
                b = m;
            }
        }
        if ia { a } else { b }
    };
    let mut bands: Vec<(f64, f64)> = Vec::new();
    let (lo, hi) = window;
    let mut e = lo;
    let mut cur = inside(lo);
    let mut start = if cur { Some(lo) } else { None };
    while e < hi {
        let next = (e + step(e)).min(hi);
        let now = inside(next);
        if now != cur {
            let x = edge(e, next);
            if now {
                start = Some(x);
            } else if let Some(s) = start.take() {
                bands.push((s, x));
            }
            cur = now;
        }
        e = next;
    }
    if let Some(s) = start {
        bands.push((s, hi));
    }
    merge_intervals(bands, 1e-9)
}

pub fn merge_intervals(mut v: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 + tol * (1.0 + last.1.abs()) => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Hausdorff distance between a union of intervals and `[lo, hi]`.
pub fn hausdorff_to_interval(bands: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    if bands.is_empty() {
        return f64::INFINITY;
    }
    let outside = bands.iter().map(|&(a, b)| (lo - a).max(b - hi).max(0.0)).fold(0.0, f64::max);
    let clipped: Vec<(f64, f64)> = bands.iter().map(|&(a, b)| (a.max(lo), b.min(hi))).filter(|(a, b)| a <= b).collect();
    if clipped.is_empty() {
        return f64::INFINITY;
    }
    let mut uncovered = (clipped[0].0 - lo).max(hi - clipped[clipped.len() - 1].1);
    for w in clipped.windows(2) {
        uncovered = uncovered.max(0.5 * (w[1].0 - w[0].1));
    }
    outside.max(uncovered)
}

pub fn bands_csv(bands: &[(f64, f64)]) -> String {
    let mut s = String::from("lo,hi\n");
    for (a, b) in bands {
        s.push_str(&format!("{a:.16e},{b:.16e}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectrumApprox {
    pub bands: Vec<(f64, f64)>,
    pub words_used: usize,
    /// `[-2 sqrt(b~) p, 2 sqrt(b~) p]` when every atom has the same hopping `p`.
    pub reference: Option<(f64, f64)>,
    pub hausdorff: Option<f64>,
}

impl SpectrumApprox {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spectrum serializes")
    }
}

/// Trace of the discrete transfer matrix over one period, `p_{-1}` taken cyclically.
pub fn discrete_cell_trace(e: f64, cell: &[SiteParams]) -> Result<f64> {
    let mut m = Mat2::IDENTITY;
    for (i, s) in cell.iter().enumerate() {
        let prev = cell[(i + cell.len() - 1) % cell.len()].ell;
        m = discrete_step(e, s, prev)? * m;
    }
    Ok(m.trace())
}

/// Union of the band sets of all periodic words with period `<= period_limit`
/// over the atoms of `dist`, adjacency regime only.
pub fn almost_sure_spectrum_discrete(
    dist: &SingleGenDistribution,
    period_limit: usize,
    window: (f64, f64),
) -> Result<SpectrumApprox> {
    let sites = dist.sites();
    if sites.iter().any(|s| s.q != 0.0) {
        return Err(Error::Precondition("almost-sure spectrum is available for the adjacency regime only".into()));
    }
    if !(1..=12).contains(&period_limit) || !(window.0 < window.1) {
        return Err(Error::InvalidInput("period limit must lie in 1..=12 and the window be proper".into()));
    }
    let mut cells: Vec<Vec<SiteParams>> = Vec::new();
    for len in 1..=period_limit {
        let total = sites.len().pow(len as u32);
        for code in 0..total {
            let mut c = code;
            cells.push(
                (0..len)
                    .map(|_| {
                        let s = sites[c % sites.len()];
                        c /= sites.len();
                        s
                    })
                    .collect(),
            );
        }
    }
    let h = ((window.1 - window.0) / 20_000.0).min(1e-3);
    let per_cell: Vec<Vec<(f64, f64)>> = cells
        .par_iter()
        .map(|cell| band_set(|e| discrete_cell_trace(e, cell).expect("validated sites"), window, |_| h))
        .collect();
    let bands = merge_intervals(per_cell.into_iter().flatten().collect(), 1e-9);
    let p0 = sites[0].ell;
    let reference = sites.iter().all(|s| s.ell == p0).then(|| {
        let r = 2.0 * (dist.max_branching() as f64).sqrt() * p0;
        (-r, r)
    });
    let hausdorff = reference.map(|(lo, hi)| hausdorff_to_interval(&bands, lo, hi));
    Ok(SpectrumApprox { bands, words_used: cells.len(), reference, hausdorff })
}

/// `{E in window : |tr M_cell(E)| <= 2}` for the continuum one-step maps.
pub fn periodic_spectrum_continuum(cell: &[SiteParams], window: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    if cell.is_empty() {
        return Err(Error::InvalidInput("empty cell".into()));
    }
    if !(window.0 < window.1) {
        return Err(Error::InvalidInput("window must satisfy lo < hi".into()));
    }
    let length: f64 = cell.iter().map(|s| s.ell).sum();
    let trace = |e: f64| cell.iter().fold(Mat2::IDENTITY, |m, s| continuum_step(e, s) * m).trace();
    // tr oscillates in E with period about 4 pi sqrt(E) / length
    let step = |e: f64| (0.05 * e.abs().max(1.0).sqrt() / length).min(0.01);
    Ok(band_set(trace, window, step))
}
