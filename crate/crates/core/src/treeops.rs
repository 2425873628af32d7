//! Continuum radial trees: vertex addresses, lifts of half-line functions,
//! Kirchhoff residuals, tree decay and tree moment bounds.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{cs, linear_fit};
use crate::error::{Error, Result};
use crate::halfline::{edge_quadrature, weighted_norm, window_eigenpairs, HalfLineProfile};
use crate::model::{EnvironmentWord, TreeGeometry};

/// Child indices from the root, each in `1..=b_g`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexAddress {
    pub path: Vec<u32>,
}

impl VertexAddress {
    pub fn root() -> Self {
        Self { path: Vec::new() }
    }

    pub fn new(path: Vec<u32>, geometry: &TreeGeometry) -> Result<Self> {
        for (g, &c) in path.iter().enumerate() {
            if c < 1 || c > geometry.branching(g) {
                return Err(Error::InvalidInput(format!("child index {c} at depth {g} outside 1..={}", geometry.branching(g))));
            }
        }
        if path.len() > geometry.depth() {
            return Err(Error::OutOfRange { index: path.len(), max: geometry.depth() });
        }
        Ok(Self { path })
    }

    pub fn generation(&self) -> usize {
        self.path.len()
    }

    pub fn child(&self, c: u32) -> Self {
        let mut path = self.path.clone();
        path.push(c);
        Self { path }
    }

    pub fn is_prefix_of(&self, other: &VertexAddress) -> bool {
        other.path.len() >= self.path.len() && other.path[..self.path.len()] == self.path[..]
    }

    pub fn path_string(&self) -> String {
        if self.path.is_empty() {
            return "o".into();
        }
        self.path.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(".")
    }
}

/// All vertices of generation `g`, in lexicographic order.
pub fn vertices_at(geometry: &TreeGeometry, g: usize) -> Vec<VertexAddress> {
    let mut level = vec![VertexAddress::root()];
    for d in 0..g {
        let b = geometry.branching(d);
        level = level.iter().flat_map(|v| (1..=b).map(move |c| v.child(c))).collect();
    }
    level
}

/// A half-line profile lifted to `T_v` with Fourier index `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LiftedFunction {
    pub base: VertexAddress,
    pub fourier_index: u32,
    /// Solution on `[t_n, t_depth]`, local coordinate `t - t_n`.
    pub profile: HalfLineProfile,
}

/// Lift `profile`, a solution of the half-line problem of `T_v` started with
/// Dirichlet data at `t_{gen(v)}`, to the tree.
pub fn lift(profile: &HalfLineProfile, v: &VertexAddress, k: u32, geometry: &TreeGeometry) -> Result<LiftedFunction> {
    let n = v.generation();
    let b = geometry.branching(n);
    if n == 0 {
        if k != 0 && !(k < b) {
            return Err(Error::InvalidInput(format!("Fourier index {k} invalid at the root")));
        }
    } else if k < 1 || k >= b {
        return Err(Error::InvalidInput(format!("Fourier index must lie in 1..{b}, got {k}")));
    }
    if profile.value(0)[0].abs() > 1e-12 * profile.value(0)[1].abs().max(1e-300) {
        return Err(Error::Precondition("profile must start with Dirichlet data".into()));
    }
    let edges = profile.edges();
    if n + edges > geometry.depth() || profile.word.params[..edges] != geometry.word.params[n..n + edges] {
        return Err(Error::Precondition("profile word does not match the subtree of v".into()));
    }
    Ok(LiftedFunction { base: v.clone(), fourier_index: k, profile: profile.clone() })
}

impl LiftedFunction {
    fn base_gen(&self) -> usize {
        self.base.generation()
    }

    /// Last band covered by the lift.
    pub fn last_band(&self) -> usize {
        self.base_gen() + self.profile.edges()
    }

    /// Phase and weight factor on the edge ending at `end`, or `None` off the support.
    fn factor(&self, end: &VertexAddress, geometry: &TreeGeometry) -> Option<Complex64> {
        let n = self.base_gen();
        let g = end.generation();
        if g <= n || g > self.last_band() || !self.base.is_prefix_of(end) {
            return None;
        }
        let b = geometry.branching(n);
        let j = end.path[n];
        let phase = Complex64::from_polar(1.0, 2.0 * PI * (j as f64) * (self.fourier_index as f64) / b as f64);
        Some(phase / geometry.subtree_weight(n, g).sqrt())
    }

    /// `(F, dF/dt)` on the edge ending at `end`, at radius `t` in its band.
    pub fn eval_edge(&self, end: &VertexAddress, t: f64, geometry: &TreeGeometry) -> (Complex64, Complex64) {
        match self.factor(end, geometry) {
            None => (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
            Some(c) => {
                let g = end.generation();
                let n = self.base_gen();
                let pos = &geometry.positions;
                let v = self.profile.value(g - 1 - n);
                let (cc, ss) = cs(self.profile.energy, t - pos[g - 1]);
                let e = self.profile.energy;
                let f = v[0] * cc + v[1] * ss;
                let df = -e * ss * v[0] + cc * v[1];
                (c * f, c * df)
            }
        }
    }

    /// Value at the far end of the edge ending at `end`.
    pub fn at_vertex(&self, end: &VertexAddress, geometry: &TreeGeometry) -> Complex64 {
        self.eval_edge(end, geometry.positions[end.generation()], geometry).0
    }

    /// Rows `generation,vertexPathString,branchIndex,re,im` up to `depth`.
    pub fn to_csv(&self, geometry: &TreeGeometry, depth: usize) -> String {
        let mut s = String::from("generation,vertexPathString,branchIndex,re,im\n");
        let n = self.base_gen();
        for g in n + 1..=depth.min(self.last_band()) {
            for v in vertices_at(geometry, g) {
                if !self.base.is_prefix_of(&v) {
                    continue;
                }
                let z = self.at_vertex(&v, geometry);
                s.push_str(&format!("{},{},{},{:.16e},{:.16e}\n", g, v.path_string(), v.path[n], z.re, z.im));
            }
        }
        s
    }
}

/// Tree-L2 inner product `<a, b>` over bands `1..=depth`, by edgewise quadrature.
pub fn tree_inner(a: &LiftedFunction, b: &LiftedFunction, geometry: &TreeGeometry, depth: usize) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    let pos = &geometry.positions;
    for g in 1..=depth {
        for v in vertices_at(geometry, g) {
            if a.factor(&v, geometry).is_none() || b.factor(&v, geometry).is_none() {
                continue;
            }
            let e = a.profile.energy.abs().max(b.profile.energy.abs());
            let ell = pos[g] - pos[g - 1];
            let re = edge_quadrature(e, ell, |x| {
                let (fa, _) = a.eval_edge(&v, pos[g - 1] + x, geometry);
                let (fb, _) = b.eval_edge(&v, pos[g - 1] + x, geometry);
                (fa.conj() * fb).re
            });
            let im = edge_quadrature(e, ell, |x| {
                let (fa, _) = a.eval_edge(&v, pos[g - 1] + x, geometry);
                let (fb, _) = b.eval_edge(&v, pos[g - 1] + x, geometry);
                (fa.conj() * fb).im
            });
            total += Complex64::new(re, im);
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KirchhoffResidual {
    pub continuity_residual: f64,
    pub flux_residual: f64,
    /// Largest `|F|, |F'|` among the one-sided limits, for relative tolerances.
    pub scale: f64,
}

/// Continuity and flux residuals of a lift at vertex `u`. Derivatives are taken
/// pointing away from `u`; the flux residual is `|sum - q(u) F(u)|`. The root
/// is a Dirichlet boundary, where only `|F(root)|` is reported.
pub fn kirchhoff_residual(f: &LiftedFunction, u: &VertexAddress, geometry: &TreeGeometry) -> Result<KirchhoffResidual> {
    let g = u.generation();
    if g >= geometry.depth() {
        return Err(Error::OutOfRange { index: g, max: geometry.depth() - 1 });
    }
    let pos = &geometry.positions;
    let t = pos[g];
    let mut values = Vec::new();
    let mut flux = Complex64::new(0.0, 0.0);
    let mut scale: f64 = 0.0;
    if g > 0 {
        let (v, d) = f.eval_edge(u, t, geometry);
        values.push(v);
        flux -= d;
        scale = scale.max(v.norm()).max(d.norm());
    }
    for c in 1..=geometry.branching(g) {
        let child = u.child(c);
        let (v, d) = f.eval_edge(&child, t, geometry);
        values.push(v);
        flux += d;
        scale = scale.max(v.norm()).max(d.norm());
    }
    let mut cont: f64 = 0.0;
    for a in &values {
        for b in &values {
            cont = cont.max((a - b).norm());
        }
    }
    if g == 0 {
        let root_value = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        return Ok(KirchhoffResidual { continuity_residual: cont.max(root_value), flux_residual: 0.0, scale });
    }
    // the coupling at u belongs to generation g, i.e. word entry g - 1
    let q = geometry.word.params[g - 1].q;
    let fu = values[0];
    Ok(KirchhoffResidual { continuity_residual: cont, flux_residual: (flux - q * fu).norm(), scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeDecay {
    pub c: f64,
    pub lambda: f64,
    pub r_squared: f64,
    pub holds: bool,
}

/// Checks `|f(x)| <= C exp(-lambda |x|) / sqrt(w_o(|x|))` generation by
/// generation.
///
/// The per-generation sample is the largest envelope
/// `|(F, F'/sqrt(max(|E|,1)))| sqrt(w_o(g))` over the vertices of band `g`.
/// `lambda` is the least-squares decay rate beyond the peak (the 10% of
/// samples nearest the peak excluded) and `C` the smallest constant for which
/// the samples from the peak on obey the bound. `holds` requires
/// `lambda > 0.01`, `R^2 >= 0.5`, and every sample within 5% of the bound.
pub fn tree_decay_check(f: &LiftedFunction, geometry: &TreeGeometry) -> Result<TreeDecay> {
    let n = f.base_gen();
    let k = f.profile.energy.abs().max(1.0).sqrt();
    let pos = &geometry.positions;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for g in n + 1..=f.last_band() {
        // all vertices of T_v in band g carry the same modulus
        let mut end = f.base.clone();
        while end.generation() < g {
            end = end.child(1);
        }
        let (v, d) = f.eval_edge(&end, pos[g], geometry);
        let env = v.norm().hypot(d.norm() / k) * geometry.gen_weights[g].sqrt();
        let log_env = if geometry.gen_weights[g].is_finite() {
            env.max(1e-300).ln()
        } else {
            v.norm().hypot(d.norm() / k).max(1e-300).ln() + 0.5 * geometry.log_weights[g]
        };
        samples.push((pos[g], log_env));
    }
    if samples.len() < 3 {
        return Err(Error::Precondition("lift covers too few generations".into()));
    }
    let (ipeak, _) = samples.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, s)| if s.1 > a.1 { (i, s.1) } else { a });
    let tail = &samples[ipeak..];
    let skip = tail.len() / 10;
    let pts: Vec<(f64, f64)> = tail[skip.max(1).min(tail.len().saturating_sub(2))..]
        .iter()
        .copied()
        .filter(|p| p.1 > 1e-250f64.ln())
        .collect();
    let fit = linear_fit(&pts).ok_or_else(|| Error::Numerical("tree decay fit is degenerate".into()))?;
    let lambda = -fit.slope;
    let log_c = tail.iter().map(|(t, l)| l + lambda * t).fold(f64::NEG_INFINITY, f64::max);
    let slack = 1.05f64.ln();
    let comply = samples.iter().all(|(t, l)| *l <= log_c - lambda * t + slack);
    Ok(TreeDecay {
        c: log_c.exp(),
        lambda,
        r_squared: fit.r_squared,
        holds: lambda > 0.01 && fit.r_squared >= 0.5 && comply,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeMomentResult {
    pub value: f64,
    /// `(n, m(n), contribution per base vertex)`
    pub per_generation: Vec<(usize, f64, f64)>,
    pub warnings: Vec<String>,
}

impl TreeMomentResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree moment serializes")
    }
}

/// Moment bound for `psi = chi_K`, `K` the ball of radius `r` about the root:
/// `sum_{n: t_n < r} m(n) sum_{E_j(n) in I} (int_{t_n}^r sqrt(w_v(t)) |f_{n,j}|)
/// || |x|^p f_{n,j} ||`, with `f_{n,j}` the window eigenfunctions of the
/// half-line problem of generation `n` truncated at `depth`.
pub fn tree_dynamical_moment(
    word: &EnvironmentWord,
    depth: usize,
    window: (f64, f64),
    p: f64,
    compact_support_radius: f64,
) -> Result<TreeMomentResult> {
    if depth < 1 || depth > word.len() {
        return Err(Error::OutOfRange { index: depth, max: word.len() });
    }
    let geometry = TreeGeometry::continuum(word.slice(0, depth))?;
    let pos = geometry.positions.clone();
    let r = compact_support_radius;
    if !(r >= 0.0) || r > pos[depth] / 2.0 {
        return Err(Error::InvalidInput(format!("support radius must lie in [0, {}]", pos[depth] / 2.0)));
    }
    let bases: Vec<usize> = (0..depth).filter(|&n| pos[n] < r).collect();
    let parts: Vec<Result<(usize, f64, f64, Vec<String>)>> = bases
        .par_iter()
        .map(|&n| {
            let sub = word.slice(n, depth - n);
            let (_, efs, mut warnings) = window_eigenpairs(&sub, depth - n, window)?;
            if efs.is_empty() {
                warnings.push(format!("no eigenvalues in window for base generation {n}; depth may be too small"));
            }
            let shifted: Vec<f64> = pos[n..].to_vec();
            let mut acc = 0.0;
            for ef in &efs {
                let f = &ef.profile;
                let mut mass = 0.0;
                for j in 1..f.len() {
                    let g = n + j;
                    let (a, b) = (pos[g - 1], pos[g].min(r));
                    if b <= a {
                        break;
                    }
                    let v = f.value(j - 1);
                    let w = geometry.subtree_weight(n, g).sqrt();
                    mass += w * edge_quadrature(f.energy, b - a, |x| {
                        let (c, s) = cs(f.energy, x);
                        (v[0] * c + v[1] * s).abs()
                    });
                }
                acc += mass * weighted_norm(f, &shifted, p);
            }
            Ok((n, geometry.multiplicities[n], acc, warnings))
        })
        .collect();
    let mut value = 0.0;
    let mut per_generation = Vec::new();
    let mut warnings = Vec::new();
    for part in parts {
        let (n, m, acc, w) = part?;
        value += m * acc;
        per_generation.push((n, m, acc));
        warnings.extend(w);
    }
    Ok(TreeMomentResult { value, per_generation, warnings })
}
