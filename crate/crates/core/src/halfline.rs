//! Continuum half-line solver: shooting through edges and Kirchhoff vertices,
//! Dirichlet-Neumann truncations, Green's functions, eigenfunctions, decay
//! fits and dynamical moment bounds.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::cocycle::{continuum_step, cs, linear_fit, rotation_block};
use crate::error::{Error, Result};
use crate::mat2::Mat2;
use crate::model::{vertex_positions, EnvironmentWord, SiteParams, TreeGeometry};

const RESCALE: f64 = 1e100;

/// Boundary data at `t_j^+` with a factored-out scale `exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShootingState {
    pub u: f64,
    pub du: f64,
    pub j: usize,
    pub log_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Sup,
    L2,
    None,
}

/// Vertex data `(u(t_j^+), u'(t_j^+))`, `j = 0..=n`, of a solution at one energy.
/// Entry `j` equals `data[j] * exp(log_scale[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HalfLineProfile {
    pub energy: f64,
    pub data: Vec<[f64; 2]>,
    pub log_scale: Vec<f64>,
    pub word: EnvironmentWord,
    pub normalization: Normalization,
}

fn vertex_map(s: &SiteParams) -> Mat2 {
    let sb = (s.b as f64).sqrt();
    Mat2::diag(sb, 1.0 / sb) * Mat2::new(1.0, 0.0, s.q, 1.0)
}

fn rescale(v: [f64; 2], ls: f64) -> ([f64; 2], f64) {
    let m = v[0].abs().max(v[1].abs());
    if m > RESCALE || (m < 1.0 / RESCALE && m > 0.0) {
        ([v[0] / m, v[1] / m], ls + m.ln())
    } else {
        (v, ls)
    }
}

impl HalfLineProfile {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of edges covered.
    pub fn edges(&self) -> usize {
        self.data.len().saturating_sub(1)
    }

    pub fn value(&self, j: usize) -> [f64; 2] {
        let k = self.log_scale[j].exp();
        [self.data[j][0] * k, self.data[j][1] * k]
    }

    pub fn positions(&self) -> Vec<f64> {
        vertex_positions(&self.word)[..self.len()].to_vec()
    }

    /// `(u, u')` at `t_j^-` from the data at `t_{j-1}^+`.
    pub fn left_limit(&self, j: usize) -> [f64; 2] {
        rotation_block(self.energy, self.word.params[j - 1].ell).apply(self.value(j - 1))
    }

    /// `(f, f')` at radius `t`, left-continuous at vertices.
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let pos = vertex_positions(&self.word);
        if t <= 0.0 {
            return self.value(0);
        }
        let g = pos.iter().position(|&tj| t <= tj).unwrap_or(pos.len() - 1).max(1).min(self.edges());
        let x = t - pos[g - 1];
        rotation_block(self.energy, x).apply(self.value(g - 1))
    }

    /// Largest relative deviation from `data[j] = M(site_j) data[j-1]`.
    pub fn transfer_consistency(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 1..self.len() {
            let pred = continuum_step(self.energy, &self.word.params[j - 1]).apply(self.data[j - 1]);
            let k = (self.log_scale[j - 1] - self.log_scale[j]).exp();
            let pred = [pred[0] * k, pred[1] * k];
            let d = self.data[j];
            let scale = d[0].abs().max(d[1].abs()).max(pred[0].abs().max(pred[1].abs()));
            if scale > 0.0 {
                worst = worst.max((pred[0] - d[0]).abs().max((pred[1] - d[1]).abs()) / scale);
            }
        }
        worst
    }

    /// Rows `index,t,u,du`.
    pub fn to_csv(&self) -> String {
        let pos = self.positions();
        let mut s = String::from("index,t,u,du\n");
        for j in 0..self.len() {
            let v = self.value(j);
            s.push_str(&format!("{},{:.16e},{:.16e},{:.16e}\n", j, pos[j], v[0], v[1]));
        }
        s
    }

    fn scaled(&self, k: f64, normalization: Normalization) -> HalfLineProfile {
        let (ls, sign) = (k.abs().ln(), k.signum());
        HalfLineProfile {
            energy: self.energy,
            data: self.data.iter().map(|d| [d[0] * sign, d[1] * sign]).collect(),
            log_scale: self.log_scale.iter().map(|l| l + ls).collect(),
            word: self.word.clone(),
            normalization,
        }
        .flatten()
    }

    /// Folds scales into the data where representable.
    fn flatten(mut self) -> Self {
        for j in 0..self.data.len() {
            let k = self.log_scale[j].exp();
            if k.is_finite() && k > 1e-280 {
                self.data[j] = [self.data[j][0] * k, self.data[j][1] * k];
                self.log_scale[j] = 0.0;
            }
        }
        self
    }

    /// `int_0^{t_n} |f|^2`.
    pub fn l2_norm(&self) -> f64 {
        let pos = vertex_positions(&self.word);
        self.integrate(|_, f| f * f, &pos).sqrt()
    }

    /// `sum_edges int g(t, f(t)) dt` over the covered edges.
    pub fn integrate<G: Fn(f64, f64) -> f64>(&self, g: G, pos: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 1..self.len() {
            let v = self.value(j - 1);
            total += edge_quadrature(self.energy, self.word.params[j - 1].ell, |x| {
                let (c, s) = cs(self.energy, x);
                let f = v[0] * c + v[1] * s;
                g(pos[j - 1] + x, f)
            });
        }
        total
    }

    pub fn normalized(&self, normalization: Normalization) -> HalfLineProfile {
        match normalization {
            Normalization::None => self.clone(),
            Normalization::L2 => self.scaled(1.0 / self.l2_norm(), normalization),
            Normalization::Sup => {
                let m = (0..self.len())
                    .map(|j| self.data[j][0].abs().ln() + self.log_scale[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                self.scaled((-m).exp(), normalization)
            }
        }
    }
}

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite 5-point Gauss-Legendre on `[0, ell]` with `sqrt|E| h <= 0.5`.
pub fn edge_quadrature<F: Fn(f64) -> f64>(e: f64, ell: f64, f: F) -> f64 {
    let k = e.abs().max(1.0).sqrt();
    let m = ((k * ell / 0.5).ceil() as usize).max(1);
    let h = ell / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        let mid = h * (i as f64 + 0.5);
        for (x, w) in GL5_X.iter().zip(&GL5_W) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * total
}

/// Forward shot through the first `n` generations from `init` at `t_0^+`.
fn shoot_n(e: f64, word: &EnvironmentWord, n: usize, init: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut data = Vec::with_capacity(n + 1);
    let mut ls = Vec::with_capacity(n + 1);
    let (mut v, mut l) = rescale(init, 0.0);
    data.push(v);
    ls.push(l);
    for s in &word.params[..n] {
        let w = continuum_step(e, s).apply(v);
        (v, l) = rescale(w, l);
        data.push(v);
        ls.push(l);
    }
    (data, ls)
}

pub fn shoot(e: f64, word: &EnvironmentWord, init: (f64, f64)) -> Result<HalfLineProfile> {
    if init.0 == 0.0 && init.1 == 0.0 {
        return Err(Error::InvalidInput("initial data must be nonzero".into()));
    }
    let (data, log_scale) = shoot_n(e, word, word.len(), [init.0, init.1]);
    Ok(HalfLineProfile::flatten(HalfLineProfile { energy: e, data, log_scale, word: word.clone(), normalization: Normalization::None }))
}

/// `f'(t_n^-)` of the Dirichlet solution `f(t_0^+) = 0, f'(t_0^+) = 1`,
/// returned as `(mantissa, log_scale)`.
pub fn neumann_shooting_function(e: f64, word: &EnvironmentWord, n: usize) -> Result<(f64, f64)> {
    if n < 1 || n > word.len() {
        return Err(Error::OutOfRange { index: n, max: word.len() });
    }
    let (data, ls) = shoot_n(e, word, n - 1, [0.0, 1.0]);
    let v = rotation_block(e, word.params[n - 1].ell).apply(data[n - 1]);
    Ok((v[1], ls[n - 1]))
}

/// Number of Dirichlet-Neumann eigenvalues of the depth-`n` truncation strictly
/// below `e`, via the lifted Pruefer angle of the Dirichlet solution.
pub fn eigenvalue_count(e: f64, word: &EnvironmentWord, n: usize) -> usize {
    let k = e.abs().max(1e-300).sqrt();
    // half-turns completed, and the current state
    let mut turns: u64 = 0;
    let mut v = [0.0, 1.0];
    for (j, s) in word.params[..n].iter().enumerate() {
        let w = rotation_block(e, s.ell).apply(v);
        if e > 0.0 {
            // the angle of (sqrt(E) u, u') advances by exactly sqrt(E) ell
            let psi1 = angle_in_turn(k * v[0], v[1]) + k * s.ell;
            let frac = angle_in_turn(k * w[0], w[1]);
            turns += ((psi1 - frac) / PI).round() as u64;
        } else if (v[0] != 0.0 && v[0] * w[0] < 0.0) || (v[0] != 0.0 && w[0] == 0.0) {
            turns += 1;
        }
        let m = w[0].abs().max(w[1].abs());
        let w = [w[0] / m, w[1] / m];
        if j + 1 == n {
            let theta = angle_in_turn(w[0], w[1]);
            return turns as usize + usize::from(theta > FRAC_PI_2);
        }
        let x = vertex_map(s).apply(w);
        let m = x[0].abs().max(x[1].abs());
        v = [x[0] / m, x[1] / m];
    }
    0
}

/// Angle of `(y = u, x = u')` reduced to `[0, pi)`.
fn angle_in_turn(u: f64, du: f64) -> f64 {
    let a = u.atan2(du);
    if a < 0.0 {
        a + PI
    } else if a >= PI {
        a - PI
    } else {
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TruncatedSpectrum {
    pub word: EnvironmentWord,
    pub n: usize,
    pub window: (f64, f64),
    pub eigenvalues: Vec<f64>,
    /// `|f'(t_n^-)| / |(sqrt|E| f, f')|` at each eigenvalue.
    pub residuals: Vec<f64>,
    /// Energies where two eigenvalues could not be separated at 1e-8.
    pub suspected_double: Vec<f64>,
}

impl TruncatedSpectrum {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,energy,residual\n");
        for (i, (e, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            s.push_str(&format!("{},{:.16e},{:.16e}\n", i, e, r));
        }
        s
    }
}

fn shooting_residual(e: f64, word: &EnvironmentWord, n: usize) -> f64 {
    let (data, _) = shoot_n(e, word, n - 1, [0.0, 1.0]);
    let v = rotation_block(e, word.params[n - 1].ell).apply(data[n - 1]);
    let k = e.abs().max(1.0).sqrt();
    v[1].abs() / (k * v[0]).hypot(v[1])
}

/// Default scan resolution `0.005 |window| / n`.
pub fn default_grid_step(window: (f64, f64), n: usize) -> f64 {
    0.005 * (window.1 - window.0) / n as f64
}

/// Dirichlet-Neumann eigenvalues of the depth-`n` truncation in `[lo, hi)`.
///
/// The window is cut into cells no finer than `grid_step` (at most 4096
/// cells), each cell is split until it holds one eigenvalue, and each
/// eigenvalue is refined by bisection on the eigenvalue count to adjacent floats.
pub fn truncated_eigenvalues(
    word: &EnvironmentWord,
    n: usize,
    window: (f64, f64),
    grid_step: f64,
) -> Result<TruncatedSpectrum> {
    if n < 1 || n > word.len() {
        return Err(Error::OutOfRange { index: n, max: word.len() });
    }
    if !(grid_step > 0.0) || !(window.1 > window.0) {
        return Err(Error::InvalidInput("need grid_step > 0 and a nonempty window".into()));
    }
    let (lo, hi) = window;
    let cells = (((hi - lo) / grid_step).ceil() as usize).clamp(1, 4096);
    let h = (hi - lo) / cells as f64;
    let count = |e: f64| eigenvalue_count(e, word, n);
    let mut eigenvalues = Vec::new();
    let mut suspected_double = Vec::new();
    let mut stack = Vec::new();
    let mut prev = (lo, count(lo));
    for i in 1..=cells {
        let b = if i == cells { hi } else { lo + h * i as f64 };
        let cb = count(b);
        if cb > prev.1 {
            stack.push((prev.0, prev.1, b, cb));
        }
        prev = (b, cb);
    }
    while let Some((a, ca, b, cb)) = stack.pop() {
        if cb - ca == 1 {
            let (mut a, mut b) = (a, b);
            // bisect down to adjacent floats; the count is exact away from rounding
            loop {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if count(m) > ca {
                    b = m;
                } else {
                    a = m;
                }
            }
            eigenvalues.push(0.5 * (a + b));
        } else if b - a < 1e-8 {
            suspected_double.push(0.5 * (a + b));
            for _ in 0..cb - ca {
                eigenvalues.push(0.5 * (a + b));
            }
        } else {
            let m = 0.5 * (a + b);
            let cm = count(m);
            if cm > ca {
                stack.push((a, ca, m, cm));
            }
            if cb > cm {
                stack.push((m, cm, b, cb));
            }
        }
    }
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let residuals = eigenvalues.iter().map(|&e| shooting_residual(e, word, n)).collect();
    Ok(TruncatedSpectrum { word: word.clone(), n, window, eigenvalues, residuals, suspected_double })
}

/// Log-scaled states at `t_j^+`, `j = 0..n-1`, and at `t_n^-`, of the solution
/// with `(u, u')(t_n^-) = (1, 0)`.
fn neumann_shot(e: f64, word: &EnvironmentWord, n: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut data = vec![[0.0; 2]; n + 1];
    let mut ls = vec![0.0; n + 1];
    data[n] = [1.0, 0.0];
    let (mut v, mut l) = ([1.0, 0.0], 0.0);
    for j in (0..n).rev() {
        let s = &word.params[j];
        // v is at t_{j+1}^-; step back across edge j+1
        let w = rotation_block(e, s.ell).inverse_sl2().apply(v);
        (v, l) = rescale(w, l);
        data[j] = v;
        ls[j] = l;
        if j > 0 {
            let w = vertex_map(&word.params[j - 1]).inverse_sl2().apply(v);
            (v, l) = rescale(w, l);
        }
    }
    (data, ls)
}

/// Green's function of the depth-`n` truncation at `(x, y)`.
pub fn greens_function(word: &EnvironmentWord, n: usize, e: f64, x: f64, y: f64) -> Result<f64> {
    let g = GreensData::new(word, n, e)?;
    g.eval(x, y)
}

/// Shots used by [`greens_function`], reusable across points.
pub struct GreensData {
    energy: f64,
    positions: Vec<f64>,
    n: usize,
    left: (Vec<[f64; 2]>, Vec<f64>),
    right: (Vec<[f64; 2]>, Vec<f64>),
    /// `(mantissa, log)` of `W = u_-'(t_n^-)`.
    pub wronskian: (f64, f64),
    /// `(mantissa, log)` of `u_+(t_0^+)`.
    pub wronskian_left: (f64, f64),
}

impl GreensData {
    pub fn new(word: &EnvironmentWord, n: usize, e: f64) -> Result<Self> {
        if n < 1 || n > word.len() {
            return Err(Error::OutOfRange { index: n, max: word.len() });
        }
        let left = shoot_n(e, word, n, [0.0, 1.0]);
        let right = neumann_shot(e, word, n);
        let end = rotation_block(e, word.params[n - 1].ell).apply(left.0[n - 1]);
        let wronskian = (end[1], left.1[n - 1]);
        let wronskian_left = (right.0[0][0], right.1[0]);
        let norm = (e.abs().max(1.0).sqrt() * end[0]).hypot(end[1]);
        if (wronskian.0 / norm).abs() < 1e-8 {
            return Err(Error::Precondition(format!("energy {e} is at a truncated eigenvalue")));
        }
        Ok(Self { energy: e, positions: vertex_positions(word), n, left, right, wronskian, wronskian_left })
    }

    /// `(u, log_scale)` of a shot at radius `t`, left-continuous.
    fn at(&self, shot: &(Vec<[f64; 2]>, Vec<f64>), t: f64) -> (f64, f64) {
        let pos = &self.positions;
        let g = pos[1..=self.n].iter().position(|&tj| t <= tj).map_or(self.n, |i| i + 1);
        let x = t - pos[g - 1];
        let v = rotation_block(self.energy, x).apply(shot.0[g - 1]);
        (v[0], shot.1[g - 1])
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let tn = self.positions[self.n];
        if x < 0.0 || y < 0.0 || x > tn || y > tn {
            return Err(Error::InvalidInput(format!("points must lie in [0, {tn}]")));
        }
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        let (ul, ll) = self.at(&self.left, a);
        let (ur, lr) = self.at(&self.right, b);
        let (w, lw) = self.wronskian;
        Ok(ul * ur / w * (ll + lr - lw).exp())
    }
}

/// Normalized eigenfunction at a truncated eigenvalue by two-sided shooting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Eigenfunction {
    pub profile: HalfLineProfile,
    /// Sine of the angle between the left and right shots at the matching vertex.
    pub residual: f64,
    pub matching_vertex: usize,
}

/// Eigenfunction of the depth-`n` truncation at `e_k`, L2-normalized, with data
/// at `t_j^+` for `j < n` and at `t_n^+` (vertex map applied to `t_n^-`).
pub fn eigenfunction_profile(word: &EnvironmentWord, n: usize, e_k: f64) -> Result<Eigenfunction> {
    if n < 1 || n > word.len() {
        return Err(Error::OutOfRange { index: n, max: word.len() });
    }
    let left = shoot_n(e_k, word, n - 1, [0.0, 1.0]);
    let right = neumann_shot(e_k, word, n);
    let norm = |v: [f64; 2]| v[0].hypot(v[1]);
    let mut m = 0;
    let mut best = f64::NEG_INFINITY;
    for j in 0..n {
        let s = norm(left.0[j]).ln() + left.1[j] + norm(right.0[j]).ln() + right.1[j];
        if s > best {
            best = s;
            m = j;
        }
    }
    let (lv, rv) = (left.0[m], right.0[m]);
    let residual = (lv[0] * rv[1] - lv[1] * rv[0]).abs() / (norm(lv) * norm(rv));
    if !(residual < 1e-6) {
        return Err(Error::Precondition(format!("energy {e_k} is not an eigenvalue of the truncation (residual {residual:.3e})")));
    }
    // express the right shot in units of the left one at vertex m
    let c = (lv[0] * rv[0] + lv[1] * rv[1]) / (norm(rv) * norm(rv));
    let shift = left.1[m] - right.1[m];
    let mut data = Vec::with_capacity(n + 1);
    let mut ls = Vec::with_capacity(n + 1);
    for j in 0..=m {
        data.push(left.0[j]);
        ls.push(left.1[j]);
    }
    for j in m + 1..n {
        data.push([right.0[j][0] * c, right.0[j][1] * c]);
        ls.push(right.1[j] + shift);
    }
    let end = vertex_map(&word.params[n - 1]).apply([right.0[n][0] * c, right.0[n][1] * c]);
    data.push(end);
    ls.push(right.1[n] + shift);
    // normalize by the largest scale first to keep exp() in range
    let top = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for l in ls.iter_mut() {
        *l -= top;
    }
    let raw = HalfLineProfile {
        energy: e_k,
        data,
        log_scale: ls,
        word: word.slice(0, n),
        normalization: Normalization::None,
    }
    .flatten();
    Ok(Eigenfunction { profile: raw.normalized(Normalization::L2), residual, matching_vertex: m })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecayFit {
    pub zeta: f64,
    pub lambda_hat: f64,
    pub r_squared: f64,
    pub localized: bool,
}

/// Envelope `|(u, u'/sqrt(max(|E|, 1)))|` at each vertex, in log form.
fn log_envelope(profile: &HalfLineProfile) -> Vec<f64> {
    let k = profile.energy.abs().max(1.0).sqrt();
    (0..profile.len())
        .map(|j| {
            let d = profile.data[j];
            (d[0].hypot(d[1] / k) + 0.0).ln() + profile.log_scale[j]
        })
        .collect()
}

/// Fit `log envelope ~ c - lambda |t_j - zeta|` over the tail of a profile.
///
/// The envelope uses `(u, u'/sqrt(max(|E|,1)))`, which removes the
/// oscillation of `u` within the localization profile. The 10% of tail points
/// nearest the peak are excluded and values at or below 1e-250 are dropped.
pub fn decay_rate_fit(profile: &HalfLineProfile, geometry: &TreeGeometry) -> Result<DecayFit> {
    let pos = &geometry.positions;
    if pos.len() < profile.len() {
        return Err(Error::InvalidInput("geometry shorter than profile".into()));
    }
    let env = log_envelope(profile);
    let (imax, _) = env
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let zeta = pos[imax];
    let floor_ln = 1e-300f64.ln();
    let keep_ln = 1e-250f64.ln();
    let mut tail: Vec<(f64, f64)> = (0..profile.len())
        .filter(|&j| j != imax)
        .map(|j| ((pos[j] - zeta).abs(), env[j].max(floor_ln)))
        .collect();
    if tail.len() < 50 {
        return Err(Error::Precondition("decay fit needs at least 50 tail vertices".into()));
    }
    tail.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let skip = tail.len() / 10;
    let pts: Vec<(f64, f64)> = tail[skip..].iter().copied().filter(|p| p.1 > keep_ln).collect();
    if pts.len() < 2 {
        return Err(Error::Precondition("tail is numerically zero".into()));
    }
    let fit = linear_fit(&pts).ok_or_else(|| Error::Numerical("degenerate decay fit".into()))?;
    let lambda_hat = -fit.slope;
    Ok(DecayFit { zeta, lambda_hat, r_squared: fit.r_squared, localized: lambda_hat > 0.01 && fit.r_squared >= 0.5 })
}

/// A test function on `[0, t_n]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Psi {
    /// `a + b x + c x^2` in the local coordinate `x` of edge `j` (index `j - 1`).
    Quadratic(Vec<[f64; 3]>),
    Profile(HalfLineProfile),
}

impl Psi {
    fn value(&self, edge: usize, x: f64, t: f64) -> f64 {
        match self {
            Psi::Quadratic(c) => c.get(edge).map_or(0.0, |c| c[0] + c[1] * x + c[2] * x * x),
            Psi::Profile(p) => {
                if edge + 1 >= p.len() {
                    0.0
                } else {
                    let _ = t;
                    let v = p.value(edge);
                    let (c, s) = cs(p.energy, x);
                    v[0] * c + v[1] * s
                }
            }
        }
    }
}

/// `int f(t) g(t) dt` over the first `n` edges for eigenfunction `f`.
pub fn inner_with<G: Fn(usize, f64, f64) -> f64>(f: &HalfLineProfile, pos: &[f64], g: G) -> f64 {
    let mut total = 0.0;
    for j in 1..f.len() {
        let v = f.value(j - 1);
        total += edge_quadrature(f.energy, f.word.params[j - 1].ell, |x| {
            let (c, s) = cs(f.energy, x);
            (v[0] * c + v[1] * s) * g(j - 1, x, pos[j - 1] + x)
        });
    }
    total
}

/// `|| |X - origin|^p f ||` with `origin` the radius of the profile's start.
pub fn weighted_norm(f: &HalfLineProfile, pos: &[f64], p: f64) -> f64 {
    let mut total = 0.0;
    for j in 1..f.len() {
        let v = f.value(j - 1);
        total += edge_quadrature(f.energy, f.word.params[j - 1].ell, |x| {
            let (c, s) = cs(f.energy, x);
            let u = v[0] * c + v[1] * s;
            (pos[j - 1] + x).abs().powf(2.0 * p) * u * u
        });
    }
    total.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MomentResult {
    pub value: f64,
    pub eigenvalues_used: usize,
    pub warnings: Vec<String>,
}

impl MomentResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("moment serializes")
    }
}

/// Window eigenpairs of the depth-`n` truncation, L2-normalized.
pub fn window_eigenpairs(
    word: &EnvironmentWord,
    n: usize,
    window: (f64, f64),
) -> Result<(TruncatedSpectrum, Vec<Eigenfunction>, Vec<String>)> {
    let spec = truncated_eigenvalues(word, n, window, default_grid_step(window, n))?;
    let mut warnings = Vec::new();
    let width = window.1 - window.0;
    let spacing = width / (spec.eigenvalues.len() as f64 + 1.0);
    for &e in &spec.eigenvalues {
        if (e - window.0).min(window.1 - e) < 1e-3 * spacing.min(1.0) {
            warnings.push(format!("eigenvalue {e} lies at the window boundary; truncation-sensitive"));
        }
    }
    if !spec.suspected_double.is_empty() {
        warnings.push(format!("suspected double eigenvalues at {:?}", spec.suspected_double));
    }
    let efs = spec.eigenvalues.iter().map(|&e| eigenfunction_profile(word, n, e)).collect::<Result<Vec<_>>>()?;
    Ok((spec, efs, warnings))
}

/// `sum_k |<phi_k, psi>| * || |X|^p phi_k ||` over window eigenpairs of the
/// depth-`n` truncation.
pub fn dynamical_moment(word: &EnvironmentWord, n: usize, window: (f64, f64), p: f64, psi: &Psi) -> Result<MomentResult> {
    if !(p > 0.0) {
        return Err(Error::InvalidInput("moment order p must be > 0".into()));
    }
    let pos = vertex_positions(word);
    let (_, efs, warnings) = window_eigenpairs(word, n, window)?;
    let value = efs
        .iter()
        .map(|ef| {
            let f = &ef.profile;
            inner_with(f, &pos, |edge, x, t| psi.value(edge, x, t)).abs() * weighted_norm(f, &pos, p)
        })
        .sum();
    Ok(MomentResult { value, eigenvalues_used: efs.len(), warnings })
}

/// As [`dynamical_moment`] with `<|phi_k|, weight>` in place of `|<phi_k, psi>|`.
pub fn dynamical_moment_abs(
    word: &EnvironmentWord,
    n: usize,
    window: (f64, f64),
    p: f64,
    weight: &Psi,
) -> Result<MomentResult> {
    if !(p > 0.0) {
        return Err(Error::InvalidInput("moment order p must be > 0".into()));
    }
    let pos = vertex_positions(word);
    let (_, efs, warnings) = window_eigenpairs(word, n, window)?;
    let value = efs
        .iter()
        .map(|ef| {
            let f = &ef.profile;
            abs_inner(f, &pos, |edge, x, t| weight.value(edge, x, t)) * weighted_norm(f, &pos, p)
        })
        .sum();
    Ok(MomentResult { value, eigenvalues_used: efs.len(), warnings })
}

/// `int |f(t)| g(t) dt`.
pub fn abs_inner<G: Fn(usize, f64, f64) -> f64>(f: &HalfLineProfile, pos: &[f64], g: G) -> f64 {
    let mut total = 0.0;
    for j in 1..f.len() {
        let v = f.value(j - 1);
        total += edge_quadrature(f.energy, f.word.params[j - 1].ell, |x| {
            let (c, s) = cs(f.energy, x);
            (v[0] * c + v[1] * s).abs() * g(j - 1, x, pos[j - 1] + x)
        });
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{periodic_word, sample_word, SingleGenDistribution};

    fn free(n: usize) -> EnvironmentWord {
        periodic_word(&[SiteParams::new(1, 1.0, 0.0)], n).unwrap()
    }

    #[test]
    fn shoot_examples() {
        let p = shoot(PI * PI, &free(6), (0.0, 1.0)).unwrap();
        for j in 0..p.len() {
            assert!(p.value(j)[0].abs() < 1e-14);
        }
        let w = EnvironmentWord::explicit(vec![SiteParams::new(2, 1.0, 0.0)]);
        let p = shoot(PI * PI / 4.0, &w, (0.0, 1.0)).unwrap();
        let v = p.value(1);
        assert!((v[0] - 2.0 * 2f64.sqrt() / PI).abs() < 1e-15 && v[1].abs() < 1e-15);
        let w = sample_word(&SingleGenDistribution::uniform(&[SiteParams::new(2, 1.0, 0.3), SiteParams::new(3, 1.5, -0.2)]).unwrap(), 30, 1).unwrap();
        let a = shoot(2.7, &w, (0.3, 1.0)).unwrap();
        let b = shoot(2.7, &w, (0.6, 2.0)).unwrap();
        for j in 0..a.len() {
            let (x, y) = (a.value(j), b.value(j));
            assert!((2.0 * x[0] - y[0]).abs() <= 1e-14 * y[0].abs().max(1.0));
        }
        assert!(a.transfer_consistency() < 1e-9);
    }

    #[test]
    fn neumann_function_free() {
        for e in [0.3, 2.0, 7.5] {
            let (m, l) = neumann_shooting_function(e, &free(3), 1).unwrap();
            assert!((m * l.exp() - e.sqrt().cos()).abs() < 1e-14);
        }
        let (m, _) = neumann_shooting_function(PI * PI / 4.0, &free(3), 1).unwrap();
        assert!(m.abs() < 1e-15);
    }

    #[test]
    fn free_truncated_spectra() {
        let s = truncated_eigenvalues(&free(1), 1, (0.0, 30.0), 0.01).unwrap();
        assert_eq!(s.eigenvalues.len(), 2);
        assert!((s.eigenvalues[0] - PI * PI / 4.0).abs() < 1e-9);
        assert!((s.eigenvalues[1] - 9.0 * PI * PI / 4.0).abs() < 1e-9);
        let s = truncated_eigenvalues(&free(2), 2, (0.0, 10.0), 0.01).unwrap();
        assert_eq!(s.eigenvalues.len(), 2);
        assert!((s.eigenvalues[0] - PI * PI / 16.0).abs() < 1e-9);
        assert!((s.eigenvalues[1] - 9.0 * PI * PI / 16.0).abs() < 1e-9);
    }

    #[test]
    fn count_tracks_negative_energies() {
        // strong attractive coupling binds states below zero
        let w = periodic_word(&[SiteParams::new(2, 1.0, -3.0)], 8).unwrap();
        let s = truncated_eigenvalues(&w, 8, (-20.0, 5.0), 0.01).unwrap();
        assert!(s.eigenvalues.iter().any(|&e| e < 0.0));
        for (&e, &r) in s.eigenvalues.iter().zip(&s.residuals) {
            assert!(r < 1e-8, "E={e} r={r}");
        }
    }

    #[test]
    fn greens_function_free_closed_form() {
        let w = free(1);
        for &(x, y) in &[(0.2, 0.7), (0.5, 0.5), (0.9, 0.1)] {
            let (a, b) = if x <= y { (x, y) } else { (y, x) };
            let exact = f64::sinh(a) * f64::cosh(b - 1.0) / f64::cosh(1.0);
            assert!((greens_function(&w, 1, -1.0, x, y).unwrap() - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenfunction_free_is_sine() {
        let ef = eigenfunction_profile(&free(1), 1, PI * PI / 4.0).unwrap();
        let f = &ef.profile;
        for &t in &[0.1, 0.5, 0.9] {
            let v = f.eval(t)[0];
            assert!((v.abs() - (PI * t / 2.0).sin() * 2f64.sqrt()).abs() < 1e-12);
        }
        assert!((f.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_decay_fit() {
        let n = 100;
        let w = free(n);
        let geo = TreeGeometry::continuum(w.clone()).unwrap();
        let data: Vec<[f64; 2]> = (0..=n).map(|j| [(-0.3 * (j as f64 - 5.0).abs()).exp(), 0.0]).collect();
        let p = HalfLineProfile { energy: 1.0, data, log_scale: vec![0.0; n + 1], word: w, normalization: Normalization::None };
        let fit = decay_rate_fit(&p, &geo).unwrap();
        assert!((fit.lambda_hat - 0.3).abs() < 1e-6 && fit.zeta == 5.0);
    }

    #[test]
    fn free_eigenfunction_is_not_localized() {
        let n = 80;
        let w = free(n);
        let s = truncated_eigenvalues(&w, n, (10.0, 12.0), 0.001).unwrap();
        let ef = eigenfunction_profile(&w, n, s.eigenvalues[0]).unwrap();
        let fit = decay_rate_fit(&ef.profile, &TreeGeometry::continuum(w).unwrap()).unwrap();
        assert!(fit.lambda_hat.abs() < 1e-3 && !fit.localized, "{fit:?}");
    }

    #[test]
    fn stationary_state_moment() {
        let d = SingleGenDistribution::uniform(&[SiteParams::new(2, 1.0, 0.0), SiteParams::new(3, 1.0, 0.0)]).unwrap();
        let w = sample_word(&d, 20, 4).unwrap();
        let (spec, efs, _) = window_eigenpairs(&w, 20, (8.0, 12.0)).unwrap();
        assert!(!spec.eigenvalues.is_empty());
        let pos = vertex_positions(&w);
        let phi = efs[0].profile.clone();
        let m = dynamical_moment(&w, 20, (8.0, 12.0), 1.0, &Psi::Profile(phi.clone())).unwrap();
        assert!((m.value - weighted_norm(&phi, &pos, 1.0)).abs() < 1e-10 * m.value);
        let zero = dynamical_moment(&w, 20, (8.0, 12.0), 1.0, &Psi::Quadratic(vec![[0.0; 3]; 20])).unwrap();
        assert_eq!(zero.value, 0.0);
    }
}
