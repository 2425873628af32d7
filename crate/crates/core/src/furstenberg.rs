//! Commutator analysis of one-step pairs and exceptional energy sets.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cocycle::{cs, lyapunov_mc, LyapunovEstimate, OneStepMap};
use crate::error::{Error, Result};
use crate::mat2::{Mat2, ScaledMat2};
use crate::model::{substream, SingleGenDistribution, SiteParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairAnalysis {
    pub site1: SiteParams,
    pub site2: SiteParams,
    pub energy: f64,
    pub g: Mat2,
    pub det_g: f64,
    pub traces: (f64, f64),
}

/// One-step matrix of a single site as used in pair analysis. The discrete map
/// takes `p_{j-1} = p_j`, i.e. the constant-parameter transfer matrix.
pub fn pair_step(map: OneStepMap, e: f64, s: &SiteParams) -> Mat2 {
    match map {
        OneStepMap::ContinuumKirchhoff => map.step(e, s, None),
        OneStepMap::DiscreteJacobi => map.step(e, s, Some(s)),
    }
}

pub fn commutator(e: f64, s1: &SiteParams, s2: &SiteParams, map: OneStepMap) -> PairAnalysis {
    let m1 = pair_step(map, e, s1);
    let m2 = pair_step(map, e, s2);
    let g = m1.commutator(&m2);
    PairAnalysis { site1: *s1, site2: *s2, energy: e, g, det_g: g.det(), traces: (m1.trace(), m2.trace()) }
}

/// `[M_1, M_2]` for two continuum sites with equal branching `b`, `q = 0` and
/// lengths `ell1`, `ell2`.
pub fn rlm_commutator_closed_form(e: f64, b: u32, ell1: f64, ell2: f64) -> Result<Mat2> {
    if ell1 == ell2 {
        return Err(Error::Precondition("edge lengths must differ".into()));
    }
    let (_, s) = cs(e, ell2 - ell1);
    let bm = b as f64 - 1.0;
    Ok(Mat2::new(0.0, bm * s, bm / b as f64 * e * s, 0.0))
}

/// `-(b1 - b2)^2 / (b1 b2) sin^2(sqrt(E))` for unit lengths and `q = 0`.
pub fn rbm_det_closed_form(e: f64, b1: u32, b2: u32) -> f64 {
    let (b1, b2) = (b1 as f64, b2 as f64);
    let (_, s) = cs(e, 1.0);
    // sin^2(sqrt E) = E s^2, analytic through E <= 0
    -(b1 - b2).powi(2) / (b1 * b2) * e * s * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExceptionalKind {
    ContinuumRBM,
    ContinuumRLM,
    ContinuumGeneric,
    DiscreteCase1a,
    DiscreteCase1bi,
    DiscreteCase1bii,
    DiscreteCase2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CertificateKind {
    DetGRoot,
    TraceZeroPair,
    AnalyticFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Certificate {
    pub energy: f64,
    pub kind: CertificateKind,
    pub site1: SiteParams,
    pub site2: SiteParams,
    pub det_g: f64,
    pub traces: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSet {
    pub kind: ExceptionalKind,
    pub energies: Vec<f64>,
    pub certificates: Vec<Certificate>,
    /// More than one certified pair was intersected.
    pub candidate: bool,
}

impl ExceptionalSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("exceptional set serializes")
    }
}

struct PairSet {
    kind: ExceptionalKind,
    energies: Vec<f64>,
    certificate: CertificateKind,
    site1: SiteParams,
    site2: SiteParams,
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Roots of `f` in `[lo, hi]`: sign changes, plus local minima of `|f|` that
/// touch zero (even multiplicity), refined by bisection on a centered
/// derivative.
pub fn scan_roots<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64, touch_tol: f64) -> Vec<f64> {
    let cells = ((hi - lo) / step).ceil().max(1.0) as usize;
    let h = (hi - lo) / cells as f64;
    let xs: Vec<f64> = (0..=cells).map(|i| lo + h * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut roots = Vec::new();
    for i in 0..cells {
        if ys[i] == 0.0 {
            roots.push(xs[i]);
        } else if ys[i] * ys[i + 1] < 0.0 {
            roots.push(bisect(&f, xs[i], xs[i + 1], 1e-13 * (1.0 + xs[i].abs())));
        }
    }
    if ys[cells] == 0.0 {
        roots.push(xs[cells]);
    }
    let df = |x: f64| {
        let d = 1e-5 * (1.0 + x.abs());
        (f(x + d) - f(x - d)) / (2.0 * d)
    };
    for i in 1..cells {
        let (l, m, r) = (ys[i - 1].abs(), ys[i].abs(), ys[i + 1].abs());
        if m <= l && m <= r && ys[i - 1] * ys[i + 1] > 0.0 {
            let (a, b) = (xs[i - 1], xs[i + 1]);
            if df(a) * df(b) >= 0.0 {
                continue;
            }
            let x = bisect(df, a, b, 1e-13 * (1.0 + a.abs()));
            if f(x).abs() < touch_tol && !roots.iter().any(|r: &f64| (r - x).abs() < 10.0 * h) {
                roots.push(x);
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    roots
}

/// Largest `|det g|` over a coarse scan; zero means the pair commutes on the window.
fn identically_zero<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> bool {
    (0..=64).all(|i| f(lo + (hi - lo) * i as f64 / 64.0).abs() < 1e-13)
}

fn continuum_pair(s1: &SiteParams, s2: &SiteParams, lo: f64, hi: f64) -> Result<Option<PairSet>> {
    let map = OneStepMap::ContinuumKirchhoff;
    let det = |e: f64| commutator(e, s1, s2, map).det_g;
    if identically_zero(&det, lo, hi) {
        return Ok(None);
    }
    let numeric = scan_roots(det, lo, hi, 0.01, 1e-10);
    let analytic = if s1.ell == s2.ell && s1.q == 0.0 && s2.q == 0.0 && s1.b != s2.b {
        let k0 = (lo.max(0.0).sqrt() * s1.ell / PI).floor() as i64;
        let es: Vec<f64> = (k0..)
            .map(|k| (PI * k as f64 / s1.ell).powi(2))
            .skip_while(|&e| e <= lo)
            .take_while(|&e| e < hi)
            .collect();
        Some((ExceptionalKind::ContinuumRBM, es))
    } else if s1.b == s2.b && s1.b > 1 && s1.q == 0.0 && s2.q == 0.0 {
        let d = (s1.ell - s2.ell).abs();
        let k0 = (lo.max(0.0).sqrt() * d / PI).floor() as i64;
        let es: Vec<f64> = (k0..)
            .map(|k| (PI * k as f64 / d).powi(2))
            .skip_while(|&e| e <= lo)
            .take_while(|&e| e < hi)
            .collect();
        Some((ExceptionalKind::ContinuumRLM, es))
    } else {
        None
    };
    match analytic {
        Some((kind, es)) => {
            let agrees = es.len() == numeric.len()
                && es.iter().zip(&numeric).all(|(a, b)| (a - b).abs() < 1e-8 * (1.0 + a.abs()));
            if !agrees {
                return Err(Error::Numerical(format!(
                    "closed-form exceptional energies {es:?} disagree with scan {numeric:?}"
                )));
            }
            Ok(Some(PairSet { kind, energies: es, certificate: CertificateKind::AnalyticFormula, site1: *s1, site2: *s2 }))
        }
        None => Ok(Some(PairSet {
            kind: ExceptionalKind::ContinuumGeneric,
            energies: numeric,
            certificate: CertificateKind::DetGRoot,
            site1: *s1,
            site2: *s2,
        })),
    }
}

fn intersect(sets: Vec<PairSet>, map: OneStepMap, generic: ExceptionalKind) -> Result<ExceptionalSet> {
    if sets.is_empty() {
        return Err(Error::Precondition("no pair of atoms yields a Furstenberg certificate".into()));
    }
    let candidate = sets.len() > 1;
    let first = &sets[0];
    let energies: Vec<f64> = first
        .energies
        .iter()
        .copied()
        .filter(|e| sets[1..].iter().all(|s| s.energies.iter().any(|x| (x - e).abs() < 1e-7 * (1.0 + e.abs()))))
        .collect();
    let kind = if sets.iter().all(|s| s.kind == first.kind) {
        first.kind
    } else {
        sets.iter().find(|s| s.energies.len() == energies.len()).map_or(generic, |s| s.kind)
    };
    let mut certificates = Vec::new();
    for &e in &energies {
        for s in &sets {
            let pa = commutator(e, &s.site1, &s.site2, map);
            certificates.push(Certificate {
                energy: e,
                kind: s.certificate,
                site1: s.site1,
                site2: s.site2,
                det_g: pa.det_g,
                traces: pa.traces,
            });
        }
    }
    Ok(ExceptionalSet { kind, energies, certificates, candidate })
}

fn pairs(dist: &SingleGenDistribution) -> Vec<(SiteParams, SiteParams)> {
    let s = dist.sites();
    let mut out = Vec::new();
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            if s[i] != s[j] {
                out.push((s[i], s[j]));
            }
        }
    }
    out
}

/// Candidate exceptional energies of a continuum model in `(lo, hi)`: zeros of
/// `det [M_1, M_2]` per atom pair, intersected over pairs.
pub fn exceptional_set_continuum(dist: &SingleGenDistribution, window: (f64, f64)) -> Result<ExceptionalSet> {
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(Error::InvalidInput("empty energy window".into()));
    }
    let mut sets = Vec::new();
    for (a, b) in pairs(dist) {
        if let Some(s) = continuum_pair(&a, &b, lo, hi)? {
            sets.push(s);
        }
    }
    intersect(sets, OneStepMap::ContinuumKirchhoff, ExceptionalKind::ContinuumGeneric)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscreteRegime {
    Schroedinger,
    Adjacency,
}

fn discrete_pair(s1: &SiteParams, s2: &SiteParams, regime: DiscreteRegime) -> Option<PairSet> {
    let map = OneStepMap::DiscreteJacobi;
    let mk = |kind, energies, certificate| PairSet { kind, energies, certificate, site1: *s1, site2: *s2 };
    match regime {
        DiscreteRegime::Adjacency => {
            if s1.hopping_amplitude() == s2.hopping_amplitude() {
                return None;
            }
            Some(mk(ExceptionalKind::DiscreteCase2, vec![0.0], CertificateKind::AnalyticFormula))
        }
        DiscreteRegime::Schroedinger => {
            let (b1, b2) = (s1.b as f64, s2.b as f64);
            let c1 = (b1 + 1.0) * s1.q;
            let c2 = (b2 + 1.0) * s2.q;
            if s1.b == s2.b {
                Some(mk(ExceptionalKind::DiscreteCase1a, vec![], CertificateKind::AnalyticFormula))
            } else if c1 == c2 {
                Some(mk(ExceptionalKind::DiscreteCase1bi, vec![c1], CertificateKind::TraceZeroPair))
            } else {
                // det g is affine in E with nonzero slope
                let det = |e: f64| commutator(e, s1, s2, map).det_g;
                let delta = c1 - c2;
                let e1 = (-(b1 - b2).powi(2) - delta * (b2 * c1 - b1 * c2)) / (delta * (b1 - b2));
                let r = 1.0 + e1.abs();
                let root = bisect(det, e1 - r, e1 + r, 1e-14 * r);
                Some(mk(ExceptionalKind::DiscreteCase1bii, vec![root], CertificateKind::DetGRoot))
            }
        }
    }
}

/// Exceptional set of the discrete model by the case analysis on atom pairs.
/// The Schroedinger regime expects unit hopping weights, the adjacency regime
/// zero couplings.
pub fn exceptional_set_discrete(dist: &SingleGenDistribution, regime: DiscreteRegime) -> Result<ExceptionalSet> {
    let sites = dist.sites();
    match regime {
        DiscreteRegime::Schroedinger if sites.iter().any(|s| s.ell != 1.0) => {
            return Err(Error::Precondition("Schroedinger regime requires p = 1".into()))
        }
        DiscreteRegime::Adjacency if sites.iter().any(|s| s.q != 0.0) => {
            return Err(Error::Precondition("adjacency regime requires q = 0".into()))
        }
        DiscreteRegime::Adjacency if !dist.has_distinct_hopping() => {
            return Err(Error::InvalidDistribution(
                "adjacency regime needs two atoms with distinct p*sqrt(b)".into(),
            ))
        }
        _ => {}
    }
    let sets: Vec<PairSet> = pairs(dist).iter().filter_map(|(a, b)| discrete_pair(a, b, regime)).collect();
    let generic = match regime {
        DiscreteRegime::Adjacency => ExceptionalKind::DiscreteCase2,
        DiscreteRegime::Schroedinger => ExceptionalKind::DiscreteCase1bii,
    };
    intersect(sets, OneStepMap::DiscreteJacobi, generic)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EllipticProbe {
    pub comm_norm: f64,
    pub traces: (f64, f64),
    pub max_product_norm: f64,
    /// Least-squares slope of the largest `log ||M_n||` seen up to `n`, in `n`.
    pub growth_slope: f64,
}

/// Commutator norm, traces, and the largest product norm over random words in
/// the two sites up to length `max_n`.
pub fn elliptic_boundedness_probe(
    e: f64,
    s1: &SiteParams,
    s2: &SiteParams,
    map: OneStepMap,
    max_n: usize,
    trials: usize,
    seed: u64,
) -> Result<EllipticProbe> {
    if max_n < 1 || trials < 1 {
        return Err(Error::InvalidInput("max_n and trials must be >= 1".into()));
    }
    let pa = commutator(e, s1, s2, map);
    let m = [pair_step(map, e, s1), pair_step(map, e, s2)];
    let mut running = vec![f64::NEG_INFINITY; max_n];
    for t in 0..trials {
        let mut rng = substream(seed, t as u64);
        let mut acc = ScaledMat2::IDENTITY;
        for r in running.iter_mut() {
            acc.push(&m[rng.random_range(0..2)]);
            *r = r.max(acc.log_norm());
        }
    }
    let mut best = f64::NEG_INFINITY;
    let pts: Vec<(f64, f64)> = running
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            best = best.max(v);
            ((i + 1) as f64, best)
        })
        .collect();
    let growth_slope = crate::cocycle::linear_fit(&pts).map_or(0.0, |f| f.slope);
    Ok(EllipticProbe {
        comm_norm: pa.g.norm(),
        traces: pa.traces,
        max_product_norm: best.exp(),
        growth_slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ZeroLeReport {
    pub e0: f64,
    /// `max |M_1 M_1 + I|`, `max |M_2 M_2 + I|`
    pub square_errors: (f64, f64),
    /// `max |M_1 M_2 - R^{-1}|`
    pub forward_error: f64,
    /// `max |M_2 M_1 - R|`
    pub backward_error: f64,
    pub lyapunov: LyapunovEstimate,
}

impl ZeroLeReport {
    pub fn identities_hold(&self, tol: f64) -> bool {
        self.square_errors.0 <= tol && self.square_errors.1 <= tol && self.forward_error <= tol && self.backward_error <= tol
    }
}

/// Block identities at `E_0 = (b_1 + 1) q_1 = (b_2 + 1) q_2` and the Lyapunov
/// exponent there, for the two-atom uniform law.
pub fn zero_le_block_identity(
    b1: u32,
    q1: f64,
    b2: u32,
    q2: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<ZeroLeReport> {
    if b1 == b2 {
        return Err(Error::Precondition("branching numbers must differ".into()));
    }
    let e0 = (b1 as f64 + 1.0) * q1;
    let e0b = (b2 as f64 + 1.0) * q2;
    if (e0 - e0b).abs() > 1e-12 * (1.0 + e0.abs()) {
        return Err(Error::Precondition(format!("(b1+1)q1 = {e0} differs from (b2+1)q2 = {e0b}")));
    }
    let s1 = SiteParams::new(b1, 1.0, q1);
    let s2 = SiteParams::new(b2, 1.0, q2);
    let map = OneStepMap::DiscreteJacobi;
    let m1 = pair_step(map, e0, &s1);
    let m2 = pair_step(map, e0, &s2);
    let minus_i = Mat2::diag(-1.0, -1.0);
    let r = -(b1 as f64 / b2 as f64).sqrt();
    let rr = Mat2::diag(r, 1.0 / r);
    let dist = SingleGenDistribution::uniform(&[s1, s2])?;
    Ok(ZeroLeReport {
        e0,
        square_errors: ((m1 * m1 - minus_i).max_abs(), (m2 * m2 - minus_i).max_abs()),
        forward_error: (m1 * m2 - rr.inverse()).max_abs(),
        backward_error: (m2 * m1 - rr).max_abs(),
        lyapunov: lyapunov_mc(e0, &dist, map, n, trials, seed)?,
    })
}
