//! Parameter spaces, single-generation distributions, seeded environments and
//! radial-tree combinatorics.
//!
//! A continuum word stores generations `1..=N`: entry `j - 1` carries the
//! branching `b_j`, the length `ell_j` of the edge ending at generation `j` and
//! the coupling `q_j` at that vertex. The root has one edge (`b_0 = 1`). A
//! discrete word stores generations `0..=N` directly, with `ell` read as the
//! hopping weight `p_j`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One generation's triple: branching, edge length (or hopping weight), coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteParams {
    pub b: u32,
    pub ell: f64,
    pub q: f64,
}

impl SiteParams {
    pub const fn new(b: u32, ell: f64, q: f64) -> Self {
        Self { b, ell, q }
    }

    fn validate(&self) -> Result<()> {
        if self.b < 1 {
            return Err(Error::InvalidInput(format!("branching must be >= 1, got {}", self.b)));
        }
        if !(self.ell > 0.0) || !self.ell.is_finite() {
            return Err(Error::InvalidInput(format!("edge length must be > 0, got {}", self.ell)));
        }
        if !self.q.is_finite() {
            return Err(Error::InvalidInput("coupling must be finite".into()));
        }
        Ok(())
    }

    /// `p * sqrt(b)` in the discrete reading, i.e. the Jacobi off-diagonal.
    pub fn hopping_amplitude(&self) -> f64 {
        self.ell * (self.b as f64).sqrt()
    }
}

/// Finite atomic law of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleGenDistribution {
    atoms: Vec<(SiteParams, f64)>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AtomJson {
    b: u32,
    ell: f64,
    q: f64,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct DistributionJson {
    atoms: Vec<AtomJson>,
}

impl SingleGenDistribution {
    pub fn new(atoms: Vec<(SiteParams, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        for (s, w) in &atoms {
            s.validate().map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidDistribution(format!("weights must be positive, got {w}")));
            }
        }
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}, expected 1")));
        }
        let distinct = atoms.iter().any(|(s, _)| *s != atoms[0].0);
        if !distinct {
            return Err(Error::InvalidDistribution(
                "support must contain at least two distinct points".into(),
            ));
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { atoms, cumulative })
    }

    /// Equal weights on the given sites.
    pub fn uniform(sites: &[SiteParams]) -> Result<Self> {
        let w = 1.0 / sites.len().max(1) as f64;
        let mut atoms: Vec<(SiteParams, f64)> = sites.iter().map(|s| (*s, w)).collect();
        // absorb rounding so the sum check is exact
        if let Some(last) = atoms.last_mut() {
            let head: f64 = sites.iter().take(sites.len() - 1).map(|_| w).sum();
            last.1 = 1.0 - head;
        }
        Self::new(atoms)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistributionJson = serde_json::from_str(text)?;
        Self::new(
            doc.atoms
                .into_iter()
                .map(|a| (SiteParams::new(a.b, a.ell, a.q), a.w))
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        let doc = DistributionJson {
            atoms: self
                .atoms
                .iter()
                .map(|(s, w)| AtomJson { b: s.b, ell: s.ell, q: s.q, w: *w })
                .collect(),
        };
        serde_json::to_string(&doc).expect("distribution serializes")
    }

    pub fn atoms(&self) -> &[(SiteParams, f64)] {
        &self.atoms
    }

    pub fn sites(&self) -> Vec<SiteParams> {
        self.atoms.iter().map(|(s, _)| *s).collect()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Mean edge length `<ell>`.
    pub fn mean_ell(&self) -> f64 {
        self.atoms.iter().map(|(s, w)| w * s.ell).sum()
    }

    pub fn max_branching(&self) -> u32 {
        self.atoms.iter().map(|(s, _)| s.b).max().unwrap_or(1)
    }

    /// Index of an atom drawn from the law.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.atoms.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SiteParams {
        self.atoms[self.sample_index(rng)].0
    }

    /// Adjacency-regime hypothesis: two atoms with distinct `p * sqrt(b)`.
    pub fn has_distinct_hopping(&self) -> bool {
        let first = self.atoms[0].0.hopping_amplitude();
        self.atoms
            .iter()
            .any(|(s, _)| (s.hopping_amplitude() - first).abs() > 1e-12 * first.abs().max(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordOrigin {
    Sampled,
    Periodic,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentWord {
    pub params: Vec<SiteParams>,
    pub seed: u64,
    pub origin: WordOrigin,
}

impl EnvironmentWord {
    pub fn explicit(params: Vec<SiteParams>) -> Self {
        Self { params, seed: 0, origin: WordOrigin::Explicit }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Words `[start, start + len)` as a new explicit word.
    pub fn slice(&self, start: usize, len: usize) -> EnvironmentWord {
        EnvironmentWord {
            params: self.params[start..start + len].to_vec(),
            seed: self.seed,
            origin: self.origin,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("word serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Independent generator for trial `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A derived 64-bit seed for sub-task `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    substream(seed, index.wrapping_add(1 << 40)).next_u64()
}

pub fn sample_word(dist: &SingleGenDistribution, n: usize, seed: u64) -> Result<EnvironmentWord> {
    if n == 0 {
        return Err(Error::InvalidInput("word length must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = (0..n).map(|_| dist.sample(&mut rng)).collect();
    Ok(EnvironmentWord { params, seed, origin: WordOrigin::Sampled })
}

pub fn periodic_word(cell: &[SiteParams], copies: usize) -> Result<EnvironmentWord> {
    if cell.is_empty() || copies == 0 {
        return Err(Error::InvalidInput("periodic word needs a nonempty cell and copies >= 1".into()));
    }
    let params = cell.iter().copied().cycle().take(cell.len() * copies).collect();
    Ok(EnvironmentWord { params, seed: 0, origin: WordOrigin::Periodic })
}

/// `t_0 = 0, t_j = ell_1 + ... + ell_j`.
pub fn vertex_positions(word: &EnvironmentWord) -> Vec<f64> {
    let mut t = Vec::with_capacity(word.len() + 1);
    t.push(0.0);
    let mut acc = 0.0;
    for s in &word.params {
        acc += s.ell;
        t.push(acc);
    }
    t
}

/// Branching at generation `g` of a continuum word with the given root branching.
fn branching_at(word: &EnvironmentWord, g: usize, root_branching: u32) -> u32 {
    if g == 0 {
        root_branching
    } else {
        word.params[g - 1].b
    }
}

/// Number of vertices in generation `n`: `w(0) = 1`, `w(n) = b_0 * ... * b_{n-1}`.
pub fn generation_weight(word: &EnvironmentWord, n: usize, root_branching: u32) -> Result<u64> {
    if n > word.len() {
        return Err(Error::OutOfRange { index: n, max: word.len() });
    }
    Ok((0..n).map(|g| branching_at(word, g, root_branching) as u64).product())
}

/// `m(0) = 1`, `m(n) = b_0 * ... * b_{n-1} * (b_n - 1)`.
pub fn multiplicity(word: &EnvironmentWord, n: usize, root_branching: u32) -> Result<u64> {
    if n > word.len() {
        return Err(Error::OutOfRange { index: n, max: word.len() });
    }
    if n == 0 {
        return Ok(1);
    }
    let w = generation_weight(word, n, root_branching)?;
    Ok(w * (branching_at(word, n, root_branching) as u64 - 1))
}

/// Positions, generation weights and decomposition multiplicities of a
/// continuum radial tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGeometry {
    pub word: EnvironmentWord,
    pub root_branching: u32,
    pub positions: Vec<f64>,
    /// `w_o(g)`; exact below 2^53, infinite past f64 range.
    pub gen_weights: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// `m(g)`, same precision as `gen_weights`.
    pub multiplicities: Vec<f64>,
}

impl TreeGeometry {
    pub fn new(word: EnvironmentWord, root_branching: u32) -> Result<Self> {
        if word.is_empty() {
            return Err(Error::InvalidInput("empty word".into()));
        }
        let positions = vertex_positions(&word);
        let mut gen_weights = Vec::with_capacity(word.len() + 1);
        let mut log_weights = Vec::with_capacity(word.len() + 1);
        let mut multiplicities = Vec::with_capacity(word.len() + 1);
        let (mut w, mut lw) = (1.0f64, 0.0f64);
        for g in 0..=word.len() {
            gen_weights.push(w);
            log_weights.push(lw);
            let b = branching_at(&word, g, root_branching) as f64;
            multiplicities.push(if g == 0 { 1.0 } else { w * (b - 1.0) });
            w *= b;
            lw += b.ln();
        }
        Ok(Self { word, root_branching, positions, gen_weights, log_weights, multiplicities })
    }

    /// Continuum convention `b_0 = 1`.
    pub fn continuum(word: EnvironmentWord) -> Result<Self> {
        Self::new(word, 1)
    }

    pub fn depth(&self) -> usize {
        self.word.len()
    }

    pub fn branching(&self, g: usize) -> u32 {
        branching_at(&self.word, g, self.root_branching)
    }

    /// Number of points of `T_v` at radius in band `g` for `gen(v) = n`:
    /// `w_o(g) / w_o(n)`.
    pub fn subtree_weight(&self, n: usize, g: usize) -> f64 {
        const EXACT: f64 = 9_007_199_254_740_992.0;
        if self.gen_weights[g] < EXACT {
            self.gen_weights[g] / self.gen_weights[n]
        } else {
            (self.log_weights[g] - self.log_weights[n]).exp()
        }
    }

    /// Generation band containing radius `t`: the `g` with `t_{g-1} < t <= t_g`.
    pub fn band_of(&self, t: f64) -> usize {
        match self.positions.iter().position(|&tj| t <= tj) {
            Some(0) => 1,
            Some(g) => g,
            None => self.positions.len() - 1,
        }
    }
}
