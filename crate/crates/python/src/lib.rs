use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use radloc::cocycle::{self, OneStepMap};
use radloc::discrete::{build_finite_tree, decomposition_equivalence};
use radloc::furstenberg::{exceptional_set_continuum, DiscreteRegime};
use radloc::halfline::{default_grid_step, truncated_eigenvalues as truncated};
use radloc::{model, EnvironmentWord, SingleGenDistribution, SiteParams};

type Site = (u32, f64, f64);

fn err(e: radloc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn uniform(sites: &[Site]) -> PyResult<SingleGenDistribution> {
    let s: Vec<SiteParams> = sites.iter().map(|&(b, l, q)| SiteParams::new(b, l, q)).collect();
    SingleGenDistribution::uniform(&s).map_err(err)
}

fn map_for(discrete: bool) -> OneStepMap {
    if discrete {
        OneStepMap::DiscreteJacobi
    } else {
        OneStepMap::ContinuumKirchhoff
    }
}

/// Sampled word as a list of `(b, ell, q)` tuples, uniform over `sites`.
#[pyfunction]
#[pyo3(signature = (sites, n, seed=0))]
fn sample_word(sites: Vec<Site>, n: usize, seed: u64) -> PyResult<Vec<Site>> {
    let w = model::sample_word(&uniform(&sites)?, n, seed).map_err(err)?;
    Ok(w.params.iter().map(|s| (s.b, s.ell, s.q)).collect())
}

/// Monte-Carlo Lyapunov exponent, returned as `(value, stderr)`.
#[pyfunction]
#[pyo3(signature = (energy, sites, n=10_000, trials=20, seed=0, discrete=false))]
fn lyapunov(energy: f64, sites: Vec<Site>, n: usize, trials: usize, seed: u64, discrete: bool) -> PyResult<(f64, f64)> {
    let l = cocycle::lyapunov_mc(energy, &uniform(&sites)?, map_for(discrete), n, trials, seed).map_err(err)?;
    Ok((l.value, l.stderr))
}

#[pyfunction]
#[pyo3(signature = (energies, sites, n=10_000, trials=20, seed=0, discrete=false))]
fn lyapunov_curve(
    py: Python<'_>,
    energies: Vec<f64>,
    sites: Vec<Site>,
    n: usize,
    trials: usize,
    seed: u64,
    discrete: bool,
) -> PyResult<Vec<(f64, f64)>> {
    let dist = uniform(&sites)?;
    let curve = py
        .detach(|| cocycle::lyapunov_curve(&energies, &dist, map_for(discrete), n, trials, seed))
        .map_err(err)?;
    Ok(curve.iter().map(|l| (l.value, l.stderr)).collect())
}

/// Energies in `[lo, hi]` where the continuum positivity certificate fails.
#[pyfunction]
fn exceptional_set(sites: Vec<Site>, lo: f64, hi: f64) -> PyResult<Vec<f64>> {
    Ok(exceptional_set_continuum(&uniform(&sites)?, (lo, hi)).map_err(err)?.energies)
}

/// Dirichlet-Neumann eigenvalues of the word truncated after all its sites.
#[pyfunction]
fn truncated_eigenvalues(word: Vec<Site>, lo: f64, hi: f64) -> PyResult<Vec<f64>> {
    let n = word.len();
    let w = EnvironmentWord::explicit(word.iter().map(|&(b, l, q)| SiteParams::new(b, l, q)).collect());
    Ok(truncated(&w, n, (lo, hi), default_grid_step((lo, hi), n)).map_err(err)?.eigenvalues)
}

/// Dense tree spectrum against the decomposed blocks: `(max_eig_gap, conjugation_residual, pass)`.
#[pyfunction]
#[pyo3(signature = (sites, depth, seed=0, adjacency=true))]
fn breuer_check(sites: Vec<Site>, depth: usize, seed: u64, adjacency: bool) -> PyResult<(f64, f64, bool)> {
    let word = model::sample_word(&uniform(&sites)?, depth + 1, seed).map_err(err)?;
    let tree = build_finite_tree(&word, depth, word.params[0].b).map_err(err)?;
    let regime = if adjacency { DiscreteRegime::Adjacency } else { DiscreteRegime::Schroedinger };
    let r = decomposition_equivalence(&tree, regime).map_err(err)?;
    Ok((r.max_eig_gap, r.conjugation_residual, r.pass))
}

#[pymodule]
fn radloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sample_word, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_curve, m)?)?;
    m.add_function(wrap_pyfunction!(exceptional_set, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(breuer_check, m)?)?;
    Ok(())
}
