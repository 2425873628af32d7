//! End-to-end checks, one test per property, numbered in a fixed order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radloc::cocycle::{
    ldt_empirical, lyapunov_curve, lyapunov_mc, transfer_product_from, word_blocks, avalanche_check,
    OneStepMap,
};
use radloc::discrete::{almost_sure_spectrum_discrete, build_finite_tree, decomposition_equivalence};
use radloc::furstenberg::{
    commutator, elliptic_boundedness_probe, exceptional_set_continuum, exceptional_set_discrete, rbm_det_closed_form,
    zero_le_block_identity, DiscreteRegime, ExceptionalKind,
};
use radloc::halfline::{
    decay_rate_fit, default_grid_step, dynamical_moment, eigenfunction_profile, neumann_shooting_function,
    truncated_eigenvalues, GreensData, Normalization, Psi, weighted_norm,
};
use radloc::model::{periodic_word, sample_word, vertex_positions};
use radloc::treeops::{kirchhoff_residual, lift, tree_decay_check, tree_dynamical_moment, tree_inner, vertices_at, LiftedFunction};
use radloc::{EnvironmentWord, SingleGenDistribution, SiteParams, TreeGeometry};

fn uniform(sites: &[(u32, f64, f64)]) -> SingleGenDistribution {
    let s: Vec<SiteParams> = sites.iter().map(|&(b, l, q)| SiteParams::new(b, l, q)).collect();
    SingleGenDistribution::uniform(&s).unwrap()
}

fn rbm() -> SingleGenDistribution {
    uniform(&[(2, 1.0, 0.0), (3, 1.0, 0.0)])
}

fn rlm() -> SingleGenDistribution {
    uniform(&[(2, 1.0, 0.0), (2, 3.0, 0.0)])
}

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!("[{}] {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

/// The preset atom pairs, tagged with the one-step map they drive.
fn presets() -> Vec<(&'static str, [SiteParams; 2], OneStepMap)> {
    let s = SiteParams::new;
    let (c, d) = (OneStepMap::ContinuumKirchhoff, OneStepMap::DiscreteJacobi);
    vec![
        ("rbm", [s(2, 1.0, 0.0), s(3, 1.0, 0.0)], c),
        ("rlm", [s(2, 1.0, 0.0), s(2, 3.0, 0.0)], c),
        ("rkm", [s(2, 1.0, 0.0), s(2, 1.0, 1.0)], c),
        ("discrete-rbm", [s(2, 1.0, 0.0), s(3, 1.0, 0.0)], d),
        ("discrete-rwm", [s(2, 0.5, 0.0), s(2, 1.0, 0.0)], d),
        ("discrete-rso", [s(2, 1.0, 0.0), s(2, 1.0, 1.0)], d),
    ]
}

#[test]
fn check_01_determinant_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let presets = presets();
    let mut step_err = vec![0.0f64; presets.len()];
    for i in 0..10_000 {
        let k = i % presets.len();
        let (_, atoms, map) = &presets[k];
        let e = rng.random_range(-10.0..100.0);
        let site = atoms[rng.random_range(0..2)];
        let prev = atoms[rng.random_range(0..2)];
        let m = map.step(e, &site, Some(&prev));
        step_err[k] = step_err[k].max((m.det() - 1.0).abs());
    }
    let n = 1000;
    let mut prod_err = vec![0.0f64; presets.len()];
    for i in 0..300 {
        let k = i % presets.len();
        let (_, atoms, map) = &presets[k];
        let e = rng.random_range(-10.0..100.0);
        let params: Vec<SiteParams> = (0..n).map(|_| atoms[rng.random_range(0..2)]).collect();
        let p = transfer_product_from(e, &EnvironmentWord::explicit(params), *map, 0.0);
        prod_err[k] = prod_err[k].max((p.det() - 1.0).abs());
    }
    let ok = step_err.iter().all(|&x| x <= 1e-9) && prod_err.iter().all(|&x| x <= 1e-9 * n as f64);
    let detail: Vec<String> = presets
        .iter()
        .zip(step_err.iter().zip(&prod_err))
        .map(|((name, _, _), (a, b))| format!("{name} step {a:.1e} product {b:.1e}"))
        .collect();
    verdict(1, "determinant invariant", ok, format!("max |det-1|: {}", detail.join(", ")));
}

#[test]
fn check_02_rbm_commutator_closed_form() {
    let (s1, s2) = (SiteParams::new(2, 1.0, 0.0), SiteParams::new(3, 1.0, 0.0));
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let e = -10.0 + 110.0 * i as f64 / 999.0;
        let direct = commutator(e, &s1, &s2, OneStepMap::ContinuumKirchhoff).det_g;
        let closed = rbm_det_closed_form(e, 2, 3);
        worst = worst.max((direct - closed).abs() / closed.abs().max(1.0));
    }
    verdict(2, "RBM commutator closed form", worst < 1e-10, format!("max scaled error {worst:e} on 1000 energies"));
}

#[test]
fn check_03_rlm_exceptional_set() {
    let mut detail = String::new();
    let mut ok = true;
    for (window, kmax) in [((0.5, 30.0), 3usize), ((0.5, 65.0), 5)] {
        let set = exceptional_set_continuum(&rlm(), window).unwrap();
        let expect: Vec<f64> = (1..=kmax).map(|k| PI * PI * (k * k) as f64 / 4.0).collect();
        let err = if set.energies.len() == expect.len() {
            set.energies.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        ok &= set.kind == ExceptionalKind::ContinuumRLM && err < 1e-8;
        detail += &format!("window {window:?}: {} energies, max error {err:e}; ", set.energies.len());
    }
    verdict(3, "RLM exceptional set", ok, detail);
}

#[test]
fn check_04_discrete_exceptional_sets() {
    let adj = exceptional_set_discrete(&uniform(&[(2, 1.0, 0.0), (3, 1.0, 0.0)]), DiscreteRegime::Adjacency).unwrap();
    let rwm = exceptional_set_discrete(&uniform(&[(2, 1.0, 0.0), (2, 0.6, 0.0)]), DiscreteRegime::Adjacency).unwrap();
    let c1bi = exceptional_set_discrete(&uniform(&[(2, 1.0, 1.0), (5, 1.0, 0.5)]), DiscreteRegime::Schroedinger).unwrap();
    let c1a = exceptional_set_discrete(&uniform(&[(2, 1.0, 0.0), (2, 1.0, 1.0)]), DiscreteRegime::Schroedinger).unwrap();
    let ok = adj.energies.iter().all(|&e| e == 0.0)
        && rwm.energies.iter().all(|&e| e == 0.0)
        && c1bi.kind == ExceptionalKind::DiscreteCase1bi
        && c1bi.energies == vec![(2.0 + 1.0) * 1.0]
        && c1a.kind == ExceptionalKind::DiscreteCase1a
        && c1a.energies.is_empty();
    verdict(
        4,
        "discrete exceptional sets",
        ok,
        format!("adjacency {:?}, weights {:?}, case 1bi {:?}, case 1a {:?}", adj.energies, rwm.energies, c1bi.energies, c1a.energies),
    );
}

#[test]
fn check_05_zero_exponent_blocks() {
    let r = zero_le_block_identity(2, 1.0, 5, 0.5, 10_000, 50, 5).unwrap();
    let l = r.lyapunov.value;
    let ok = r.identities_hold(1e-12) && l > -0.01 && l < 0.01;
    verdict(
        5,
        "zero-exponent blocks",
        ok,
        format!(
            "E0 {}, squares {:?}, M1M2 {:e}, M2M1 {:e}, L {l:.5} +- {:.5}",
            r.e0, r.square_errors, r.forward_error, r.backward_error, r.lyapunov.stderr
        ),
    );
}

#[test]
fn check_06_positivity() {
    let excised = [PI * PI, 4.0 * PI * PI];
    let grid: Vec<f64> = (0..50)
        .map(|i| 0.5 + 38.5 * i as f64 / 49.0)
        .map(|e| {
            // shift grid points out of the excised neighborhoods
            excised.iter().fold(e, |e, &x| if (e - x).abs() < 0.2 { x + 0.2f64.copysign(e - x) } else { e })
        })
        .collect();
    let curve = lyapunov_curve(&grid, &rbm(), OneStepMap::ContinuumKirchhoff, 10_000, 50, 6).unwrap();
    let worst = curve.iter().map(|l| l.value / l.stderr).fold(f64::INFINITY, f64::min);
    let at_pi2 = lyapunov_mc(PI * PI, &rbm(), OneStepMap::ContinuumKirchhoff, 10_000, 50, 66).unwrap();
    let ok = worst >= 3.0 && at_pi2.value >= 3.0 * at_pi2.stderr;
    verdict(
        6,
        "positivity of the exponent",
        ok,
        format!("min L/stderr on grid {worst:.1}; L(pi^2) = {:.4} +- {:.5}", at_pi2.value, at_pi2.stderr),
    );
}

#[test]
fn check_07_bounded_elliptic_energy() {
    let (s1, s2) = (SiteParams::new(2, 1.0, 0.0), SiteParams::new(2, 3.0, 0.0));
    let e = PI * PI / 4.0;
    let probe = elliptic_boundedness_probe(e, &s1, &s2, OneStepMap::ContinuumKirchhoff, 1000, 20, 7).unwrap();
    let l = lyapunov_mc(e, &rlm(), OneStepMap::ContinuumKirchhoff, 10_000, 50, 7).unwrap();
    let ok = probe.comm_norm < 1e-12 && probe.traces.0.abs() < 2.0 && probe.traces.1.abs() < 2.0 && l.value.abs() < 0.02;
    verdict(
        7,
        "bounded elliptic energy",
        ok,
        format!("||[M1,M2]|| {:e}, traces {:?}, L {:.5}", probe.comm_norm, probe.traces, l.value),
    );
}

#[test]
fn check_08_rate_relation() {
    let dist = rlm();
    let n = 2000;
    let word = sample_word(&dist, n, 8).unwrap();
    let geometry = TreeGeometry::continuum(word.clone()).unwrap();
    let tn = geometry.positions[n];
    let mean_ell = dist.mean_ell();
    let windows = [(4.5, 5.5), (10.3, 10.8), (16.0, 17.0), (28.0, 29.5), (37.5, 39.0)];
    let mut ok = true;
    let mut detail = String::new();
    for (i, &w) in windows.iter().enumerate() {
        let spec = truncated_eigenvalues(&word, n, w, default_grid_step(w, n)).unwrap();
        let mut ratios = Vec::new();
        for (j, &e) in spec.eigenvalues.iter().enumerate() {
            let ef = eigenfunction_profile(&word, n, e).unwrap();
            let fit = decay_rate_fit(&ef.profile, &geometry).unwrap();
            if !fit.localized || fit.r_squared < 0.9 || fit.zeta < 0.1 * tn || fit.zeta > 0.9 * tn {
                continue;
            }
            let l = lyapunov_mc(e, &dist, OneStepMap::ContinuumKirchhoff, 10_000, 20, 800 + (i * 1000 + j) as u64).unwrap();
            ratios.push((e, fit.lambda_hat / (l.value / mean_ell)));
        }
        ratios.sort_by(|a, b| a.1.total_cmp(&b.1));
        let Some(&(e, r)) = ratios.get(ratios.len() / 2) else {
            ok = false;
            detail += &format!("{w:?}: no localized eigenfunctions; ");
            continue;
        };
        ok &= (r - 1.0).abs() <= 0.25;
        detail += &format!("E {e:.4}: ratio {r:.3} (median of {}); ", ratios.len());
    }
    verdict(8, "decay rate against L / <ell>", ok, detail);
}

#[test]
fn check_09_large_deviations() {
    let r = ldt_empirical(-1.0, &rlm(), OneStepMap::ContinuumKirchhoff, 0.1, &[50, 100, 200, 400], 2000, 9).unwrap();
    let fit = r.fit;
    let ok = r.points.iter().all(|p| p.1 > 0.0) && fit.is_some_and(|f| f.slope < 0.0 && f.r_squared >= 0.9);
    verdict(9, "large deviation decay", ok, format!("L {:.4}, points {:?}, fit {:?}", r.reference.value, r.points, fit));
}

#[test]
fn check_10_avalanche_principle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut held, mut violations, mut drawn) = (0, 0, 0u64);
    while held < 100 && drawn < 300 {
        let t = drawn;
        drawn += 1;
        let (dist, e) = if t % 2 == 0 { (rbm(), rng.random_range(8.5..11.5)) } else { (rlm(), rng.random_range(10.2..11.0)) };
        let word = sample_word(&dist, 1000, 1000 + t).unwrap();
        let blocks = word_blocks(e, &word, OneStepMap::ContinuumKirchhoff, 100);
        // any lambda below the smallest block norm is admissible; capping it keeps
        // C n / lambda well above the rounding level of the log sums
        let lambda = blocks.iter().map(|m| m.norm()).fold(1e8, f64::min);
        let r = avalanche_check(&blocks, lambda, 100.0).unwrap();
        if r.hypotheses_hold {
            held += 1;
            if r.lhs > r.rhs {
                violations += 1;
            }
        }
    }
    verdict(
        10,
        "avalanche principle",
        held == 100 && violations == 0,
        format!("{held} qualifying sequences out of {drawn} drawn, {violations} violations"),
    );
}

#[test]
fn check_11_greens_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dists = [rbm(), rlm(), uniform(&[(2, 1.0, -0.5), (2, 1.0, 0.8)])];
    let (mut w_err, mut sym_err, mut pole_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for t in 0..100 {
        let n = rng.random_range(1..=25);
        let word = sample_word(&dists[t % 3], n, 110 + t as u64).unwrap();
        let e = rng.random_range(0.5..40.0);
        let g = GreensData::new(&word, n, e).unwrap();
        let (a, b) = (g.wronskian, g.wronskian_left);
        let rel = if a.0.signum() == b.0.signum() { ((a.1 - b.1) + (a.0 / b.0).abs().ln()).exp_m1().abs() } else { f64::INFINITY };
        w_err = w_err.max(rel);
        let tn = vertex_positions(&word)[n];
        for _ in 0..5 {
            let (x, y) = (rng.random_range(0.0..tn), rng.random_range(0.0..tn));
            let (gxy, gyx) = (g.eval(x, y).unwrap(), g.eval(y, x).unwrap());
            sym_err = sym_err.max((gxy - gyx).abs() / gxy.abs().max(1e-300));
        }
        let spec = truncated_eigenvalues(&word, n, (0.5, 40.0), default_grid_step((0.5, 40.0), n)).unwrap();
        for &ek in &spec.eigenvalues {
            // W vanishes at E_k: the Neumann shooting function changes sign within 1e-9
            let lo = neumann_shooting_function(ek - 1e-9, &word, n).unwrap().0;
            let hi = neumann_shooting_function(ek + 1e-9, &word, n).unwrap().0;
            if lo.signum() == hi.signum() {
                pole_err = pole_err.max(1.0);
            }
        }
    }
    let ok = w_err < 1e-10 && sym_err < 1e-10 && pole_err == 0.0;
    verdict(11, "Green's function and Wronskian", ok, format!("Wronskian rel. error {w_err:e}, asymmetry {sym_err:e}, missed poles {pole_err}"));
}

#[test]
fn check_12_free_truncated_spectra() {
    let mut worst: f64 = 0.0;
    for n in 1..=2 {
        let word = periodic_word(&[SiteParams::new(1, 1.0, 0.0)], n).unwrap();
        let spec = truncated_eigenvalues(&word, n, (0.0, 200.0), 0.01).unwrap();
        let tn = n as f64;
        let expect: Vec<f64> = (0..)
            .map(|k: u32| PI * PI * ((2 * k + 1) as f64).powi(2) / (4.0 * tn * tn))
            .take_while(|&e| e < 200.0)
            .collect();
        if spec.eigenvalues.len() != expect.len() {
            worst = f64::INFINITY;
            break;
        }
        for (a, b) in spec.eigenvalues.iter().zip(&expect) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(12, "free truncated spectra", worst < 1e-9, format!("max error {worst:e}"));
}

#[test]
fn check_13_breuer_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut gap, mut conj, mut passed): (f64, f64, usize) = (0.0, 0.0, 0);
    for t in 0..30 {
        let regime = if t % 2 == 0 { DiscreteRegime::Adjacency } else { DiscreteRegime::Schroedinger };
        let atoms = [
            (2, rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0)),
            (3, rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0)),
        ];
        let word = sample_word(&uniform(&atoms), 9, 1300 + t).unwrap();
        let mut depth = rng.random_range(2..=8);
        let tree = loop {
            let tree = build_finite_tree(&word, depth, word.params[0].b).unwrap();
            if tree.vertex_count() <= 1200 {
                break tree;
            }
            depth -= 1;
        };
        let r = decomposition_equivalence(&tree, regime).unwrap();
        gap = gap.max(r.max_eig_gap);
        conj = conj.max(r.conjugation_residual);
        passed += usize::from(r.max_eig_gap < 1e-8 && r.conjugation_residual < 1e-9);
    }
    verdict(13, "Breuer decomposition equivalence", passed == 30, format!("{passed}/30 instances, max gap {gap:e}, max conjugation residual {conj:e}"));
}

#[test]
fn check_14_continuum_lifting() {
    let word = EnvironmentWord::explicit(vec![
        SiteParams::new(3, 1.0, 0.0),
        SiteParams::new(3, 1.3, 0.4),
        SiteParams::new(2, 0.8, -0.3),
        SiteParams::new(3, 1.1, 0.0),
        SiteParams::new(2, 1.0, 0.2),
    ]);
    let depth = 5;
    let geo = TreeGeometry::continuum(word.clone()).unwrap();
    let mut lifts: Vec<LiftedFunction> = Vec::new();
    'outer: for n in 0..depth {
        let sub = word.slice(n, depth - n);
        let spec = truncated_eigenvalues(&sub, depth - n, (0.5, 60.0), 0.01).unwrap();
        let ef = eigenfunction_profile(&sub, depth - n, spec.eigenvalues[0]).unwrap();
        let ks: Vec<u32> = if n == 0 { vec![0] } else { (1..geo.branching(n)).collect() };
        for v in vertices_at(&geo, n) {
            for &k in &ks {
                lifts.push(lift(&ef.profile, &v, k, &geo).unwrap());
                if lifts.len() == 50 {
                    break 'outer;
                }
            }
        }
    }
    let mut kirchhoff: f64 = 0.0;
    for f in &lifts {
        for g in f.base.generation()..depth {
            for u in vertices_at(&geo, g) {
                let r = kirchhoff_residual(f, &u, &geo).unwrap();
                let s = r.scale.max(1e-300);
                kirchhoff = kirchhoff.max(r.continuity_residual.max(r.flux_residual) / s);
            }
        }
    }
    let mut ortho: f64 = 0.0;
    for (i, a) in lifts.iter().enumerate() {
        for b in &lifts[i + 1..] {
            ortho = ortho.max(tree_inner(a, b, &geo, depth).norm());
        }
    }

    // decay of a lifted localized eigenfunction on a deep random branching tree
    let deep = sample_word(&rbm(), 300, 14).unwrap();
    let dgeo = TreeGeometry::continuum(deep.clone()).unwrap();
    let spec = truncated_eigenvalues(&deep, 300, (12.1, 12.9), default_grid_step((12.1, 12.9), 300)).unwrap();
    let tn = dgeo.positions[300];
    let best = spec
        .eigenvalues
        .iter()
        .filter_map(|&e| {
            let ef = eigenfunction_profile(&deep, 300, e).unwrap();
            let fit = decay_rate_fit(&ef.profile, &dgeo).unwrap();
            (fit.localized && fit.zeta > 0.1 * tn && fit.zeta < 0.5 * tn).then_some((e, ef, fit))
        })
        .max_by(|a, b| a.2.r_squared.total_cmp(&b.2.r_squared))
        .expect("a localized eigenfunction in the window");
    let lifted = lift(&best.1.profile, &radloc::treeops::VertexAddress::root(), 0, &dgeo).unwrap();
    let decay = tree_decay_check(&lifted, &dgeo).unwrap();
    let l = lyapunov_mc(best.0, &rbm(), OneStepMap::ContinuumKirchhoff, 10_000, 20, 14).unwrap();
    let rate_ok = (decay.lambda / l.value - 1.0).abs() <= 0.25;

    let ok = lifts.len() == 50 && kirchhoff < 1e-9 && ortho < 1e-10 && decay.holds && rate_ok;
    verdict(
        14,
        "continuum lifting",
        ok,
        format!(
            "{} lifts, max scaled Kirchhoff residual {kirchhoff:e}, max |<F,G>| {ortho:e}; decay at E {:.4}: lambda {:.4} vs L {:.4}, holds {}",
            lifts.len(),
            best.0,
            decay.lambda,
            l.value,
            decay.holds
        ),
    );
}

#[test]
fn check_15_almost_sure_spectrum() {
    let s = almost_sure_spectrum_discrete(&uniform(&[(2, 1.0, 0.0), (3, 1.0, 0.0)]), 4, (-4.0, 4.0)).unwrap();
    let r = 2.0 * 3f64.sqrt();
    let inside = s.bands.iter().all(|&(a, b)| a >= -r - 1e-9 && b <= r + 1e-9);
    let h = s.hausdorff.unwrap();
    verdict(15, "almost-sure spectrum", inside && h < 0.1, format!("{} bands from {} words, Hausdorff distance {h:e}", s.bands.len(), s.words_used));
}

#[test]
fn check_16_dynamical_moments() {
    let word = sample_word(&rbm(), 600, 16).unwrap();
    let window = (12.1, 12.9);
    let psi = Psi::Quadratic(vec![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let h400 = dynamical_moment(&word, 400, window, 1.0, &psi).unwrap();
    let h600 = dynamical_moment(&word, 600, window, 1.0, &psi).unwrap();
    let t400 = tree_dynamical_moment(&word, 400, window, 1.0, 2.0).unwrap();
    let t600 = tree_dynamical_moment(&word, 600, window, 1.0, 2.0).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    let (dh, dt) = (rel(h400.value, h600.value), rel(t400.value, t600.value));
    let finite = [h400.value, h600.value, t400.value, t600.value].iter().all(|v| v.is_finite() && *v > 0.0);

    // an eigenfunction as initial state gives back its own weighted norm
    let short = word.slice(0, 40);
    let spec = truncated_eigenvalues(&short, 40, (12.1, 12.9), default_grid_step((12.1, 12.9), 40)).unwrap();
    let ek = spec.eigenvalues[spec.eigenvalues.len() / 2];
    let phi = eigenfunction_profile(&short, 40, ek).unwrap().profile.normalized(Normalization::L2);
    let exact = weighted_norm(&phi, &vertex_positions(&short), 1.0);
    let narrow = (ek - 1e-7, ek + 1e-7);
    let stationary = dynamical_moment(&short, 40, narrow, 1.0, &Psi::Profile(phi)).unwrap();
    let ds = (stationary.value - exact).abs() / exact;

    let ok = finite && dh < 0.05 && dt < 0.05 && ds < 1e-10;
    verdict(
        16,
        "dynamical moments",
        ok,
        format!(
            "half-line {:.6} -> {:.6} ({dh:.2e}), tree {:.6} -> {:.6} ({dt:.2e}), stationary rel. error {ds:.1e}",
            h400.value, h600.value, t400.value, t600.value
        ),
    );
}
