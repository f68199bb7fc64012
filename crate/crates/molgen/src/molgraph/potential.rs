//! The toy reference potential: harmonic bonds, harmonic angles with a
//! coordination-count ideal angle, and a soft quartic repulsion between
//! close non-bonded pairs. Energies in kcal/mol, lengths in angstroms.
//!
//! Every generated conformer sits at a local minimum of this potential, and
//! the relaxation-energy metric measures how far sampled geometries are from
//! one.

use super::{bond_order_value, element_of_token, ideal_bond_length, tok, MolGraph};
use crate::coupling::{aligned_rmsd, Point3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("non-finite energy at step {step}")]
    NonFinite { step: usize },
    #[error("atom {atom} has no element (token {token})")]
    NoElement { atom: usize, token: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct ToyPotential {
    /// kcal/mol/A^2
    pub k_bond: f64,
    /// kcal/mol/rad^2
    pub k_angle: f64,
    /// kcal/mol/A^4
    pub k_repulsion: f64,
    /// Non-bonded pairs closer than this repel (angstroms).
    pub repulsion_cutoff: f64,
}

impl Default for ToyPotential {
    fn default() -> Self {
        ToyPotential { k_bond: 300.0, k_angle: 50.0, k_repulsion: 50.0, repulsion_cutoff: 2.0 }
    }
}

/// Ideal angle at a center with the given coordination count: tetrahedral
/// for 4+, trigonal for 3, linear for 2.
pub fn ideal_angle(coordination: usize) -> f64 {
    match coordination {
        0 | 1 => 0.0, // no angle terms exist
        2 => std::f64::consts::PI,
        3 => 120.0_f64.to_radians(),
        _ => 109.5_f64.to_radians(),
    }
}

struct Terms {
    /// (i, j, ideal length)
    bonds: Vec<(usize, usize, f64)>,
    /// (i, center, j, ideal angle)
    angles: Vec<(usize, usize, usize, f64)>,
    /// non-bonded pairs i < j
    nonbonded: Vec<(usize, usize)>,
}

fn build_terms(g: &MolGraph) -> Result<Terms, GeomError> {
    let n = g.n();
    let elems: Result<Vec<_>, _> = (0..n)
        .map(|i| {
            element_of_token(g.atoms[i])
                .ok_or(GeomError::NoElement { atom: i, token: g.atoms[i] })
        })
        .collect();
    let elems = elems?;
    let mut bonds = Vec::new();
    let mut nonbonded = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let b = g.bond(i, j);
            if b == tok::BOND_NONE {
                nonbonded.push((i, j));
            } else {
                let order = bond_order_value(b);
                bonds.push((i, j, ideal_bond_length(elems[i], elems[j], order)));
            }
        }
    }
    let mut angles = Vec::new();
    for c in 0..n {
        let nbrs = g.neighbors(c);
        if nbrs.len() < 2 {
            continue;
        }
        let theta0 = ideal_angle(nbrs.len());
        for a in 0..nbrs.len() {
            for b in (a + 1)..nbrs.len() {
                angles.push((nbrs[a], c, nbrs[b], theta0));
            }
        }
    }
    Ok(Terms { bonds, angles, nonbonded })
}

fn sub3(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(v: &Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn energy_and_grad(pot: &ToyPotential, terms: &Terms, x: &[Point3], grad: Option<&mut [Point3]>) -> f64 {
    let mut e = 0.0;
    let mut g = grad;
    if let Some(gr) = g.as_deref_mut() {
        gr.iter_mut().for_each(|v| *v = [0.0; 3]);
    }
    for &(i, j, d0) in &terms.bonds {
        let r = sub3(&x[i], &x[j]);
        let d = norm3(&r).max(1e-8);
        let diff = d - d0;
        e += 0.5 * pot.k_bond * diff * diff;
        if let Some(gr) = g.as_deref_mut() {
            let coef = pot.k_bond * diff / d;
            for a in 0..3 {
                gr[i][a] += coef * r[a];
                gr[j][a] -= coef * r[a];
            }
        }
    }
    for &(i, c, j, theta0) in &terms.angles {
        let u = sub3(&x[i], &x[c]);
        let v = sub3(&x[j], &x[c]);
        let nu = norm3(&u).max(1e-8);
        let nv = norm3(&v).max(1e-8);
        let cos_t = (dot3(&u, &v) / (nu * nv)).clamp(-1.0, 1.0);
        let theta = cos_t.acos();
        let diff = theta - theta0;
        e += 0.5 * pot.k_angle * diff * diff;
        if let Some(gr) = g.as_deref_mut() {
            let sin_t = (1.0 - cos_t * cos_t).sqrt().max(1e-8);
            // d theta / d x_i = (cos_t * u_hat - v_hat) / (nu * sin_t)
            let coef = pot.k_angle * diff;
            for a in 0..3 {
                let uh = u[a] / nu;
                let vh = v[a] / nv;
                let di = (cos_t * uh - vh) / (nu * sin_t);
                let dj = (cos_t * vh - uh) / (nv * sin_t);
                gr[i][a] += coef * di;
                gr[j][a] += coef * dj;
                gr[c][a] -= coef * (di + dj);
            }
        }
    }
    let cutoff = pot.repulsion_cutoff;
    for &(i, j) in &terms.nonbonded {
        let r = sub3(&x[i], &x[j]);
        let d = norm3(&r).max(1e-8);
        if d >= cutoff {
            continue;
        }
        let gap = cutoff - d;
        e += pot.k_repulsion * gap.powi(4);
        if let Some(gr) = g.as_deref_mut() {
            let coef = -4.0 * pot.k_repulsion * gap.powi(3) / d;
            for a in 0..3 {
                gr[i][a] += coef * r[a];
                gr[j][a] -= coef * r[a];
            }
        }
    }
    e
}

/// Potential energy of a molecule's current geometry.
pub fn toy_energy(pot: &ToyPotential, g: &MolGraph) -> Result<f64, GeomError> {
    let terms = build_terms(g)?;
    let e = energy_and_grad(pot, &terms, &g.x, None);
    if !e.is_finite() {
        return Err(GeomError::NonFinite { step: 0 });
    }
    Ok(e)
}

/// Force on each atom (negative gradient), for convergence checks.
pub fn toy_forces(pot: &ToyPotential, g: &MolGraph) -> Result<Vec<Point3>, GeomError> {
    let terms = build_terms(g)?;
    let mut grad = vec![[0.0; 3]; g.n()];
    energy_and_grad(pot, &terms, &g.x, Some(&mut grad));
    Ok(grad.iter().map(|gv| [-gv[0], -gv[1], -gv[2]]).collect())
}

pub fn max_force_norm(forces: &[Point3]) -> f64 {
    forces.iter().map(norm3).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct RelaxOutcome {
    pub relaxed: MolGraph,
    /// Energy released by minimization, `E(start) - E(end)`, never negative.
    pub delta_e: f64,
    /// All-atom RMSD between start and relaxed geometry after optimal rigid
    /// alignment.
    pub rmsd: f64,
    pub converged: bool,
    pub steps: usize,
}

pub const RELAX_FORCE_TOL: f64 = 1e-4;

/// Gradient descent with backtracking line search until the largest per-atom
/// force drops below [`RELAX_FORCE_TOL`] or `max_steps` is spent.
pub fn toy_relax(pot: &ToyPotential, g: &MolGraph, max_steps: usize) -> Result<RelaxOutcome, GeomError> {
    let terms = build_terms(g)?;
    let mut x = g.x.clone();
    let n = x.len();
    let mut grad = vec![[0.0; 3]; n];
    let e0 = energy_and_grad(pot, &terms, &x, Some(&mut grad));
    if !e0.is_finite() {
        return Err(GeomError::NonFinite { step: 0 });
    }
    let mut e = e0;
    let mut alpha = 1e-3;
    let mut steps = 0;
    let mut converged = false;
    while steps < max_steps {
        let fmax = grad.iter().map(norm3).fold(0.0, f64::max);
        if fmax < RELAX_FORCE_TOL {
            converged = true;
            break;
        }
        let gnorm2: f64 = grad.iter().map(|gv| dot3(gv, gv)).sum();
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<Point3> = x
                .iter()
                .zip(&grad)
                .map(|(xi, gi)| [xi[0] - alpha * gi[0], xi[1] - alpha * gi[1], xi[2] - alpha * gi[2]])
                .collect();
            let et = energy_and_grad(pot, &terms, &trial, None);
            if !et.is_finite() {
                return Err(GeomError::NonFinite { step: steps });
            }
            if et <= e - 0.25 * alpha * gnorm2 {
                x = trial;
                e = et;
                alpha = (alpha * 1.3).min(0.05);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        steps += 1;
        if !accepted {
            // step size underflowed; as converged as this geometry gets
            break;
        }
        energy_and_grad(pot, &terms, &x, Some(&mut grad));
    }
    if !converged {
        let fmax = grad.iter().map(norm3).fold(0.0, f64::max);
        converged = fmax < RELAX_FORCE_TOL;
    }
    let mut relaxed = g.clone();
    relaxed.x = x;
    let rmsd = aligned_rmsd(&g.x, &relaxed.x);
    Ok(RelaxOutcome { relaxed, delta_e: (e0 - e).max(0.0), rmsd, converged, steps })
}
