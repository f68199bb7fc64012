//! Conditional probability paths for all modalities: the straight-line
//! coordinate interpolant with optional late-stage distortion, masked
//! discrete paths, and the fake-atom training augmentation.
//!
//! Discrete tokens follow the masked path: at time `t` a token equals its
//! final value with probability `t` and MASK with probability `1 - t`, so
//! the prior at `t = 0` is all-mask.

use crate::coupling::{couple, Point3};
use crate::molgraph::{tok, MolGraph, Vocab};
use rand::Rng;
use rand_distr::StandardNormal;

/// Late-stage geometry distortion: for `t >= t_distort`, each atom is
/// independently flagged with probability `p_distort` and displaced by
/// `N(0, sigma^2 I)`. Setting `p_distort = 0` disables the feature.
#[derive(Clone, Copy, Debug)]
pub struct DistortionSpec {
    pub p_distort: f64,
    pub t_distort: f64,
    pub sigma_distort: f64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        DistortionSpec { p_distort: 0.2, t_distort: 0.5, sigma_distort: 0.5 }
    }
}

impl DistortionSpec {
    pub fn disabled() -> Self {
        DistortionSpec { p_distort: 0.0, ..Default::default() }
    }
}

/// Fake-atom augmentation: a uniform number of FAKE atoms in
/// `0..=floor(N * p_max)` is appended, each placed at a Gaussian offset from
/// a uniformly drawn real anchor atom. `p_max = 0` disables the feature.
#[derive(Clone, Copy, Debug)]
pub struct FakeAtomSpec {
    pub p_max: f64,
    pub offset_sigma: f64,
}

impl Default for FakeAtomSpec {
    fn default() -> Self {
        FakeAtomSpec { p_max: 0.3, offset_sigma: 1.0 }
    }
}

impl FakeAtomSpec {
    pub fn disabled() -> Self {
        FakeAtomSpec { p_max: 0.0, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PathSpecs {
    pub distortion: DistortionSpec,
    pub fake: FakeAtomSpec,
}

/// One training tuple from the probability-path sampler.
#[derive(Clone, Debug)]
pub struct PathSample {
    /// Prior endpoint: aligned coordinates, all tokens MASK.
    pub g0: MolGraph,
    /// Data endpoint after fake-atom augmentation and centering.
    pub g1: MolGraph,
    pub t: f64,
    /// The noisy state at `t`; may contain MASK tokens.
    pub g_t: MolGraph,
    pub distort_mask: Vec<bool>,
    /// Which atom-type tokens are MASK at `t`.
    pub mask_a: Vec<bool>,
    pub mask_c: Vec<bool>,
    /// Dense `n*n`; only `i < j` entries are meaningful.
    pub mask_e: Vec<bool>,
}

/// Straight-line interpolant between coordinate endpoints.
pub fn interp_x(x0: &[Point3], x1: &[Point3], t: f64) -> Vec<Point3> {
    assert_eq!(x0.len(), x1.len(), "paths::interp_x: size mismatch");
    x0.iter()
        .zip(x1)
        .map(|(a, b)| {
            [
                (1.0 - t) * a[0] + t * b[0],
                (1.0 - t) * a[1] + t * b[1],
                (1.0 - t) * a[2] + t * b[2],
            ]
        })
        .collect()
}

/// Apply late-stage distortion. Returns the (possibly) displaced positions
/// and the per-atom flag mask; both are unchanged/zero for `t < t_distort`.
pub fn distort_x(
    x_t: &[Point3],
    t: f64,
    spec: &DistortionSpec,
    rng: &mut impl Rng,
) -> (Vec<Point3>, Vec<bool>) {
    let n = x_t.len();
    if t < spec.t_distort || spec.p_distort == 0.0 {
        return (x_t.to_vec(), vec![false; n]);
    }
    let mut out = x_t.to_vec();
    let mut mask = vec![false; n];
    for i in 0..n {
        if rng.gen::<f64>() < spec.p_distort {
            mask[i] = true;
            for a in 0..3 {
                out[i][a] += spec.sigma_distort * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    (out, mask)
}

/// Sample the masked conditional path for a slice of final tokens: each is
/// kept with probability `t`, masked with probability `1 - t`.
pub fn sample_discrete_path(
    tokens1: &[usize],
    t: f64,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Vec<usize> {
    assert!(
        tokens1.iter().all(|&tk| tk != vocab.mask_index),
        "paths::sample_discrete_path: contract error, MASK in final tokens"
    );
    tokens1
        .iter()
        .map(|&tk| if rng.gen::<f64>() < t { tk } else { vocab.mask_index })
        .collect()
}

/// Append fake atoms to a data molecule. Fake atoms carry the FAKE type, a
/// neutral charge, no bonds, and sit at Gaussian offsets from their anchors.
pub fn add_fake_atoms(g1: &MolGraph, spec: &FakeAtomSpec, rng: &mut impl Rng) -> MolGraph {
    let n = g1.n();
    let k_max = (n as f64 * spec.p_max).floor() as usize;
    let k = if k_max == 0 { 0 } else { rng.gen_range(0..=k_max) };
    if k == 0 {
        return g1.clone();
    }
    let m = n + k;
    let mut out = MolGraph::new(m);
    out.x[..n].copy_from_slice(&g1.x);
    out.atoms[..n].copy_from_slice(&g1.atoms);
    out.charges[..n].copy_from_slice(&g1.charges);
    for i in 0..n {
        for j in 0..n {
            out.bonds[i * m + j] = g1.bonds[i * n + j];
        }
    }
    for f in 0..k {
        let anchor = rng.gen_range(0..n);
        let idx = n + f;
        out.atoms[idx] = tok::FAKE;
        out.charges[idx] = tok::CHG_ZERO;
        for a in 0..3 {
            out.x[idx][a] = g1.x[anchor][a] + spec.offset_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

fn all_mask_graph(x: Vec<Point3>) -> MolGraph {
    let n = x.len();
    let mut g = MolGraph::new(n);
    g.x = x;
    g.atoms = vec![tok::ATOM_MASK; n];
    g.charges = vec![tok::CHG_MASK; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                g.bonds[i * n + j] = tok::BOND_MASK;
            }
        }
    }
    g
}

/// Compose the full conditional path at a caller-chosen time. The modalities
/// are sampled independently given the coupled endpoints; bond tokens are
/// drawn on the upper triangle and mirrored so the state stays a legal
/// molecule graph.
pub fn build_path_sample_at(
    g1_raw: &MolGraph,
    t: f64,
    vocabs: &crate::molgraph::Vocabs,
    specs: &PathSpecs,
    rng: &mut impl Rng,
) -> PathSample {
    let mut g1 = add_fake_atoms(g1_raw, &specs.fake, rng);
    let pair = couple(&g1.x, rng);
    g1.x = pair.x1.clone();
    let n = g1.n();

    let x_t = interp_x(&pair.x0, &g1.x, t);
    let (x_t, distort_mask) = distort_x(&x_t, t, &specs.distortion, rng);

    let a_t = sample_discrete_path(&g1.atoms, t, &vocabs.atom, rng);
    let c_t = sample_discrete_path(&g1.charges, t, &vocabs.charge, rng);

    let mut g_t = MolGraph::new(n);
    g_t.x = x_t;
    g_t.atoms = a_t;
    g_t.charges = c_t;
    let mut mask_e = vec![false; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let token = if rng.gen::<f64>() < t { g1.bond(i, j) } else { tok::BOND_MASK };
            g_t.set_bond(i, j, token);
            mask_e[i * n + j] = token == tok::BOND_MASK;
        }
    }

    let mask_a = g_t.atoms.iter().map(|&a| a == tok::ATOM_MASK).collect();
    let mask_c = g_t.charges.iter().map(|&c| c == tok::CHG_MASK).collect();
    let g0 = all_mask_graph(pair.x0);

    PathSample { g0, g1, t, g_t, distort_mask, mask_a, mask_c, mask_e }
}

/// The training-time entry point: draws `t ~ U(0, 1)` and samples the path.
pub fn build_path_sample(
    g1_raw: &MolGraph,
    vocabs: &crate::molgraph::Vocabs,
    specs: &PathSpecs,
    rng: &mut impl Rng,
) -> PathSample {
    let t: f64 = rng.gen();
    build_path_sample_at(g1_raw, t, vocabs, specs, rng)
}
