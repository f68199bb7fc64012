//! Procedural toy dataset: valence-respecting random molecular topologies
//! over {C, N, O, H, optional F} with chains, branches, and 5/6-membered
//! rings, embedded from ideal geometry and relaxed to a local minimum of the
//! toy potential.

use super::potential::{toy_relax, ToyPotential, RELAX_FORCE_TOL};
use super::{check_validity, ideal_bond_length, tok, MolGraph, Validity};
use crate::coupling::Point3;
use crate::rng::substream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("size range [{min},{max}] with min < 3 is not generable")]
    BadRange { min: usize, max: usize },
    #[error("could not realize a molecule of {target} atoms after {attempts} attempts")]
    Unsatisfiable { target: usize, attempts: usize },
}

/// Heavy-atom scaffold under construction; hydrogens fill open valence at
/// the end, so `total()` is the final atom count if we stopped now.
struct Scaffold {
    elems: Vec<usize>,
    charges: Vec<usize>,
    valence: Vec<usize>,
    order: Vec<Vec<usize>>,
    ring_closures: usize,
}

impl Scaffold {
    fn new() -> Self {
        Scaffold { elems: Vec::new(), charges: Vec::new(), valence: Vec::new(), order: Vec::new(), ring_closures: 0 }
    }

    fn n(&self) -> usize {
        self.elems.len()
    }

    fn used(&self, i: usize) -> usize {
        self.order[i].iter().sum()
    }

    fn open(&self, i: usize) -> usize {
        self.valence[i].saturating_sub(self.used(i))
    }

    fn total(&self) -> usize {
        self.n() + (0..self.n()).map(|i| self.open(i)).sum::<usize>()
    }

    fn add_atom(&mut self, elem: usize, charge: usize, valence: usize) -> usize {
        let id = self.n();
        self.elems.push(elem);
        self.charges.push(charge);
        self.valence.push(valence);
        for row in self.order.iter_mut() {
            row.push(0);
        }
        self.order.push(vec![0; id + 1]);
        id
    }

    fn bond(&mut self, i: usize, j: usize, order: usize) {
        self.order[i][j] = order;
        self.order[j][i] = order;
    }

    fn graph_distance(&self, from: usize, to: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.n()];
        let mut queue = std::collections::VecDeque::new();
        dist[from] = 0;
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            if u == to {
                return Some(dist[u]);
            }
            for v in 0..self.n() {
                if self.order[u][v] > 0 && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        None
    }

    fn open_atoms(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.open(i) >= 1).collect()
    }

    /// Pairs with open valence whose graph distance closes a 5- or 6-ring.
    fn closure_candidates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            if self.open(i) == 0 {
                continue;
            }
            for j in (i + 1)..self.n() {
                if self.open(j) == 0 || self.order[i][j] > 0 {
                    continue;
                }
                if let Some(d) = self.graph_distance(i, j) {
                    if d == 4 || d == 5 {
                        out.push((i, j));
                    }
                }
            }
        }
        out
    }

    fn upgrade_candidates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                if self.order[i][j] >= 1
                    && self.order[i][j] < 3
                    && self.open(i) >= 1
                    && self.open(j) >= 1
                {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Pick an element token with charge decoration; returns (elem, charge
/// token, valence).
fn draw_heavy(rng: &mut ChaCha8Rng, allow_charges: bool) -> (usize, usize, usize) {
    let r: f64 = rng.gen();
    if r < 0.62 {
        (tok::C, tok::CHG_ZERO, 4)
    } else if r < 0.82 {
        if allow_charges {
            let c: f64 = rng.gen();
            if c < 0.04 {
                return (tok::N, tok::CHG_PLUS, 4);
            } else if c < 0.06 {
                return (tok::N, tok::CHG_MINUS, 2);
            }
        }
        (tok::N, tok::CHG_ZERO, 3)
    } else {
        if allow_charges && rng.gen::<f64>() < 0.04 {
            return (tok::O, tok::CHG_MINUS, 1);
        }
        (tok::O, tok::CHG_ZERO, 2)
    }
}

fn build_topology(target: usize, rng: &mut ChaCha8Rng) -> Option<Scaffold> {
    let mut sc = Scaffold::new();
    let (e, c, v) = draw_heavy(rng, true);
    sc.add_atom(e, c, v);

    // Growth until the hydrogen-filled size reaches the target.
    let mut guard = 0;
    while sc.total() < target {
        guard += 1;
        if guard > 200 {
            return None;
        }
        let open = sc.open_atoms();
        if open.is_empty() {
            return None;
        }
        if sc.ring_closures < 2 && rng.gen::<f64>() < 0.2 {
            let cands = sc.closure_candidates();
            if !cands.is_empty() {
                let &(i, j) = &cands[rng.gen_range(0..cands.len())];
                sc.bond(i, j, 1);
                sc.ring_closures += 1;
                continue;
            }
        }
        let anchor = open[rng.gen_range(0..open.len())];
        let (e, c, v) = draw_heavy(rng, true);
        let id = sc.add_atom(e, c, v);
        sc.bond(anchor, id, 1);
    }

    // Yield the exact target: an O addition fixes parity, then
    // unsaturation/ring closures remove two at a time.
    if (sc.total() - target) % 2 == 1 {
        let open = sc.open_atoms();
        if open.is_empty() {
            return None;
        }
        let anchor = open[rng.gen_range(0..open.len())];
        let id = sc.add_atom(tok::O, tok::CHG_ZERO, 2);
        sc.bond(anchor, id, 1);
    }
    let mut guard = 0;
    while sc.total() > target {
        guard += 1;
        if guard > 100 {
            return None;
        }
        let upgrades = sc.upgrade_candidates();
        let closures = if sc.ring_closures < 2 { sc.closure_candidates() } else { Vec::new() };
        let n_moves = upgrades.len() + closures.len();
        if n_moves == 0 {
            return None;
        }
        let pick = rng.gen_range(0..n_moves);
        if pick < upgrades.len() {
            let (i, j) = upgrades[pick];
            let o = sc.order[i][j];
            sc.bond(i, j, o + 1);
        } else {
            let (i, j) = closures[pick - upgrades.len()];
            sc.bond(i, j, 1);
            sc.ring_closures += 1;
        }
    }
    if sc.total() != target {
        return None;
    }

    // Optional fluorine: swaps a would-be hydrogen, leaving the size fixed.
    if rng.gen::<f64>() < 0.35 {
        let open = sc.open_atoms();
        if !open.is_empty() {
            let anchor = open[rng.gen_range(0..open.len())];
            // only decorate carbons; C-F is the table's fluorine bond
            if sc.elems[anchor] == tok::C {
                let id = sc.add_atom(tok::F, tok::CHG_ZERO, 1);
                sc.bond(anchor, id, 1);
            }
        }
    }
    Some(sc)
}

fn scaffold_to_graph(sc: &Scaffold) -> MolGraph {
    let n_heavy = sc.n();
    let n_h: usize = (0..n_heavy).map(|i| sc.open(i)).sum();
    let mut g = MolGraph::new(n_heavy + n_h);
    for i in 0..n_heavy {
        g.atoms[i] = sc.elems[i];
        g.charges[i] = sc.charges[i];
    }
    for i in 0..n_heavy {
        for j in (i + 1)..n_heavy {
            if sc.order[i][j] > 0 {
                g.set_bond(i, j, sc.order[i][j]);
            }
        }
    }
    let mut next = n_heavy;
    for i in 0..n_heavy {
        for _ in 0..sc.open(i) {
            g.atoms[next] = tok::H;
            g.set_bond(i, next, 1);
            next += 1;
        }
    }
    g
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = [
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Place atoms breadth-first at ideal bond length from their parent, picking
/// the candidate direction that stays farthest from everything already
/// placed. Ring-closing bonds start strained; relaxation sorts them out.
fn embed_geometry(g: &mut MolGraph, rng: &mut ChaCha8Rng) {
    let n = g.n();
    let mut placed = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    g.x[0] = [0.0; 3];
    placed[0] = true;
    queue.push_back(0usize);
    while let Some(p) = queue.pop_front() {
        for j in g.neighbors(p) {
            if placed[j] {
                continue;
            }
            let ea = super::element_of_token(g.atoms[p]).expect("generator emits real elements");
            let eb = super::element_of_token(g.atoms[j]).expect("generator emits real elements");
            let d0 = ideal_bond_length(ea, eb, super::bond_order_value(g.bond(p, j)));
            let mut best = [d0, 0.0, 0.0];
            let mut best_score = f64::NEG_INFINITY;
            for _ in 0..24 {
                let dir = random_unit(rng);
                let cand = [g.x[p][0] + d0 * dir[0], g.x[p][1] + d0 * dir[1], g.x[p][2] + d0 * dir[2]];
                let score = (0..n)
                    .filter(|&k| placed[k] && k != p)
                    .map(|k| crate::coupling::sq_dist(&cand, &g.x[k]))
                    .fold(f64::INFINITY, f64::min);
                if score > best_score {
                    best_score = score;
                    best = cand;
                }
            }
            g.x[j] = best;
            placed[j] = true;
            queue.push_back(j);
        }
    }
    for p in g.x.iter_mut() {
        for a in p.iter_mut() {
            *a += 0.02 * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn generate_one(seed: u64, idx: u64, min: usize, max: usize, pot: &ToyPotential) -> Result<MolGraph, GenError> {
    let mut rng = substream(seed, "gen", idx);
    let mut last_target = min;
    for _attempt in 0..400 {
        let target = rng.gen_range(min..=max);
        last_target = target;
        let sc = match build_topology(target, &mut rng) {
            Some(sc) => sc,
            None => continue,
        };
        let mut g = scaffold_to_graph(&sc);
        if g.n() != target || check_validity(&g) != Validity::Valid {
            continue;
        }
        embed_geometry(&mut g, &mut rng);
        let relaxed = match toy_relax(pot, &g, 200_000) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if !relaxed.converged {
            continue;
        }
        if check_validity(&relaxed.relaxed) == Validity::Valid {
            return Ok(relaxed.relaxed);
        }
    }
    Err(GenError::Unsatisfiable { target: last_target, attempts: 400 })
}

/// Generate `n_mols` valid molecules whose total atom counts (hydrogens
/// included) lie in `size_range`, each relaxed so the largest residual force
/// under the toy potential is below `1e-4`.
pub fn generate_toy_dataset(
    n_mols: usize,
    seed: u64,
    size_range: (usize, usize),
) -> Result<Vec<MolGraph>, GenError> {
    let (min, max) = size_range;
    if min < 3 || max < min {
        return Err(GenError::BadRange { min, max });
    }
    let pot = ToyPotential::default();
    (0..n_mols as u64)
        .into_par_iter()
        .map(|idx| generate_one(seed, idx, min, max, &pot))
        .collect()
}
