//! Molecular graph data model: categorical vocabularies with mask/fake/none
//! tokens, the dense graph type, valence-table validity, the toy harmonic
//! potential, a procedural dataset generator, and file formats.

mod gen;
mod io;
mod potential;

pub use gen::{generate_toy_dataset, GenError};
pub use io::{read_mgf, write_mgf, write_sdf, IoError};
pub use potential::{toy_energy, toy_relax, GeomError, RelaxOutcome, ToyPotential};

use serde::{Deserialize, Serialize};

/// Chemical elements the toy world knows about.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
}

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        match s {
            "H" => Some(Element::H),
            "C" => Some(Element::C),
            "N" => Some(Element::N),
            "O" => Some(Element::O),
            "F" => Some(Element::F),
            _ => None,
        }
    }

    /// Single-bond covalent radius (angstroms), calibrated so sums reproduce
    /// the ideal-length table for pairs it does not list explicitly.
    pub fn radius(self) -> f64 {
        match self {
            Element::H => 0.32,
            Element::C => 0.77,
            Element::N => 0.70,
            Element::O => 0.66,
            Element::F => 0.58,
        }
    }
}

pub const ELEMENTS: [Element; 5] = [Element::H, Element::C, Element::N, Element::O, Element::F];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Modality {
    Atom,
    Charge,
    Bond,
}

/// A categorical vocabulary for one modality. Every vocabulary carries a
/// MASK token; the atom vocabulary additionally has FAKE and the bond
/// vocabulary NONE.
#[derive(Clone, Debug)]
pub struct Vocab {
    pub modality: Modality,
    pub tokens: Vec<&'static str>,
    pub mask_index: usize,
    pub fake_index: Option<usize>,
    pub none_index: Option<usize>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of classes a prediction head emits: everything except MASK.
    /// MASK is the last token in all standard vocabularies, so head class
    /// `k` is vocabulary token `k`.
    pub fn n_classes(&self) -> usize {
        debug_assert_eq!(self.mask_index, self.len() - 1);
        self.len() - 1
    }
}

/// The standard vocabulary trio.
#[derive(Clone, Debug)]
pub struct Vocabs {
    pub atom: Vocab,
    pub charge: Vocab,
    pub bond: Vocab,
}

impl Vocabs {
    pub fn standard() -> Self {
        Vocabs {
            atom: Vocab {
                modality: Modality::Atom,
                tokens: vec!["H", "C", "N", "O", "F", "FAKE", "MASK"],
                mask_index: 6,
                fake_index: Some(5),
                none_index: None,
            },
            charge: Vocab {
                modality: Modality::Charge,
                tokens: vec!["-1", "0", "+1", "MASK"],
                mask_index: 3,
                fake_index: None,
                none_index: None,
            },
            bond: Vocab {
                modality: Modality::Bond,
                tokens: vec!["NONE", "1", "2", "3", "MASK"],
                mask_index: 4,
                fake_index: None,
                none_index: Some(0),
            },
        }
    }
}

/// Atom-vocabulary token indices, fixed by `Vocabs::standard`.
pub mod tok {
    pub const H: usize = 0;
    pub const C: usize = 1;
    pub const N: usize = 2;
    pub const O: usize = 3;
    pub const F: usize = 4;
    pub const FAKE: usize = 5;
    pub const ATOM_MASK: usize = 6;

    pub const CHG_MINUS: usize = 0;
    pub const CHG_ZERO: usize = 1;
    pub const CHG_PLUS: usize = 2;
    pub const CHG_MASK: usize = 3;

    pub const BOND_NONE: usize = 0;
    pub const BOND_MASK: usize = 4;
}

pub fn element_of_token(t: usize) -> Option<Element> {
    match t {
        tok::H => Some(Element::H),
        tok::C => Some(Element::C),
        tok::N => Some(Element::N),
        tok::O => Some(Element::O),
        tok::F => Some(Element::F),
        _ => None,
    }
}

pub fn token_of_element(e: Element) -> usize {
    match e {
        Element::H => tok::H,
        Element::C => tok::C,
        Element::N => tok::N,
        Element::O => tok::O,
        Element::F => tok::F,
    }
}

/// Formal charge value of a charge token.
pub fn charge_value(t: usize) -> i32 {
    t as i32 - 1
}

pub fn charge_token(v: i32) -> Option<usize> {
    match v {
        -1 => Some(tok::CHG_MINUS),
        0 => Some(tok::CHG_ZERO),
        1 => Some(tok::CHG_PLUS),
        _ => None,
    }
}

/// Bond-order contribution of a bond token toward a valence sum.
pub fn bond_order_value(t: usize) -> usize {
    match t {
        tok::BOND_NONE => 0,
        1..=3 => t,
        _ => panic!("molgraph: bond token {t} has no order (MASK?)"),
    }
}

/// A molecule: positions plus token indices for atom types, charges, and a
/// dense symmetric bond-order matrix with NONE on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct MolGraph {
    pub x: Vec<[f64; 3]>,
    pub atoms: Vec<usize>,
    pub charges: Vec<usize>,
    /// Row-major `n*n` bond tokens.
    pub bonds: Vec<usize>,
}

impl MolGraph {
    pub fn new(n: usize) -> Self {
        MolGraph {
            x: vec![[0.0; 3]; n],
            atoms: vec![tok::C; n],
            charges: vec![tok::CHG_ZERO; n],
            bonds: vec![tok::BOND_NONE; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond(&self, i: usize, j: usize) -> usize {
        self.bonds[i * self.n() + j]
    }

    pub fn set_bond(&mut self, i: usize, j: usize, token: usize) {
        assert_ne!(i, j, "molgraph: no self bonds");
        let n = self.n();
        self.bonds[i * n + j] = token;
        self.bonds[j * n + i] = token;
    }

    /// Indices of atoms bonded to `i` (non-NONE, non-MASK tokens count).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| j != i && self.bond(i, j) != tok::BOND_NONE).collect()
    }

    /// Sum of bond orders at atom `i`. Panics on MASK bonds.
    pub fn valence_sum(&self, i: usize) -> usize {
        (0..self.n())
            .filter(|&j| j != i)
            .map(|j| bond_order_value(self.bond(i, j)))
            .sum()
    }

    pub fn contains_mask(&self) -> bool {
        self.atoms.iter().any(|&a| a == tok::ATOM_MASK)
            || self.charges.iter().any(|&c| c == tok::CHG_MASK)
            || self.bonds.iter().any(|&b| b == tok::BOND_MASK)
    }

    /// True if all atoms are reachable from atom 0 over real bonds.
    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    /// Per-atom flag: lies on some cycle of the bond graph. An atom is in a
    /// ring iff it has an incident non-bridge edge.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let n = self.n();
        let mut in_ring = vec![false; n];
        if n == 0 {
            return in_ring;
        }
        // Tarjan bridge finding over the undirected bond graph.
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut timer = 0usize;
        // Iterative DFS: stack of (node, parent, neighbor cursor).
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (u, parent, ref mut cursor)) = stack.last_mut() {
                let nbrs = self.neighbors(u);
                if *cursor < nbrs.len() {
                    let v = nbrs[*cursor];
                    *cursor += 1;
                    if v == parent {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, u, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                        if disc[v] < disc[u] {
                            // back edge: everything between is on a cycle
                            in_ring[u] = true;
                            in_ring[v] = true;
                        }
                    }
                } else {
                    stack.pop();
                    if let Some(&mut (p, _, _)) = stack.last_mut() {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            // (p, u) is a bridge
                        } else {
                            in_ring[p] = true;
                            in_ring[u] = true;
                        }
                    }
                }
            }
        }
        in_ring
    }
}

/// Why a molecule failed validation.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InvalidReason {
    /// An atom's bond-order sum is not allowed for its element and charge.
    Valence { atom: usize },
    /// More than one connected component.
    Fragmented,
    /// FAKE atoms remain.
    FakeAtomPresent,
    /// Zero atoms.
    Empty,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Allowed bond-order sums per (element, formal charge). Neutral: H 1,
/// C 4, N 3, O 2, F 1; charged: N+ 4, O- 1, N- 2, C- 3. Double and triple
/// bonds count 2 and 3 toward the sum.
pub fn allowed_valences(e: Element, charge: i32) -> Option<&'static [usize]> {
    match (e, charge) {
        (Element::H, 0) => Some(&[1]),
        (Element::C, 0) => Some(&[4]),
        (Element::C, -1) => Some(&[3]),
        (Element::N, 0) => Some(&[3]),
        (Element::N, 1) => Some(&[4]),
        (Element::N, -1) => Some(&[2]),
        (Element::O, 0) => Some(&[2]),
        (Element::O, -1) => Some(&[1]),
        (Element::F, 0) => Some(&[1]),
        _ => None,
    }
}

/// Valence-table validity: every atom's bond-order sum must be allowed for
/// its (element, charge), the graph must be one connected component, and no
/// FAKE atoms may remain. MASK tokens are a caller bug.
pub fn check_validity(g: &MolGraph) -> Validity {
    assert!(!g.contains_mask(), "molgraph::check_validity: contract error, MASK token present");
    if g.n() == 0 {
        return Validity::Invalid(InvalidReason::Empty);
    }
    if g.atoms.iter().any(|&a| a == tok::FAKE) {
        return Validity::Invalid(InvalidReason::FakeAtomPresent);
    }
    for i in 0..g.n() {
        let elem = match element_of_token(g.atoms[i]) {
            Some(e) => e,
            None => return Validity::Invalid(InvalidReason::Valence { atom: i }),
        };
        let sum = g.valence_sum(i);
        match allowed_valences(elem, charge_value(g.charges[i])) {
            Some(allowed) if allowed.contains(&sum) => {}
            _ => return Validity::Invalid(InvalidReason::Valence { atom: i }),
        }
    }
    if !g.is_connected() {
        return Validity::Invalid(InvalidReason::Fragmented);
    }
    Validity::Valid
}

/// Ideal bond length (angstroms) between two elements at a given bond order.
/// Listed pairs use textbook values; everything else falls back to summed
/// radii scaled by order.
pub fn ideal_bond_length(a: Element, b: Element, order: usize) -> f64 {
    use Element::*;
    let pair = |x: Element, y: Element| (a == x && b == y) || (a == y && b == x);
    match order {
        1 => {
            if pair(C, C) {
                1.54
            } else if pair(C, H) {
                1.09
            } else if pair(C, N) {
                1.47
            } else if pair(C, O) {
                1.43
            } else if pair(N, H) {
                1.01
            } else if pair(O, H) {
                0.96
            } else if pair(C, F) {
                1.35
            } else {
                a.radius() + b.radius()
            }
        }
        2 => {
            if pair(C, C) {
                1.34
            } else if pair(C, O) {
                1.22
            } else {
                0.87 * (a.radius() + b.radius())
            }
        }
        3 => {
            if pair(C, C) {
                1.20
            } else {
                0.78 * (a.radius() + b.radius())
            }
        }
        _ => panic!("molgraph::ideal_bond_length: order {order} out of range"),
    }
}

/// Dataset sidecar statistics written next to generated MGF files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub size_histogram: Vec<(usize, usize)>,
}

pub fn size_histogram(mols: &[MolGraph]) -> Vec<(usize, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for m in mols {
        *counts.entry(m.n()).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn methane() -> MolGraph {
        let mut g = MolGraph::new(5);
        g.atoms = vec![tok::C, tok::H, tok::H, tok::H, tok::H];
        let d = 1.09 / 3f64.sqrt();
        g.x = vec![
            [0.0, 0.0, 0.0],
            [d, d, d],
            [d, -d, -d],
            [-d, d, -d],
            [-d, -d, d],
        ];
        for h in 1..5 {
            g.set_bond(0, h, 1);
        }
        g
    }

    #[test]
    fn methane_is_valid() {
        assert_eq!(check_validity(&methane()), Validity::Valid);
    }

    #[test]
    fn carbon_with_five_bonds_is_invalid() {
        let mut g = MolGraph::new(6);
        g.atoms = vec![tok::C, tok::H, tok::H, tok::H, tok::H, tok::H];
        for h in 1..6 {
            g.set_bond(0, h, 1);
        }
        assert_eq!(check_validity(&g), Validity::Invalid(InvalidReason::Valence { atom: 0 }));
    }

    #[test]
    fn fragments_are_invalid() {
        // two separate H2 molecules in one graph
        let mut g = MolGraph::new(4);
        g.atoms = vec![tok::H; 4];
        g.set_bond(0, 1, 1);
        g.set_bond(2, 3, 1);
        assert_eq!(check_validity(&g), Validity::Invalid(InvalidReason::Fragmented));
    }

    #[test]
    #[should_panic(expected = "contract error")]
    fn mask_tokens_panic() {
        let mut g = methane();
        g.atoms[1] = tok::ATOM_MASK;
        check_validity(&g);
    }

    #[test]
    fn fake_atoms_invalidate() {
        let mut g = methane();
        g.atoms[4] = tok::FAKE;
        assert_eq!(check_validity(&g), Validity::Invalid(InvalidReason::FakeAtomPresent));
    }

    #[test]
    fn charged_valences() {
        // ammonium-like: N+ with 4 H
        let mut g = MolGraph::new(5);
        g.atoms = vec![tok::N, tok::H, tok::H, tok::H, tok::H];
        g.charges[0] = tok::CHG_PLUS;
        for h in 1..5 {
            g.set_bond(0, h, 1);
        }
        assert!(check_validity(&g).is_valid());
        // neutral N with 4 bonds is not valid
        g.charges[0] = tok::CHG_ZERO;
        assert!(!check_validity(&g).is_valid());
    }

    #[test]
    fn ring_atoms_detects_cycles() {
        // cyclopropane-like triangle plus a tail
        let mut g = MolGraph::new(4);
        g.atoms = vec![tok::C; 4];
        g.set_bond(0, 1, 1);
        g.set_bond(1, 2, 1);
        g.set_bond(0, 2, 1);
        g.set_bond(2, 3, 1);
        let r = g.ring_atoms();
        assert_eq!(r, vec![true, true, true, false]);
    }

    #[test]
    fn ideal_lengths_follow_table_and_fallback() {
        assert_eq!(ideal_bond_length(Element::C, Element::C, 1), 1.54);
        assert_eq!(ideal_bond_length(Element::H, Element::C, 1), 1.09);
        assert_eq!(ideal_bond_length(Element::C, Element::O, 2), 1.22);
        // fallback: N-N single = 0.70 + 0.70
        assert!((ideal_bond_length(Element::N, Element::N, 1) - 1.4).abs() < 1e-12);
    }
}
