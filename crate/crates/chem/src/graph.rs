//! Heavy-atom molecular graph.

use crate::element::Element;
use crate::error::ChemError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to valence; aromatic bonds count as one until kekulized.
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    /// Stable small-integer code used in invariants and hashes.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

/// Directional single-bond marker (`/` or `\`), kept as an annotation only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BondDirection {
    Up,
    Down,
}

/// Tetrahedral or extended chirality marker, kept as an annotation only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chirality(pub String);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms.
    pub explicit_h: Option<u8>,
    pub isotope: Option<u16>,
    pub in_bracket: bool,
    pub chirality: Option<Chirality>,
    pub atom_class: Option<u32>,
}

impl Atom {
    pub fn organic(element: Element, aromatic: bool) -> Atom {
        Atom {
            element,
            aromatic,
            formal_charge: 0,
            explicit_h: None,
            isotope: None,
            in_bracket: false,
            chirality: None,
            atom_class: None,
        }
    }

    /// Attachment-point marker `*`.
    pub fn wildcard() -> Atom {
        Atom::organic(Element::WILDCARD, false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bond {
    pub atoms: (usize, usize),
    pub order: BondOrder,
    pub direction: Option<BondDirection>,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Bond {
        Bond {
            atoms: (a, b),
            order,
            direction: None,
        }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.atoms.0 == atom {
            self.atoms.1
        } else {
            self.atoms.0
        }
    }
}

/// A molecule as atoms plus bonds, with cached adjacency and ring
/// membership. Built once and immutable afterwards.
#[derive(Clone, Debug)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    // (neighbor, bond index) per atom, in bond insertion order.
    adjacency: Vec<Vec<(usize, usize)>>,
    ring_atom: Vec<bool>,
    ring_bond: Vec<bool>,
    components: usize,
}

impl MolGraph {
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<MolGraph, ChemError> {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, bond) in bonds.iter().enumerate() {
            let (a, b) = bond.atoms;
            if a >= atoms.len() || b >= atoms.len() {
                return Err(ChemError::InvalidGraph(format!(
                    "bond {i} references missing atom"
                )));
            }
            if a == b {
                return Err(ChemError::InvalidGraph(format!(
                    "bond {i} joins atom {a} to itself"
                )));
            }
            if adjacency[a].iter().any(|&(n, _)| n == b) {
                return Err(ChemError::InvalidGraph(format!(
                    "duplicate bond between atoms {a} and {b}"
                )));
            }
            adjacency[a].push((b, i));
            adjacency[b].push((a, i));
        }
        let (ring_bond, components) = find_ring_bonds(&adjacency, bonds.len());
        let mut ring_atom = vec![false; atoms.len()];
        for (i, bond) in bonds.iter().enumerate() {
            if ring_bond[i] {
                ring_atom[bond.atoms.0] = true;
                ring_atom[bond.atoms.1] = true;
            }
        }
        Ok(MolGraph {
            atoms,
            bonds,
            adjacency,
            ring_atom,
            ring_bond,
            components,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond(&self, i: usize) -> &Bond {
        &self.bonds[i]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// `(neighbor, bond index)` pairs.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| bi)
    }

    pub fn is_ring_atom(&self, atom: usize) -> bool {
        self.ring_atom[atom]
    }

    pub fn is_ring_bond(&self, bond: usize) -> bool {
        self.ring_bond[bond]
    }

    pub fn ring_membership(&self) -> &[bool] {
        &self.ring_atom
    }

    pub fn component_count(&self) -> usize {
        self.components
    }

    pub fn is_connected(&self) -> bool {
        self.components <= 1
    }

    /// Cyclomatic number (bonds − atoms + components): the size of the
    /// smallest set of smallest rings.
    pub fn ring_count(&self) -> usize {
        self.bonds.len() + self.components - self.atoms.len()
    }

    /// Sum of bond valences at an atom (aromatic bonds count one).
    pub(crate) fn bond_valence(&self, atom: usize) -> u32 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence())
            .sum()
    }

    pub(crate) fn aromatic_bond_count(&self, atom: usize) -> usize {
        self.adjacency[atom]
            .iter()
            .filter(|&&(_, b)| self.bonds[b].order == BondOrder::Aromatic)
            .count()
    }

    /// Connected components as sorted atom index lists, ordered by their
    /// smallest atom index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let a = comp[k];
                k += 1;
                for &(n, _) in &self.adjacency[a] {
                    if !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Copy of this graph with atoms and bonds replaced; recomputes rings.
    pub(crate) fn with_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> MolGraph {
        MolGraph::new(atoms, bonds).expect("derived graph keeps structural invariants")
    }

    pub(crate) fn into_parts(self) -> (Vec<Atom>, Vec<Bond>) {
        (self.atoms, self.bonds)
    }
}

// Bridges are the acyclic bonds; every other bond lies on a ring.
// Iterative Tarjan lowlink so long chains cannot overflow the stack.
fn find_ring_bonds(adjacency: &[Vec<(usize, usize)>], n_bonds: usize) -> (Vec<bool>, usize) {
    let n = adjacency.len();
    let mut ring = vec![true; n_bonds];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    let mut components = 0;
    // (atom, bond used to enter, next adjacency index)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        components += 1;
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(top) = stack.last_mut() {
            let (u, via) = (top.0, top.1);
            if top.2 < adjacency[u].len() {
                let (v, b) = adjacency[u][top.2];
                top.2 += 1;
                if b == via {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, b, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        ring[via] = false;
                    }
                }
            }
        }
    }
    (ring, components)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, close: bool) -> MolGraph {
        let atoms = vec![Atom::organic(Element::C, false); n];
        let mut bonds: Vec<Bond> = (1..n).map(|i| Bond::new(i - 1, i, BondOrder::Single)).collect();
        if close {
            bonds.push(Bond::new(n - 1, 0, BondOrder::Single));
        }
        MolGraph::new(atoms, bonds).unwrap()
    }

    #[test]
    fn chain_has_no_rings() {
        let g = chain(5, false);
        assert_eq!(g.ring_count(), 0);
        assert!(g.ring_membership().iter().all(|&r| !r));
    }

    #[test]
    fn cycle_is_all_ring() {
        let g = chain(6, true);
        assert_eq!(g.ring_count(), 1);
        assert!(g.ring_membership().iter().all(|&r| r));
    }

    #[test]
    fn rejects_duplicate_and_self_bonds() {
        let atoms = vec![Atom::organic(Element::C, false); 2];
        let dup = vec![Bond::new(0, 1, BondOrder::Single), Bond::new(1, 0, BondOrder::Single)];
        assert!(MolGraph::new(atoms.clone(), dup).is_err());
        assert!(MolGraph::new(atoms, vec![Bond::new(1, 1, BondOrder::Single)]).is_err());
    }

    #[test]
    fn long_chain_does_not_overflow() {
        let g = chain(200_000, false);
        assert_eq!(g.component_count(), 1);
    }
}
