//! Valence validation, Kekulé assignment and hydrogen resolution.

use std::collections::{BTreeSet, VecDeque};

use crate::element::Element;
use crate::error::{ChemError, InvalidReason};
use crate::graph::{BondOrder, MolGraph};

/// Outcome of [`validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidityVerdict {
    Valid,
    Invalid { atom: usize, reason: InvalidReason },
}

impl ValidityVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidityVerdict::Valid)
    }
}

// Node budget for the Kekulé backtracking search.
const KEKULE_SEARCH_LIMIT: usize = 1_000_000;

/// Checks aromatic structure, Kekulé assignability and per-atom valence.
pub fn validate(mol: &MolGraph) -> ValidityVerdict {
    match check(mol) {
        Ok(_) => ValidityVerdict::Valid,
        Err((atom, reason)) => ValidityVerdict::Invalid { atom, reason },
    }
}

/// Validates and returns the total hydrogen count of every atom.
pub fn hydrogen_counts(mol: &MolGraph) -> Result<Vec<u32>, ChemError> {
    check(mol).map_err(|(atom, reason)| ChemError::InvalidInput { atom, reason })?;
    Ok((0..mol.atom_count()).map(|i| hydrogen_count(mol, i)).collect())
}

fn check(mol: &MolGraph) -> Result<MolGraph, (usize, InvalidReason)> {
    check_aromatic_structure(mol)?;
    let kekule = assign_kekule(mol)?;
    for i in 0..kekule.atom_count() {
        let atom = kekule.atom(i);
        let bonds = kekule.bond_valence(i);
        let (used, allowed) = if atom.in_bracket {
            (
                bonds + atom.explicit_h.unwrap_or(0) as u32,
                atom.element.allowed_valences(atom.formal_charge),
            )
        } else {
            (bonds, atom.element.allowed_valences(0))
        };
        if used > allowed.max() {
            return Err((
                i,
                InvalidReason::Valence {
                    used,
                    max: allowed.max(),
                },
            ));
        }
    }
    Ok(kekule)
}

/// Replaces aromatic bonds with an alternating single/double assignment.
/// Atoms keep their aromatic flag.
pub fn kekulize(mol: &MolGraph) -> Result<MolGraph, ChemError> {
    check_aromatic_structure(mol)
        .and_then(|_| assign_kekule(mol))
        .map_err(|(atom, reason)| ChemError::NoKekuleAssignment { atom, reason })
}

fn check_aromatic_structure(mol: &MolGraph) -> Result<(), (usize, InvalidReason)> {
    for (i, atom) in mol.atoms().iter().enumerate() {
        if atom.aromatic && !mol.is_ring_atom(i) {
            return Err((i, InvalidReason::AromaticOutsideRing));
        }
    }
    for (bi, bond) in mol.bonds().iter().enumerate() {
        if bond.order != BondOrder::Aromatic {
            continue;
        }
        let (a, b) = bond.atoms;
        if !mol.atom(a).aromatic || !mol.atom(b).aromatic {
            let bad = if mol.atom(a).aromatic { b } else { a };
            return Err((bad, InvalidReason::AromaticBondMismatch));
        }
        if !mol.is_ring_bond(bi) {
            return Err((a, InvalidReason::AromaticOutsideRing));
        }
    }
    Ok(())
}

/// Whether an aromatic atom must take one double bond from its aromatic
/// neighbours to reach its lowest allowed valence.
pub(crate) fn needs_double(mol: &MolGraph, i: usize) -> bool {
    let atom = mol.atom(i);
    if !atom.aromatic || mol.aromatic_bond_count(i) == 0 {
        return false;
    }
    let base = mol.bond_valence(i) + atom.explicit_h.unwrap_or(0) as u32;
    let charge = if atom.in_bracket { atom.formal_charge } else { 0 };
    match atom.element.kekule_valences(charge).target(base) {
        Some(t) => t > base,
        None => false,
    }
}

/// Total hydrogens on an atom: the bracket count, or the implicit count of
/// an organic-subset atom. Works on both aromatic and kekulized graphs.
pub(crate) fn hydrogen_count(mol: &MolGraph, i: usize) -> u32 {
    let atom = mol.atom(i);
    if atom.in_bracket {
        atom.explicit_h.unwrap_or(0) as u32
    } else {
        organic_hydrogens(mol, i)
    }
}

/// Hydrogens the atom would carry if written without brackets.
pub(crate) fn organic_hydrogens(mol: &MolGraph, i: usize) -> u32 {
    let atom = mol.atom(i);
    if atom.element == Element::WILDCARD {
        return 0;
    }
    let base = mol.bond_valence(i);
    match atom.element.allowed_valences(0).target(base) {
        // an aromatic atom that still needs its Kekulé double bond
        Some(t) if atom.aromatic && mol.aromatic_bond_count(i) > 0 => {
            if t > base {
                t - base - 1
            } else {
                0
            }
        }
        Some(t) => t - base,
        None => 0,
    }
}

fn assign_kekule(mol: &MolGraph) -> Result<MolGraph, (usize, InvalidReason)> {
    let n = mol.atom_count();
    let needy: Vec<bool> = (0..n).map(|i| needs_double(mol, i)).collect();
    reject_anti_aromatic(mol, &needy)?;

    let mut search = Matching {
        mol,
        needy: &needy,
        partner: vec![None; n],
        budget: KEKULE_SEARCH_LIMIT,
    };
    if let Some(bad) = search.solve() {
        return Err((bad, InvalidReason::NoKekuleAssignment));
    }

    let (atoms, mut bonds) = mol.clone().into_parts();
    for (bi, bond) in bonds.iter_mut().enumerate() {
        if bond.order == BondOrder::Aromatic {
            let a = bond.atoms.0;
            bond.order = if search.partner[a] == Some(bi) {
                BondOrder::Double
            } else {
                BondOrder::Single
            };
        }
    }
    Ok(MolGraph::with_parts(atoms, bonds))
}

struct Matching<'a> {
    mol: &'a MolGraph,
    needy: &'a [bool],
    // bond index of the chosen double bond
    partner: Vec<Option<usize>>,
    budget: usize,
}

impl Matching<'_> {
    fn free_options(&self, a: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mol.neighbors(a).iter().copied().filter(move |&(n, b)| {
            self.needy[n]
                && self.partner[n].is_none()
                && self.mol.bond(b).order == BondOrder::Aromatic
        })
    }

    /// Returns `None` on success, or the atom that could not be matched.
    fn solve(&mut self) -> Option<usize> {
        let mut first_failure = None;
        if self.search(&mut first_failure) {
            None
        } else {
            Some(first_failure.unwrap_or(0))
        }
    }

    // Most-constrained-first backtracking.
    fn search(&mut self, failure: &mut Option<usize>) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        let mut pick: Option<(usize, usize)> = None;
        for a in 0..self.needy.len() {
            if !self.needy[a] || self.partner[a].is_some() {
                continue;
            }
            let k = self.free_options(a).count();
            if pick.is_none_or(|(_, best)| k < best) {
                pick = Some((a, k));
                if k == 0 {
                    break;
                }
            }
        }
        let Some((atom, count)) = pick else {
            return true;
        };
        if count == 0 {
            failure.get_or_insert(atom);
            return false;
        }
        let options: Vec<(usize, usize)> = self.free_options(atom).collect();
        for (n, b) in options {
            self.partner[atom] = Some(b);
            self.partner[n] = Some(b);
            if self.search(failure) {
                return true;
            }
            self.partner[atom] = None;
            self.partner[n] = None;
        }
        false
    }
}

// A fully conjugated ring whose size is a multiple of four (cyclobutadiene,
// cyclooctatetraene written in lowercase) is anti-aromatic: reject it even
// when an alternating assignment exists. Rings are the smallest rings
// through each aromatic bond within the aromatic subgraph.
fn reject_anti_aromatic(mol: &MolGraph, needy: &[bool]) -> Result<(), (usize, InvalidReason)> {
    for ring in aromatic_rings(mol) {
        if ring.len() % 4 == 0 && ring.iter().all(|&a| needy[a]) {
            return Err((ring[0], InvalidReason::AntiAromaticRing));
        }
    }
    Ok(())
}

/// Smallest ring (by atom count) through each aromatic bond, using only
/// aromatic bonds. Rings are returned as sorted atom lists, deduplicated.
pub(crate) fn aromatic_rings(mol: &MolGraph) -> Vec<Vec<usize>> {
    let mut rings = BTreeSet::new();
    for (bi, bond) in mol.bonds().iter().enumerate() {
        if bond.order != BondOrder::Aromatic {
            continue;
        }
        let (src, dst) = bond.atoms;
        if let Some(path) = shortest_path(mol, src, dst, bi, |b| {
            mol.bond(b).order == BondOrder::Aromatic
        }) {
            let mut ring = path;
            ring.sort_unstable();
            rings.insert(ring);
        }
    }
    rings.into_iter().collect()
}

/// BFS path from `src` to `dst` that avoids bond `skip` and only uses bonds
/// accepted by `allow`. Returns the atoms on the path including both ends.
pub(crate) fn shortest_path(
    mol: &MolGraph,
    src: usize,
    dst: usize,
    skip: usize,
    allow: impl Fn(usize) -> bool,
) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; mol.atom_count()];
    prev[src] = src;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            let mut path = vec![dst];
            let mut cur = dst;
            while cur != src {
                cur = prev[cur];
                path.push(cur);
            }
            return Some(path);
        }
        for &(v, b) in mol.neighbors(u) {
            if b != skip && prev[v] == usize::MAX && allow(b) {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    None
}
