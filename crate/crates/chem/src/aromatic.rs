//! Normalized molecule view shared by canonicalization, fingerprints and
//! fragmentation.
//!
//! Aromaticity is taken from the input (lowercase atoms) plus one
//! perception rule: a six-membered ring of neutral C/N atoms whose ring
//! bonds alternate single/double is rewritten as aromatic. Bonds already
//! aromatic count as either order, so fused Kekulé systems are perceived
//! ring by ring. Five-membered
//! and other Kekulé heteroaromatics are left as written.

use crate::element::Element;
use crate::error::ChemError;
use crate::graph::{BondOrder, MolGraph};
use crate::valence::hydrogen_counts;

/// A validated molecule with aromaticity normalized and hydrogen counts
/// frozen from the original input.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub mol: MolGraph,
    pub hydrogens: Vec<u32>,
}

pub(crate) fn prepare(mol: &MolGraph) -> Result<Prepared, ChemError> {
    let hydrogens = hydrogen_counts(mol)?;
    Ok(Prepared {
        mol: perceive_six_rings(mol),
        hydrogens,
    })
}

fn ring_candidate(mol: &MolGraph, i: usize) -> bool {
    let a = mol.atom(i);
    matches!(a.element, Element::C | Element::N) && a.formal_charge == 0 && mol.is_ring_atom(i)
}

/// All simple 6-cycles over candidate atoms, each as its atom sequence
/// starting from the smallest index.
fn six_cycles(mol: &MolGraph) -> Vec<[usize; 6]> {
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(6);
    for start in 0..mol.atom_count() {
        if !ring_candidate(mol, start) {
            continue;
        }
        path.clear();
        path.push(start);
        extend(mol, start, &mut path, &mut out);
    }
    out
}

fn extend(mol: &MolGraph, start: usize, path: &mut Vec<usize>, out: &mut Vec<[usize; 6]>) {
    let last = *path.last().unwrap();
    for &(n, _) in mol.neighbors(last) {
        if path.len() == 6 {
            // close only once per direction pair: second atom < last atom
            if n == start && path[1] < path[5] {
                out.push([path[0], path[1], path[2], path[3], path[4], path[5]]);
            }
            continue;
        }
        if n <= start || path.contains(&n) || !ring_candidate(mol, n) {
            continue;
        }
        path.push(n);
        extend(mol, start, path, out);
        path.pop();
    }
}

fn perceive_six_rings(mol: &MolGraph) -> MolGraph {
    let cycles = six_cycles(mol);
    if cycles.is_empty() {
        return mol.clone();
    }
    let (mut atoms, mut bonds) = mol.clone().into_parts();
    loop {
        let mut changed = false;
        for cycle in &cycles {
            let ring_bonds: Vec<usize> = (0..6)
                .map(|k| {
                    let a = cycle[k];
                    let b = cycle[(k + 1) % 6];
                    mol.bond_between(a, b).unwrap()
                })
                .collect();
            if ring_bonds.iter().all(|&b| bonds[b].order == BondOrder::Aromatic) {
                continue;
            }
            // no exocyclic double bonds on ring atoms
            let exocyclic = cycle.iter().any(|&a| {
                mol.neighbors(a).iter().any(|&(_, b)| {
                    !ring_bonds.contains(&b) && bonds[b].order == BondOrder::Double
                })
            });
            // at least one written double bond; aromatic bonds only act as
            // wildcards while growing across fused rings
            let has_double = ring_bonds.iter().any(|&b| bonds[b].order == BondOrder::Double);
            if exocyclic || !has_double {
                continue;
            }
            let alternates = |phase: usize| {
                ring_bonds.iter().enumerate().all(|(k, &b)| {
                    let want = if k % 2 == phase {
                        BondOrder::Double
                    } else {
                        BondOrder::Single
                    };
                    bonds[b].order == want || bonds[b].order == BondOrder::Aromatic
                })
            };
            if alternates(0) || alternates(1) {
                for &a in cycle {
                    atoms[a].aromatic = true;
                }
                for &b in &ring_bonds {
                    bonds[b].order = BondOrder::Aromatic;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    MolGraph::with_parts(atoms, bonds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse;

    fn aromatic_atoms(s: &str) -> usize {
        let p = prepare(&parse(s).unwrap()).unwrap();
        p.mol.atoms().iter().filter(|a| a.aromatic).count()
    }

    #[test]
    fn kekule_benzene_becomes_aromatic() {
        assert_eq!(aromatic_atoms("C1=CC=CC=C1"), 6);
        assert_eq!(aromatic_atoms("N1=CC=CC=C1"), 6);
        assert_eq!(aromatic_atoms("C1=CC=C2C=CC=CC2=C1"), 10);
    }

    #[test]
    fn non_alternating_rings_untouched() {
        assert_eq!(aromatic_atoms("C1=CCC=CC1"), 0);
        assert_eq!(aromatic_atoms("O=C1C=CC(=O)C=C1"), 0);
        assert_eq!(aromatic_atoms("C1=CNC=C1"), 0);
    }

    #[test]
    fn hydrogens_frozen() {
        let p = prepare(&parse("C1=CC=CC=C1C").unwrap()).unwrap();
        assert_eq!(p.hydrogens, vec![1, 1, 1, 1, 1, 0, 3]);
    }
}
