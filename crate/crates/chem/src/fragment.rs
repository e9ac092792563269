//! Fragment decomposition used by the fragment-similarity metric.
//!
//! Simplified cut rule: break every acyclic single bond between two
//! non-hydrogen atoms where at least one end is a ring atom or a
//! heteroatom. Each cut end receives a `*` attachment atom and every
//! resulting piece is canonicalized.

use crate::aromatic::{prepare, Prepared};
use crate::canon::canonical_from_prepared;
use crate::element::Element;
use crate::error::ChemError;
use crate::graph::{Atom, Bond, BondOrder, MolGraph};

/// Canonical fragment strings, sorted (a multiset).
pub fn fragment(mol: &MolGraph) -> Result<Vec<String>, ChemError> {
    let p = prepare(mol)?;
    Ok(fragment_prepared(&p))
}

fn cuttable(mol: &MolGraph, b: usize) -> bool {
    let bond = mol.bond(b);
    if bond.order != BondOrder::Single || mol.is_ring_bond(b) {
        return false;
    }
    let (x, y) = bond.atoms;
    let heavy = |i: usize| !matches!(mol.atom(i).element, Element::H | Element::WILDCARD);
    let anchor = |i: usize| mol.is_ring_atom(i) || mol.atom(i).element.is_hetero();
    heavy(x) && heavy(y) && (anchor(x) || anchor(y))
}

pub(crate) fn fragment_prepared(p: &Prepared) -> Vec<String> {
    let mol = &p.mol;
    let cuts: Vec<usize> = (0..mol.bonds().len()).filter(|&b| cuttable(mol, b)).collect();
    if cuts.is_empty() {
        let mut out: Vec<String> = canonical_from_prepared(p).split('.').map(str::to_string).collect();
        out.sort();
        return out;
    }
    let (mut atoms, bonds) = mol.clone().into_parts();
    let mut hydrogens = p.hydrogens.clone();
    let mut kept: Vec<Bond> = Vec::with_capacity(bonds.len() + cuts.len());
    for (bi, bond) in bonds.into_iter().enumerate() {
        if cuts.binary_search(&bi).is_err() {
            kept.push(bond);
            continue;
        }
        let (x, y) = bond.atoms;
        for end in [x, y] {
            let star = atoms.len();
            atoms.push(Atom::wildcard());
            hydrogens.push(0);
            kept.push(Bond::new(end, star, BondOrder::Single));
        }
    }
    let cut = Prepared {
        mol: MolGraph::with_parts(atoms, kept),
        hydrogens,
    };
    let mut out: Vec<String> = canonical_from_prepared(&cut)
        .split('.')
        .map(str::to_string)
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{canonical_smiles, parse};

    fn frags(s: &str) -> Vec<String> {
        fragment(&parse(s).unwrap()).unwrap()
    }

    #[test]
    fn ethylbenzene_splits_once() {
        let f = frags("CCc1ccccc1");
        let mut expected = vec![
            canonical_smiles("*CC").unwrap(),
            canonical_smiles("*c1ccccc1").unwrap(),
        ];
        expected.sort();
        assert_eq!(f, expected);
    }

    #[test]
    fn rule_does_not_fire() {
        assert_eq!(frags("CC"), vec!["CC".to_string()]);
        assert_eq!(frags("c1ccccc1"), vec!["c1ccccc1".to_string()]);
    }

    #[test]
    fn heteroatom_anchor() {
        // C-O and O-C both qualify
        let f = frags("CCOCC");
        assert_eq!(f.len(), 3);
        assert!(f.contains(&canonical_smiles("*O*").unwrap()));
    }

    #[test]
    fn double_bonds_are_not_cut() {
        assert_eq!(frags("C=O").len(), 1);
    }
}
