//! Canonical atom ranking and SMILES emission.
//!
//! Ranks come from iterated neighbourhood refinement: atoms start from an
//! invariant tuple (degree, atomic number, isotope, charge, hydrogens,
//! aromatic, ring) and are re-ranked by their rank plus the sorted
//! (bond order, neighbour rank) pairs until the partition is stable. Ties
//! left after refinement are split by promoting the lowest-index atom of
//! the lowest tied class, then refining again. The SMILES is emitted by a
//! depth-first walk that always visits the lowest-ranked neighbour first.

use std::collections::HashMap;

use crate::aromatic::{prepare, Prepared};
use crate::error::ChemError;
use crate::graph::{BondOrder, MolGraph};
use crate::valence::{hydrogen_counts, organic_hydrogens};

/// Canonical SMILES of a valid molecule. Components are emitted
/// separately and joined with `.` in lexicographic order.
pub fn canonicalize(mol: &MolGraph) -> Result<String, ChemError> {
    let prepared = prepare(mol)?;
    Ok(canonical_from_prepared(&prepared))
}

pub(crate) fn canonical_from_prepared(p: &Prepared) -> String {
    let ranks = refine_ranks(p);
    let mut parts = emit_components(&p.mol, &p.hydrogens, &ranks);
    parts.sort();
    parts.join(".")
}

/// Canonical rank of every atom (0-based, all distinct) after aromaticity
/// normalization.
pub fn canonical_ranks(mol: &MolGraph) -> Result<Vec<usize>, ChemError> {
    Ok(refine_ranks(&prepare(mol)?))
}

/// Writes a SMILES string for a valid molecule, visiting atoms in the order
/// given by `priority` (lower first). Aromaticity is written as parsed.
/// Useful for producing alternative renderings of one molecule.
pub fn write_smiles(mol: &MolGraph, priority: &[usize]) -> Result<String, ChemError> {
    assert_eq!(priority.len(), mol.atom_count(), "one priority per atom");
    let hydrogens = hydrogen_counts(mol)?;
    Ok(emit_components(mol, &hydrogens, priority).join("."))
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    let ranks = keys
        .iter()
        .map(|k| sorted.binary_search(k).unwrap())
        .collect();
    (ranks, sorted.len())
}

type Invariant = (usize, u8, u16, i8, u32, bool, bool);

fn initial_invariants(p: &Prepared) -> Vec<Invariant> {
    let mol = &p.mol;
    (0..mol.atom_count())
        .map(|i| {
            let a = mol.atom(i);
            (
                mol.degree(i),
                a.element.atomic_number(),
                a.isotope.unwrap_or(0),
                a.formal_charge,
                p.hydrogens[i],
                a.aromatic,
                mol.is_ring_atom(i),
            )
        })
        .collect()
}

fn refine(mol: &MolGraph, mut ranks: Vec<usize>, mut classes: usize) -> (Vec<usize>, usize) {
    loop {
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..mol.atom_count())
            .map(|i| {
                let mut nb: Vec<(u8, usize)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(n, b)| (mol.bond(b).order.code(), ranks[n]))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let (next, count) = dense_ranks(&keys);
        if count == classes {
            return (next, count);
        }
        ranks = next;
        classes = count;
    }
}

fn refine_ranks(p: &Prepared) -> Vec<usize> {
    let n = p.mol.atom_count();
    let (ranks, classes) = dense_ranks(&initial_invariants(p));
    let (mut ranks, mut classes) = refine(&p.mol, ranks, classes);
    while classes < n {
        // lowest rank shared by more than one atom
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &r in &ranks {
            *counts.entry(r).or_default() += 1;
        }
        let tied = (0..n).filter(|&r| counts.get(&r).copied().unwrap_or(0) > 1).min().unwrap();
        let chosen = (0..n).find(|&i| ranks[i] == tied).unwrap();
        let keys: Vec<(usize, bool)> = (0..n).map(|i| (ranks[i], i != chosen)).collect();
        let (split, count) = dense_ranks(&keys);
        (ranks, classes) = refine(&p.mol, split, count);
    }
    ranks
}

/// One SMILES string per connected component, in order of each
/// component's lowest-priority atom.
fn emit_components(mol: &MolGraph, hydrogens: &[u32], priority: &[usize]) -> Vec<String> {
    let mut comps = mol.components();
    comps.sort_by_key(|c| c.iter().map(|&a| priority[a]).min());
    let mut w = Writer::new(mol, hydrogens, priority);
    comps
        .iter()
        .map(|comp| {
            let start = *comp.iter().min_by_key(|&&a| priority[a]).unwrap();
            w.dfs(start, usize::MAX);
            let mut out = String::new();
            w.emit(start, None, &mut out);
            out
        })
        .collect()
}

struct Writer<'a> {
    mol: &'a MolGraph,
    hydrogens: &'a [u32],
    priority: &'a [usize],
    visited: Vec<bool>,
    tree_bond: Vec<bool>,
    closure_bond: Vec<bool>,
    children: Vec<Vec<(usize, usize)>>,
    closures: Vec<Vec<usize>>,
    digit_of: Vec<Option<u32>>,
    digits_in_use: [bool; 100],
    emitted: Vec<bool>,
}

impl<'a> Writer<'a> {
    fn new(mol: &'a MolGraph, hydrogens: &'a [u32], priority: &'a [usize]) -> Self {
        let n = mol.atom_count();
        let m = mol.bonds().len();
        Writer {
            mol,
            hydrogens,
            priority,
            visited: vec![false; n],
            tree_bond: vec![false; m],
            closure_bond: vec![false; m],
            children: vec![Vec::new(); n],
            closures: vec![Vec::new(); n],
            digit_of: vec![None; m],
            digits_in_use: [false; 100],
            emitted: vec![false; n],
        }
    }

    fn sorted_neighbors(&self, u: usize) -> Vec<(usize, usize)> {
        let mut nb = self.mol.neighbors(u).to_vec();
        nb.sort_by_key(|&(n, _)| self.priority[n]);
        nb
    }

    fn dfs(&mut self, u: usize, parent_bond: usize) {
        self.visited[u] = true;
        for (v, b) in self.sorted_neighbors(u) {
            if b == parent_bond || self.tree_bond[b] || self.closure_bond[b] {
                continue;
            }
            if self.visited[v] {
                self.closure_bond[b] = true;
                self.closures[u].push(b);
                self.closures[v].push(b);
            } else {
                self.tree_bond[b] = true;
                self.children[u].push((v, b));
                self.dfs(v, b);
            }
        }
    }

    fn bond_symbol(&self, b: usize) -> &'static str {
        let bond = self.mol.bond(b);
        let (x, y) = bond.atoms;
        match bond.order {
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic => "",
            BondOrder::Single => {
                if self.mol.atom(x).aromatic && self.mol.atom(y).aromatic {
                    "-"
                } else {
                    ""
                }
            }
        }
    }

    fn atom_text(&self, i: usize, out: &mut String) {
        let atom = self.mol.atom(i);
        let h = self.hydrogens[i];
        let organic = atom.element.is_organic_subset()
            && atom.formal_charge == 0
            && atom.isotope.is_none()
            && organic_hydrogens(self.mol, i) == h;
        let symbol = atom.element.symbol();
        let symbol = if atom.aromatic {
            symbol.to_ascii_lowercase()
        } else {
            symbol.to_string()
        };
        if organic {
            out.push_str(&symbol);
            return;
        }
        out.push('[');
        if let Some(iso) = atom.isotope {
            out.push_str(&iso.to_string());
        }
        out.push_str(&symbol);
        match h {
            0 => {}
            1 => out.push('H'),
            k => {
                out.push('H');
                out.push_str(&k.to_string());
            }
        }
        match atom.formal_charge {
            0 => {}
            1 => out.push('+'),
            -1 => out.push('-'),
            c if c > 0 => out.push_str(&format!("+{c}")),
            c => out.push_str(&format!("-{}", -c)),
        }
        out.push(']');
    }

    fn emit(&mut self, u: usize, in_bond: Option<usize>, out: &mut String) {
        if let Some(b) = in_bond {
            out.push_str(self.bond_symbol(b));
        }
        self.atom_text(u, out);
        self.emitted[u] = true;

        let mut ring = self.closures[u].clone();
        ring.sort_by_key(|&b| {
            let partner = self.mol.bond(b).other(u);
            (!self.emitted[partner], self.priority[partner])
        });
        let mut released = Vec::new();
        for b in ring {
            match self.digit_of[b] {
                Some(d) => {
                    push_ring_digit(out, d);
                    released.push(d);
                }
                None => {
                    let d = (1..100u32).find(|&d| !self.digits_in_use[d as usize]).expect("fewer than 100 open rings");
                    self.digits_in_use[d as usize] = true;
                    self.digit_of[b] = Some(d);
                    out.push_str(self.bond_symbol(b));
                    push_ring_digit(out, d);
                }
            }
        }
        for d in released {
            self.digits_in_use[d as usize] = false;
        }

        let children = self.children[u].clone();
        let last = children.len().saturating_sub(1);
        for (k, (v, b)) in children.into_iter().enumerate() {
            if k < last {
                out.push('(');
                self.emit(v, Some(b), out);
                out.push(')');
            } else {
                self.emit(v, Some(b), out);
            }
        }
    }
}

fn push_ring_digit(out: &mut String, d: u32) {
    if d < 10 {
        out.push(char::from_digit(d, 10).unwrap());
    } else {
        out.push('%');
        out.push_str(&format!("{d:02}"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse;

    fn canon(s: &str) -> String {
        canonicalize(&parse(s).unwrap()).unwrap()
    }

    #[test]
    fn reversed_traversal() {
        assert_eq!(canon("CCO"), canon("OCC"));
        assert_eq!(canon("CCO"), "CCO");
    }

    #[test]
    fn ring_rotation_and_kekule_forms() {
        let benzene = canon("c1ccccc1");
        assert_eq!(benzene, "c1ccccc1");
        assert_eq!(canon("C1=CC=CC=C1"), benzene);
        assert_eq!(canon("c1ccc(C)cc1"), canon("Cc1ccccc1"));
        assert_eq!(canon("C1=CC=CC=C1C"), canon("Cc1ccccc1"));
    }

    #[test]
    fn charged_and_bracket_atoms() {
        assert_eq!(canon("[CH4]"), "C");
        assert_eq!(canon("C[N+](=O)[O-]"), canon("[O-][N+](C)=O"));
        assert_eq!(canon("[NH4+]"), "[NH4+]");
        assert_eq!(canon("c1cc[nH]c1"), canon("[nH]1cccc1"));
        assert_eq!(canon("[13CH4]"), "[13CH4]");
    }

    #[test]
    fn biphenyl_link_is_explicit() {
        let c = canon("c1ccccc1c1ccccc1");
        assert!(c.contains('-'), "{c}");
        assert_eq!(canon(&c), c);
    }

    #[test]
    fn components_sorted() {
        assert_eq!(canon("O.CC"), canon("CC.O"));
    }

    #[test]
    fn ranks_are_a_permutation() {
        let m = parse("CC(C)(C)c1ccc(O)cc1").unwrap();
        let mut r = canonical_ranks(&m).unwrap();
        r.sort_unstable();
        assert_eq!(r, (0..m.atom_count()).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_input_rejected() {
        assert!(matches!(
            canonicalize(&parse("C(C)(C)(C)(C)C").unwrap()),
            Err(ChemError::InvalidInput { .. })
        ));
    }
}
