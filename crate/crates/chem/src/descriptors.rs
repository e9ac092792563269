//! Molecular weight and simple graph descriptors.

use crate::aromatic::prepare;
use crate::element::Element;
use crate::error::ChemError;
use crate::graph::MolGraph;

/// Average molecular weight in g/mol, including implicit and bracket
/// hydrogens. Isotope-labelled atoms use their mass number.
pub fn mol_weight(mol: &MolGraph) -> Result<f64, ChemError> {
    let p = prepare(mol)?;
    Ok(weight_of(&p.mol, &p.hydrogens))
}

fn weight_of(mol: &MolGraph, hydrogens: &[u32]) -> f64 {
    mol.atoms()
        .iter()
        .zip(hydrogens)
        .map(|(a, &h)| {
            let heavy = match a.isotope {
                Some(mass) => mass as f64,
                None => a.element.weight(),
            };
            heavy + h as f64 * Element::H.weight()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorVector {
    pub mol_weight: f64,
    pub heavy_atoms: usize,
    pub rings: usize,
    pub aromatic_fraction: f64,
    pub hetero_fraction: f64,
}

impl DescriptorVector {
    pub const NAMES: [&'static str; 5] = [
        "mol_weight",
        "heavy_atoms",
        "rings",
        "aromatic_fraction",
        "hetero_fraction",
    ];

    pub fn values(&self) -> [f64; 5] {
        [
            self.mol_weight,
            self.heavy_atoms as f64,
            self.rings as f64,
            self.aromatic_fraction,
            self.hetero_fraction,
        ]
    }
}

pub fn simple_descriptors(mol: &MolGraph) -> Result<DescriptorVector, ChemError> {
    let p = prepare(mol)?;
    let heavy: Vec<usize> = (0..p.mol.atom_count())
        .filter(|&i| !matches!(p.mol.atom(i).element, Element::H | Element::WILDCARD))
        .collect();
    let n = heavy.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let aromatic = heavy.iter().filter(|&&i| p.mol.atom(i).aromatic).count();
    let hetero = heavy.iter().filter(|&&i| p.mol.atom(i).element.is_hetero()).count();
    Ok(DescriptorVector {
        mol_weight: weight_of(&p.mol, &p.hydrogens),
        heavy_atoms: n,
        rings: p.mol.ring_count(),
        aromatic_fraction: frac(aromatic),
        hetero_fraction: frac(hetero),
    })
}
