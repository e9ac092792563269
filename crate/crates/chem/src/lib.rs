//! Molecule handling for SMILES-based generative modelling: parsing,
//! validation, canonical SMILES, circular fingerprints, fragments and
//! simple descriptors.

mod aromatic;
mod canon;
mod descriptors;
mod element;
mod error;
mod fingerprint;
mod fragment;
mod graph;
mod smiles;
mod valence;

pub use canon::{canonical_ranks, canonicalize, write_smiles};
pub use descriptors::{mol_weight, simple_descriptors, DescriptorVector};
pub use element::Element;
pub use error::{ChemError, InvalidReason, ParseError, ParseErrorKind};
pub use fingerprint::{fingerprint, fnv1a64, tanimoto, Fingerprint};
pub use fragment::fragment;
pub use graph::{Atom, Bond, BondDirection, BondOrder, Chirality, MolGraph};
pub use smiles::parse;
pub use valence::{hydrogen_counts, kekulize, validate, ValidityVerdict};

/// Parses, validates and canonicalizes in one step.
pub fn canonical_smiles(smiles: &str) -> Result<String, ChemError> {
    canonicalize(&parse(smiles)?)
}

/// True when the string parses and passes validation.
pub fn is_valid_smiles(smiles: &str) -> bool {
    parse(smiles).is_ok_and(|m| validate(&m).is_valid())
}
