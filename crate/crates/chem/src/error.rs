use std::fmt;

use thiserror::Error;

/// What went wrong while reading a SMILES string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    EmptyInput,
    /// A ring-closure number was opened and never closed.
    UnclosedRing,
    /// `)` without a matching `(`, or `(` never closed.
    UnbalancedParen,
    /// A character or bracket atom that is not part of the supported grammar.
    UnknownToken,
    /// Bond symbol with no atom to attach to.
    DanglingBond,
    /// Ring closure whose two ends disagree on bond order, or that would
    /// duplicate an existing bond or close onto the same atom.
    RingBondConflict,
    /// Branch `()` containing no atoms.
    EmptyBranch,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::EmptyInput => "empty input",
            ParseErrorKind::UnclosedRing => "unclosed ring",
            ParseErrorKind::UnbalancedParen => "unbalanced parenthesis",
            ParseErrorKind::UnknownToken => "unknown token",
            ParseErrorKind::DanglingBond => "dangling bond",
            ParseErrorKind::RingBondConflict => "conflicting ring closure",
            ParseErrorKind::EmptyBranch => "empty branch",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl ParseError {
    pub(crate) fn new(kind: ParseErrorKind, offset: usize) -> ParseError {
        ParseError { kind, offset }
    }
}

/// Why a molecule failed validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvalidReason {
    /// Bond orders (plus hydrogens) exceed every allowed valence.
    Valence { used: u32, max: u32 },
    /// Aromatic atom or bond outside any ring.
    AromaticOutsideRing,
    /// Aromatic bond between atoms that are not both aromatic.
    AromaticBondMismatch,
    /// No alternating single/double assignment covers the aromatic atoms.
    NoKekuleAssignment,
    /// Fully conjugated aromatic ring with a multiple of four atoms.
    AntiAromaticRing,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::Valence { used, max } => {
                write!(f, "valence {used} exceeds maximum {max}")
            }
            InvalidReason::AromaticOutsideRing => f.write_str("aromatic atom or bond outside a ring"),
            InvalidReason::AromaticBondMismatch => {
                f.write_str("aromatic bond between non-aromatic atoms")
            }
            InvalidReason::NoKekuleAssignment => f.write_str("no Kekulé assignment"),
            InvalidReason::AntiAromaticRing => f.write_str("anti-aromatic ring"),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ChemError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid molecule: atom {atom}: {reason}")]
    InvalidInput { atom: usize, reason: InvalidReason },
    #[error("no Kekulé assignment: atom {atom}: {reason}")]
    NoKekuleAssignment { atom: usize, reason: InvalidReason },
    #[error("fingerprint width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("invalid fingerprint configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}
