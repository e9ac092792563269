//! SMILES reader.
//!
//! Supported: organic-subset atoms (upper and lower case), bracket atoms
//! with isotope, chirality, hydrogen count, charge and atom class, bonds
//! `- = # : / \`, branches, ring closures `0-9` and `%NN`, `.` and the
//! wildcard `*`. Stereo markers are kept as annotations.

use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{ParseError, ParseErrorKind};
use crate::graph::{Atom, Bond, BondDirection, BondOrder, Chirality, MolGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BondSym {
    order: BondOrder,
    direction: Option<BondDirection>,
}

fn bond_symbol(b: u8) -> Option<BondSym> {
    let (order, direction) = match b {
        b'-' => (BondOrder::Single, None),
        b'=' => (BondOrder::Double, None),
        b'#' => (BondOrder::Triple, None),
        b':' => (BondOrder::Aromatic, None),
        b'/' => (BondOrder::Single, Some(BondDirection::Up)),
        b'\\' => (BondOrder::Single, Some(BondDirection::Down)),
        _ => return None,
    };
    Some(BondSym { order, direction })
}

struct OpenRing {
    atom: usize,
    bond: Option<BondSym>,
    offset: usize,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    pending: Option<(BondSym, usize)>,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u32, OpenRing>,
    // true right after '(' until an atom is read
    branch_empty: bool,
    // true right after '.'
    after_dot: Option<usize>,
    // per bond: written as ':'
    explicit_aromatic: Vec<bool>,
}

/// Parse a SMILES string into a molecular graph. Hydrogens are not
/// resolved here; see [`crate::validate`].
pub fn parse(smiles: &str) -> Result<MolGraph, ParseError> {
    if smiles.is_empty() {
        return Err(ParseError::new(ParseErrorKind::EmptyInput, 0));
    }
    let mut p = Parser {
        src: smiles.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
        branch_empty: false,
        after_dot: None,
        explicit_aromatic: Vec::new(),
    };
    p.run()?;
    let explicit = std::mem::take(&mut p.explicit_aromatic);
    let graph = MolGraph::new(p.atoms, p.bonds)
        .map_err(|_| ParseError::new(ParseErrorKind::RingBondConflict, smiles.len()))?;
    // An unmarked bond between aromatic atoms outside any ring (biphenyl
    // written without '-') is single.
    let chain_links: Vec<usize> = (0..graph.bonds().len())
        .filter(|&b| {
            graph.bond(b).order == BondOrder::Aromatic && !explicit[b] && !graph.is_ring_bond(b)
        })
        .collect();
    if chain_links.is_empty() {
        return Ok(graph);
    }
    let (atoms, mut bonds) = graph.into_parts();
    for b in chain_links {
        bonds[b].order = BondOrder::Single;
    }
    Ok(MolGraph::with_parts(atoms, bonds))
}

impl Parser<'_> {
    fn err<T>(&self, kind: ParseErrorKind, offset: usize) -> Result<T, ParseError> {
        Err(ParseError::new(kind, offset))
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), ParseError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom)?;
                }
                b'(' => {
                    let Some(prev) = self.prev else {
                        return self.err(ParseErrorKind::UnbalancedParen, start);
                    };
                    if let Some((_, off)) = self.pending {
                        return self.err(ParseErrorKind::DanglingBond, off);
                    }
                    self.branches.push((prev, start));
                    self.branch_empty = true;
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _)) = self.branches.pop() else {
                        return self.err(ParseErrorKind::UnbalancedParen, start);
                    };
                    if let Some((_, off)) = self.pending {
                        return self.err(ParseErrorKind::DanglingBond, off);
                    }
                    if self.branch_empty {
                        return self.err(ParseErrorKind::EmptyBranch, start);
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'.' => {
                    if self.prev.is_none() || self.after_dot.is_some() {
                        return self.err(ParseErrorKind::UnknownToken, start);
                    }
                    if let Some((_, off)) = self.pending {
                        return self.err(ParseErrorKind::DanglingBond, off);
                    }
                    if !self.branches.is_empty() {
                        // dot inside a branch is legal but rare; keep it simple
                        return self.err(ParseErrorKind::UnknownToken, start);
                    }
                    self.prev = None;
                    self.after_dot = Some(start);
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let number = self.ring_number()?;
                    self.ring_closure(number, start)?;
                }
                _ => {
                    if let Some(sym) = bond_symbol(c) {
                        if self.pending.is_some() || self.prev.is_none() {
                            return self.err(ParseErrorKind::DanglingBond, start);
                        }
                        self.pending = Some((sym, start));
                        self.pos += 1;
                    } else {
                        let atom = self.organic_atom()?;
                        self.add_atom(atom)?;
                    }
                }
            }
        }
        if let Some((_, off)) = self.pending {
            return self.err(ParseErrorKind::DanglingBond, off);
        }
        if let Some(&(_, off)) = self.branches.last() {
            return self.err(ParseErrorKind::UnbalancedParen, off);
        }
        if let Some(off) = self.after_dot {
            return self.err(ParseErrorKind::UnknownToken, off);
        }
        if let Some(open) = self.rings.values().min_by_key(|r| r.offset) {
            return self.err(ParseErrorKind::UnclosedRing, open.offset);
        }
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom) -> Result<(), ParseError> {
        let idx = self.atoms.len();
        let aromatic = atom.aromatic;
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let sym = self.pending.take().map(|(s, _)| s);
            let order = resolve_order(sym, self.atoms[prev].aromatic && aromatic);
            self.bonds.push(Bond {
                atoms: (prev, idx),
                order,
                direction: sym.and_then(|s| s.direction),
            });
            self.explicit_aromatic.push(sym.is_some_and(|s| s.order == BondOrder::Aromatic));
        } else if let Some((_, off)) = self.pending {
            return self.err(ParseErrorKind::DanglingBond, off);
        }
        self.prev = Some(idx);
        self.branch_empty = false;
        self.after_dot = None;
        Ok(())
    }

    fn ring_number(&mut self) -> Result<u32, ParseError> {
        let start = self.pos;
        let c = self.src[self.pos];
        if c == b'%' {
            let digits = self.src.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => self.err(ParseErrorKind::UnknownToken, start),
            }
        } else {
            self.pos += 1;
            Ok((c - b'0') as u32)
        }
    }

    fn ring_closure(&mut self, number: u32, offset: usize) -> Result<(), ParseError> {
        let Some(atom) = self.prev else {
            return self.err(ParseErrorKind::UnknownToken, offset);
        };
        let here = self.pending.take().map(|(s, _)| s);
        match self.rings.remove(&number) {
            None => {
                self.rings.insert(
                    number,
                    OpenRing {
                        atom,
                        bond: here,
                        offset,
                    },
                );
            }
            Some(open) => {
                let sym = match (open.bond, here) {
                    (Some(a), Some(b)) if a.order != b.order => {
                        return self.err(ParseErrorKind::RingBondConflict, offset);
                    }
                    (Some(a), _) => Some(a),
                    (None, b) => b,
                };
                if open.atom == atom
                    || self
                        .bonds
                        .iter()
                        .any(|b| b.atoms == (open.atom, atom) || b.atoms == (atom, open.atom))
                {
                    return self.err(ParseErrorKind::RingBondConflict, offset);
                }
                let both_aromatic = self.atoms[open.atom].aromatic && self.atoms[atom].aromatic;
                self.bonds.push(Bond {
                    atoms: (open.atom, atom),
                    order: resolve_order(sym, both_aromatic),
                    direction: sym.and_then(|s| s.direction),
                });
                self.explicit_aromatic
                    .push(sym.is_some_and(|s| s.order == BondOrder::Aromatic));
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, ParseError> {
        let start = self.pos;
        let c = self.src[self.pos];
        let next = self.src.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::CL, false, 2),
            (b'B', Some(b'r')) => (Element::BR, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            (b'*', _) => (Element::WILDCARD, false, 1),
            _ => return self.err(ParseErrorKind::UnknownToken, start),
        };
        self.pos += len;
        Ok(Atom::organic(element, aromatic))
    }

    fn bracket_atom(&mut self) -> Result<Atom, ParseError> {
        let start = self.pos;
        let Some(len) = self.src[start..].iter().position(|&b| b == b']') else {
            return self.err(ParseErrorKind::UnknownToken, start);
        };
        let body = &self.src[start + 1..start + len];
        let atom = parse_bracket_body(body).ok_or(ParseError::new(ParseErrorKind::UnknownToken, start))?;
        self.pos = start + len + 1;
        Ok(atom)
    }
}

// An unmarked bond between two aromatic atoms is aromatic; an explicit
// '-' between them is single.
fn resolve_order(sym: Option<BondSym>, both_aromatic: bool) -> BondOrder {
    match sym {
        Some(s) => s.order,
        None if both_aromatic => BondOrder::Aromatic,
        None => BondOrder::Single,
    }
}

/// Parses the inside of `[...]`.
fn parse_bracket_body(body: &[u8]) -> Option<Atom> {
    let mut i = 0;
    let digits = |i: &mut usize| -> Option<u32> {
        let s = *i;
        while *i < body.len() && body[*i].is_ascii_digit() {
            *i += 1;
        }
        (*i > s).then(|| std::str::from_utf8(&body[s..*i]).ok()?.parse().ok())?
    };

    let isotope = match digits(&mut i) {
        Some(v) => Some(u16::try_from(v).ok()?),
        None => None,
    };

    let c = *body.get(i)?;
    let (element, aromatic) = if c == b'*' {
        i += 1;
        (Element::WILDCARD, false)
    } else if c.is_ascii_uppercase() {
        let two = body
            .get(i + 1)
            .filter(|b| b.is_ascii_lowercase())
            .and_then(|&l| Element::from_symbol(std::str::from_utf8(&[c, l]).ok()?));
        match two {
            Some(e) => {
                i += 2;
                (e, false)
            }
            None => {
                i += 1;
                (Element::from_symbol(std::str::from_utf8(&[c]).ok()?)?, false)
            }
        }
    } else if c.is_ascii_lowercase() {
        let upper = c.to_ascii_uppercase();
        let e = Element::from_symbol(std::str::from_utf8(&[upper]).ok()?)?;
        if !e.may_be_aromatic() {
            return None;
        }
        i += 1;
        (e, true)
    } else {
        return None;
    };

    let mut chirality = None;
    if body.get(i) == Some(&b'@') {
        let s = i;
        i += 1;
        if body.get(i) == Some(&b'@') {
            i += 1;
        } else if body.get(i).is_some_and(|b| b.is_ascii_uppercase())
            && body.get(i + 1).is_some_and(|b| b.is_ascii_uppercase())
        {
            i += 2;
            digits(&mut i)?;
        }
        chirality = Some(Chirality(String::from_utf8_lossy(&body[s..i]).into_owned()));
    }

    let mut explicit_h = 0u8;
    if body.get(i) == Some(&b'H') {
        i += 1;
        explicit_h = match digits(&mut i) {
            Some(v) => u8::try_from(v).ok()?,
            None => 1,
        };
    }

    let mut charge: i32 = 0;
    if let Some(&sign) = body.get(i).filter(|&&b| b == b'+' || b == b'-') {
        let unit = if sign == b'+' { 1 } else { -1 };
        i += 1;
        match digits(&mut i) {
            Some(v) => charge = unit * v as i32,
            None => {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }
    }
    let formal_charge = i8::try_from(charge).ok().filter(|c| c.abs() <= 15)?;

    let mut atom_class = None;
    if body.get(i) == Some(&b':') {
        i += 1;
        atom_class = Some(digits(&mut i)?);
    }
    if i != body.len() {
        return None;
    }
    Some(Atom {
        element,
        aromatic,
        formal_charge,
        explicit_h: Some(explicit_h),
        isotope,
        in_bracket: true,
        chirality,
        atom_class,
    })
}
