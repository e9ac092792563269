//! Circular (ECFP-style) fingerprints and Tanimoto similarity.
//!
//! Atom identifiers start as the FNV-1a 64-bit hash of the invariant tuple
//! `(atomic number, degree, formal charge, total H, in ring, aromatic)`.
//! Each round replaces an identifier with the hash of
//! `(round, previous identifier, sorted (bond code, neighbour identifier)...)`.
//! Every identifier from rounds `0..=radius` sets bit `id % width`. Each
//! tuple field is serialized as a little-endian `i64` before hashing.

use std::fmt;

use crate::aromatic::{prepare, Prepared};
use crate::error::ChemError;
use crate::graph::MolGraph;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn hash_fields(fields: &[i64]) -> u64 {
    let bytes: Vec<u8> = fields.iter().flat_map(|f| f.to_le_bytes()).collect();
    fnv1a64(&bytes)
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
    radius: u32,
}

impl Fingerprint {
    pub fn new(width: usize, radius: u32) -> Fingerprint {
        Fingerprint {
            words: vec![0; width.div_ceil(64)],
            width,
            radius,
        }
    }

    /// Fingerprint with the given bit positions set.
    pub fn from_bits(width: usize, bits: impl IntoIterator<Item = usize>) -> Fingerprint {
        let mut fp = Fingerprint::new(width, 0);
        for b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.width, "bit {bit} outside width {}", self.width);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.width && (self.words[bit / 64] >> (bit % 64)) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&b| self.get(b))
    }

    /// Lowercase hex, most significant byte first. Bit `i` lives in byte
    /// `i / 8` counting from the least significant end.
    pub fn to_hex(&self) -> String {
        let n_bytes = self.width.div_ceil(8);
        let mut out = String::with_capacity(n_bytes * 2);
        for byte in (0..n_bytes).rev() {
            let word = self.words[byte / 8];
            let v = (word >> ((byte % 8) * 8)) as u8;
            out.push_str(&format!("{v:02x}"));
        }
        out
    }

    pub fn from_hex(hex: &str, radius: u32) -> Option<Fingerprint> {
        if hex.len() % 2 != 0 || !hex.is_ascii() {
            return None;
        }
        let n_bytes = hex.len() / 2;
        let mut fp = Fingerprint::new(n_bytes * 8, radius);
        for (k, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let v = u8::from_str_radix(std::str::from_utf8(chunk).ok()?, 16).ok()?;
            let byte = n_bytes - 1 - k;
            fp.words[byte / 8] |= (v as u64) << ((byte % 8) * 8);
        }
        Some(fp)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint(width={}, radius={}, {})", self.width, self.radius, self.to_hex())
    }
}

/// Circular fingerprint of a valid molecule. `width` must be a power of two.
pub fn fingerprint(mol: &MolGraph, radius: u32, width: usize) -> Result<Fingerprint, ChemError> {
    if !width.is_power_of_two() {
        return Err(ChemError::InvalidConfig(format!(
            "width {width} is not a power of two"
        )));
    }
    Ok(fingerprint_prepared(&prepare(mol)?, radius, width))
}

pub(crate) fn initial_identifiers(p: &Prepared) -> Vec<u64> {
    let mol = &p.mol;
    (0..mol.atom_count())
        .map(|i| {
            let a = mol.atom(i);
            hash_fields(&[
                a.element.atomic_number() as i64,
                mol.degree(i) as i64,
                a.formal_charge as i64,
                p.hydrogens[i] as i64,
                mol.is_ring_atom(i) as i64,
                a.aromatic as i64,
            ])
        })
        .collect()
}

pub(crate) fn fingerprint_prepared(p: &Prepared, radius: u32, width: usize) -> Fingerprint {
    let mol = &p.mol;
    let mut fp = Fingerprint::new(width, radius);
    let mut ids = initial_identifiers(p);
    for &id in &ids {
        fp.set((id % width as u64) as usize);
    }
    for round in 1..=radius {
        let next: Vec<u64> = (0..mol.atom_count())
            .map(|i| {
                let mut pairs: Vec<(i64, i64)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(n, b)| (mol.bond(b).order.code() as i64, ids[n] as i64))
                    .collect();
                pairs.sort_unstable();
                let mut fields = vec![round as i64, ids[i] as i64];
                for (b, n) in pairs {
                    fields.push(b);
                    fields.push(n);
                }
                hash_fields(&fields)
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % width as u64) as usize);
        }
    }
    fp
}

/// |a ∧ b| / |a ∨ b|; 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    if a.width != b.width {
        return Err(ChemError::WidthMismatch(a.width, b.width));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    Ok(if either == 0 {
        1.0
    } else {
        both as f64 / either as f64
    })
}
