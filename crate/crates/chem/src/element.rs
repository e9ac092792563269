//! Periodic table lookups: symbols, standard atomic weights and the valence
//! rules used by validation and kekulization.

use std::fmt;

/// A chemical element identified by atomic number. Atomic number 0 is the
/// SMILES wildcard `*`, used for attachment points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

// (symbol, standard atomic weight); index == atomic number.
// Weights are IUPAC conventional values; for elements without a stable
// isotope the mass number of the longest-lived isotope is used.
const TABLE: [(&str, f64); 119] = [
    ("*", 0.0),
    ("H", 1.008),
    ("He", 4.0026),
    ("Li", 6.94),
    ("Be", 9.0122),
    ("B", 10.81),
    ("C", 12.011),
    ("N", 14.007),
    ("O", 15.999),
    ("F", 18.998),
    ("Ne", 20.180),
    ("Na", 22.990),
    ("Mg", 24.305),
    ("Al", 26.982),
    ("Si", 28.085),
    ("P", 30.974),
    ("S", 32.06),
    ("Cl", 35.45),
    ("Ar", 39.95),
    ("K", 39.098),
    ("Ca", 40.078),
    ("Sc", 44.956),
    ("Ti", 47.867),
    ("V", 50.942),
    ("Cr", 51.996),
    ("Mn", 54.938),
    ("Fe", 55.845),
    ("Co", 58.933),
    ("Ni", 58.693),
    ("Cu", 63.546),
    ("Zn", 65.38),
    ("Ga", 69.723),
    ("Ge", 72.630),
    ("As", 74.922),
    ("Se", 78.971),
    ("Br", 79.904),
    ("Kr", 83.798),
    ("Rb", 85.468),
    ("Sr", 87.62),
    ("Y", 88.906),
    ("Zr", 91.224),
    ("Nb", 92.906),
    ("Mo", 95.95),
    ("Tc", 98.0),
    ("Ru", 101.07),
    ("Rh", 102.91),
    ("Pd", 106.42),
    ("Ag", 107.87),
    ("Cd", 112.41),
    ("In", 114.82),
    ("Sn", 118.71),
    ("Sb", 121.76),
    ("Te", 127.60),
    ("I", 126.904),
    ("Xe", 131.29),
    ("Cs", 132.91),
    ("Ba", 137.33),
    ("La", 138.91),
    ("Ce", 140.12),
    ("Pr", 140.91),
    ("Nd", 144.24),
    ("Pm", 145.0),
    ("Sm", 150.36),
    ("Eu", 151.96),
    ("Gd", 157.25),
    ("Tb", 158.93),
    ("Dy", 162.50),
    ("Ho", 164.93),
    ("Er", 167.26),
    ("Tm", 168.93),
    ("Yb", 173.05),
    ("Lu", 174.97),
    ("Hf", 178.49),
    ("Ta", 180.95),
    ("W", 183.84),
    ("Re", 186.21),
    ("Os", 190.23),
    ("Ir", 192.22),
    ("Pt", 195.08),
    ("Au", 196.97),
    ("Hg", 200.59),
    ("Tl", 204.38),
    ("Pb", 207.2),
    ("Bi", 208.98),
    ("Po", 209.0),
    ("At", 210.0),
    ("Rn", 222.0),
    ("Fr", 223.0),
    ("Ra", 226.0),
    ("Ac", 227.0),
    ("Th", 232.04),
    ("Pa", 231.04),
    ("U", 238.03),
    ("Np", 237.0),
    ("Pu", 244.0),
    ("Am", 243.0),
    ("Cm", 247.0),
    ("Bk", 247.0),
    ("Cf", 251.0),
    ("Es", 252.0),
    ("Fm", 257.0),
    ("Md", 258.0),
    ("No", 259.0),
    ("Lr", 262.0),
    ("Rf", 267.0),
    ("Db", 270.0),
    ("Sg", 269.0),
    ("Bh", 270.0),
    ("Hs", 270.0),
    ("Mt", 278.0),
    ("Ds", 281.0),
    ("Rg", 281.0),
    ("Cn", 285.0),
    ("Nh", 286.0),
    ("Fl", 289.0),
    ("Mc", 289.0),
    ("Lv", 293.0),
    ("Ts", 293.0),
    ("Og", 294.0),
];

/// Upper bound on total valence for atoms without a specific rule.
pub(crate) const LENIENT_MAX_VALENCE: u32 = 6;

/// Allowed total valences for an atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Valences {
    /// Discrete allowed values in ascending order.
    Set(&'static [u32]),
    /// Anything up to and including the bound.
    AtMost(u32),
    /// Wildcard atoms.
    Any,
}

impl Valences {
    pub(crate) fn max(self) -> u32 {
        match self {
            Valences::Set(s) => *s.last().unwrap(),
            Valences::AtMost(m) => m,
            Valences::Any => u32::MAX,
        }
    }

    /// Smallest allowed valence that is at least `used`, if any.
    pub(crate) fn target(self, used: u32) -> Option<u32> {
        match self {
            Valences::Set(s) => s.iter().copied().find(|&v| v >= used),
            Valences::AtMost(m) => (used <= m).then_some(used),
            Valences::Any => Some(used),
        }
    }
}

impl Element {
    pub const WILDCARD: Element = Element(0);
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_atomic_number(z: u8) -> Option<Element> {
        ((z as usize) < TABLE.len()).then_some(Element(z))
    }

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        TABLE
            .iter()
            .position(|(s, _)| *s == symbol)
            .map(|z| Element(z as u8))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        TABLE[self.0 as usize].0
    }

    /// Standard atomic weight in g/mol.
    pub fn weight(self) -> f64 {
        TABLE[self.0 as usize].1
    }

    /// Members of the SMILES organic subset, writable without brackets.
    pub fn is_organic_subset(self) -> bool {
        matches!(self.0, 0 | 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
    }

    /// Elements that may carry the aromatic (lowercase) flag.
    pub fn may_be_aromatic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16)
    }

    /// Anything other than carbon, hydrogen and the wildcard.
    pub fn is_hetero(self) -> bool {
        !matches!(self.0, 0 | 1 | 6)
    }

    fn neutral_valences(self) -> Option<Valences> {
        Some(match self.0 {
            0 => Valences::Any,
            1 => Valences::Set(&[1]),
            5 => Valences::Set(&[3]),
            6 | 14 | 32 => Valences::Set(&[4]),
            7 => Valences::Set(&[3]),
            8 => Valences::Set(&[2]),
            15 | 33 => Valences::Set(&[3, 5]),
            16 | 34 | 52 => Valences::Set(&[2, 4, 6]),
            9 | 17 | 35 | 53 => Valences::Set(&[1]),
            _ => return None,
        })
    }

    /// Valences accepted by validation. Positive charge on N/P raises the
    /// allowed valence by one per unit, negative charge on O/S lowers it by
    /// one per unit; every other charged atom accepts up to six bonds.
    pub(crate) fn allowed_valences(self, charge: i8) -> Valences {
        let Some(neutral) = self.neutral_valences() else {
            return Valences::AtMost(LENIENT_MAX_VALENCE);
        };
        if charge == 0 || neutral == Valences::Any {
            return neutral;
        }
        match (self.0, charge > 0) {
            (7, true) => Valences::Set(shifted(&[3], charge as i32)),
            (15, true) => Valences::Set(shifted(&[3, 5], charge as i32)),
            (8, false) => Valences::Set(shifted(&[2], charge as i32)),
            (16, false) => Valences::Set(shifted(&[2, 4, 6], charge as i32)),
            _ => Valences::AtMost(LENIENT_MAX_VALENCE),
        }
    }

    /// Valences used to decide whether an aromatic atom takes part in a
    /// Kekulé double bond. Charged atoms use the isoelectronic neutral
    /// element (N+ behaves like C, O+ like N, C- like N, ...).
    pub(crate) fn kekule_valences(self, charge: i8) -> Valences {
        let z = self.0 as i32 - charge as i32;
        match u8::try_from(z).ok().and_then(Element::from_atomic_number) {
            Some(iso) if (5..=9).contains(&iso.0) || (14..=17).contains(&iso.0) => {
                iso.neutral_valences().unwrap()
            }
            _ => self.allowed_valences(charge),
        }
    }
}

fn shifted(base: &'static [u32], delta: i32) -> &'static [u32] {
    // Small closed set of shifted valence lists; avoids allocating.
    const N_PLUS: [&[u32]; 3] = [&[4], &[5], &[6]];
    const P_PLUS: [&[u32]; 3] = [&[4, 6], &[5, 7], &[6, 8]];
    const O_MINUS: [&[u32]; 2] = [&[1], &[0]];
    const S_MINUS: [&[u32]; 2] = [&[1, 3, 5], &[0, 2, 4]];
    let k = (delta.unsigned_abs() as usize).saturating_sub(1);
    match base {
        [3] => N_PLUS[k.min(2)],
        [3, 5] => P_PLUS[k.min(2)],
        [2] => O_MINUS[k.min(1)],
        _ => S_MINUS[k.min(1)],
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for z in 0..=118u8 {
            let e = Element::from_atomic_number(z).unwrap();
            assert_eq!(Element::from_symbol(e.symbol()), Some(e));
        }
        assert_eq!(Element::from_symbol("Cl"), Some(Element::CL));
        assert_eq!(Element::from_symbol("Xx"), None);
    }

    #[test]
    fn charge_adjusted_valences() {
        assert_eq!(Element::N.allowed_valences(1).max(), 4);
        assert_eq!(Element::P.allowed_valences(1), Valences::Set(&[4, 6]));
        assert_eq!(Element::O.allowed_valences(-1).max(), 1);
        assert_eq!(Element::S.allowed_valences(-1), Valences::Set(&[1, 3, 5]));
        assert_eq!(Element::C.allowed_valences(-1), Valences::AtMost(6));
        assert_eq!(Element::N.allowed_valences(-1), Valences::AtMost(6));
    }

    #[test]
    fn isoelectronic_kekule_valences() {
        assert_eq!(Element::N.kekule_valences(1).max(), 4);
        assert_eq!(Element::O.kekule_valences(1).max(), 3);
        assert_eq!(Element::C.kekule_valences(-1).max(), 3);
        assert_eq!(Element::N.kekule_valences(-1).max(), 2);
        assert_eq!(Element::S.kekule_valences(0), Valences::Set(&[2, 4, 6]));
    }
}
