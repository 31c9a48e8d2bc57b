//! Pauli strings on an open 1D chain.
//!
//! Qubit 0 is the leftmost letter of a string and the most significant bit
//! of a computational-basis index.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HltError, Result};

/// Largest qubit count for which dense matrices are materialized.
pub const DEFAULT_DENSE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const NON_IDENTITY: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn from_char(c: char) -> Option<Pauli> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// Single-site product `self * other = i^phase * result`.
    fn mul(self, other: Pauli) -> (Phase, Pauli) {
        use Pauli::*;
        match (self, other) {
            (I, p) | (p, I) => (Phase::ONE, p),
            (X, X) | (Y, Y) | (Z, Z) => (Phase::ONE, I),
            (X, Y) => (Phase::I, Z),
            (Y, X) => (Phase::MINUS_I, Z),
            (Y, Z) => (Phase::I, X),
            (Z, Y) => (Phase::MINUS_I, X),
            (Z, X) => (Phase::I, Y),
            (X, Z) => (Phase::MINUS_I, Y),
        }
    }
}

/// A power of `i`: `i^k` for `k` in `0..4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn exponent(self) -> u8 {
        self.0
    }

    pub fn to_complex(self) -> c64 {
        match self.0 {
            0 => c64::new(1.0, 0.0),
            1 => c64::new(0.0, 1.0),
            2 => c64::new(-1.0, 0.0),
            _ => c64::new(0.0, -1.0),
        }
    }
}

impl std::ops::Mul for Phase {
    type Output = Phase;
    fn mul(self, rhs: Phase) -> Phase {
        Phase((self.0 + rhs.0) % 4)
    }
}

/// A tensor product of single-site Paulis, one letter per qubit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    letters: Vec<Pauli>,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>) -> Result<Self> {
        if letters.is_empty() {
            return invalid("a Pauli string needs at least one qubit");
        }
        Ok(Self { letters })
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self { letters: vec![Pauli::I; n_qubits.max(1)] }
    }

    /// Places `word` (e.g. `"XZ"`) starting at qubit `start` on an `n_qubits` chain.
    pub fn embedded(n_qubits: usize, start: usize, word: &[Pauli]) -> Result<Self> {
        if start + word.len() > n_qubits {
            return invalid(format!(
                "word of length {} at {} does not fit {} qubits",
                word.len(),
                start,
                n_qubits
            ));
        }
        let mut letters = vec![Pauli::I; n_qubits];
        letters[start..start + word.len()].copy_from_slice(word);
        Self::new(letters)
    }

    /// A single non-identity letter at `site`.
    pub fn single(n_qubits: usize, site: usize, p: Pauli) -> Result<Self> {
        Self::embedded(n_qubits, site, &[p])
    }

    pub fn n_qubits(&self) -> usize {
        self.letters.len()
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn letter(&self, site: usize) -> Pauli {
        self.letters[site]
    }

    pub fn is_identity(&self) -> bool {
        self.letters.iter().all(|&p| p == Pauli::I)
    }

    /// Positions carrying a non-identity letter, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.letters
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != Pauli::I)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn weight(&self) -> usize {
        self.letters.iter().filter(|&&p| p != Pauli::I).count()
    }

    /// Length of the smallest window containing the support (0 for the identity).
    pub fn span(&self) -> usize {
        let s = self.support();
        match (s.first(), s.last()) {
            (Some(a), Some(b)) => b - a + 1,
            _ => 0,
        }
    }

    pub fn has_contiguous_support(&self) -> bool {
        let w = self.weight();
        w > 0 && self.span() == w
    }

    fn check_same_size(&self, other: &PauliString) -> Result<()> {
        if self.n_qubits() != other.n_qubits() {
            return invalid(format!(
                "Pauli strings on {} and {} qubits",
                self.n_qubits(),
                other.n_qubits()
            ));
        }
        Ok(())
    }

    /// Bit masks in the computational basis: `(x, z, y_count)`.
    ///
    /// `P|k> = i^y_count * (-1)^popcount(k & z) |k ^ x>`.
    pub(crate) fn masks(&self) -> (usize, usize, u32) {
        let n = self.n_qubits();
        let (mut x, mut z, mut y) = (0usize, 0usize, 0u32);
        for (q, &p) in self.letters.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            match p {
                Pauli::I => {}
                Pauli::X => x |= bit,
                Pauli::Z => z |= bit,
                Pauli::Y => {
                    x |= bit;
                    z |= bit;
                    y += 1;
                }
            }
        }
        (x, z, y)
    }

    /// Dense matrix, subject to [`DEFAULT_DENSE_LIMIT`].
    pub fn to_dense(&self) -> Result<Mat<c64>> {
        self.to_dense_with_limit(DEFAULT_DENSE_LIMIT)
    }

    pub fn to_dense_with_limit(&self, max_qubits: usize) -> Result<Mat<c64>> {
        let n = self.n_qubits();
        if n > max_qubits {
            return Err(HltError::ResourceLimit(format!(
                "dense form of {n} qubits exceeds limit of {max_qubits}"
            )));
        }
        let dim = 1usize << n;
        let mut m = Mat::<c64>::zeros(dim, dim);
        self.for_each_entry(|row, col, v| m[(row, col)] = v);
        Ok(m)
    }

    /// Visits the non-zero entries `(row, col, value)` of the dense matrix, one per column.
    pub(crate) fn for_each_entry(&self, mut f: impl FnMut(usize, usize, c64)) {
        let (x, z, y) = self.masks();
        let base = Phase((y % 4) as u8).to_complex();
        for col in 0..(1usize << self.n_qubits()) {
            let sign = if (col & z).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            f(col ^ x, col, base * sign);
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = HltError;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s
            .trim()
            .chars()
            .map(|c| {
                Pauli::from_char(c)
                    .ok_or_else(|| HltError::InvalidArgument(format!("bad Pauli letter {c:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PauliString::new(letters)
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `i[A, B] = coefficient * string`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPauli {
    pub coefficient: f64,
    pub string: PauliString,
}

/// `a * b = phase * c`.
pub fn pauli_product(a: &PauliString, b: &PauliString) -> Result<(Phase, PauliString)> {
    a.check_same_size(b)?;
    let mut phase = Phase::ONE;
    let letters = a
        .letters
        .iter()
        .zip(&b.letters)
        .map(|(&p, &q)| {
            let (ph, r) = p.mul(q);
            phase = phase * ph;
            r
        })
        .collect();
    Ok((phase, PauliString { letters }))
}

/// Whether two strings commute (an even number of anticommuting sites).
pub fn commutes(a: &PauliString, b: &PauliString) -> bool {
    a.letters
        .iter()
        .zip(&b.letters)
        .filter(|(&p, &q)| p != Pauli::I && q != Pauli::I && p != q)
        .count()
        % 2
        == 0
}

/// `i[a, b]`, or `None` when the strings commute.
pub fn commutator_i(a: &PauliString, b: &PauliString) -> Result<Option<ScaledPauli>> {
    a.check_same_size(b)?;
    if commutes(a, b) {
        return Ok(None);
    }
    let (phase, string) = pauli_product(a, b)?;
    // ab = phase*c and ba = -phase*c; i[a,b] = 2i*phase*c with phase = +-i.
    let coefficient = match phase {
        Phase::I => -2.0,
        Phase::MINUS_I => 2.0,
        _ => unreachable!("anticommuting strings have an imaginary product phase"),
    };
    Ok(Some(ScaledPauli { coefficient, string }))
}

/// Ordered set of Pauli strings with contiguous support of size `1..=max_locality`.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    n_qubits: usize,
    max_locality: usize,
    elements: Vec<PauliString>,
    index: HashMap<PauliString, usize>,
}

impl PartialEq for OperatorBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n_qubits == other.n_qubits && self.elements == other.elements
    }
}

impl OperatorBasis {
    /// Enumerates every string whose non-identity sites form one contiguous
    /// window of length at most `max_locality`.
    pub fn local(n_qubits: usize, max_locality: usize) -> Result<Self> {
        if n_qubits == 0 || max_locality == 0 {
            return invalid("qubit count and locality must be positive");
        }
        if max_locality > n_qubits {
            return invalid(format!("locality {max_locality} exceeds chain length {n_qubits}"));
        }
        let mut elements = Vec::new();
        for start in 0..n_qubits {
            for len in 1..=max_locality.min(n_qubits - start) {
                for code in 0..3usize.pow(len as u32) {
                    // base-3 digits, most significant first, give lexicographic order
                    let word: Vec<Pauli> = (0..len)
                        .map(|d| Pauli::NON_IDENTITY[(code / 3usize.pow((len - 1 - d) as u32)) % 3])
                        .collect();
                    elements.push(PauliString::embedded(n_qubits, start, &word)?);
                }
            }
        }
        Ok(Self::from_parts(n_qubits, max_locality, elements))
    }

    /// Every non-identity string on `n_qubits` (`4^n - 1` elements), in lexicographic order.
    pub fn full(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 8 {
            return invalid(format!("full Pauli basis supported for 1..=8 qubits, got {n_qubits}"));
        }
        let elements = (1..(1usize << (2 * n_qubits)))
            .map(|code| {
                let letters = (0..n_qubits)
                    .map(|q| match (code >> (2 * (n_qubits - 1 - q))) & 3 {
                        0 => Pauli::I,
                        1 => Pauli::X,
                        2 => Pauli::Y,
                        _ => Pauli::Z,
                    })
                    .collect();
                PauliString { letters }
            })
            .collect();
        Ok(Self::from_parts(n_qubits, n_qubits, elements))
    }

    fn from_parts(n_qubits: usize, max_locality: usize, elements: Vec<PauliString>) -> Self {
        let index = elements.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Self { n_qubits, max_locality, elements, index }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn max_locality(&self) -> usize {
        self.max_locality
    }

    pub fn elements(&self) -> &[PauliString] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn position(&self, p: &PauliString) -> Option<usize> {
        self.index.get(p).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PauliString> {
        self.elements.iter()
    }
}

/// Closed-form size of [`OperatorBasis::local`]: `sum_t (n - t + 1) * 3^t`.
pub fn local_basis_size(n_qubits: usize, max_locality: usize) -> usize {
    (1..=max_locality.min(n_qubits)).map(|t| (n_qubits - t + 1) * 3usize.pow(t as u32)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn dense_close(a: &Mat<c64>, b: &Mat<c64>, tol: f64) -> bool {
        (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| (a[(i, j)] - b[(i, j)]).norm() <= tol))
    }

    #[test]
    fn basis_examples() {
        assert_eq!(OperatorBasis::local(5, 2).unwrap().len(), 51);
        assert_eq!(OperatorBasis::local(10, 2).unwrap().len(), 111);
        assert_eq!(OperatorBasis::local(5, 3).unwrap().len(), 132);
        let one = OperatorBasis::local(1, 1).unwrap();
        let words: Vec<String> = one.iter().map(|p| p.to_string()).collect();
        assert_eq!(words, ["X", "Y", "Z"]);
        assert!(OperatorBasis::local(2, 3).is_err());
    }

    #[test]
    fn basis_count_matches_closed_form() {
        for n in 2..=12 {
            let b = OperatorBasis::local(n, 2).unwrap();
            assert_eq!(b.len(), 12 * n - 9);
        }
        for n in 3..=7 {
            assert_eq!(OperatorBasis::local(n, 3).unwrap().len(), 39 * n - 63);
            assert_eq!(OperatorBasis::local(n, 3).unwrap().len(), local_basis_size(n, 3));
        }
    }

    #[test]
    fn basis_ordering_and_shape() {
        let b = OperatorBasis::local(3, 2).unwrap();
        let first: Vec<String> = b.iter().take(5).map(|p| p.to_string()).collect();
        assert_eq!(first, ["XII", "YII", "ZII", "XXI", "XYI"]);
        let mut seen = std::collections::HashSet::new();
        for e in b.iter() {
            assert!(e.has_contiguous_support() && e.weight() <= 2);
            assert!(seen.insert(e.clone()));
        }
        assert!(b.iter().all(|e| e.letter(e.support()[0]) != Pauli::I));
    }

    #[test]
    fn product_examples() {
        assert_eq!(pauli_product(&p("X"), &p("Y")).unwrap(), (Phase::I, p("Z")));
        assert_eq!(pauli_product(&p("Z"), &p("Z")).unwrap(), (Phase::ONE, p("I")));
        assert_eq!(pauli_product(&p("XZ"), &p("ZZ")).unwrap(), (Phase::MINUS_I, p("YI")));
        assert!(pauli_product(&p("X"), &p("XX")).is_err());
    }

    #[test]
    fn commutator_examples() {
        let c = commutator_i(&p("X"), &p("Z")).unwrap().unwrap();
        assert_eq!((c.coefficient, c.string), (2.0, p("Y")));
        assert!(commutator_i(&p("XI"), &p("XX")).unwrap().is_none());
        let c = commutator_i(&p("ZI"), &p("XX")).unwrap().unwrap();
        assert_eq!((c.coefficient, c.string), (-2.0, p("YX")));
        assert!(commutator_i(&p("Z"), &p("ZZ")).is_err());
    }

    #[test]
    fn dense_examples() {
        let z = p("Z").to_dense().unwrap();
        assert_eq!(z[(0, 0)], c64::new(1.0, 0.0));
        assert_eq!(z[(1, 1)], c64::new(-1.0, 0.0));
        assert_eq!(z[(0, 1)], c64::new(0.0, 0.0));
        assert!(dense_close(&p("II").to_dense().unwrap(), &Mat::identity(4, 4), 0.0));
        let xx = p("XX").to_dense().unwrap();
        // column |00> maps to row |11>
        assert_eq!(xx[(3, 0)], c64::new(1.0, 0.0));
        let y = p("Y").to_dense().unwrap();
        assert_eq!(y[(0, 1)], c64::new(0.0, -1.0));
        assert_eq!(y[(1, 0)], c64::new(0.0, 1.0));
        assert!(matches!(
            PauliString::identity(13).to_dense(),
            Err(HltError::ResourceLimit(_))
        ));
    }

    #[test]
    fn leftmost_letter_is_most_significant_bit() {
        let zi = p("ZI").to_dense().unwrap();
        // |01> (index 1) has qubit 0 in state 0
        assert_eq!(zi[(1, 1)].re, 1.0);
        assert_eq!(zi[(2, 2)].re, -1.0);
    }

    fn all_strings(n: usize) -> Vec<PauliString> {
        let mut v = vec![PauliString::identity(n)];
        v.extend(OperatorBasis::full(n).unwrap().elements().iter().cloned());
        v
    }

    #[test]
    fn commutator_matches_dense_exhaustively() {
        for n in 1..=3 {
            let strings = all_strings(n);
            let dense: Vec<Mat<c64>> = strings.iter().map(|s| s.to_dense().unwrap()).collect();
            let i = c64::new(0.0, 1.0);
            for (a, da) in strings.iter().zip(&dense) {
                for (b, db) in strings.iter().zip(&dense) {
                    let expected = (da * db - db * da) * faer::Scale(i);
                    let got = match commutator_i(a, b).unwrap() {
                        None => Mat::zeros(1 << n, 1 << n),
                        Some(c) => c.string.to_dense().unwrap() * faer::Scale(c64::new(c.coefficient, 0.0)),
                    };
                    assert!(dense_close(&expected, &got, 1e-12), "{a} {b}");
                    if let (Some(ab), Some(ba)) =
                        (commutator_i(a, b).unwrap(), commutator_i(b, a).unwrap())
                    {
                        assert_eq!(ab.string, ba.string);
                        assert_eq!(ab.coefficient, -ba.coefficient);
                    }
                }
            }
        }
    }

    #[test]
    fn product_is_associative_on_two_qubits() {
        let strings = all_strings(2);
        for a in &strings {
            for b in &strings {
                let (pab, ab) = pauli_product(a, b).unwrap();
                let da = a.to_dense().unwrap() * b.to_dense().unwrap();
                let dc = ab.to_dense().unwrap() * faer::Scale(pab.to_complex());
                assert!(dense_close(&da, &dc, 1e-14));
                for c in &strings {
                    let (pabc, abc) = pauli_product(&ab, c).unwrap();
                    let (pbc, bc) = pauli_product(b, c).unwrap();
                    let (pa_bc, a_bc) = pauli_product(a, &bc).unwrap();
                    assert_eq!(abc, a_bc);
                    assert_eq!(pab * pabc, pbc * pa_bc);
                }
            }
        }
    }

    #[test]
    fn text_form_round_trips() {
        let s = p("IIXZI");
        assert_eq!(s.to_string(), "IIXZI");
        assert!("IXQ".parse::<PauliString>().is_err());
        assert_eq!(s.support(), vec![2, 3]);
        assert_eq!(p("XIZ").span(), 3);
        assert!(!p("XIZ").has_contiguous_support());
    }
}
