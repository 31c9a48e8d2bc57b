//! Dense density matrices, Gibbs states and model Hamiltonians.
//!
//! Every matrix function (exponential, logarithm, square root) goes through a
//! Hermitian eigendecomposition.

use std::ops::Range;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64 as c64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, HltError, Result};
use crate::linalg::{self, eigh};
use crate::pauli::{OperatorBasis, Pauli, PauliString, DEFAULT_DENSE_LIMIT};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;
/// Default eigenvalue floor applied before taking a matrix logarithm.
pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

fn check_dense_limit(n_qubits: usize) -> Result<()> {
    if n_qubits > DEFAULT_DENSE_LIMIT {
        return Err(HltError::ResourceLimit(format!(
            "{n_qubits} qubits exceeds the dense limit of {DEFAULT_DENSE_LIMIT}"
        )));
    }
    Ok(())
}

/// Hermitian, positive semidefinite, unit-trace matrix on `n_qubits`.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    n_qubits: usize,
    matrix: Mat<c64>,
}

impl DensityMatrix {
    /// Validates the density-matrix invariants.
    pub fn from_matrix(n_qubits: usize, matrix: Mat<c64>) -> Result<Self> {
        check_dense_limit(n_qubits)?;
        let dim = 1usize << n_qubits;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return invalid(format!(
                "{}x{} matrix for {} qubits",
                matrix.nrows(),
                matrix.ncols(),
                n_qubits
            ));
        }
        let herm = linalg::hermiticity_defect(matrix.as_ref());
        if herm > HERMITIAN_TOL {
            return invalid(format!("matrix is not Hermitian (defect {herm:e})"));
        }
        let tr = linalg::trace(matrix.as_ref());
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return invalid(format!("trace {tr} differs from 1"));
        }
        let min = linalg::eigvalsh(matrix.as_ref())?[0];
        if min < -PSD_TOL {
            return invalid(format!("smallest eigenvalue {min:e} is negative"));
        }
        Ok(Self { n_qubits, matrix })
    }

    pub(crate) fn from_matrix_unchecked(n_qubits: usize, matrix: Mat<c64>) -> Self {
        Self { n_qubits, matrix }
    }

    pub fn maximally_mixed(n_qubits: usize) -> Result<Self> {
        check_dense_limit(n_qubits)?;
        let dim = 1usize << n_qubits;
        let mut m = Mat::<c64>::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = c64::new(1.0 / dim as f64, 0.0);
        }
        Ok(Self { n_qubits, matrix: m })
    }

    /// `|psi><psi|` for a (not necessarily normalized) state vector.
    pub fn pure(n_qubits: usize, amplitudes: &[c64]) -> Result<Self> {
        check_dense_limit(n_qubits)?;
        let dim = 1usize << n_qubits;
        if amplitudes.len() != dim {
            return invalid(format!("{} amplitudes for {} qubits", amplitudes.len(), n_qubits));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm > 0.0 && norm.is_finite()) {
            return invalid("state vector has zero or non-finite norm");
        }
        let m = Mat::from_fn(dim, dim, |i, j| amplitudes[i] * amplitudes[j].conj() / norm);
        Ok(Self { n_qubits, matrix: m })
    }

    /// The computational basis state `|index><index|`.
    pub fn basis_state(n_qubits: usize, index: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        if index >= dim {
            return invalid(format!("basis index {index} out of range for {n_qubits} qubits"));
        }
        let mut amps = vec![c64::new(0.0, 0.0); dim];
        amps[index] = c64::new(1.0, 0.0);
        Self::pure(n_qubits, &amps)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }

    /// `rho_A (x) rho_B`, with `self` on the leftmost qubits.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let n = self.n_qubits + other.n_qubits;
        check_dense_limit(n)?;
        let db = other.dim();
        let m = Mat::from_fn(self.dim() * db, self.dim() * db, |i, j| {
            self.matrix[(i / db, j / db)] * other.matrix[(i % db, j % db)]
        });
        Ok(Self { n_qubits: n, matrix: m })
    }

    /// `Tr(P rho)`.
    pub fn expectation(&self, p: &PauliString) -> Result<f64> {
        expectation(p, self)
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::eigvalsh(self.matrix.as_ref())
    }
}

/// `Tr(P M)` for a dense square matrix `M`.
pub(crate) fn pauli_trace(p: &PauliString, m: &Mat<c64>) -> c64 {
    let mut acc = c64::new(0.0, 0.0);
    let (x, _, _) = p.masks();
    // P[col ^ x, col] = phase(col), so Tr(P M) = sum_col phase(col) * M[col, col ^ x]
    p.for_each_entry(|_, col, phase| acc += phase * m[(col, col ^ x)]);
    acc
}

/// Real expectation value `Tr(P rho)`.
pub fn expectation(p: &PauliString, rho: &DensityMatrix) -> Result<f64> {
    if p.n_qubits() != rho.n_qubits {
        return invalid(format!(
            "{}-qubit string against {}-qubit state",
            p.n_qubits(),
            rho.n_qubits
        ));
    }
    let v = pauli_trace(p, &rho.matrix);
    if v.im.abs() > 1e-8 {
        return Err(HltError::NumericConsistency(format!(
            "expectation of {p} has imaginary part {:e}",
            v.im
        )));
    }
    Ok(v.re)
}

/// `H = sum_m v_m S_m`, traceless by construction.
#[derive(Debug, Clone)]
pub struct HamiltonianOperator {
    basis: Arc<OperatorBasis>,
    coefficients: Vec<f64>,
}

impl HamiltonianOperator {
    pub fn new(basis: Arc<OperatorBasis>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return invalid(format!(
                "{} coefficients for a basis of {}",
                coefficients.len(),
                basis.len()
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return invalid("Hamiltonian coefficients must be finite");
        }
        Ok(Self { basis, coefficients })
    }

    pub fn zero(basis: Arc<OperatorBasis>) -> Self {
        let coefficients = vec![0.0; basis.len()];
        Self { basis, coefficients }
    }

    pub fn basis(&self) -> &Arc<OperatorBasis> {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn n_qubits(&self) -> usize {
        self.basis.n_qubits()
    }

    pub fn coefficient_of(&self, p: &PauliString) -> Option<f64> {
        self.basis.position(p).map(|i| self.coefficients[i])
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Nonzero terms as `(string, coefficient)`.
    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, f64)> {
        self.basis.iter().zip(self.coefficients.iter().copied()).filter(|(_, c)| *c != 0.0)
    }

    pub fn to_dense(&self) -> Result<Mat<c64>> {
        let n = self.n_qubits();
        check_dense_limit(n)?;
        let dim = 1usize << n;
        let mut m = Mat::<c64>::zeros(dim, dim);
        for (p, c) in self.terms() {
            p.for_each_entry(|row, col, v| m[(row, col)] += v * c);
        }
        Ok(m)
    }
}

/// `e^{-H} / Tr(e^{-H})`.
pub fn gibbs_state(h: &HamiltonianOperator) -> Result<DensityMatrix> {
    gibbs_from_dense(h.n_qubits(), &h.to_dense()?)
}

/// Gibbs state of a dense Hermitian operator.
pub fn gibbs_from_dense(n_qubits: usize, h: &Mat<c64>) -> Result<DensityMatrix> {
    if h.col_iter().any(|c| c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
        return invalid("Hamiltonian has non-finite entries");
    }
    let evd = eigh(h.as_ref())?;
    let e0 = evd.values[0];
    let mut w: Vec<f64> = evd.values.iter().map(|&e| (-(e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok(DensityMatrix::from_matrix_unchecked(n_qubits, evd.recompose_psd(&w)))
}

/// `sum_<ij> X_i X_{i+1} + sum_i Z_i` on an open chain.
pub fn transverse_ising(n: usize) -> Result<HamiltonianOperator> {
    if n < 2 {
        return invalid("transverse Ising chain needs at least 2 qubits");
    }
    let basis = Arc::new(OperatorBasis::local(n, 2)?);
    let mut c = vec![0.0; basis.len()];
    for i in 0..n {
        c[basis.position(&PauliString::single(n, i, Pauli::Z)?).expect("Z in basis")] = 1.0;
    }
    for i in 0..n - 1 {
        let xx = PauliString::embedded(n, i, &[Pauli::X, Pauli::X])?;
        c[basis.position(&xx).expect("XX in basis")] = 1.0;
    }
    HamiltonianOperator::new(basis, c)
}

/// Classical Ising chain `-a sum_i Z_i Z_{i+1}`.
pub fn ghz_hamiltonian(m: usize, a: f64) -> Result<HamiltonianOperator> {
    if m < 2 {
        return invalid("GHZ Hamiltonian needs at least 2 qubits");
    }
    if !(a > 0.0 && a.is_finite()) {
        return invalid(format!("coupling must be positive, got {a}"));
    }
    let basis = Arc::new(OperatorBasis::local(m, 2)?);
    let mut c = vec![0.0; basis.len()];
    for i in 0..m - 1 {
        let zz = PauliString::embedded(m, i, &[Pauli::Z, Pauli::Z])?;
        c[basis.position(&zz).expect("ZZ in basis")] = -a;
    }
    HamiltonianOperator::new(basis, c)
}

/// `(|0...0> + |1...1>) / sqrt 2` on `n` qubits.
pub fn ghz_pure_state(n: usize) -> Result<DensityMatrix> {
    let dim = 1usize << n;
    let mut amps = vec![c64::new(0.0, 0.0); dim];
    amps[0] = c64::new(1.0, 0.0);
    amps[dim - 1] = c64::new(1.0, 0.0);
    DensityMatrix::pure(n, &amps)
}

/// `(|0...0><0...0| + |1...1><1...1|) / 2`, the GHZ state with one qubit traced out.
pub fn ghz_reduced_state(n: usize) -> Result<DensityMatrix> {
    check_dense_limit(n)?;
    let dim = 1usize << n;
    let mut m = Mat::<c64>::zeros(dim, dim);
    m[(0, 0)] = c64::new(0.5, 0.0);
    m[(dim - 1, dim - 1)] = c64::new(0.5, 0.0);
    Ok(DensityMatrix::from_matrix_unchecked(n, m))
}

/// Random full-rank-or-less state from a complex Ginibre matrix.
pub fn random_density_matrix(n_qubits: usize, rank: usize, rng: &mut impl Rng) -> Result<DensityMatrix> {
    check_dense_limit(n_qubits)?;
    let dim = 1usize << n_qubits;
    let rank = rank.clamp(1, dim);
    let g = Mat::from_fn(dim, rank, |_, _| {
        c64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let mut m = &g * g.adjoint();
    let tr = linalg::trace(m.as_ref()).re;
    for j in 0..dim {
        for i in 0..dim {
            m[(i, j)] /= tr;
        }
    }
    linalg::hermitize_in_place(&mut m);
    Ok(DensityMatrix::from_matrix_unchecked(n_qubits, m))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
///
/// Evaluated as the squared trace norm of `sqrt(rho) sqrt(sigma)`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.n_qubits != sigma.n_qubits {
        return invalid(format!(
            "fidelity between {}- and {}-qubit states",
            rho.n_qubits, sigma.n_qubits
        ));
    }
    let a = eigh(rho.matrix.as_ref())?;
    let b = eigh(sigma.matrix.as_ref())?;
    let d = rho.dim();
    let sa: Vec<f64> = a.values.iter().map(|&x| x.max(0.0).sqrt()).collect();
    let sb: Vec<f64> = b.values.iter().map(|&x| x.max(0.0).sqrt()).collect();
    // singular values of diag(sa) Va^dag Vb diag(sb) equal those of sqrt(rho) sqrt(sigma)
    let overlap = a.vectors.adjoint() * &b.vectors;
    let core = Mat::from_fn(d, d, |i, j| overlap[(i, j)] * (sa[i] * sb[j]));
    let nuclear: f64 = linalg::singular_values(core.as_ref())?.iter().sum();
    Ok((nuclear * nuclear).clamp(0.0, 1.0))
}

/// Reduced state on the contiguous qubit range `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: Range<usize>) -> Result<DensityMatrix> {
    let n = rho.n_qubits;
    if keep.start >= keep.end || keep.end > n {
        return invalid(format!("keep range {keep:?} invalid for {n} qubits"));
    }
    let left = keep.start;
    let kept = keep.end - keep.start;
    let right = n - keep.end;
    let (dk, dr) = (1usize << kept, 1usize << right);
    let mut out = Mat::<c64>::zeros(dk, dk);
    for l in 0..(1usize << left) {
        for r in 0..dr {
            let offset = (l << (kept + right)) | r;
            for j in 0..dk {
                let col = offset | (j << right);
                for i in 0..dk {
                    out[(i, j)] += rho.matrix[(offset | (i << right), col)];
                }
            }
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(kept, out))
}

/// Reduced state on an arbitrary set of qubits; only contiguous sets are accepted.
pub fn partial_trace_sites(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    match (sorted.first(), sorted.last()) {
        (Some(&a), Some(&b)) if b - a + 1 == sorted.len() && sorted.len() == keep.len() => {
            partial_trace(rho, a..b + 1)
        }
        _ => invalid(format!("kept qubits {keep:?} are not a contiguous range")),
    }
}

/// The `count` largest eigenvalues, descending.
pub fn top_eigenvalues(rho: &DensityMatrix, count: usize) -> Result<Vec<f64>> {
    if count == 0 || count > rho.dim() {
        return invalid(format!("cannot take {count} eigenvalues of a {}-dim state", rho.dim()));
    }
    let mut v = rho.eigenvalues()?;
    v.reverse();
    v.truncate(count);
    Ok(v)
}

/// A dense Hermitian operator, e.g. an extracted Gibbs Hamiltonian.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub n_qubits: usize,
    pub matrix: Mat<c64>,
}

impl DenseOperator {
    pub fn from_hamiltonian(h: &HamiltonianOperator) -> Result<Self> {
        Ok(Self { n_qubits: h.n_qubits(), matrix: h.to_dense()? })
    }

    /// The operator minus its identity component.
    pub fn traceless(&self) -> Self {
        let d = self.matrix.nrows();
        let shift = linalg::trace(self.matrix.as_ref()) / d as f64;
        let mut m = self.matrix.clone();
        for i in 0..d {
            m[(i, i)] -= shift;
        }
        Self { n_qubits: self.n_qubits, matrix: m }
    }
}

/// Traceless `-ln(rho)`, with eigenvalues clamped below at `floor`.
pub fn extract_gh(rho: &DensityMatrix, floor: f64) -> Result<DenseOperator> {
    if !(floor > 0.0) {
        return invalid(format!("eigenvalue floor must be positive, got {floor}"));
    }
    let evd = eigh(rho.matrix.as_ref())?;
    let logs: Vec<f64> = evd.values.iter().map(|&x| -(x.max(floor)).ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let centered: Vec<f64> = logs.iter().map(|x| x - mean).collect();
    Ok(DenseOperator { n_qubits: rho.n_qubits, matrix: evd.recompose(&centered) })
}

/// The locality classes used to summarize a Pauli decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocalityClass {
    /// single-site Z
    OneClassical,
    /// nearest-neighbour ZZ
    TwoClassical,
    /// single-site X or Y
    OneQuantum,
    /// any other nearest-neighbour two-site string
    TwoQuantum,
    Higher,
}

impl LocalityClass {
    pub fn of(p: &PauliString) -> Self {
        let support = p.support();
        match support.as_slice() {
            [s] if p.letter(*s) == Pauli::Z => Self::OneClassical,
            [_] => Self::OneQuantum,
            [a, b] if b - a == 1 => {
                if p.letter(*a) == Pauli::Z && p.letter(*b) == Pauli::Z {
                    Self::TwoClassical
                } else {
                    Self::TwoQuantum
                }
            }
            _ => Self::Higher,
        }
    }
}

/// Fractions of `||H||^2` carried by each locality class; they sum to 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LocalityWeights {
    pub one_classical: f64,
    pub two_classical: f64,
    pub one_quantum: f64,
    pub two_quantum: f64,
    pub higher: f64,
}

#[derive(Debug, Clone)]
pub struct PauliDecomposition {
    /// `Tr(P H) / 2^N` for each string of the requested basis.
    pub coefficients: Vec<(PauliString, f64)>,
    pub weights: LocalityWeights,
}

impl PauliDecomposition {
    pub fn coefficient(&self, p: &PauliString) -> Option<f64> {
        self.coefficients.iter().find(|(q, _)| q == p).map(|(_, c)| *c)
    }

    /// The `count` largest-magnitude terms.
    pub fn largest(&self, count: usize) -> Vec<(PauliString, f64)> {
        let mut v = self.coefficients.clone();
        v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        v.truncate(count);
        v
    }
}

/// Pauli coefficients of `h` on `basis` plus its locality-weight report.
///
/// Weights are normalized by the full traceless norm of `h`, so mass outside
/// `basis` is reported as [`LocalityWeights::higher`] or the class it belongs to.
pub fn pauli_decompose(h: &DenseOperator, basis: &OperatorBasis) -> Result<PauliDecomposition> {
    check_dense_limit(h.n_qubits)?;
    if basis.n_qubits() != h.n_qubits {
        return invalid("basis and operator sizes differ");
    }
    let d = h.matrix.nrows() as f64;
    let mut coefficients = Vec::with_capacity(basis.len());
    for p in basis.iter() {
        let v = pauli_trace(p, &h.matrix);
        if v.im.abs() > 1e-8 * (1.0 + v.re.abs()) {
            return Err(HltError::NumericConsistency(format!(
                "operator is not Hermitian: Tr({p} H) has imaginary part {:e}",
                v.im
            )));
        }
        coefficients.push((p.clone(), v.re / d));
    }
    let total = linalg::frobenius_sq(h.traceless().matrix.as_ref()) / d;
    let mut w = LocalityWeights::default();
    if total > 0.0 {
        let mut low = 0.0;
        for (p, c) in &coefficients {
            let share = c * c / total;
            match LocalityClass::of(p) {
                LocalityClass::OneClassical => w.one_classical += share,
                LocalityClass::TwoClassical => w.two_classical += share,
                LocalityClass::OneQuantum => w.one_quantum += share,
                LocalityClass::TwoQuantum => w.two_quantum += share,
                LocalityClass::Higher => continue,
            }
            low += share;
        }
        w.higher = (1.0 - low).max(0.0);
    }
    Ok(PauliDecomposition { coefficients, weights: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn single_z() -> HamiltonianOperator {
        let basis = Arc::new(OperatorBasis::local(1, 1).unwrap());
        HamiltonianOperator::new(basis, vec![0.0, 0.0, 1.0]).unwrap()
    }

    fn random_local(n: usize, seed: u64) -> HamiltonianOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = Arc::new(OperatorBasis::local(n, 2).unwrap());
        let c = (0..basis.len()).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.4).collect();
        HamiltonianOperator::new(basis, c).unwrap()
    }

    #[test]
    fn gibbs_of_single_z() {
        let rho = gibbs_state(&single_z()).unwrap();
        let e2 = 2f64.exp();
        assert!((rho.matrix()[(0, 0)].re - 1.0 / (1.0 + e2)).abs() < 1e-14);
        assert!((rho.matrix()[(1, 1)].re - e2 / (1.0 + e2)).abs() < 1e-14);
        assert!((rho.matrix()[(0, 0)].re - 0.11920).abs() < 1e-5);
    }

    #[test]
    fn gibbs_of_zero_is_maximally_mixed() {
        let basis = Arc::new(OperatorBasis::local(3, 2).unwrap());
        let rho = gibbs_state(&HamiltonianOperator::zero(basis)).unwrap();
        let mixed = DensityMatrix::maximally_mixed(3).unwrap();
        assert!(linalg::max_abs_diff(rho.matrix().as_ref(), mixed.matrix().as_ref()) < 1e-14);
    }

    #[test]
    fn gibbs_state_satisfies_invariants() {
        let rho = gibbs_state(&transverse_ising(5).unwrap()).unwrap();
        let m = rho.matrix().clone();
        assert!(linalg::hermiticity_defect(m.as_ref()) <= 1e-12);
        assert!((linalg::trace(m.as_ref()).re - 1.0).abs() <= 1e-12);
        assert!(DensityMatrix::from_matrix(5, m).is_ok());
    }

    #[test]
    fn gibbs_rejects_non_finite() {
        let basis = Arc::new(OperatorBasis::local(1, 1).unwrap());
        assert!(HamiltonianOperator::new(basis, vec![f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn transverse_ising_terms() {
        let h = transverse_ising(5).unwrap();
        let nz: Vec<_> = h.terms().collect();
        assert_eq!(nz.len(), 9);
        assert!(nz.iter().all(|(_, c)| *c == 1.0));
        assert_eq!(h.coefficients().iter().map(|c| c * c).sum::<f64>(), 9.0);
        let h2 = transverse_ising(2).unwrap();
        let words: Vec<String> = h2.terms().map(|(s, _)| s.to_string()).collect();
        assert_eq!(words.len(), 3);
        for w in ["XX", "ZI", "IZ"] {
            assert!(words.contains(&w.to_string()));
        }
        assert!(transverse_ising(1).is_err());
    }

    #[test]
    fn ghz_hamiltonian_terms() {
        let h = ghz_hamiltonian(3, 5.0).unwrap();
        let nz: Vec<(String, f64)> = h.terms().map(|(s, c)| (s.to_string(), c)).collect();
        assert_eq!(nz, vec![("ZZI".into(), -5.0), ("IZZ".into(), -5.0)]);
        let h = ghz_hamiltonian(2, 1.0).unwrap();
        assert_eq!(h.terms().count(), 1);
        assert_eq!(h.coefficient_of(&p("ZZ")), Some(-1.0));
    }

    #[test]
    fn ghz_gibbs_approaches_reduced_ghz() {
        let rho = gibbs_state(&ghz_hamiltonian(3, 8.0).unwrap()).unwrap();
        let f = fidelity(&rho, &ghz_reduced_state(3).unwrap()).unwrap();
        assert!(f >= 0.999, "{f}");
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_density_matrix(3, 8, &mut rng).unwrap();
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-10);
        let zero = DensityMatrix::basis_state(1, 0).unwrap();
        let psi = [c64::new(0.6, 0.0), c64::new(0.0, 0.8)];
        let f = fidelity(&zero, &DensityMatrix::pure(1, &psi).unwrap()).unwrap();
        assert!((f - 0.36).abs() < 1e-12);
        let f = fidelity(&DensityMatrix::maximally_mixed(1).unwrap(), &zero).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
        assert!(fidelity(&zero, &DensityMatrix::maximally_mixed(2).unwrap()).is_err());
    }

    #[test]
    fn fidelity_is_symmetric_and_detects_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for rank in [1, 2, 8] {
            let a = random_density_matrix(3, rank, &mut rng).unwrap();
            let b = random_density_matrix(3, rank, &mut rng).unwrap();
            let (fab, fba) = (fidelity(&a, &b).unwrap(), fidelity(&b, &a).unwrap());
            assert!((fab - fba).abs() < 1e-8);
            assert!(fab < 1.0 - 1e-6);
            assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn partial_trace_of_ghz() {
        let ghz6 = ghz_pure_state(6).unwrap();
        let red = partial_trace(&ghz6, 0..5).unwrap();
        let expected = ghz_reduced_state(5).unwrap();
        assert_eq!(linalg::max_abs_diff(red.matrix().as_ref(), expected.matrix().as_ref()), 0.0);
        let full = partial_trace(&ghz6, 0..6).unwrap();
        assert_eq!(linalg::max_abs_diff(full.matrix().as_ref(), ghz6.matrix().as_ref()), 0.0);
        assert!(partial_trace(&ghz6, 3..3).is_err());
        assert!(partial_trace_sites(&ghz6, &[0, 2]).is_err());
    }

    #[test]
    fn partial_trace_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_density_matrix(2, 4, &mut rng).unwrap();
        let b = random_density_matrix(2, 4, &mut rng).unwrap();
        let ab = a.tensor(&b).unwrap();
        let ra = partial_trace(&ab, 0..2).unwrap();
        let rb = partial_trace(&ab, 2..4).unwrap();
        assert!(linalg::max_abs_diff(ra.matrix().as_ref(), a.matrix().as_ref()) < 1e-14);
        assert!(linalg::max_abs_diff(rb.matrix().as_ref(), b.matrix().as_ref()) < 1e-14);
        let mid = partial_trace(&ab, 1..3).unwrap();
        assert!(DensityMatrix::from_matrix(2, mid.matrix().clone()).is_ok());
    }

    #[test]
    fn top_eigenvalue_examples() {
        let v = top_eigenvalues(&DensityMatrix::maximally_mixed(1).unwrap(), 2).unwrap();
        assert!(v.iter().all(|x| (x - 0.5).abs() < 1e-15));
        let v = top_eigenvalues(&ghz_reduced_state(4).unwrap(), 3).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-14 && (v[1] - 0.5).abs() < 1e-14 && v[2].abs() < 1e-14);
        assert!(top_eigenvalues(&ghz_reduced_state(2).unwrap(), 5).is_err());
    }

    #[test]
    fn expectation_examples() {
        let zero = DensityMatrix::basis_state(1, 0).unwrap();
        assert_eq!(expectation(&p("Z"), &zero).unwrap(), 1.0);
        assert_eq!(expectation(&p("X"), &DensityMatrix::maximally_mixed(1).unwrap()).unwrap(), 0.0);
        let ghz = ghz_reduced_state(5).unwrap();
        assert!((expectation(&p("ZZIII"), &ghz).unwrap() - 1.0).abs() < 1e-15);
        let plus = DensityMatrix::pure(1, &[c64::new(1.0, 0.0), c64::new(1.0, 0.0)]).unwrap();
        assert!((expectation(&p("X"), &plus).unwrap() - 1.0).abs() < 1e-15);
        let plus_i = DensityMatrix::pure(1, &[c64::new(1.0, 0.0), c64::new(0.0, 1.0)]).unwrap();
        assert!((expectation(&p("Y"), &plus_i).unwrap() - 1.0).abs() < 1e-15);
        assert!(expectation(&p("ZZ"), &zero).is_err());
    }

    #[test]
    fn extract_gh_inverts_gibbs() {
        for seed in 0..3 {
            let h = random_local(4, seed);
            let rho = gibbs_state(&h).unwrap();
            let gh = extract_gh(&rho, DEFAULT_LOG_FLOOR).unwrap();
            let truth = DenseOperator::from_hamiltonian(&h).unwrap().traceless();
            assert!(linalg::max_abs_diff(gh.matrix.as_ref(), truth.matrix.as_ref()) < 1e-8);
            let back = gibbs_from_dense(4, &gh.matrix).unwrap();
            assert!(fidelity(&back, &rho).unwrap() >= 1.0 - 1e-10);
        }
        let zero = extract_gh(&DensityMatrix::maximally_mixed(3).unwrap(), DEFAULT_LOG_FLOOR).unwrap();
        assert!(linalg::frobenius_sq(zero.matrix.as_ref()) < 1e-24);
        assert!(extract_gh(&DensityMatrix::maximally_mixed(1).unwrap(), 0.0).is_err());
    }

    #[test]
    fn ghz_gh_is_diagonal() {
        let gh = extract_gh(&ghz_reduced_state(3).unwrap(), DEFAULT_LOG_FLOOR).unwrap();
        let dec = pauli_decompose(&gh, &OperatorBasis::full(3).unwrap()).unwrap();
        for (s, c) in &dec.coefficients {
            let diagonal = s.letters().iter().all(|&l| l == Pauli::I || l == Pauli::Z);
            if !diagonal {
                assert!(c.abs() < 1e-10, "{s} {c}");
            }
        }
        assert!(dec.coefficients.iter().any(|(_, c)| c.abs() > 1.0));
    }

    #[test]
    fn decompose_examples() {
        let basis = Arc::new(OperatorBasis::local(2, 2).unwrap());
        let mut c = vec![0.0; basis.len()];
        c[basis.position(&p("ZI")).unwrap()] = 3.0;
        c[basis.position(&p("XX")).unwrap()] = 2.0;
        let h = HamiltonianOperator::new(basis.clone(), c).unwrap();
        let dec = pauli_decompose(&DenseOperator::from_hamiltonian(&h).unwrap(), &OperatorBasis::full(2).unwrap()).unwrap();
        for (s, v) in &dec.coefficients {
            let expected = match s.to_string().as_str() {
                "ZI" => 3.0,
                "XX" => 2.0,
                _ => 0.0,
            };
            assert!((v - expected).abs() < 1e-14, "{s}");
        }
        let ti = DenseOperator::from_hamiltonian(&transverse_ising(5).unwrap()).unwrap();
        let w = pauli_decompose(&ti, &OperatorBasis::local(5, 2).unwrap()).unwrap().weights;
        assert!((w.one_classical + w.two_quantum - 1.0).abs() < 1e-12);
        assert!(w.higher.abs() < 1e-12 && w.two_classical == 0.0 && w.one_quantum == 0.0);
        assert!((w.one_classical - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_resums_to_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_density_matrix(3, 8, &mut rng).unwrap();
        let gh = extract_gh(&rho, DEFAULT_LOG_FLOOR).unwrap();
        let dec = pauli_decompose(&gh, &OperatorBasis::full(3).unwrap()).unwrap();
        let mut back = Mat::<c64>::zeros(8, 8);
        for (s, c) in &dec.coefficients {
            s.for_each_entry(|r, col, v| back[(r, col)] += v * *c);
        }
        assert!(linalg::max_abs_diff(back.as_ref(), gh.matrix.as_ref()) < 1e-10);
        let w = dec.weights;
        let sum = w.one_classical + w.two_classical + w.one_quantum + w.two_quantum + w.higher;
        assert!((sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn locality_classes() {
        assert_eq!(LocalityClass::of(&p("IZI")), LocalityClass::OneClassical);
        assert_eq!(LocalityClass::of(&p("IYI")), LocalityClass::OneQuantum);
        assert_eq!(LocalityClass::of(&p("ZZI")), LocalityClass::TwoClassical);
        assert_eq!(LocalityClass::of(&p("XZI")), LocalityClass::TwoQuantum);
        assert_eq!(LocalityClass::of(&p("ZIZ")), LocalityClass::Higher);
        assert_eq!(LocalityClass::of(&p("XZY")), LocalityClass::Higher);
    }
}
