//! Constraint-matrix Hamiltonian learning.
//!
//! For a Gibbs state `rho` of `H = sum_m v_m S_m`, every constraint operator
//! `A_q` gives `sum_m <i[A_q, S_m]> v_m = 0`. The matrix
//! `K[q, m] = <i[A_q, S_m]>` therefore has the Gibbs Hamiltonian in its null
//! space; with noisy estimates its lowest right singular vectors span the
//! candidate subspace.

use std::collections::HashMap;
use std::sync::Arc;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, HltError, Result};
use crate::measurement::{estimate_pauli_expectation, MeasurementDataset};
use crate::pauli::{commutator_i, OperatorBasis, PauliString, ScaledPauli};
use crate::seeding::derive_seed;
use crate::state::{gibbs_state, DensityMatrix, HamiltonianOperator};

/// Where the expectation values of a constraint matrix come from.
#[derive(Debug, Clone, Copy)]
pub enum ExpectationSource<'a> {
    State(&'a DensityMatrix),
    Dataset(&'a MeasurementDataset),
}

impl<'a> ExpectationSource<'a> {
    fn n_qubits(&self) -> usize {
        match self {
            Self::State(r) => r.n_qubits(),
            Self::Dataset(d) => d.n_qubits(),
        }
    }

    fn expectation(&self, p: &PauliString) -> Result<f64> {
        match self {
            Self::State(r) => r.expectation(p),
            Self::Dataset(d) => estimate_pauli_expectation(d, p).map(|e| e.value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Exact,
    Dataset { seed: Option<u64>, shots: u64 },
}

/// `K[q, m] = <i[A_q, S_m]>` with `A_q` of locality `k+1` and `S_m` of locality `k`.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    rows: Arc<OperatorBasis>,
    cols: Arc<OperatorBasis>,
    entries: Mat<f64>,
    provenance: Provenance,
}

impl ConstraintMatrix {
    pub fn rows(&self) -> &Arc<OperatorBasis> {
        &self.rows
    }

    pub fn cols(&self) -> &Arc<OperatorBasis> {
        &self.cols
    }

    pub fn entries(&self) -> &Mat<f64> {
        &self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// `K v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|q| (0..self.ncols()).map(|m| self.entries[(q, m)] * v[m]).sum())
            .collect()
    }

    /// Same bases and pattern with entries replaced (e.g. after adding noise).
    pub fn with_entries(&self, entries: Mat<f64>) -> Result<Self> {
        if entries.nrows() != self.nrows() || entries.ncols() != self.ncols() {
            return invalid("replacement entries have the wrong shape");
        }
        Ok(Self { entries, ..self.clone() })
    }
}

/// `i[A_q, S_m]` for every pair; `None` marks a structural zero.
pub fn commutator_table(rows: &OperatorBasis, cols: &OperatorBasis) -> Result<Vec<Vec<Option<ScaledPauli>>>> {
    rows.iter()
        .map(|a| cols.iter().map(|s| commutator_i(a, s)).collect::<Result<Vec<_>>>())
        .collect()
}

/// Constraint operators (locality `k+1`) and Hamiltonian terms (locality `k`).
pub fn constraint_bases(n_qubits: usize, k: usize) -> Result<(OperatorBasis, OperatorBasis)> {
    if k == 0 {
        return invalid("k must be positive");
    }
    if n_qubits < k + 2 {
        return invalid(format!("constraint learning with k = {k} needs at least {} qubits", k + 2));
    }
    Ok((OperatorBasis::local(n_qubits, k + 1)?, OperatorBasis::local(n_qubits, k)?))
}

pub fn build_constraint_matrix(source: ExpectationSource<'_>, k: usize) -> Result<ConstraintMatrix> {
    let n = source.n_qubits();
    let (rows, cols) = constraint_bases(n, k)?;
    let table = commutator_table(&rows, &cols)?;

    let mut needed: Vec<&PauliString> = table.iter().flatten().flatten().map(|c| &c.string).collect();
    needed.sort();
    needed.dedup();
    let values: HashMap<&PauliString, f64> = needed
        .par_iter()
        .map(|&p| source.expectation(p).map(|v| (p, v)))
        .collect::<Result<_>>()?;

    let mut entries = Mat::<f64>::zeros(rows.len(), cols.len());
    for (q, row) in table.iter().enumerate() {
        for (m, c) in row.iter().enumerate() {
            if let Some(c) = c {
                entries[(q, m)] = c.coefficient * values[&c.string];
            }
        }
    }
    let provenance = match source {
        ExpectationSource::State(_) => Provenance::Exact,
        ExpectationSource::Dataset(d) => Provenance::Dataset {
            seed: match d.mode() {
                crate::measurement::DatasetMode::Sampled { seed } => Some(seed),
                crate::measurement::DatasetMode::Exact => None,
            },
            shots: d.plan().total_shots(),
        },
    };
    Ok(ConstraintMatrix { rows: Arc::new(rows), cols: Arc::new(cols), entries, provenance })
}

/// The full right-singular spectrum of a constraint matrix with `l` vectors kept.
#[derive(Debug, Clone)]
pub struct SpectralCutoff {
    spectrum: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    l: usize,
}

impl SpectralCutoff {
    /// Kept singular values, ascending.
    pub fn singular_values(&self) -> &[f64] {
        &self.spectrum[..self.l]
    }

    /// All singular values, ascending.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Kept right singular vectors, in the order of [`Self::singular_values`].
    pub fn right_vectors(&self) -> &[Vec<f64>] {
        &self.vectors[..self.l]
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn dimension(&self) -> usize {
        self.spectrum.len()
    }

    /// Reorders the kept vectors: position `i` receives old vector `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.l];
        if perm.len() != self.l || perm.iter().any(|&p| p >= self.l || std::mem::replace(&mut seen[p], true)) {
            return invalid("not a permutation of the kept vectors");
        }
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.spectrum[i] = self.spectrum[p];
            out.vectors[i] = self.vectors[p].clone();
        }
        Ok(out)
    }

    /// The same decomposition with a different number of kept vectors.
    pub fn truncated(&self, l: usize) -> Result<Self> {
        if l == 0 || l > self.vectors.len() {
            return invalid(format!("cannot keep {l} of {} computed vectors", self.vectors.len()));
        }
        Ok(Self { spectrum: self.spectrum.clone(), vectors: self.vectors.clone(), l })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest-magnitude component made positive (first index wins among equals).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Replaces the vectors of a degenerate cluster with a canonical basis of
/// their span: pivoted Gram-Schmidt over projected coordinate vectors.
fn canonical_cluster_basis(cluster: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = cluster[0].len();
    let d = cluster.len();
    // candidate j is the projection of e_j onto the span
    let mut candidates: Vec<Vec<f64>> = (0..dim)
        .map(|j| {
            let mut c = vec![0.0; dim];
            for v in cluster {
                let w = v[j];
                for (ci, vi) in c.iter_mut().zip(v) {
                    *ci += w * vi;
                }
            }
            c
        })
        .collect();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let (mut best, mut best_norm) = (0, -1.0);
        for (j, c) in candidates.iter().enumerate() {
            let n = dot(c, c);
            if n > best_norm * (1.0 + 1e-9) {
                best = j;
                best_norm = n;
            }
        }
        let norm = best_norm.sqrt();
        let mut q: Vec<f64> = candidates[best].iter().map(|x| x / norm).collect();
        fix_sign(&mut q);
        for c in candidates.iter_mut() {
            let w = dot(c, &q);
            c.iter_mut().zip(&q).for_each(|(ci, qi)| *ci -= w * qi);
        }
        out.push(q);
    }
    out.sort_by(|a, b| {
        b.iter()
            .zip(a)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out
}

/// Relative width under which singular values are treated as tied.
const TIE_TOLERANCE: f64 = 1e-10;

/// The `l` lowest right singular vectors of `K`, with deterministic signs and tie handling.
pub fn svd_cutoff(km: &ConstraintMatrix, l: usize) -> Result<SpectralCutoff> {
    right_singular_system(km.entries(), l)
}

pub(crate) fn right_singular_system(k: &Mat<f64>, l: usize) -> Result<SpectralCutoff> {
    let m = k.ncols();
    if l == 0 || l > m {
        return invalid(format!("cutoff l = {l} outside 1..={m}"));
    }
    let (values, v) = if k.nrows() >= m {
        let svd = k
            .thin_svd()
            .map_err(|e| HltError::LinearAlgebra(format!("SVD failed: {e:?}")))?;
        let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
        (s, svd.V().to_owned())
    } else {
        // pad with zero rows so every right vector is produced
        let mut padded = Mat::<f64>::zeros(m, m);
        for j in 0..m {
            for i in 0..k.nrows() {
                padded[(i, j)] = k[(i, j)];
            }
        }
        let svd = padded
            .thin_svd()
            .map_err(|e| HltError::LinearAlgebra(format!("SVD failed: {e:?}")))?;
        let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
        (s, svd.V().to_owned())
    };
    // ascending order
    let order: Vec<usize> = (0..m).rev().collect();
    let spectrum: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut vectors: Vec<Vec<f64>> = order.iter().map(|&i| (0..m).map(|r| v[(r, i)]).collect()).collect();
    for vec in vectors.iter_mut() {
        fix_sign(vec);
    }
    let scale = spectrum.last().copied().unwrap_or(0.0).max(1.0);
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && spectrum[end] - spectrum[start] <= TIE_TOLERANCE * scale {
            end += 1;
        }
        if end - start > 1 {
            let canon = canonical_cluster_basis(&vectors[start..end]);
            vectors.splice(start..end, canon);
        }
        start = end;
    }
    Ok(SpectralCutoff { spectrum, vectors, l })
}

/// First-order reconstruction-error estimate `eps * sqrt(sum_{i >= l} 1 / s_i^2)`.
///
/// A vanishing singular value outside the kept subspace makes the estimate infinite.
pub fn estimate_reconstruction_error(spectrum: &[f64], l: usize, epsilon: f64) -> Result<f64> {
    if l == 0 || l > spectrum.len() {
        return invalid(format!("cutoff l = {l} outside 1..={}", spectrum.len()));
    }
    if !(epsilon > 0.0) {
        return invalid("noise amplitude must be positive");
    }
    let mut sum = 0.0;
    for &s in &spectrum[l..] {
        if s < 1e-14 {
            return Ok(f64::INFINITY);
        }
        sum += 1.0 / (s * s);
    }
    Ok(epsilon * sum.sqrt())
}

/// Projection of `v` onto the first `l` vectors of `cutoff`, and the residual norm.
pub fn subspace_residual(cutoff: &SpectralCutoff, v: &[f64], l: usize) -> f64 {
    cutoff.vectors[l..].iter().map(|u| dot(u, v).powi(2)).sum::<f64>().sqrt()
}

/// Which cutoffs the error oracle evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum LGrid {
    /// every `l` in `1..M`
    All(String),
    Values(Vec<usize>),
}

impl LGrid {
    pub fn all() -> Self {
        LGrid::All("all".into())
    }

    fn resolve(&self, m: usize) -> Vec<usize> {
        match self {
            LGrid::All(_) => (1..m).collect(),
            LGrid::Values(v) => v.iter().copied().filter(|&l| l >= 1 && l < m).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct OracleConfig {
    pub n_values: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub l_grid: LGrid,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleSample {
    pub n_qubits: usize,
    pub epsilon: f64,
    pub trial: usize,
    pub l: usize,
    pub error: f64,
    pub estimate: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub samples: Vec<OracleSample>,
    pub mean_ratio: f64,
}

/// Random 2-local Hamiltonian with i.i.d. normal coefficients, normalized to unit norm.
pub fn random_normalized_hamiltonian(n_qubits: usize, k: usize, rng: &mut impl Rng) -> Result<HamiltonianOperator> {
    let basis = Arc::new(OperatorBasis::local(n_qubits, k)?);
    let mut c: Vec<f64> = (0..basis.len()).map(|_| rng.sample(StandardNormal)).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    c.iter_mut().for_each(|x| *x /= norm);
    HamiltonianOperator::new(basis, c)
}

/// Adds i.i.d. `epsilon * N(0, 1)` noise to every entry.
pub fn add_gaussian_noise(k: &Mat<f64>, epsilon: f64, rng: &mut impl Rng) -> Mat<f64> {
    Mat::from_fn(k.nrows(), k.ncols(), |i, j| {
        k[(i, j)] + epsilon * rng.sample::<f64, _>(StandardNormal)
    })
}

/// One oracle trial: ratio between the subspace error and its first-order estimate for each `l`.
pub fn oracle_trial(n_qubits: usize, epsilon: f64, l_grid: &LGrid, seed: u64) -> Result<Vec<(usize, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_normalized_hamiltonian(n_qubits, 2, &mut rng)?;
    let rho = gibbs_state(&h)?;
    let km = build_constraint_matrix(ExpectationSource::State(&rho), 2)?;
    let noisy = add_gaussian_noise(km.entries(), epsilon, &mut rng);
    let m = noisy.ncols();
    let cutoff = right_singular_system(&noisy, m)?;
    let v0 = h.coefficients();
    l_grid
        .resolve(m)
        .into_iter()
        .map(|l| {
            let err = subspace_residual(&cutoff, v0, l);
            let est = estimate_reconstruction_error(cutoff.spectrum(), l, epsilon)?;
            Ok((l, err, est))
        })
        .collect()
}

/// Monte-Carlo check of the first-order subspace error estimate.
pub fn run_error_oracle(config: &OracleConfig) -> Result<OracleReport> {
    if config.trials == 0 || config.n_values.is_empty() || config.epsilons.is_empty() {
        return invalid("the oracle needs at least one size, noise level and trial");
    }
    let mut jobs = Vec::new();
    for &n in &config.n_values {
        for (ei, &eps) in config.epsilons.iter().enumerate() {
            for t in 0..config.trials {
                jobs.push((n, ei, eps, t));
            }
        }
    }
    let results: Vec<Vec<OracleSample>> = jobs
        .par_iter()
        .map(|&(n, ei, eps, t)| {
            let seed = derive_seed(config.seed, &[n as u64, ei as u64, t as u64]);
            let rows = oracle_trial(n, eps, &config.l_grid, seed)?;
            Ok(rows
                .into_iter()
                .map(|(l, error, estimate)| OracleSample {
                    n_qubits: n,
                    epsilon: eps,
                    trial: t,
                    l,
                    error,
                    estimate,
                    ratio: error / estimate,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let samples: Vec<OracleSample> = results.into_iter().flatten().filter(|s| s.ratio.is_finite()).collect();
    if samples.is_empty() {
        return Err(HltError::NumericConsistency("no finite oracle ratios".into()));
    }
    let mean_ratio = samples.iter().map(|s| s.ratio).sum::<f64>() / samples.len() as f64;
    Ok(OracleReport { samples, mean_ratio })
}
