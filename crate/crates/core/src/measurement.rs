//! Finite-shot measurement in rotated Pauli product bases.
//!
//! Outcome bit 0 on a site is the +1 eigenvalue of the measured letter. An
//! outcome string is stored as an integer with qubit 0 as its most significant
//! bit, matching the dense convention of [`crate::pauli`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as c64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HltError, Result};
use crate::pauli::{Pauli, PauliString};
use crate::state::DensityMatrix;

/// Largest cell length `2k` accepted by [`build_overlapping_plan`].
pub const DEFAULT_CELL_CAP: usize = 4;

/// One measurement setting: a non-identity letter per qubit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisLabel {
    letters: Vec<Pauli>,
}

impl BasisLabel {
    pub fn new(letters: Vec<Pauli>) -> Result<Self> {
        if letters.is_empty() || letters.contains(&Pauli::I) {
            return invalid("a basis label needs one of X, Y, Z on every qubit");
        }
        Ok(Self { letters })
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn n_qubits(&self) -> usize {
        self.letters.len()
    }

    /// Whether measuring in this basis reveals `p` (letters agree on its support).
    pub fn is_compatible(&self, p: &PauliString) -> bool {
        p.letters().iter().zip(&self.letters).all(|(&a, &b)| a == Pauli::I || a == b)
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for BasisLabel {
    type Err = HltError;
    fn from_str(s: &str) -> Result<Self> {
        let p: PauliString = s.parse()?;
        BasisLabel::new(p.letters().to_vec())
    }
}

impl Serialize for BasisLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BasisLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered measurement settings with a shot allocation for each.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPlan {
    n_qubits: usize,
    bases: Vec<BasisLabel>,
    shots: Vec<u64>,
    warning: Option<String>,
}

impl MeasurementPlan {
    pub fn new(bases: Vec<BasisLabel>, shots: Vec<u64>) -> Result<Self> {
        if bases.is_empty() {
            return invalid("a measurement plan needs at least one basis");
        }
        if bases.len() != shots.len() {
            return invalid("one shot count per basis is required");
        }
        let n_qubits = bases[0].n_qubits();
        if bases.iter().any(|b| b.n_qubits() != n_qubits) {
            return invalid("all bases must act on the same number of qubits");
        }
        Ok(Self { n_qubits, bases, shots, warning: None })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn bases(&self) -> &[BasisLabel] {
        &self.bases
    }

    pub fn shots(&self) -> &[u64] {
        &self.shots
    }

    pub fn total_shots(&self) -> u64 {
        self.shots.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Set when the allocation leaves some bases without shots.
    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// Same bases with a new total, split equally.
    pub fn with_total_shots(&self, total: u64) -> Self {
        let (shots, warning) = split_shots(total, self.bases.len());
        Self { n_qubits: self.n_qubits, bases: self.bases.clone(), shots, warning }
    }
}

/// Floor division with the remainder handed out one shot at a time in plan order.
fn split_shots(total: u64, n_bases: usize) -> (Vec<u64>, Option<String>) {
    let n = n_bases as u64;
    let (base, rem) = (total / n, total % n);
    let shots = (0..n).map(|i| base + u64::from(i < rem)).collect();
    let warning = (total < n)
        .then(|| format!("{total} shots cannot cover {n} bases; {} bases get none", n - total));
    (shots, warning)
}

/// The `i`th word of `{X,Y,Z}^len` in lexicographic order.
fn word(index: usize, len: usize) -> Vec<Pauli> {
    (0..len)
        .map(|d| Pauli::NON_IDENTITY[(index / 3usize.pow((len - 1 - d) as u32)) % 3])
        .collect()
}

/// Overlapping local tomography: all `3^{2k}` cell patterns of length `2k`,
/// each repeated periodically along the chain.
pub fn build_overlapping_plan(n_qubits: usize, k: usize, total_shots: u64) -> Result<MeasurementPlan> {
    build_overlapping_plan_with_cap(n_qubits, k, total_shots, DEFAULT_CELL_CAP)
}

pub fn build_overlapping_plan_with_cap(
    n_qubits: usize,
    k: usize,
    total_shots: u64,
    cell_cap: usize,
) -> Result<MeasurementPlan> {
    if n_qubits == 0 || k == 0 {
        return invalid("qubit count and k must be positive");
    }
    let cell = 2 * k;
    if cell > cell_cap {
        return invalid(format!("cell length {cell} exceeds cap {cell_cap}"));
    }
    let count = 3usize.pow(cell as u32);
    let bases = (0..count)
        .map(|j| {
            let pattern = word(j, cell);
            BasisLabel { letters: (0..n_qubits).map(|q| pattern[q % cell]).collect() }
        })
        .collect();
    let (shots, warning) = split_shots(total_shots, count);
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(MeasurementPlan { n_qubits, bases, shots, warning })
}

/// All `3^n` product bases with `shots_per_basis` each, as used by full tomography.
pub fn build_full_plan(n_qubits: usize, shots_per_basis: u64) -> Result<MeasurementPlan> {
    if n_qubits == 0 || n_qubits > 8 {
        return invalid(format!("full plans support 1..=8 qubits, got {n_qubits}"));
    }
    let count = 3usize.pow(n_qubits as u32);
    let bases = (0..count).map(|j| BasisLabel { letters: word(j, n_qubits) }).collect();
    MeasurementPlan::new(bases, vec![shots_per_basis; count])
}

/// How the outcome tables of a dataset were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetMode {
    Sampled { seed: u64 },
    Exact,
}

/// Outcome table of one basis.
#[derive(Debug, Clone, PartialEq)]
pub enum Tally {
    /// outcome -> count; counts sum to the basis allocation
    Counts(BTreeMap<usize, u64>),
    /// dense outcome probabilities
    Exact(Vec<f64>),
}

/// Measurement results for every basis of a plan.
#[derive(Debug, Clone)]
pub struct MeasurementDataset {
    plan: MeasurementPlan,
    mode: DatasetMode,
    tallies: Vec<Tally>,
    frequencies: Vec<Option<Vec<f64>>>,
}

impl PartialEq for MeasurementDataset {
    fn eq(&self, other: &Self) -> bool {
        self.plan == other.plan && self.mode == other.mode && self.tallies == other.tallies
    }
}

impl MeasurementDataset {
    pub fn new(plan: MeasurementPlan, mode: DatasetMode, tallies: Vec<Tally>) -> Result<Self> {
        if tallies.len() != plan.len() {
            return invalid("one outcome table per basis is required");
        }
        let dim = 1usize << plan.n_qubits();
        let mut frequencies = Vec::with_capacity(tallies.len());
        for (i, t) in tallies.iter().enumerate() {
            let f = match (t, mode) {
                (Tally::Counts(c), DatasetMode::Sampled { .. }) => {
                    let total: u64 = c.values().sum();
                    if total != plan.shots[i] {
                        return invalid(format!(
                            "basis {} has {total} counts but {} allocated shots",
                            plan.bases[i], plan.shots[i]
                        ));
                    }
                    if c.keys().any(|&s| s >= dim) {
                        return invalid(format!("outcome out of range in basis {}", plan.bases[i]));
                    }
                    (total > 0).then(|| {
                        let mut v = vec![0.0; dim];
                        for (&s, &n) in c {
                            v[s] = n as f64 / total as f64;
                        }
                        v
                    })
                }
                (Tally::Exact(p), DatasetMode::Exact) => {
                    if p.len() != dim {
                        return invalid("exact table has the wrong length");
                    }
                    let sum: f64 = p.iter().sum();
                    if (sum - 1.0).abs() > 1e-12 || p.iter().any(|&x| x < 0.0) {
                        return invalid(format!("exact probabilities of {} do not sum to 1", plan.bases[i]));
                    }
                    Some(p.clone())
                }
                _ => return invalid("outcome table kind does not match the dataset mode"),
            };
            frequencies.push(f);
        }
        Ok(Self { plan, mode, tallies, frequencies })
    }

    pub fn plan(&self) -> &MeasurementPlan {
        &self.plan
    }

    pub fn mode(&self) -> DatasetMode {
        self.mode
    }

    pub fn n_qubits(&self) -> usize {
        self.plan.n_qubits()
    }

    pub fn tallies(&self) -> &[Tally] {
        &self.tallies
    }

    /// Empirical (or exact) outcome distribution of basis `i`; `None` for a basis without shots.
    pub fn frequencies(&self, i: usize) -> Option<&[f64]> {
        self.frequencies[i].as_deref()
    }

    /// Pooling weight of basis `i`: its shot count, or 1 for exact data.
    pub(crate) fn weight(&self, i: usize) -> f64 {
        match self.mode {
            DatasetMode::Sampled { .. } => self.plan.shots[i] as f64,
            DatasetMode::Exact => 1.0,
        }
    }
}

/// Measurement-basis eigenvector for `outcome` of a single-site letter.
fn eigenvector(letter: Pauli, outcome: usize) -> [c64; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match (letter, outcome) {
        (Pauli::X, 0) => [c64::new(h, 0.0), c64::new(h, 0.0)],
        (Pauli::X, _) => [c64::new(h, 0.0), c64::new(-h, 0.0)],
        (Pauli::Y, 0) => [c64::new(h, 0.0), c64::new(0.0, h)],
        (Pauli::Y, _) => [c64::new(h, 0.0), c64::new(0.0, -h)],
        (_, 0) => [c64::new(1.0, 0.0), c64::new(0.0, 0.0)],
        (_, _) => [c64::new(0.0, 0.0), c64::new(1.0, 0.0)],
    }
}

/// Row-major square block used while projecting out qubits one at a time.
struct Block {
    dim: usize,
    data: Vec<c64>,
}

impl Block {
    /// `<b| M |b>` on the leading qubit, leaving an operator on the rest.
    fn project_leading(&self, b: [c64; 2]) -> Block {
        let h = self.dim / 2;
        let w00 = b[0].norm_sqr();
        let w11 = b[1].norm_sqr();
        let w01 = b[0].conj() * b[1];
        let w10 = b[1].conj() * b[0];
        let mut data = Vec::with_capacity(h * h);
        for i in 0..h {
            let top = &self.data[i * self.dim..(i + 1) * self.dim];
            let bot = &self.data[(i + h) * self.dim..(i + h + 1) * self.dim];
            for j in 0..h {
                data.push(top[j] * w00 + top[j + h] * w01 + bot[j] * w10 + bot[j + h] * w11);
            }
        }
        Block { dim: h, data }
    }
}

fn descend(block: Block, depth: usize, bases: &[BasisLabel], group: &[usize], prefix: usize, out: &mut [Vec<f64>]) {
    if block.dim == 1 {
        for &g in group {
            out[g][prefix] = block.data[0].re;
        }
        return;
    }
    for letter in Pauli::NON_IDENTITY {
        let members: Vec<usize> = group.iter().copied().filter(|&g| bases[g].letters[depth] == letter).collect();
        if members.is_empty() {
            continue;
        }
        for outcome in 0..2 {
            let child = block.project_leading(eigenvector(letter, outcome));
            descend(child, depth + 1, bases, &members, (prefix << 1) | outcome, out);
        }
    }
}

/// Outcome probabilities `<s| U_B^dag rho U_B |s>` for each basis, without clipping.
pub fn raw_basis_probabilities(rho: &DensityMatrix, bases: &[BasisLabel]) -> Result<Vec<Vec<f64>>> {
    let n = rho.n_qubits();
    if bases.iter().any(|b| b.n_qubits() != n) {
        return invalid(format!("bases do not act on {n} qubits"));
    }
    let dim = rho.dim();
    let m = rho.matrix();
    let mut data = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            data.push(m[(i, j)]);
        }
    }
    let mut out = vec![vec![0.0; dim]; bases.len()];
    let all: Vec<usize> = (0..bases.len()).collect();
    descend(Block { dim, data }, 0, bases, &all, 0, &mut out);
    Ok(out)
}

/// Outcome probabilities per basis; small negative values are clipped and the table renormalized.
pub fn basis_probabilities(rho: &DensityMatrix, bases: &[BasisLabel]) -> Result<Vec<Vec<f64>>> {
    let mut probs = raw_basis_probabilities(rho, bases)?;
    for (b, p) in bases.iter().zip(probs.iter_mut()) {
        if let Some(&worst) = p.iter().min_by(|a, b| a.total_cmp(b)) {
            if worst < -1e-9 {
                return Err(HltError::NumericConsistency(format!(
                    "negative outcome probability {worst:e} in basis {b}"
                )));
            }
        }
        p.iter_mut().for_each(|x| *x = x.max(0.0));
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
    }
    Ok(probs)
}

/// Per-basis random stream: seed plus basis index.
fn basis_rng(seed: u64, basis_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(basis_index as u64))
}

/// Multinomial shot sampling of every basis of `plan`.
pub fn sample(rho: &DensityMatrix, plan: &MeasurementPlan, seed: u64) -> Result<MeasurementDataset> {
    if plan.n_qubits() != rho.n_qubits() {
        return invalid("plan and state sizes differ");
    }
    let probs = basis_probabilities(rho, plan.bases())?;
    let tallies: Vec<Tally> = probs
        .par_iter()
        .zip(plan.shots().par_iter())
        .enumerate()
        .map(|(i, (p, &shots))| {
            let mut counts = BTreeMap::new();
            if shots > 0 {
                let dist = WeightedIndex::new(p).expect("probabilities are normalized");
                let mut rng = basis_rng(seed, i);
                for _ in 0..shots {
                    *counts.entry(dist.sample(&mut rng)).or_insert(0u64) += 1;
                }
            }
            Tally::Counts(counts)
        })
        .collect();
    MeasurementDataset::new(plan.clone(), DatasetMode::Sampled { seed }, tallies)
}

/// The infinite-shot limit of [`sample`].
pub fn exact_dataset(rho: &DensityMatrix, plan: &MeasurementPlan) -> Result<MeasurementDataset> {
    if plan.n_qubits() != rho.n_qubits() {
        return invalid("plan and state sizes differ");
    }
    let probs = basis_probabilities(rho, plan.bases())?;
    MeasurementDataset::new(plan.clone(), DatasetMode::Exact, probs.into_iter().map(Tally::Exact).collect())
}

/// A pooled Pauli estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliEstimate {
    pub value: f64,
    pub samples_used: u64,
}

/// Shot-weighted mean of `+-1` parities over every basis compatible with `p`.
pub fn estimate_pauli_expectation(data: &MeasurementDataset, p: &PauliString) -> Result<PauliEstimate> {
    let n = data.n_qubits();
    if p.n_qubits() != n {
        return invalid(format!("{}-qubit string against {n}-qubit data", p.n_qubits()));
    }
    let mask = p.support().iter().fold(0usize, |m, &q| m | (1 << (n - 1 - q)));
    let (mut num, mut den, mut used, mut any) = (0.0, 0.0, 0u64, false);
    for (i, basis) in data.plan.bases().iter().enumerate() {
        if !basis.is_compatible(p) {
            continue;
        }
        let Some(freq) = data.frequencies(i) else { continue };
        any = true;
        let parity: f64 = freq
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != 0.0)
            .map(|(s, &f)| if (s & mask).count_ones() % 2 == 0 { f } else { -f })
            .sum();
        let w = data.weight(i);
        num += w * parity;
        den += w;
        used += data.plan.shots()[i];
    }
    if !any {
        return Err(HltError::UnsupportedObservable(format!(
            "no measured basis reveals {p}"
        )));
    }
    Ok(PauliEstimate { value: num / den, samples_used: used })
}
