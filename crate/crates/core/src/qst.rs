//! Full state tomography by linear inversion with a physical projection.

use std::collections::BTreeMap;
use std::ops::Range;

use faer::Mat;
use num_complex::Complex64 as c64;

use crate::error::{invalid, Result};
use crate::linalg::{self, eigh};
use crate::measurement::{
    build_full_plan, exact_dataset, sample, BasisLabel, DatasetMode, MeasurementDataset, MeasurementPlan, Tally,
};
use crate::pauli::{Pauli, PauliString};
use crate::state::{fidelity, partial_trace, DensityMatrix};

/// Largest system accepted by [`full_qst`].
pub const QST_QUBIT_LIMIT: usize = 6;

/// All `3^n` bases with equal shots.
pub fn qst_plan(n_qubits: usize, shots_per_basis: u64) -> Result<MeasurementPlan> {
    if n_qubits > QST_QUBIT_LIMIT {
        return invalid(format!("full tomography supports at most {QST_QUBIT_LIMIT} qubits"));
    }
    build_full_plan(n_qubits, shots_per_basis)
}

/// Equal split of `total_shots` over the `3^n` bases (rounded down).
pub fn qst_plan_with_total(n_qubits: usize, total_shots: u64) -> Result<MeasurementPlan> {
    qst_plan(n_qubits, total_shots / 3u64.pow(n_qubits as u32))
}

fn letter_code(p: Pauli) -> usize {
    match p {
        Pauli::I => 0,
        Pauli::X => 1,
        Pauli::Y => 2,
        Pauli::Z => 3,
    }
}

fn code_letter(c: usize) -> Pauli {
    [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][c]
}

/// In-place Walsh-Hadamard transform: `out[mask] = sum_s f[s] (-1)^{|s & mask|}`.
fn walsh_hadamard(f: &mut [f64]) {
    let mut h = 1;
    while h < f.len() {
        for i in (0..f.len()).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (f[j], f[j + h]);
                f[j] = a + b;
                f[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Pooled expectation of every Pauli string, indexed base 4 with qubit 0 most significant.
fn pooled_expectations(data: &MeasurementDataset) -> Result<Vec<f64>> {
    let n = data.n_qubits();
    let count = 1usize << (2 * n);
    let mut num = vec![0.0; count];
    let mut den = vec![0.0; count];
    for (i, basis) in data.plan().bases().iter().enumerate() {
        let Some(f) = data.frequencies(i) else { continue };
        let w = data.weight(i);
        let mut parity = f.to_vec();
        walsh_hadamard(&mut parity);
        for (mask, value) in parity.iter().enumerate() {
            let mut code = 0;
            for q in 0..n {
                let digit = if mask >> (n - 1 - q) & 1 == 1 { letter_code(basis.letters()[q]) } else { 0 };
                code = code * 4 + digit;
            }
            num[code] += w * value;
            den[code] += w;
        }
    }
    if let Some(missing) = den.iter().position(|&d| d == 0.0) {
        let letters: Vec<Pauli> = (0..n).map(|q| code_letter(missing >> (2 * (n - 1 - q)) & 3)).collect();
        return invalid(format!("no basis with shots measures {}", PauliString::new(letters)?));
    }
    Ok(num.iter().zip(&den).map(|(a, b)| a / b).collect())
}

/// Unit-trace Hermitian linear-inversion estimate `sum_P <P> P / 2^n` (not yet physical).
pub fn linear_inversion(data: &MeasurementDataset) -> Result<Mat<c64>> {
    let n = data.n_qubits();
    if n > QST_QUBIT_LIMIT {
        return invalid(format!("full tomography supports at most {QST_QUBIT_LIMIT} qubits"));
    }
    let expectations = pooled_expectations(data)?;
    let dim = 1usize << n;
    let mut m = Mat::<c64>::zeros(dim, dim);
    for (code, &e) in expectations.iter().enumerate() {
        let letters: Vec<Pauli> = (0..n).map(|q| code_letter(code >> (2 * (n - 1 - q)) & 3)).collect();
        let p = PauliString::new(letters)?;
        let scale = e / dim as f64;
        p.for_each_entry(|row, col, v| m[(row, col)] += v * scale);
    }
    linalg::hermitize_in_place(&mut m);
    Ok(m)
}

/// Truncate-and-redistribute on a descending spectrum summing to one.
fn truncate_redistribute(descending: &[f64]) -> Vec<f64> {
    let mut lam = descending.to_vec();
    let mut acc = 0.0;
    let mut keep = lam.len();
    while keep > 0 && lam[keep - 1] + acc / (keep as f64) < 0.0 {
        acc += lam[keep - 1];
        lam[keep - 1] = 0.0;
        keep -= 1;
    }
    let share = acc / keep.max(1) as f64;
    for x in lam.iter_mut().take(keep) {
        *x += share;
    }
    lam
}

/// Nearest physical state under the truncate-and-redistribute rule; eigenvectors are kept.
pub fn project_physical(h: &Mat<c64>) -> Result<DensityMatrix> {
    let dim = h.nrows();
    if dim == 0 || h.ncols() != dim || !dim.is_power_of_two() {
        return invalid("projection needs a square matrix of power-of-two size");
    }
    let defect = linalg::hermiticity_defect(h.as_ref());
    if defect > 1e-8 {
        return invalid(format!("matrix is not Hermitian (defect {defect:e})"));
    }
    let tr = linalg::trace(h.as_ref());
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return invalid(format!("trace {tr} differs from 1"));
    }
    let mut sym = h.clone();
    linalg::hermitize_in_place(&mut sym);
    let evd = eigh(sym.as_ref())?;
    let descending: Vec<f64> = evd.values.iter().rev().copied().collect();
    let mut lam = truncate_redistribute(&descending);
    lam.reverse();
    let total: f64 = lam.iter().sum();
    lam.iter_mut().for_each(|x| *x /= total);
    Ok(DensityMatrix::from_matrix_unchecked(dim.trailing_zeros() as usize, evd.recompose_psd(&lam)))
}

/// Linear inversion over all `3^n` bases followed by the physical projection.
pub fn full_qst(data: &MeasurementDataset) -> Result<DensityMatrix> {
    let n = data.n_qubits();
    let expected: Vec<BasisLabel> = build_full_plan(n.min(8), 0)?.bases().to_vec();
    let mut present: Vec<&BasisLabel> = data.plan().bases().iter().collect();
    present.sort();
    present.dedup();
    if let Some(m) = expected.iter().find(|b| present.binary_search(b).is_err()) {
        return invalid(format!("dataset lacks basis {m}"));
    }
    project_physical(&linear_inversion(data)?)
}

/// Where a subsystem estimate draws its data from.
#[derive(Debug, Clone, Copy)]
pub enum SubsystemSource<'a> {
    State(&'a DensityMatrix),
    Dataset(&'a MeasurementDataset),
}

/// Restricts a dataset to the qubits in `window`, pooling bases that agree there.
pub fn marginal_dataset(data: &MeasurementDataset, window: Range<usize>) -> Result<MeasurementDataset> {
    let n = data.n_qubits();
    if window.start >= window.end || window.end > n {
        return invalid(format!("window {window:?} outside a {n}-qubit chain"));
    }
    let w = window.len();
    let shift = n - window.end;
    let local = (1usize << w) - 1;
    let mut pooled: BTreeMap<BasisLabel, (u64, Vec<f64>, f64)> = BTreeMap::new();
    for (i, basis) in data.plan().bases().iter().enumerate() {
        let label = BasisLabel::new(basis.letters()[window.clone()].to_vec())?;
        let entry = pooled.entry(label).or_insert_with(|| (0, vec![0.0; 1 << w], 0.0));
        match &data.tallies()[i] {
            Tally::Counts(c) => {
                for (&s, &k) in c {
                    entry.1[(s >> shift) & local] += k as f64;
                }
                entry.0 += data.plan().shots()[i];
            }
            Tally::Exact(p) => {
                for (s, &x) in p.iter().enumerate() {
                    entry.1[(s >> shift) & local] += x;
                }
                entry.2 += 1.0;
            }
        }
    }
    let mut bases = Vec::new();
    let mut shots = Vec::new();
    let mut tallies = Vec::new();
    for (label, (total, acc, copies)) in pooled {
        bases.push(label);
        match data.mode() {
            DatasetMode::Sampled { .. } => {
                shots.push(total);
                let counts = acc.iter().enumerate().filter(|(_, &c)| c > 0.0).map(|(s, &c)| (s, c as u64)).collect();
                tallies.push(Tally::Counts(counts));
            }
            DatasetMode::Exact => {
                shots.push(0);
                let mut p: Vec<f64> = acc.iter().map(|x| x / copies).collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|x| *x /= s);
                tallies.push(Tally::Exact(p));
            }
        }
    }
    MeasurementDataset::new(MeasurementPlan::new(bases, shots)?, data.mode(), tallies)
}

/// Tomography of the reduced state on `window`.
///
/// A state source is sampled with `shots_per_basis` in every local basis
/// (`None` gives exact probabilities); a dataset source is marginalized.
pub fn subsystem_qst(
    source: SubsystemSource<'_>,
    window: Range<usize>,
    shots_per_basis: Option<u64>,
    seed: u64,
) -> Result<DensityMatrix> {
    match source {
        SubsystemSource::State(rho) => {
            let n = rho.n_qubits();
            if window.start >= window.end || window.end > n {
                return invalid(format!("window {window:?} outside a {n}-qubit chain"));
            }
            let reduced = partial_trace(rho, window.clone())?;
            let plan = qst_plan(window.len(), shots_per_basis.unwrap_or(0))?;
            let data = match shots_per_basis {
                Some(_) => sample(&reduced, &plan, seed)?,
                None => exact_dataset(&reduced, &plan)?,
            };
            full_qst(&data)
        }
        SubsystemSource::Dataset(d) => full_qst(&marginal_dataset(d, window)?),
    }
}

/// All contiguous windows of length `width`.
pub fn sliding_windows(n_qubits: usize, width: usize) -> Result<Vec<Range<usize>>> {
    if width == 0 || width > n_qubits {
        return invalid(format!("window width {width} for {n_qubits} qubits"));
    }
    Ok((0..=n_qubits - width).map(|s| s..s + width).collect())
}

/// Fidelity of each window of `candidate` against a window estimate.
pub fn window_fidelities(candidate: &DensityMatrix, estimates: &[(Range<usize>, DensityMatrix)]) -> Result<Vec<f64>> {
    estimates
        .iter()
        .map(|(w, est)| fidelity(&partial_trace(candidate, w.clone())?, est))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::build_overlapping_plan;
    use crate::state::{gibbs_state, random_density_matrix, transverse_ising};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(values: &[f64]) -> Mat<c64> {
        Mat::from_fn(values.len(), values.len(), |i, j| if i == j { c64::new(values[i], 0.0) } else { c64::new(0.0, 0.0) })
    }

    #[test]
    fn projection_examples() {
        let out = project_physical(&diag(&[0.6, 0.4])).unwrap();
        assert!(linalg::max_abs_diff(out.matrix().as_ref(), diag(&[0.6, 0.4]).as_ref()) < 1e-12);
        assert_eq!(truncate_redistribute(&[1.1, 0.1, -0.2]), vec![1.1 - 0.1, 0.1 - 0.1, 0.0]);
        let four = project_physical(&diag(&[1.1, 0.1, -0.2, 0.0])).unwrap();
        let ev = four.eigenvalues().unwrap();
        assert!(ev.iter().all(|&x| x >= -1e-15));
        assert!((ev.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_rejects_non_hermitian() {
        let mut m = diag(&[0.5, 0.5]);
        m[(0, 1)] = c64::new(0.1, 0.0);
        assert!(project_physical(&m).is_err());
        assert!(project_physical(&diag(&[0.7, 0.7])).is_err());
    }

    #[test]
    fn exact_round_trip_three_qubits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for rank in [1, 3, 8] {
            let rho = random_density_matrix(3, rank, &mut rng).unwrap();
            let data = exact_dataset(&rho, &qst_plan(3, 0).unwrap()).unwrap();
            let est = full_qst(&data).unwrap();
            assert!(fidelity(&est, &rho).unwrap() >= 0.9999);
            assert!(linalg::max_abs_diff(est.matrix().as_ref(), rho.matrix().as_ref()) < 1e-8);
        }
    }

    #[test]
    fn missing_basis_is_rejected() {
        let rho = DensityMatrix::maximally_mixed(2).unwrap();
        let plan = qst_plan(2, 10).unwrap();
        let short = MeasurementPlan::new(plan.bases()[..8].to_vec(), vec![10; 8]).unwrap();
        let data = sample(&rho, &short, 0).unwrap();
        assert!(full_qst(&data).is_err());
    }

    #[test]
    fn basis_order_does_not_matter() {
        let rho = gibbs_state(&transverse_ising(3).unwrap()).unwrap();
        let plan = qst_plan(3, 0).unwrap();
        let mut rev = plan.bases().to_vec();
        rev.reverse();
        let a = full_qst(&exact_dataset(&rho, &plan).unwrap()).unwrap();
        let b = full_qst(&exact_dataset(&rho, &MeasurementPlan::new(rev, vec![0; 27]).unwrap()).unwrap()).unwrap();
        assert!(linalg::max_abs_diff(a.matrix().as_ref(), b.matrix().as_ref()) < 1e-12);
    }

    #[test]
    fn subsystem_from_state_and_dataset() {
        let rho = gibbs_state(&transverse_ising(5).unwrap()).unwrap();
        let exact = subsystem_qst(SubsystemSource::State(&rho), 1..4, None, 0).unwrap();
        let truth = partial_trace(&rho, 1..4).unwrap();
        assert!(fidelity(&exact, &truth).unwrap() > 1.0 - 1e-10);

        let data = exact_dataset(&rho, &build_overlapping_plan(5, 2, 81).unwrap()).unwrap();
        let marg = subsystem_qst(SubsystemSource::Dataset(&data), 2..5, None, 0).unwrap();
        assert!(fidelity(&marg, &partial_trace(&rho, 2..5).unwrap()).unwrap() > 1.0 - 1e-10);

        let sampled = sample(&rho, &build_overlapping_plan(5, 2, 81_000).unwrap(), 5).unwrap();
        let m = marginal_dataset(&sampled, 0..3).unwrap();
        assert_eq!(m.plan().len(), 27);
        assert_eq!(m.plan().total_shots(), 81_000);
        assert!(subsystem_qst(SubsystemSource::State(&rho), 3..6, None, 0).is_err());
    }

    #[test]
    fn whole_system_window_equals_full_qst() {
        let rho = gibbs_state(&transverse_ising(3).unwrap()).unwrap();
        let plan = qst_plan(3, 500).unwrap();
        let a = full_qst(&sample(&rho, &plan, 7).unwrap()).unwrap();
        let b = subsystem_qst(SubsystemSource::State(&rho), 0..3, Some(500), 7).unwrap();
        assert!(linalg::max_abs_diff(a.matrix().as_ref(), b.matrix().as_ref()) < 1e-14);
    }

    #[test]
    fn subsystem_shots_give_high_fidelity() {
        let rho = gibbs_state(&transverse_ising(5).unwrap()).unwrap();
        let truth = partial_trace(&rho, 0..3).unwrap();
        let mean: f64 = (0..10)
            .map(|s| fidelity(&subsystem_qst(SubsystemSource::State(&rho), 0..3, Some(8192), s).unwrap(), &truth).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!(mean >= 0.99, "{mean}");
    }

    #[test]
    fn walsh_hadamard_parities() {
        let mut f = vec![0.25, 0.25, 0.5, 0.0];
        walsh_hadamard(&mut f);
        assert_eq!(f, vec![1.0, 0.5, 0.0, -0.5]);
    }
}
