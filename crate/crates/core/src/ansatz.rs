//! Spectral ansatz `H(theta) = sum_i theta_i sum_m v^(i)_m S_m` and its fit
//! against measured outcome statistics.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HltError, Result};
use crate::learning::{svd_cutoff, ConstraintMatrix, SpectralCutoff};
use crate::measurement::{raw_basis_probabilities, MeasurementDataset};
use crate::pauli::OperatorBasis;
use crate::state::{gibbs_state, DensityMatrix, HamiltonianOperator};

#[derive(Debug, Clone)]
pub struct SpectralAnsatz {
    cutoff: SpectralCutoff,
    basis: Arc<OperatorBasis>,
    theta: Vec<f64>,
}

impl SpectralAnsatz {
    pub fn new(cutoff: SpectralCutoff, basis: Arc<OperatorBasis>, theta: Vec<f64>) -> Result<Self> {
        if cutoff.dimension() != basis.len() {
            return invalid(format!(
                "cutoff vectors have dimension {} but the basis has {} terms",
                cutoff.dimension(),
                basis.len()
            ));
        }
        let mut a = Self { cutoff, basis, theta: Vec::new() };
        a.set_theta(theta)?;
        Ok(a)
    }

    /// The ansatz of the `l` lowest right singular vectors of `km`, with `theta = 0`.
    pub fn from_constraint_matrix(km: &ConstraintMatrix, l: usize) -> Result<Self> {
        let cutoff = svd_cutoff(km, l)?;
        Self::new(cutoff, km.cols().clone(), vec![0.0; l])
    }

    pub fn l(&self) -> usize {
        self.cutoff.l()
    }

    pub fn n_qubits(&self) -> usize {
        self.basis.n_qubits()
    }

    pub fn cutoff(&self) -> &SpectralCutoff {
        &self.cutoff
    }

    pub fn basis(&self) -> &Arc<OperatorBasis> {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.cutoff.l() {
            return invalid(format!("theta has {} entries for l = {}", theta.len(), self.cutoff.l()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return invalid("theta must be finite");
        }
        self.theta = theta;
        Ok(())
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        let mut a = self.clone();
        a.set_theta(theta)?;
        Ok(a)
    }

    fn coefficients_at(&self, theta: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.basis.len()];
        for (t, v) in theta.iter().zip(self.cutoff.right_vectors()) {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += t * vi;
            }
        }
        c
    }

    fn hamiltonian_at(&self, theta: &[f64]) -> Result<HamiltonianOperator> {
        HamiltonianOperator::new(self.basis.clone(), self.coefficients_at(theta))
    }
}

pub fn ansatz_hamiltonian(ansatz: &SpectralAnsatz) -> Result<HamiltonianOperator> {
    ansatz.hamiltonian_at(&ansatz.theta)
}

pub fn reconstruct_state(ansatz: &SpectralAnsatz) -> Result<DensityMatrix> {
    gibbs_state(&ansatz_hamiltonian(ansatz)?)
}

fn check_data(ansatz: &SpectralAnsatz, data: &MeasurementDataset) -> Result<()> {
    if data.n_qubits() != ansatz.n_qubits() {
        return invalid(format!(
            "{}-qubit data for a {}-qubit ansatz",
            data.n_qubits(),
            ansatz.n_qubits()
        ));
    }
    if data.plan().is_empty() {
        return invalid("dataset has no bases");
    }
    Ok(())
}

/// Residuals `P_B(s) - <s|U_B^dag rho U_B|s>` ordered by (basis, outcome); bases without shots are skipped.
fn residuals_at(ansatz: &SpectralAnsatz, data: &MeasurementDataset, theta: &[f64]) -> Result<Vec<f64>> {
    let rho = gibbs_state(&ansatz.hamiltonian_at(theta)?)?;
    let model = raw_basis_probabilities(&rho, data.plan().bases())?;
    let mut r = Vec::with_capacity(model.len() * rho.dim());
    for (i, p) in model.iter().enumerate() {
        if let Some(f) = data.frequencies(i) {
            r.extend(f.iter().zip(p).map(|(a, b)| a - b));
        }
    }
    Ok(r)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub residuals: Vec<f64>,
}

/// Squared mismatch between measured and modelled outcome distributions at the ansatz's theta.
pub fn loss(ansatz: &SpectralAnsatz, data: &MeasurementDataset) -> Result<LossValue> {
    check_data(ansatz, data)?;
    let residuals = residuals_at(ansatz, data, &ansatz.theta)?;
    Ok(LossValue { value: sum_sq(&residuals), residuals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// relative forward-difference step
    pub fd_step: f64,
    pub rel_tolerance: f64,
    pub grad_tolerance: f64,
    /// starting points; `None` uses the default sign and scale schedule
    pub starts: Option<Vec<Vec<f64>>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, fd_step: 1e-6, rel_tolerance: 1e-8, grad_tolerance: 1e-8, starts: None }
    }
}

/// `(s * beta, 0, ..., 0)` for `s` in `{+1, -1}` and `beta` in `{0.5, 1, 2}`.
pub fn default_starts(l: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for s in [1.0, -1.0] {
        for beta in [0.5, 1.0, 2.0] {
            let mut t = vec![0.0; l];
            t[0] = s * beta;
            out.push(t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub initial_theta: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub loss_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub theta_star: Vec<f64>,
    pub loss_value: f64,
    pub iterations: usize,
    pub starts: Vec<StartSummary>,
    pub converged: bool,
    /// loss after every accepted step of the winning start
    pub loss_trace: Vec<f64>,
    pub elapsed_seconds: f64,
}

/// Solves the symmetric positive definite system `a x = b` in place; `None` if not positive definite.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

struct Problem<'a> {
    ansatz: &'a SpectralAnsatz,
    data: &'a MeasurementDataset,
    options: &'a FitOptions,
}

impl Problem<'_> {
    fn residuals(&self, theta: &[f64]) -> Result<Vec<f64>> {
        residuals_at(self.ansatz, self.data, theta)
    }

    /// Forward-difference Jacobian, stored by column.
    fn jacobian(&self, theta: &[f64], r0: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..theta.len())
            .into_par_iter()
            .map(|j| {
                let h = self.options.fd_step * theta[j].abs().max(1.0);
                let mut t = theta.to_vec();
                t[j] += h;
                let r = self.residuals(&t)?;
                Ok(r.iter().zip(r0).map(|(a, b)| (a - b) / h).collect())
            })
            .collect()
    }

    /// Levenberg-Marquardt from one starting point.
    fn solve(&self, start: &[f64]) -> Result<(StartSummary, Vec<f64>)> {
        let l = start.len();
        let mut theta = start.to_vec();
        let mut r = self.residuals(&theta)?;
        let mut f = sum_sq(&r);
        let mut trace = vec![f];
        let mut mu = -1.0;
        let mut nu = 2.0;
        let mut iterations = 0;
        let mut converged = false;
        'outer: while iterations < self.options.max_iterations {
            iterations += 1;
            if f == 0.0 {
                converged = true;
                break;
            }
            let jac = self.jacobian(&theta, &r)?;
            let jtj: Vec<Vec<f64>> = (0..l)
                .map(|a| (0..l).map(|b| jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum()).collect())
                .collect();
            let jtr: Vec<f64> = jac.iter().map(|c| c.iter().zip(&r).map(|(x, y)| x * y).sum()).collect();
            // gradient of sum of squares is 2 J^T r
            if 2.0 * jtr.iter().map(|x| x * x).sum::<f64>().sqrt() < self.options.grad_tolerance {
                converged = true;
                break;
            }
            if mu < 0.0 {
                let d = (0..l).map(|i| jtj[i][i]).fold(0.0f64, f64::max);
                mu = 1e-3 * d.max(1e-12);
            }
            loop {
                let mut a = jtj.clone();
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] += mu;
                }
                let rhs: Vec<f64> = jtr.iter().map(|x| -x).collect();
                let step = match cholesky_solve(&a, &rhs) {
                    Some(s) => s,
                    None => {
                        mu *= nu;
                        nu *= 2.0;
                        if mu > 1e16 {
                            converged = true;
                            break 'outer;
                        }
                        continue;
                    }
                };
                let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
                let r_new = self.residuals(&trial)?;
                let f_new = sum_sq(&r_new);
                // predicted decrease of 0.5 |r|^2 under the linear model
                let predicted: f64 =
                    0.5 * step.iter().zip(&jtr).map(|(s, g)| s * (mu * s - g)).sum::<f64>();
                let gain = if predicted > 0.0 { 0.5 * (f - f_new) / predicted } else { -1.0 };
                if f_new < f && gain > 0.0 {
                    let rel = (f - f_new) / f;
                    theta = trial;
                    r = r_new;
                    f = f_new;
                    trace.push(f);
                    mu *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                    nu = 2.0;
                    if rel < self.options.rel_tolerance {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                mu *= nu;
                nu *= 2.0;
                if mu > 1e16 {
                    // no descent direction left at machine precision
                    converged = true;
                    break 'outer;
                }
            }
        }
        let summary = StartSummary {
            initial_theta: start.to_vec(),
            final_theta: theta,
            loss_value: f,
            iterations,
            converged,
        };
        Ok((summary, trace))
    }
}

/// Forward-difference gradient of the loss at the ansatz's theta, as used by [`fit`].
pub fn loss_gradient(ansatz: &SpectralAnsatz, data: &MeasurementDataset, options: &FitOptions) -> Result<Vec<f64>> {
    check_data(ansatz, data)?;
    let problem = Problem { ansatz, data, options };
    let r0 = problem.residuals(&ansatz.theta)?;
    let jac = problem.jacobian(&ansatz.theta, &r0)?;
    Ok(jac.iter().map(|c| 2.0 * c.iter().zip(&r0).map(|(a, b)| a * b).sum::<f64>()).collect())
}

/// Multi-start nonlinear least squares of the loss residuals over theta.
pub fn fit(ansatz: &SpectralAnsatz, data: &MeasurementDataset, options: &FitOptions) -> Result<FitReport> {
    check_data(ansatz, data)?;
    let l = ansatz.l();
    if !(options.fd_step > 0.0) || options.max_iterations == 0 {
        return invalid("fit needs a positive step and iteration cap");
    }
    let starts = options.starts.clone().unwrap_or_else(|| default_starts(l));
    if starts.is_empty() || starts.iter().any(|s| s.len() != l || s.iter().any(|x| !x.is_finite())) {
        return invalid(format!("every start must be a finite vector of length {l}"));
    }
    let clock = Instant::now();
    let problem = Problem { ansatz, data, options };
    let mut summaries: Vec<StartSummary> = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, Vec<f64>)> = None;
    for (i, s) in starts.iter().enumerate() {
        let (summary, trace) = problem.solve(s)?;
        log::debug!("start {i}: loss {:e} after {} iterations", summary.loss_value, summary.iterations);
        let better = match &best {
            None => true,
            Some((b, _)) => summary.loss_value < summaries[*b].loss_value,
        };
        summaries.push(summary);
        if better {
            best = Some((i, trace));
        }
    }
    let (b, loss_trace) = best.ok_or_else(|| HltError::InvalidArgument("no starts".into()))?;
    let winner = &summaries[b];
    Ok(FitReport {
        theta_star: winner.final_theta.clone(),
        loss_value: winner.loss_value,
        iterations: winner.iterations,
        converged: winner.converged,
        starts: summaries.clone(),
        loss_trace,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Fits and returns the ansatz at the optimum together with the report.
pub fn fit_ansatz(
    ansatz: &SpectralAnsatz,
    data: &MeasurementDataset,
    options: &FitOptions,
) -> Result<(SpectralAnsatz, FitReport)> {
    let report = fit(ansatz, data, options)?;
    Ok((ansatz.with_theta(report.theta_star.clone())?, report))
}
