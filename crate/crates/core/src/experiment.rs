//! Seeded experiment sweeps with CSV results and a JSON manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ansatz::{fit_ansatz, reconstruct_state, FitOptions, SpectralAnsatz};
use crate::error::{invalid, HltError, Result};
use crate::learning::{build_constraint_matrix, oracle_trial, svd_cutoff, ExpectationSource, LGrid};
use crate::measurement::{build_overlapping_plan, exact_dataset, sample, MeasurementDataset};
use crate::pauli::{OperatorBasis, Pauli, PauliString};
use crate::qst::{full_qst, qst_plan_with_total, sliding_windows, subsystem_qst, window_fidelities, SubsystemSource};
use crate::seeding::derive_seed;
use crate::state::{
    fidelity, ghz_hamiltonian, ghz_reduced_state, gibbs_state, top_eigenvalues, transverse_ising, DensityMatrix,
    HamiltonianOperator,
};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    HltSweep,
    QstSweep,
    EigenRecovery,
    ErrorOracle,
    SubsystemVerify,
    Convergence,
    GhzStudy,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        write!(f, "{}", s.as_str().expect("string"))
    }
}

/// The state whose measurements drive an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateSpec {
    TransverseIsing,
    GhzReduced,
    /// transverse Ising plus a random 3-local term carrying fraction `eta` of the weight
    PerturbedIsing { eta: f64 },
    /// classical Ising chain of coupling `a` plus a random 3-local term of weight `eta`
    PerturbedGhz { eta: f64, a: f64 },
}

/// Coupling used by `perturbed-ghz(eta)` when none is given.
pub const DEFAULT_GHZ_COUPLING: f64 = 2.0;

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TransverseIsing => write!(f, "transverse-ising"),
            Self::GhzReduced => write!(f, "ghz-reduced"),
            Self::PerturbedIsing { eta } => write!(f, "perturbed-ising({eta})"),
            Self::PerturbedGhz { eta, a } => write!(f, "perturbed-ghz({eta}, {a})"),
        }
    }
}

impl FromStr for StateSpec {
    type Err = HltError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || HltError::InvalidArgument(format!("unknown state spec `{s}`"));
        let args = |name: &str| -> Result<Option<Vec<f64>>> {
            let Some(rest) = s.strip_prefix(name) else { return Ok(None) };
            let inner = rest.trim().strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
            inner.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>().map(Some)
        };
        match s {
            "transverse-ising" => return Ok(Self::TransverseIsing),
            "ghz-reduced" => return Ok(Self::GhzReduced),
            _ => {}
        }
        if let Some(v) = args("perturbed-ising")? {
            return match v[..] {
                [eta] => Ok(Self::PerturbedIsing { eta }),
                _ => Err(bad()),
            };
        }
        if let Some(v) = args("perturbed-ghz")? {
            return match v[..] {
                [eta] => Ok(Self::PerturbedGhz { eta, a: DEFAULT_GHZ_COUPLING }),
                [eta, a] => Ok(Self::PerturbedGhz { eta, a }),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

impl Serialize for StateSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A cutoff entry: a count or `"max"` for the full column dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LValue {
    Count(usize),
    Named(String),
}

impl LValue {
    fn resolve(&self, l_max: usize) -> Result<usize> {
        match self {
            LValue::Count(l) if (1..=l_max).contains(l) => Ok(*l),
            LValue::Count(l) => invalid(format!("cutoff {l} outside 1..={l_max}")),
            LValue::Named(s) if s == "max" => Ok(l_max),
            LValue::Named(s) => invalid(format!("unknown cutoff `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// chain length; oracle runs use `n_values` instead
    #[serde(default)]
    pub n_qubits: Option<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub l_grid: Option<Vec<LValue>>,
    #[serde(default)]
    pub m_grid: Option<Vec<u64>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub state: Option<StateSpec>,
    /// seed of the random perturbation in perturbed state specs
    #[serde(default)]
    pub state_seed: u64,
    #[serde(default)]
    pub seed_base: u64,
    /// use infinite-shot datasets
    #[serde(default)]
    pub exact_data: bool,
    #[serde(default)]
    pub n_values: Option<Vec<usize>>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_window_shots")]
    pub window_shots: u64,
    #[serde(default)]
    pub fit: Option<FitOptions>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_k() -> usize {
    2
}

fn default_window() -> usize {
    3
}

fn default_window_shots() -> u64 {
    8192
}

pub const DEFAULT_M_GRID: [u64; 6] = [5_000, 10_000, 20_000, 40_000, 70_000, 100_000];

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, n_qubits: usize) -> Self {
        Self {
            kind,
            n_qubits: Some(n_qubits),
            k: 2,
            l_grid: None,
            m_grid: None,
            seeds: None,
            state: None,
            state_seed: 0,
            seed_base: 0,
            exact_data: false,
            n_values: None,
            epsilons: None,
            window: 3,
            window_shots: 8192,
            fit: None,
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HltError::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn n(&self) -> Result<usize> {
        self.n_qubits.ok_or_else(|| HltError::InvalidArgument(format!("{} needs n_qubits", self.kind)))
    }

    pub fn m_values(&self) -> Vec<u64> {
        self.m_grid.clone().unwrap_or_else(|| DEFAULT_M_GRID.to_vec())
    }

    pub fn seed_values(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (0..10).collect())
    }

    pub fn state_spec(&self) -> StateSpec {
        self.state.unwrap_or(match self.kind {
            ExperimentKind::GhzStudy => StateSpec::GhzReduced,
            _ => StateSpec::TransverseIsing,
        })
    }

    /// Default cutoffs follow the figure conventions for 5 and 8 qubits.
    pub fn l_values(&self) -> Vec<LValue> {
        if let Some(g) = &self.l_grid {
            return g.clone();
        }
        let counts: &[usize] = match (self.kind, self.n_qubits) {
            (ExperimentKind::Convergence | ExperimentKind::GhzStudy, _) => &[],
            (_, Some(5)) => &[10, 15, 20],
            (_, Some(8)) => &[10, 20, 30, 40],
            _ => &[],
        };
        let mut v: Vec<LValue> = counts.iter().map(|&c| LValue::Count(c)).collect();
        v.push(LValue::Named("max".into()));
        v
    }

    pub fn fit_options(&self) -> FitOptions {
        self.fit.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("k must be positive");
        }
        let seeds = self.seed_values();
        if seeds.is_empty() {
            return invalid("seed list is empty");
        }
        if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
            return invalid("seeds must be distinct");
        }
        if self.m_values().is_empty() || self.m_values().contains(&0) {
            return invalid("m grid must be non-empty and positive");
        }
        if self.l_values().is_empty() {
            return invalid("l grid is empty");
        }
        match self.state_spec() {
            StateSpec::PerturbedIsing { eta } | StateSpec::PerturbedGhz { eta, .. } if !(0.0..1.0).contains(&eta) => {
                return invalid(format!("perturbation weight {eta} outside [0, 1)"));
            }
            StateSpec::PerturbedGhz { a, .. } if !(a > 0.0) => return invalid("GHZ coupling must be positive"),
            _ => {}
        }
        if self.kind == ExperimentKind::ErrorOracle {
            let ns = self.n_values.as_deref().unwrap_or_default();
            let eps = self.epsilons.as_deref().unwrap_or_default();
            if ns.is_empty() || eps.is_empty() {
                return invalid("error-oracle needs n_values and epsilons");
            }
            if eps.iter().any(|&e| !(e > 0.0)) {
                return invalid("noise amplitudes must be positive");
            }
            if ns.iter().any(|&n| n < self.k + 2) {
                return invalid(format!("oracle sizes must be at least {}", self.k + 2));
            }
        } else {
            let n = self.n()?;
            if n < self.k + 2 {
                return invalid(format!("{n} qubits is below the minimum {} for k = {}", self.k + 2, self.k));
            }
            if self.kind == ExperimentKind::GhzStudy && n < 3 {
                return invalid("ghz-study needs at least 3 qubits");
            }
            if matches!(self.kind, ExperimentKind::SubsystemVerify | ExperimentKind::GhzStudy)
                && (self.window == 0 || self.window > n)
            {
                return invalid(format!("window {} does not fit {n} qubits", self.window));
            }
            let l_max = OperatorBasis::local(n, self.k)?.len();
            for l in self.l_values() {
                l.resolve(l_max)?;
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Strings of contiguous support and span exactly `width`.
fn full_windows(n: usize, width: usize) -> Vec<PauliString> {
    let count = 3usize.pow(width as u32);
    let mut out = Vec::new();
    for start in 0..=n.saturating_sub(width) {
        for j in 0..count {
            let word: Vec<Pauli> = (0..width)
                .map(|t| Pauli::NON_IDENTITY[(j / 3usize.pow((width - 1 - t) as u32)) % 3])
                .collect();
            out.push(PauliString::embedded(n, start, &word).expect("window fits"));
        }
    }
    out
}

/// `base + dH` with `dH` a random combination of 3-site strings carrying
/// fraction `eta` of the total squared coefficient weight.
pub fn perturb_hamiltonian(base: &HamiltonianOperator, eta: f64, seed: u64) -> Result<HamiltonianOperator> {
    if !(0.0..1.0).contains(&eta) {
        return invalid(format!("perturbation weight {eta} outside [0, 1)"));
    }
    let n = base.n_qubits();
    if n < 3 {
        return invalid("3-site perturbations need at least 3 qubits");
    }
    let basis = Arc::new(OperatorBasis::local(n, 3.max(base.basis().max_locality()))?);
    let mut c = vec![0.0; basis.len()];
    for (p, v) in base.terms() {
        let i = basis.position(p).ok_or_else(|| HltError::InvalidArgument(format!("{p} outside the 3-local basis")))?;
        c[i] += v;
    }
    if eta > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = full_windows(n, 3);
        let raw: Vec<f64> = terms.iter().map(|_| rng.sample(StandardNormal)).collect();
        let raw_sq: f64 = raw.iter().map(|x| x * x).sum();
        let target = eta / (1.0 - eta) * base.norm().powi(2);
        let scale = (target / raw_sq).sqrt();
        for (p, r) in terms.iter().zip(raw) {
            c[basis.position(p).expect("3-site string in basis")] += scale * r;
        }
    }
    HamiltonianOperator::new(basis, c)
}

pub fn make_perturbed_ising(n: usize, eta: f64, seed: u64) -> Result<HamiltonianOperator> {
    if eta == 0.0 {
        return transverse_ising(n);
    }
    perturb_hamiltonian(&transverse_ising(n)?, eta, seed)
}

/// Prepared target: exact state and, when it is a Gibbs state, its Hamiltonian.
#[derive(Debug, Clone)]
pub struct TargetState {
    pub rho: DensityMatrix,
    pub hamiltonian: Option<HamiltonianOperator>,
}

pub fn build_state(spec: StateSpec, n: usize, state_seed: u64) -> Result<TargetState> {
    let h = match spec {
        StateSpec::GhzReduced => return Ok(TargetState { rho: ghz_reduced_state(n)?, hamiltonian: None }),
        StateSpec::TransverseIsing => transverse_ising(n)?,
        StateSpec::PerturbedIsing { eta } => make_perturbed_ising(n, eta, state_seed)?,
        StateSpec::PerturbedGhz { eta, a } => perturb_hamiltonian(&ghz_hamiltonian(n, a)?, eta, state_seed)?,
    };
    Ok(TargetState { rho: gibbs_state(&h)?, hamiltonian: Some(h) })
}

/// One CSV line of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub job: String,
    pub n_qubits: usize,
    pub epsilon: Option<f64>,
    pub l: Option<usize>,
    pub m: Option<u64>,
    pub seed: u64,
    pub status: String,
    pub fidelity: Option<f64>,
    pub loss: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// experiment-specific headline number
    pub metric: Option<f64>,
    /// `key=value` pairs separated by `;`
    pub extra: String,
    pub error: String,
}

impl RunRow {
    fn blank(job: &str, n_qubits: usize, seed: u64) -> Self {
        Self {
            job: job.to_string(),
            n_qubits,
            epsilon: None,
            l: None,
            m: None,
            seed,
            status: "ok".into(),
            fidelity: None,
            loss: None,
            iterations: None,
            converged: None,
            metric: None,
            extra: String::new(),
            error: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Value of `key` in the extra column.
    pub fn extra_value(&self, key: &str) -> Option<f64> {
        self.extra.split(';').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then(|| v.parse().ok()).flatten()
        })
    }

    fn push_extra(&mut self, key: &str, v: f64) {
        if !self.extra.is_empty() {
            self.extra.push(';');
        }
        self.extra.push_str(&format!("{key}={v:?}"));
    }
}

/// Mean and sample standard deviation per grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n_qubits: usize,
    pub epsilon: Option<f64>,
    pub l: Option<usize>,
    pub m: Option<u64>,
    pub count: usize,
    pub failures: usize,
    pub fidelity_mean: Option<f64>,
    pub fidelity_sd: Option<f64>,
    pub metric_mean: Option<f64>,
    pub metric_sd: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobTiming {
    pub job: String,
    pub seconds: f64,
    pub resumed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub artifact_version: String,
    pub rows: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub timings: Vec<JobTiming>,
    /// the run-level mean of the oracle ratio, when applicable
    pub mean_metric: Option<f64>,
}

impl RunRecord {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    type Key = (usize, Option<u64>, Option<usize>, Option<u64>);
    let mut groups: BTreeMap<Key, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.n_qubits, r.epsilon.map(f64::to_bits), r.l, r.m)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((n, eps, l, m), rs)| {
            let ok: Vec<&&RunRow> = rs.iter().filter(|r| r.is_ok()).collect();
            let stat = |f: &dyn Fn(&RunRow) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if v.is_empty() {
                    (None, None)
                } else {
                    let (a, b) = mean_sd(&v);
                    (Some(a), Some(b))
                }
            };
            let (fm, fs) = stat(&|r| r.fidelity);
            let (mm, ms) = stat(&|r| r.metric);
            SummaryRow {
                n_qubits: n,
                epsilon: eps.map(f64::from_bits),
                l,
                m,
                count: ok.len(),
                failures: rs.len() - ok.len(),
                fidelity_mean: fm,
                fidelity_sd: fs,
                metric_mean: mm,
                metric_sd: ms,
            }
        })
        .collect()
}

/// How a run is executed and persisted.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub resume: bool,
}

struct Job {
    id: String,
    seed: u64,
    m: Option<u64>,
    n: usize,
    epsilon: Option<(usize, f64)>,
}

fn dataset_for(cfg: &ExperimentConfig, rho: &DensityMatrix, m: u64, seed: u64) -> Result<MeasurementDataset> {
    let plan = build_overlapping_plan(rho.n_qubits(), cfg.k, m)?;
    if cfg.exact_data {
        exact_dataset(rho, &plan)
    } else {
        sample(rho, &plan, derive_seed(cfg.seed_base, &[m, seed]))
    }
}

/// HLT reconstruction for each cutoff of `ls` from one dataset.
fn hlt_states(
    cfg: &ExperimentConfig,
    data: &MeasurementDataset,
    ls: &[usize],
) -> Result<Vec<(usize, DensityMatrix, crate::ansatz::FitReport, f64)>> {
    let km = build_constraint_matrix(ExpectationSource::Dataset(data), cfg.k)?;
    let full = svd_cutoff(&km, km.ncols())?;
    let sigma_min = full.spectrum()[0];
    let options = cfg.fit_options();
    ls.iter()
        .map(|&l| {
            let ansatz = SpectralAnsatz::new(full.truncated(l)?, km.cols().clone(), vec![0.0; l])?;
            let (fitted, report) = fit_ansatz(&ansatz, data, &options)?;
            Ok((l, reconstruct_state(&fitted)?, report, sigma_min))
        })
        .collect()
}

fn resolved_ls(cfg: &ExperimentConfig, n: usize) -> Result<Vec<usize>> {
    let l_max = OperatorBasis::local(n, cfg.k)?.len();
    let mut v: Vec<usize> = cfg.l_values().iter().map(|l| l.resolve(l_max)).collect::<Result<_>>()?;
    v.dedup();
    Ok(v)
}

struct Context {
    target: Option<TargetState>,
    exact_top: Vec<f64>,
}

fn run_job(cfg: &ExperimentConfig, ctx: &Context, job: &Job) -> Result<Vec<RunRow>> {
    let base = RunRow::blank(&job.id, job.n, job.seed);
    match cfg.kind {
        ExperimentKind::HltSweep | ExperimentKind::EigenRecovery | ExperimentKind::SubsystemVerify
        | ExperimentKind::GhzStudy => {
            let target = ctx.target.as_ref().expect("state prepared");
            let m = job.m.expect("m grid job");
            let data = dataset_for(cfg, &target.rho, m, job.seed)?;
            let ls = resolved_ls(cfg, job.n)?;
            let windows = match cfg.kind {
                ExperimentKind::SubsystemVerify => {
                    let ws = sliding_windows(job.n, cfg.window)?;
                    ws.into_iter()
                        .enumerate()
                        .map(|(i, w)| {
                            let s = derive_seed(cfg.seed_base, &[u64::MAX, m, job.seed, i as u64]);
                            let est = subsystem_qst(SubsystemSource::State(&target.rho), w.clone(), Some(cfg.window_shots), s)?;
                            Ok((w, est))
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                ExperimentKind::GhzStudy => sliding_windows(job.n, cfg.window)?
                    .into_iter()
                    .map(|w| Ok((w.clone(), subsystem_qst(SubsystemSource::Dataset(&data), w, None, 0)?)))
                    .collect::<Result<Vec<_>>>()?,
                _ => Vec::new(),
            };
            let mut rows = Vec::new();
            for (l, state, report, sigma_min) in hlt_states(cfg, &data, &ls)? {
                let mut row = base.clone();
                row.l = Some(l);
                row.m = Some(m);
                row.fidelity = Some(fidelity(&state, &target.rho)?);
                row.loss = Some(report.loss_value);
                row.iterations = Some(report.iterations);
                row.converged = Some(report.converged);
                row.push_extra("sigma_min", sigma_min);
                match cfg.kind {
                    ExperimentKind::EigenRecovery => {
                        let top = top_eigenvalues(&state, ctx.exact_top.len())?;
                        let worst = top.iter().zip(&ctx.exact_top).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        for (i, (a, b)) in top.iter().zip(&ctx.exact_top).enumerate() {
                            row.push_extra(&format!("mu{}", i + 1), *a);
                            row.push_extra(&format!("exact_mu{}", i + 1), *b);
                        }
                        row.metric = Some(worst);
                    }
                    ExperimentKind::SubsystemVerify | ExperimentKind::GhzStudy => {
                        let fs = window_fidelities(&state, &windows)?;
                        let (mean, _) = mean_sd(&fs);
                        row.metric = Some(mean);
                        row.push_extra("window_min", fs.iter().copied().fold(1.0, f64::min));
                    }
                    _ => row.metric = row.fidelity,
                }
                rows.push(row);
            }
            Ok(rows)
        }
        ExperimentKind::QstSweep => {
            let target = ctx.target.as_ref().expect("state prepared");
            let m = job.m.expect("m grid job");
            let plan = qst_plan_with_total(job.n, m)?;
            let data = if cfg.exact_data {
                exact_dataset(&target.rho, &plan)?
            } else {
                sample(&target.rho, &plan, derive_seed(cfg.seed_base, &[m, job.seed]))?
            };
            let est = full_qst(&data)?;
            let mut row = base;
            row.m = Some(m);
            row.fidelity = Some(fidelity(&est, &target.rho)?);
            row.metric = row.fidelity;
            row.push_extra("shots_per_basis", plan.shots()[0] as f64);
            Ok(vec![row])
        }
        ExperimentKind::ErrorOracle => {
            let (ei, eps) = job.epsilon.expect("oracle job");
            let grid = match &cfg.l_grid {
                None => LGrid::all(),
                Some(ls) => {
                    let l_max = OperatorBasis::local(job.n, cfg.k)?.len();
                    let mut v = Vec::new();
                    for l in ls {
                        v.push(l.resolve(l_max)?);
                    }
                    LGrid::Values(v)
                }
            };
            let s = derive_seed(cfg.seed_base, &[job.n as u64, ei as u64, job.seed]);
            Ok(oracle_trial(job.n, eps, &grid, s)?
                .into_iter()
                .map(|(l, err, est)| {
                    let mut row = base.clone();
                    row.epsilon = Some(eps);
                    row.l = Some(l);
                    row.metric = Some(err / est);
                    row.push_extra("error", err);
                    row.push_extra("estimate", est);
                    row
                })
                .collect())
        }
        ExperimentKind::Convergence => {
            let target = ctx.target.as_ref().expect("state prepared");
            let l_max = OperatorBasis::local(job.n, cfg.k)?.len();
            let mut ms = cfg.m_values();
            ms.sort_unstable();
            ms.dedup();
            let m_max = *ms.last().expect("non-empty grid");
            let mut states = Vec::with_capacity(ms.len());
            for &m in &ms {
                let data = dataset_for(cfg, &target.rho, m, job.seed)?;
                let (_, st, report, sigma_min) = hlt_states(cfg, &data, &[l_max])?.remove(0);
                states.push((m, st, report, sigma_min));
            }
            let reference = states.last().expect("m_max state").1.clone();
            states
                .into_iter()
                .map(|(m, st, report, sigma_min)| {
                    let mut row = base.clone();
                    row.l = Some(l_max);
                    row.m = Some(m);
                    row.fidelity = Some(fidelity(&st, &target.rho)?);
                    row.loss = Some(report.loss_value);
                    row.iterations = Some(report.iterations);
                    row.converged = Some(report.converged);
                    row.metric = Some(if m == m_max { 0.0 } else { 1.0 - fidelity(&st, &reference)? });
                    row.push_extra("sigma_min", sigma_min);
                    Ok(row)
                })
                .collect()
        }
    }
}

fn jobs_for(cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    let seeds = cfg.seed_values();
    let mut jobs = Vec::new();
    match cfg.kind {
        ExperimentKind::ErrorOracle => {
            for &n in cfg.n_values.as_deref().unwrap_or_default() {
                for (ei, &eps) in cfg.epsilons.as_deref().unwrap_or_default().iter().enumerate() {
                    for &seed in &seeds {
                        jobs.push(Job { id: format!("n={n};eps={eps:e};seed={seed}"), seed, m: None, n, epsilon: Some((ei, eps)) });
                    }
                }
            }
        }
        ExperimentKind::Convergence => {
            let n = cfg.n()?;
            for &seed in &seeds {
                jobs.push(Job { id: format!("seed={seed}"), seed, m: None, n, epsilon: None });
            }
        }
        _ => {
            let n = cfg.n()?;
            for &m in &cfg.m_values() {
                for &seed in &seeds {
                    jobs.push(Job { id: format!("m={m};seed={seed}"), seed, m: Some(m), n, epsilon: None });
                }
            }
        }
    }
    Ok(jobs)
}

const RESULTS_FILE: &str = "results.csv";
const SUMMARY_FILE: &str = "summary.csv";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: ExperimentKind,
    config_hash: String,
    artifact_version: String,
    config: ExperimentConfig,
    complete: bool,
    jobs: usize,
    failures: usize,
    timings: Vec<serde_json::Value>,
    nullity: Option<usize>,
    z_only_strings: Option<usize>,
}

fn read_rows(path: &Path) -> Result<Vec<RunRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HltError::Io(std::io::Error::other(e)))?;
    rdr.deserialize().map(|r| r.map_err(|e| HltError::Io(std::io::Error::other(e)))).collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HltError::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| HltError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows as jobs finish so an interrupted run can resume.
struct Appender {
    writer: csv::Writer<fs::File>,
}

impl Appender {
    fn open(path: &Path, fresh: bool) -> Result<Self> {
        let exists = path.exists() && !fresh;
        let file = fs::OpenOptions::new().create(true).append(exists).write(true).truncate(!exists).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        Ok(Self { writer })
    }

    fn push(&mut self, rows: &[RunRow]) -> Result<()> {
        for r in rows {
            self.writer.serialize(r).map_err(|e| HltError::Io(std::io::Error::other(e)))?;
        }
        self.writer.flush()?;
        Ok(())
    }
}

/// Null-space diagnostics of the exact constraint matrix: (nullity, number of Z-only terms).
pub fn ghz_nullity(rho: &DensityMatrix, k: usize) -> Result<(usize, usize)> {
    let km = build_constraint_matrix(ExpectationSource::State(rho), k)?;
    let cut = svd_cutoff(&km, km.ncols())?;
    let nullity = cut.spectrum().iter().filter(|&&s| s < 1e-10).count();
    let z_only = km.cols().iter().filter(|p| p.letters().iter().all(|&l| l == Pauli::I || l == Pauli::Z)).count();
    Ok((nullity, z_only))
}

/// Runs every grid point of `cfg`, persisting to `options.out_dir` when set.
///
/// Failures of individual points are recorded as rows with status `failed`.
pub fn run_experiment(cfg: &ExperimentConfig, options: &RunOptions) -> Result<RunRecord> {
    cfg.validate()?;
    let hash = cfg.hash();
    let jobs = jobs_for(cfg)?;
    let ctx = match cfg.kind {
        ExperimentKind::ErrorOracle => Context { target: None, exact_top: Vec::new() },
        _ => {
            let n = cfg.n()?;
            let target = build_state(cfg.state_spec(), n, cfg.state_seed)?;
            let exact_top = if cfg.kind == ExperimentKind::EigenRecovery { top_eigenvalues(&target.rho, 4)? } else { Vec::new() };
            Context { target: Some(target), exact_top }
        }
    };
    let nullity = match (cfg.kind, &ctx.target) {
        (ExperimentKind::GhzStudy, Some(t)) => Some(ghz_nullity(&t.rho, cfg.k)?),
        _ => None,
    };

    let mut done: HashMap<String, Vec<RunRow>> = HashMap::new();
    if let Some(dir) = &options.out_dir {
        fs::create_dir_all(dir)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if options.resume && manifest_path.exists() {
            let old: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
                .map_err(|e| HltError::InvalidArgument(format!("unreadable manifest: {e}")))?;
            if old.config_hash != hash {
                return invalid(format!(
                    "{} holds a run of a different configuration ({})",
                    dir.display(),
                    old.config_hash
                ));
            }
            for row in read_rows(&dir.join(RESULTS_FILE))? {
                done.entry(row.job.clone()).or_default().push(row);
            }
            done.retain(|_, rows| rows.iter().all(RunRow::is_ok));
        }
    }
    let appender = match &options.out_dir {
        Some(dir) => {
            let mut a = Appender::open(&dir.join(RESULTS_FILE), true)?;
            for job in &jobs {
                if let Some(rows) = done.get(&job.id) {
                    a.push(rows)?;
                }
            }
            Some(Mutex::new(a))
        }
        None => None,
    };

    let results: Vec<(Vec<RunRow>, JobTiming)> = jobs
        .par_iter()
        .map(|job| {
            if let Some(rows) = done.get(&job.id) {
                return Ok((rows.clone(), JobTiming { job: job.id.clone(), seconds: 0.0, resumed: true }));
            }
            let clock = Instant::now();
            let rows = match run_job(cfg, &ctx, job) {
                Ok(rows) => rows,
                Err(e) => {
                    log::warn!("job {} failed: {e}", job.id);
                    let mut row = RunRow::blank(&job.id, job.n, job.seed);
                    row.m = job.m;
                    row.epsilon = job.epsilon.map(|(_, e)| e);
                    row.status = "failed".into();
                    row.error = e.to_string();
                    vec![row]
                }
            };
            let seconds = clock.elapsed().as_secs_f64();
            log::info!("{} {} finished in {seconds:.1}s", cfg.kind, job.id);
            if let Some(a) = &appender {
                a.lock().expect("writer lock").push(&rows)?;
            }
            Ok((rows, JobTiming { job: job.id.clone(), seconds, resumed: false }))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        timings.push(t);
    }
    let summary = summarize(&rows);
    let ok_metrics: Vec<f64> = rows.iter().filter(|r| r.is_ok()).filter_map(|r| r.metric).filter(|x| x.is_finite()).collect();
    let mean_metric = (cfg.kind == ExperimentKind::ErrorOracle && !ok_metrics.is_empty()).then(|| mean_sd(&ok_metrics).0);
    let record = RunRecord {
        kind: cfg.kind,
        config_hash: hash.clone(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        rows,
        summary,
        timings,
        mean_metric,
    };
    if let Some(dir) = &options.out_dir {
        drop(appender);
        write_csv(&dir.join(RESULTS_FILE), &record.rows)?;
        write_csv(&dir.join(SUMMARY_FILE), &record.summary)?;
        let manifest = Manifest {
            kind: cfg.kind,
            config_hash: hash,
            artifact_version: ARTIFACT_VERSION.to_string(),
            config: cfg.clone(),
            complete: true,
            jobs: jobs.len(),
            failures: record.failures(),
            timings: record.timings.iter().map(|t| serde_json::to_value(t).expect("timing")).collect(),
            nullity: nullity.map(|x| x.0),
            z_only_strings: nullity.map(|x| x.1),
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest).map_err(|e| HltError::Io(std::io::Error::other(e)))?,
        )?;
    }
    Ok(record)
}

/// Whether the means of a curve never rise by more than the combined error bars.
pub fn monotone_within_error_bars(points: &[(f64, f64)]) -> bool {
    points.windows(2).all(|w| w[1].0 <= w[0].0 + w[0].1 + w[1].1)
}

/// Largest increase between neighbouring means in units of their pooled standard deviation.
pub fn largest_excursion(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let pooled = ((w[0].1.powi(2) + w[1].1.powi(2)) / 2.0).sqrt();
            let rise = w[1].0 - w[0].0;
            if pooled > 0.0 { rise / pooled } else if rise > 0.0 { f64::INFINITY } else { 0.0 }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(mean, sd)` of the metric per `m` from summary rows, ordered by `m`.
pub fn metric_curve(summary: &[SummaryRow]) -> Vec<(u64, f64, f64)> {
    let mut v: Vec<(u64, f64, f64)> = summary
        .iter()
        .filter_map(|s| Some((s.m?, s.metric_mean?, s.metric_sd?)))
        .collect();
    v.sort_by_key(|x| x.0);
    v
}

/// Largest rise along each single seed's metric curve, in units of the pooled
/// seed-to-seed standard deviation at the two points. Returns `(seed, rise)`.
pub fn realization_excursions(rows: &[RunRow], summary: &[SummaryRow], m_from: u64) -> Vec<(u64, f64)> {
    let curve = metric_curve(summary);
    let sd_at = |m: u64| curve.iter().find(|p| p.0 == m).map(|p| p.2);
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .into_iter()
        .map(|seed| {
            let mut pts: Vec<(u64, f64)> = rows
                .iter()
                .filter(|r| r.seed == seed && r.m.is_some_and(|m| m >= m_from))
                .filter_map(|r| Some((r.m?, r.metric?)))
                .collect();
            pts.sort_by_key(|p| p.0);
            let with_sd: Vec<(f64, f64)> = pts.iter().map(|&(m, x)| (x, sd_at(m).unwrap_or(0.0))).collect();
            (seed, if with_sd.len() < 2 { f64::NEG_INFINITY } else { largest_excursion(&with_sd) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{pauli_decompose, DenseOperator};

    #[test]
    fn state_specs_parse() {
        assert_eq!("transverse-ising".parse::<StateSpec>().unwrap(), StateSpec::TransverseIsing);
        assert_eq!("perturbed-ising(0.25)".parse::<StateSpec>().unwrap(), StateSpec::PerturbedIsing { eta: 0.25 });
        assert_eq!(
            "perturbed-ghz(0.3, 1.5)".parse::<StateSpec>().unwrap(),
            StateSpec::PerturbedGhz { eta: 0.3, a: 1.5 }
        );
        assert!("perturbed-ising".parse::<StateSpec>().is_err());
        assert!("heisenberg".parse::<StateSpec>().is_err());
        let s = StateSpec::PerturbedGhz { eta: 0.3, a: 2.0 };
        assert_eq!(s.to_string().parse::<StateSpec>().unwrap(), s);
    }

    #[test]
    fn config_parsing_and_validation() {
        let text = r#"
kind = "hlt-sweep"
n_qubits = 5
l_grid = [20, "max"]
m_grid = [50000]
seeds = [1, 2]
state = "perturbed-ising(0.1)"
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.l_values(), vec![LValue::Count(20), LValue::Named("max".into())]);
        assert_eq!(resolved_ls(&cfg, 5).unwrap(), vec![20, 51]);
        assert!(ExperimentConfig::from_toml(&format!("{text}\nbogus = 1")).is_err());
        assert!(ExperimentConfig::from_toml(&text.replace("[1, 2]", "[1, 1]")).is_err());
        assert!(ExperimentConfig::from_toml(&text.replace("0.1", "1.0")).is_err());
        assert!(ExperimentConfig::from_toml(&text.replace("20,", "60,")).is_err());
        assert!(ExperimentConfig::from_toml(&text.replace("n_qubits = 5", "n_qubits = 3")).is_err());
        let mut other = cfg.clone();
        other.output = Some("elsewhere".into());
        assert_eq!(other.hash(), cfg.hash());
        other.seed_base = 9;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn default_grids() {
        let cfg = ExperimentConfig::new(ExperimentKind::HltSweep, 8);
        assert_eq!(resolved_ls(&cfg, 8).unwrap(), vec![10, 20, 30, 40, 87]);
        assert_eq!(cfg.m_values().first(), Some(&5_000));
        assert_eq!(cfg.m_values().last(), Some(&100_000));
        assert_eq!(cfg.seed_values().len(), 10);
    }

    #[test]
    fn perturbation_weights() {
        let h0 = make_perturbed_ising(5, 0.0, 3).unwrap();
        assert_eq!(h0.coefficients(), transverse_ising(5).unwrap().coefficients());
        let h = make_perturbed_ising(5, 0.0468, 3).unwrap();
        let dense = DenseOperator::from_hamiltonian(&h).unwrap();
        let d = pauli_decompose(&dense, &OperatorBasis::local(5, 2).unwrap()).unwrap();
        assert!((d.weights.higher - 0.0468).abs() < 1e-6, "{}", d.weights.higher);
        assert!(make_perturbed_ising(5, 1.0, 3).is_err());
    }

    #[test]
    fn exact_sweep_point_is_consistent() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::HltSweep, 4);
        cfg.l_grid = Some(vec![LValue::Named("max".into())]);
        cfg.m_grid = Some(vec![81]);
        cfg.seeds = Some(vec![0]);
        cfg.exact_data = true;
        let rec = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert!(rec.rows[0].fidelity.unwrap() >= 1.0 - 1e-6);
    }

    #[test]
    fn persistence_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::QstSweep, 4);
        cfg.m_grid = Some(vec![8100, 16200]);
        cfg.seeds = Some(vec![0, 1]);
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), resume: false };
        let first = run_experiment(&cfg, &opts).unwrap();
        assert_eq!(first.rows.len(), 4);
        assert_eq!(first.failures(), 0);
        let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 5);

        let resumed = run_experiment(&cfg, &RunOptions { resume: true, ..opts.clone() }).unwrap();
        assert!(resumed.timings.iter().all(|t| t.resumed));
        assert_eq!(resumed.rows, first.rows);
        assert_eq!(fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap(), text);

        let mut changed = cfg.clone();
        changed.seed_base = 5;
        assert!(run_experiment(&changed, &RunOptions { resume: true, ..opts }).is_err());
    }

    #[test]
    fn oracle_rows_carry_ratios() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::ErrorOracle, 4);
        cfg.n_qubits = None;
        cfg.n_values = Some(vec![4]);
        cfg.epsilons = Some(vec![1e-3]);
        cfg.seeds = Some(vec![0, 1]);
        cfg.l_grid = Some(vec![LValue::Count(5), LValue::Count(20)]);
        let rec = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(rec.rows.len(), 4);
        let mean = rec.mean_metric.unwrap();
        assert!(mean > 0.3 && mean < 2.0, "{mean}");
    }

    #[test]
    fn curve_helpers() {
        assert!(monotone_within_error_bars(&[(0.1, 0.01), (0.05, 0.01), (0.055, 0.01)]));
        assert!(!monotone_within_error_bars(&[(0.1, 0.01), (0.2, 0.01)]));
        assert!((largest_excursion(&[(0.1, 0.01), (0.13, 0.01)]) - 3.0).abs() < 1e-9);

        // seed 0 rises at the middle point, seed 1 falls throughout
        let mut rows = Vec::new();
        for (seed, curve) in [(0u64, [0.10, 0.02, 0.06]), (1, [0.12, 0.08, 0.04])] {
            for (m, x) in [1000u64, 2000, 3000].into_iter().zip(curve) {
                let mut r = RunRow::blank("j", 4, seed);
                r.m = Some(m);
                r.metric = Some(x);
                rows.push(r);
            }
        }
        let ex = realization_excursions(&rows, &summarize(&rows), 0);
        assert_eq!(ex.len(), 2);
        let sd = |a: f64, b: f64| ((a - b) * (a - b) / 2.0).sqrt();
        let pooled = ((sd(0.02, 0.08).powi(2) + sd(0.06, 0.04).powi(2)) / 2.0).sqrt();
        assert!((ex[0].1 - 0.04 / pooled).abs() < 1e-9);
        assert!(ex[1].1 < 0.0);
        assert!(realization_excursions(&rows, &summarize(&rows), 3000)[0].1.is_infinite());
    }

    #[test]
    fn ghz_nullity_counts() {
        let (nullity, z_only) = ghz_nullity(&ghz_reduced_state(5).unwrap(), 2).unwrap();
        assert!(nullity >= z_only);
        assert_eq!(z_only, 9);
    }
}
