//! Exact null-controllability probe: the small-ε limit of the Riccati
//! family and the quadratic metric it induces.
//!
//! For a decreasing ε-schedule, [`k0_estimate`] solves the full Riccati
//! family with cost `ℬ(γ) = B(γ)B(γ)ᵀ` at every ε and collects the
//! bottom-level initial values `K₀^ε = K(0,γ₀,0)`. Their limit `k₀`
//! (approximated by the smallest scheduled ε) induces the pseudonorm
//! `p(y) = √⟨k₀ y, y⟩`; the system is exactly null-controllable from γ₀
//! precisely when that limit stays positive definite, and `p` then
//! measures how expensive each direction is to control. The diagnostics
//! carry enough per-ε data to judge convergence: eigenvalue lists, step
//! deltas, and a three-way verdict.

use thiserror::Error;

use crate::model::SwitchSystem;
use crate::riccati::{solve, LevelMMode, RiccatiError, RiccatiParams};
use crate::subspace::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("epsilon schedule: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("dimension mismatch: expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// A validated ε-schedule: at least three strictly decreasing positive
/// values, the last at most 1e−5 (the limit read-off must actually get
/// close to zero).
#[derive(Debug, Clone)]
pub struct EpsilonSchedule {
    values: Vec<f64>,
}

impl EpsilonSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.len() < 3 {
            return Err(MetricError::BadSchedule(format!(
                "need at least 3 values, got {}",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(MetricError::BadSchedule(format!(
                    "value {i} must be finite and > 0, got {v}"
                )));
            }
            if i > 0 && v >= values[i - 1] {
                return Err(MetricError::BadSchedule(format!(
                    "values must be strictly decreasing, but value {i} ({v}) ≥ value {} ({})",
                    i - 1,
                    values[i - 1]
                )));
            }
        }
        let last = *values.last().unwrap();
        if last > 1e-5 {
            return Err(MetricError::BadSchedule(format!(
                "the final value must be ≤ 1e-5 to approach the limit, got {last}"
            )));
        }
        Ok(EpsilonSchedule { values })
    }

    /// The stock schedule `1e−1, 1e−2, …, 1e−6`.
    pub fn default_schedule() -> Self {
        EpsilonSchedule {
            values: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Convergence verdict for the ε → 0 limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `k₀` is positive definite and the iterates have stagnated: the
    /// system is exactly null-controllable from γ₀.
    Exact,
    /// The smallest eigenvalue keeps shrinking by ≥ 30% per ε-decade
    /// across the schedule tail: the limit is degenerate.
    NotExact,
    /// Neither pattern is clear at this schedule.
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Exact => "exact",
            Verdict::NotExact => "not_exact",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Everything the ε-sweep produced, enough to re-judge the verdict under
/// different thresholds.
#[derive(Debug, Clone)]
pub struct K0Diagnostics {
    /// The schedule, largest ε first.
    pub epsilons: Vec<f64>,
    /// `K₀^ε` per schedule entry.
    pub k0_per_eps: Vec<Matrix>,
    /// The limit read-off: `K₀` at the smallest scheduled ε.
    pub k0: Matrix,
    /// Eigenvalues of each `K₀^ε`, sorted ascending.
    pub eigenvalues: Vec<Vec<f64>>,
    /// Spectral norms of consecutive differences, one per schedule step.
    pub deltas: Vec<f64>,
    /// Verdict under the default thresholds.
    pub verdict: Verdict,
    /// Positive-definiteness threshold used for [`K0Diagnostics::verdict`].
    pub delta_pd: f64,
    /// Stagnation threshold used for [`K0Diagnostics::verdict`].
    pub stagnation: f64,
    /// Terminal-level mode the sweep ran with.
    pub level_m_mode: LevelMMode,
    /// RK4 grid resolution the sweep ran with.
    pub grid_steps: usize,
}

fn sorted_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut eigs: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

fn spectral_norm_sym(m: &Matrix) -> f64 {
    sorted_eigenvalues(m)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Default positive-definiteness threshold, scaled by the mean eigenvalue
/// of the candidate limit: `1e−4 · (1 + trace(k₀)/N)`.
pub fn default_delta_pd(k0: &Matrix) -> f64 {
    1e-4 * (1.0 + k0.trace() / k0.nrows() as f64)
}

/// Default stagnation threshold on the final relative delta.
pub const DEFAULT_STAGNATION: f64 = 1e-2;

/// Sweep the schedule, solving the full Riccati family at each ε with
/// cost `B(γ)B(γ)ᵀ`, and diagnose the limit.
pub fn k0_estimate(
    system: &SwitchSystem,
    schedule: &EpsilonSchedule,
    grid_steps: usize,
    level_m_mode: LevelMMode,
) -> Result<K0Diagnostics, MetricError> {
    let gamma0 = system.gamma0();
    let mut k0_per_eps = Vec::with_capacity(schedule.values().len());
    for &eps in schedule.values() {
        let params = RiccatiParams::bbt(system, eps, grid_steps, level_m_mode);
        let sol = solve(system, params)?;
        let k = sol.k(0, gamma0, 0);
        // Enforce exact symmetry before any eigenvalue read-off.
        k0_per_eps.push((k + k.transpose()) * 0.5);
    }
    let k0 = k0_per_eps.last().unwrap().clone();
    let eigenvalues: Vec<Vec<f64>> = k0_per_eps.iter().map(sorted_eigenvalues).collect();
    let deltas: Vec<f64> = k0_per_eps
        .windows(2)
        .map(|w| spectral_norm_sym(&(&w[1] - &w[0])))
        .collect();
    let delta_pd = default_delta_pd(&k0);
    let mut diag = K0Diagnostics {
        epsilons: schedule.values().to_vec(),
        k0_per_eps,
        k0,
        eigenvalues,
        deltas,
        verdict: Verdict::Inconclusive,
        delta_pd,
        stagnation: DEFAULT_STAGNATION,
        level_m_mode,
        grid_steps,
    };
    diag.verdict = verdict(&diag, delta_pd, DEFAULT_STAGNATION);
    Ok(diag)
}

/// Judge the sweep:
///
/// * `Exact` — `λ_min(k₀) > delta_pd` and the final step delta is below
///   `stagnation · (1 + ‖k₀‖₂)`: the limit has settled and stayed
///   positive definite.
/// * `NotExact` — across the schedule tail (the last three ε) the
///   clamped smallest eigenvalue `max(λ_min, 0)` decays by at least 30%
///   per ε-decade: the limit is losing rank.
/// * `Inconclusive` otherwise.
pub fn verdict(diag: &K0Diagnostics, delta_pd: f64, stagnation: f64) -> Verdict {
    let lambda_min_k0 = *diag
        .eigenvalues
        .last()
        .and_then(|e| e.first())
        .expect("diagnostics hold at least three sweeps");
    let last_delta = *diag.deltas.last().expect("at least one delta");
    let k0_norm = spectral_norm_sym(&diag.k0);
    if lambda_min_k0 > delta_pd && last_delta <= stagnation * (1.0 + k0_norm) {
        return Verdict::Exact;
    }

    let tail = diag.epsilons.len().min(3);
    let start = diag.epsilons.len() - tail;
    let mut decaying = tail >= 2;
    for i in start..diag.epsilons.len() - 1 {
        let lam_a = diag.eigenvalues[i][0].max(0.0);
        let lam_b = diag.eigenvalues[i + 1][0].max(0.0);
        let decades = (diag.epsilons[i] / diag.epsilons[i + 1]).log10();
        if !(lam_b <= lam_a * 0.7f64.powf(decades)) {
            decaying = false;
        }
    }
    if decaying {
        Verdict::NotExact
    } else {
        Verdict::Inconclusive
    }
}

/// The pseudonorm `p(y) = √max(0, ⟨k₀ y, y⟩)` induced by the limit.
pub fn metric(diag: &K0Diagnostics, y: &Vector) -> Result<f64, MetricError> {
    let n = diag.k0.nrows();
    if y.len() != n {
        return Err(MetricError::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    let q = (&diag.k0 * y).dot(y);
    Ok(q.max(0.0).sqrt())
}
