//! Switch-system description and validation.
//!
//! A [`SwitchSystem`] bundles the mode-process data (labels, jump rates
//! `λ`, transition kernel `Q`, jump cap `M`, horizon `T`, initial mode)
//! with the per-mode state coefficients `A`, `B` and the per-transition
//! jump coefficients `C`. Systems are parsed from a JSON document and
//! validated up front — every consumer downstream may assume the
//! invariants hold (rows of `Q` sum to 1 with a zero diagonal, rates are
//! non-negative, shapes agree). Mode labels are arbitrary strings mapped
//! to dense indices at parse time; all numerical code works with indices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::subspace::Matrix;

/// Entries of `Q` at or below this threshold are treated as structural
/// zeros: the transition is unreachable and contributes neither to the
/// compensator nor to the subspace ladder.
pub const Q_SUPPORT_TOL: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config is not valid JSON: {0}")]
    Json(String),
    /// Validation failure, carrying the offending field path
    /// (e.g. `Q[0]`, `A.e1`, `lambda.e2`).
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("mode trajectory: {0}")]
    Trajectory(String),
}

impl ModelError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// `B` may be given once (mode-independent) or per mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawB {
    Single(Vec<Vec<f64>>),
    PerMode(BTreeMap<String, Vec<Vec<f64>>>),
}

/// On-disk shape of a system config. Field names match the JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawConfig {
    #[serde(rename = "N")]
    n: usize,
    d: usize,
    modes: Vec<String>,
    lambda: BTreeMap<String, f64>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    a: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: RawB,
    #[serde(rename = "C", default, skip_serializing_if = "BTreeMap::is_empty")]
    c: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "T")]
    t: f64,
    gamma0: String,
}

/// A validated piecewise-linear Markov switch system.
#[derive(Debug, Clone)]
pub struct SwitchSystem {
    n: usize,
    d: usize,
    modes: Vec<String>,
    lambda: Vec<f64>,
    q: Matrix,
    a: Vec<Matrix>,
    b: Vec<Matrix>,
    b_mode_independent: bool,
    /// Sparse jump coefficients keyed by (from, to); absent means zero.
    c: BTreeMap<(usize, usize), Matrix>,
    m_cap: usize,
    t_horizon: f64,
    gamma0: usize,
}

fn matrix_from_rows(
    path: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<Matrix, ModelError> {
    if rows.len() != nrows {
        return Err(ModelError::invalid(
            path,
            format!("expected {nrows} rows, found {}", rows.len()),
        ));
    }
    let mut m = Matrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(ModelError::invalid(
                format!("{path}[{i}]"),
                format!("expected {ncols} columns, found {}", row.len()),
            ));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::invalid(
                    format!("{path}[{i}][{j}]"),
                    "entries must be finite",
                ));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Parse a JSON system document and validate every structural invariant.
/// Errors carry the offending field path.
pub fn parse_system(document: &str) -> Result<SwitchSystem, ModelError> {
    let raw: RawConfig =
        serde_json::from_str(document).map_err(|e| ModelError::Json(e.to_string()))?;
    SwitchSystem::from_raw(raw)
}

impl SwitchSystem {
    fn from_raw(raw: RawConfig) -> Result<Self, ModelError> {
        if raw.n == 0 {
            return Err(ModelError::invalid(
                "N",
                "state dimension must be at least 1",
            ));
        }
        if raw.d == 0 {
            return Err(ModelError::invalid(
                "d",
                "control dimension must be at least 1",
            ));
        }
        if raw.modes.is_empty() {
            return Err(ModelError::invalid(
                "modes",
                "at least one mode is required",
            ));
        }
        let p = raw.modes.len();
        let mut seen = std::collections::BTreeSet::new();
        for (i, label) in raw.modes.iter().enumerate() {
            if !seen.insert(label.clone()) {
                return Err(ModelError::invalid(
                    format!("modes[{i}]"),
                    format!("duplicate mode label `{label}`"),
                ));
            }
        }
        let index_of = |label: &str| raw.modes.iter().position(|m| m == label);

        let mut lambda = vec![0.0; p];
        for (i, label) in raw.modes.iter().enumerate() {
            let rate = raw.lambda.get(label).ok_or_else(|| {
                ModelError::invalid(format!("lambda.{label}"), "missing jump rate")
            })?;
            if !rate.is_finite() || *rate < 0.0 {
                return Err(ModelError::invalid(
                    format!("lambda.{label}"),
                    format!("jump rate must be finite and ≥ 0, got {rate}"),
                ));
            }
            lambda[i] = *rate;
        }
        for label in raw.lambda.keys() {
            if index_of(label).is_none() {
                return Err(ModelError::invalid(
                    format!("lambda.{label}"),
                    "rate given for a label not listed in `modes`",
                ));
            }
        }

        let q = matrix_from_rows("Q", &raw.q, p, p)?;
        for i in 0..p {
            if q[(i, i)].abs() > 1e-12 {
                return Err(ModelError::invalid(
                    format!("Q[{i}][{i}]"),
                    format!(
                        "kernel diagonal must vanish (Q(γ,{{γ}}) = 0), got {}",
                        q[(i, i)]
                    ),
                ));
            }
            let mut row_sum = 0.0;
            for j in 0..p {
                if q[(i, j)] < 0.0 {
                    return Err(ModelError::invalid(
                        format!("Q[{i}][{j}]"),
                        format!("kernel entries must be ≥ 0, got {}", q[(i, j)]),
                    ));
                }
                row_sum += q[(i, j)];
            }
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(ModelError::invalid(
                    format!("Q[{i}]"),
                    format!("row sums to {row_sum}, each row must sum to 1"),
                ));
            }
        }

        let mut a = Vec::with_capacity(p);
        for label in &raw.modes {
            let rows = raw
                .a
                .get(label)
                .ok_or_else(|| ModelError::invalid(format!("A.{label}"), "missing drift matrix"))?;
            a.push(matrix_from_rows(&format!("A.{label}"), rows, raw.n, raw.n)?);
        }

        let (b, b_mode_independent) = match &raw.b {
            RawB::Single(rows) => {
                let m = matrix_from_rows("B", rows, raw.n, raw.d)?;
                (vec![m; p], true)
            }
            RawB::PerMode(map) => {
                let mut out = Vec::with_capacity(p);
                for label in &raw.modes {
                    let rows = map.get(label).ok_or_else(|| {
                        ModelError::invalid(format!("B.{label}"), "missing control matrix")
                    })?;
                    out.push(matrix_from_rows(&format!("B.{label}"), rows, raw.n, raw.d)?);
                }
                let independent = out.iter().all(|m| m == &out[0]);
                (out, independent)
            }
        };

        let mut c = BTreeMap::new();
        for (key, rows) in &raw.c {
            let (from, to) = key.split_once("->").ok_or_else(|| {
                ModelError::invalid(
                    format!("C.{key}"),
                    "jump keys must have the form `from->to`",
                )
            })?;
            let fi = index_of(from.trim()).ok_or_else(|| {
                ModelError::invalid(format!("C.{key}"), format!("unknown mode `{from}`"))
            })?;
            let ti = index_of(to.trim()).ok_or_else(|| {
                ModelError::invalid(format!("C.{key}"), format!("unknown mode `{to}`"))
            })?;
            c.insert(
                (fi, ti),
                matrix_from_rows(&format!("C.{key}"), rows, raw.n, raw.n)?,
            );
        }

        if raw.m == 0 {
            return Err(ModelError::invalid("M", "jump cap must be at least 1"));
        }
        if !raw.t.is_finite() || raw.t <= 0.0 {
            return Err(ModelError::invalid(
                "T",
                format!("horizon must be finite and > 0, got {}", raw.t),
            ));
        }
        let gamma0 = index_of(&raw.gamma0).ok_or_else(|| {
            ModelError::invalid(
                "gamma0",
                format!("initial mode `{}` is not listed in `modes`", raw.gamma0),
            )
        })?;

        Ok(SwitchSystem {
            n: raw.n,
            d: raw.d,
            modes: raw.modes,
            lambda,
            q,
            a,
            b,
            b_mode_independent,
            c,
            m_cap: raw.m,
            t_horizon: raw.t,
            gamma0,
        })
    }

    /// State dimension N.
    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Control dimension d.
    pub fn control_dim(&self) -> usize {
        self.d
    }

    /// Number of modes p.
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_labels(&self) -> &[String] {
        &self.modes
    }

    pub fn mode_label(&self, gamma: usize) -> &str {
        &self.modes[gamma]
    }

    /// Resolve a mode label to its dense index.
    pub fn mode_index(&self, label: &str) -> Result<usize, ModelError> {
        self.modes
            .iter()
            .position(|m| m == label)
            .ok_or_else(|| ModelError::UnknownMode(label.to_string()))
    }

    pub fn lambda(&self, gamma: usize) -> f64 {
        self.lambda[gamma]
    }

    pub fn q_entry(&self, from: usize, to: usize) -> f64 {
        self.q[(from, to)]
    }

    /// Whether the transition `from → to` has positive kernel mass.
    pub fn q_supported(&self, from: usize, to: usize) -> bool {
        self.q[(from, to)] > Q_SUPPORT_TOL
    }

    pub fn a(&self, gamma: usize) -> &Matrix {
        &self.a[gamma]
    }

    pub fn b(&self, gamma: usize) -> &Matrix {
        &self.b[gamma]
    }

    /// Whether every mode shares one control matrix (required by the
    /// subspace-ladder analysis).
    pub fn b_mode_independent(&self) -> bool {
        self.b_mode_independent
    }

    /// Jump coefficient `C(from, to)`; absent entries are zero.
    pub fn c_block(&self, from: usize, to: usize) -> Option<&Matrix> {
        self.c.get(&(from, to))
    }

    /// `I + C(from, to)` — the multiplicative jump map applied to the state.
    pub fn jump_map(&self, from: usize, to: usize) -> Matrix {
        let mut m = Matrix::identity(self.n, self.n);
        if let Some(c) = self.c.get(&(from, to)) {
            m += c;
        }
        m
    }

    /// `I + C(from, to)ᵀ` — the transposed jump map used by the dual flow.
    pub fn jump_map_t(&self, from: usize, to: usize) -> Matrix {
        self.jump_map(from, to).transpose()
    }

    /// Jump cap M: the mode process is frozen after M jumps.
    pub fn jump_cap(&self) -> usize {
        self.m_cap
    }

    /// Horizon T.
    pub fn horizon(&self) -> f64 {
        self.t_horizon
    }

    /// Initial mode index.
    pub fn gamma0(&self) -> usize {
        self.gamma0
    }

    /// Compensator drift `D(γ) = λ(γ) Σ_θ Q(γ,θ) C(γ,θ)` subtracted from
    /// the primal flow while the jump clock is active.
    pub fn compensator_drift(&self, gamma: usize) -> Matrix {
        let mut d = Matrix::zeros(self.n, self.n);
        for theta in 0..self.num_modes() {
            let w = self.lambda[gamma] * self.q[(gamma, theta)];
            if w > 0.0 {
                if let Some(c) = self.c.get(&(gamma, theta)) {
                    d += c * w;
                }
            }
        }
        d
    }

    /// Return a copy with the initial mode, horizon, or jump cap replaced.
    pub fn with_overrides(
        &self,
        gamma0: Option<&str>,
        t: Option<f64>,
        m: Option<usize>,
    ) -> Result<SwitchSystem, ModelError> {
        let mut out = self.clone();
        if let Some(label) = gamma0 {
            out.gamma0 = self.mode_index(label)?;
        }
        if let Some(t) = t {
            if !t.is_finite() || t <= 0.0 {
                return Err(ModelError::invalid(
                    "T",
                    format!("horizon must be finite and > 0, got {t}"),
                ));
            }
            out.t_horizon = t;
        }
        if let Some(m) = m {
            if m == 0 {
                return Err(ModelError::invalid("M", "jump cap must be at least 1"));
            }
            out.m_cap = m;
        }
        Ok(out)
    }

    fn to_raw(&self) -> RawConfig {
        let rows = |m: &Matrix| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        };
        let b = if self.b_mode_independent {
            RawB::Single(rows(&self.b[0]))
        } else {
            RawB::PerMode(
                self.modes
                    .iter()
                    .zip(&self.b)
                    .map(|(l, m)| (l.clone(), rows(m)))
                    .collect(),
            )
        };
        RawConfig {
            n: self.n,
            d: self.d,
            modes: self.modes.clone(),
            lambda: self
                .modes
                .iter()
                .zip(&self.lambda)
                .map(|(l, r)| (l.clone(), *r))
                .collect(),
            q: rows(&self.q),
            a: self
                .modes
                .iter()
                .zip(&self.a)
                .map(|(l, m)| (l.clone(), rows(m)))
                .collect(),
            b,
            c: self
                .c
                .iter()
                .map(|((f, t), m)| (format!("{}->{}", self.modes[*f], self.modes[*t]), rows(m)))
                .collect(),
            m: self.m_cap,
            t: self.t_horizon,
            gamma0: self.modes[self.gamma0].clone(),
        }
    }

    /// Canonical JSON rendering of the config (deterministic key order).
    /// Parsing it back yields an equivalent system.
    pub fn to_config_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("config serialization cannot fail")
    }

    /// SHA-256 of the canonical config JSON, hex-encoded; identifies the
    /// system in run reports.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_config_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The dual-drift generator `𝒜*(γ) = A(γ)ᵀ − λ(γ) Σ_θ Q(γ,θ)(C(γ,θ)ᵀ + I)`
/// driving the mode-ladder invariance analysis.
pub fn cal_a_star(system: &SwitchSystem, gamma: usize) -> Matrix {
    let n = system.state_dim();
    let mut jump_part = Matrix::zeros(n, n);
    for theta in 0..system.num_modes() {
        let w = system.lambda(gamma) * system.q_entry(gamma, theta);
        if w > 0.0 {
            jump_part += system.jump_map_t(gamma, theta) * w;
        }
    }
    system.a(gamma).transpose() - jump_part
}

/// Per-target jump intensities at elapsed level `level`, mode `gamma`,
/// time `t`: the vector `λ(γ)·Q(γ,·)` while jumps remain admissible
/// (`level ≤ M − 1` and `t ≤ T`), and zero after absorption.
pub fn jump_intensity(system: &SwitchSystem, level: usize, gamma: usize, t: f64) -> Vec<f64> {
    let p = system.num_modes();
    if level + 1 > system.jump_cap() || t > system.horizon() {
        return vec![0.0; p];
    }
    (0..p)
        .map(|theta| system.lambda(gamma) * system.q_entry(gamma, theta))
        .collect()
}

/// A realized mode path: the initial mode at time 0 followed by its jump
/// marks, each `(time, post-jump mode)`. The number of jumps is the
/// trajectory's *level*; it never exceeds the jump cap it was created
/// with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory {
    marks: Vec<(f64, usize)>,
    cap: usize,
}

impl ModeTrajectory {
    /// Trajectory sitting in the system's initial mode with no jumps yet.
    pub fn initial(system: &SwitchSystem) -> Self {
        ModeTrajectory {
            marks: vec![(0.0, system.gamma0())],
            cap: system.jump_cap(),
        }
    }

    /// Trajectory starting from an arbitrary mode (test helper).
    pub fn starting_at(gamma0: usize, cap: usize) -> Self {
        ModeTrajectory {
            marks: vec![(0.0, gamma0)],
            cap,
        }
    }

    /// Number of jumps so far.
    pub fn level(&self) -> usize {
        self.marks.len() - 1
    }

    /// Time of the most recent mark (0 for the initial segment).
    pub fn last_time(&self) -> f64 {
        self.marks.last().unwrap().0
    }

    /// Mode the trajectory currently occupies.
    pub fn current_mode(&self) -> usize {
        self.marks.last().unwrap().1
    }

    /// All marks, `(time, post-jump mode)`, the first being `(0, γ₀)`.
    pub fn marks(&self) -> &[(f64, usize)] {
        &self.marks
    }

    /// Mode occupied at time `t` (càdlàg: at a jump time the new mode).
    pub fn mode_at(&self, t: f64) -> usize {
        self.marks
            .iter()
            .rev()
            .find(|(s, _)| *s <= t)
            .map(|(_, g)| *g)
            .unwrap_or(self.marks[0].1)
    }

    /// Number of jumps that have occurred by time `t` (càdlàg, like
    /// [`ModeTrajectory::mode_at`]).
    pub fn level_at(&self, t: f64) -> usize {
        self.marks.iter().skip(1).filter(|(s, _)| *s <= t).count()
    }
}

/// Append a jump at time `t` into mode `gamma`. Fails if `t` does not
/// strictly increase the last mark time or if the trajectory has already
/// used up its jump cap.
pub fn concat(e: &ModeTrajectory, t: f64, gamma: usize) -> Result<ModeTrajectory, ModelError> {
    if !(t > e.last_time()) {
        return Err(ModelError::Trajectory(format!(
            "jump time {t} does not increase past {}",
            e.last_time()
        )));
    }
    if e.level() >= e.cap {
        return Err(ModelError::Trajectory(format!(
            "jump cap {} already reached",
            e.cap
        )));
    }
    let mut out = e.clone();
    out.marks.push((t, gamma));
    Ok(out)
}
