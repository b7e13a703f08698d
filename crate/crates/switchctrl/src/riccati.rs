//! Coupled level/mode family of backward matrix Riccati equations.
//!
//! For a regularization weight `ε > 0` the family assigns to every jump
//! level `n ≤ M` and mode `γ` a symmetric matrix path `K(n,γ,·)` on
//! `[0,T]` with terminal value 0, integrated backward with classical RK4
//! on a uniform grid. Below the terminal level the right-hand side is
//!
//! ```text
//! K̇ = K·A(γ)ᵀ + A(γ)·K − ℬ(γ)
//!     + λ(γ) Σ_θ Q(γ,θ) [ fᵀ·(εI + K_next(θ))⁻¹·f − (K_next(θ) − K) ],
//! f = (C(γ,θ) + I)·K − K_next(θ),
//! ```
//!
//! coupling level `n` to level `n+1`. At the terminal level `M` no jumps
//! remain and the equation degrades to the linear Lyapunov/Gramian form
//! `K̇ = K·Aᵀ + A·K − ℬ` ([`LevelMMode::Gramian`]) or is pinned to zero
//! ([`LevelMMode::Zero`]).
//!
//! The small-ε limit of `K(0,γ₀,0)` drives the exact-controllability
//! metric in [`crate::metric`]; the level/mode gains derived from the
//! solution drive the dual feedback policy in [`crate::sim`].

use thiserror::Error;

use crate::model::SwitchSystem;
use crate::subspace::Matrix;

/// Grids coarser than this are rejected: the acceptance tolerances assume
/// at least a few hundred RK4 steps per unit horizon.
pub const MIN_GRID_STEPS: usize = 100;

/// Behavior of the terminal level `n = M`, where no jump coupling remains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelMMode {
    /// Integrate the uncoupled Lyapunov equation `K̇ = KAᵀ + AK − ℬ`
    /// (the finite-horizon controllability-Gramian flow). Default.
    Gramian,
    /// Pin the terminal level to the zero matrix.
    Zero,
}

impl LevelMMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LevelMMode::Gramian => "gramian",
            LevelMMode::Zero => "zero",
        }
    }
}

impl std::str::FromStr for LevelMMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gramian" => Ok(LevelMMode::Gramian),
            "zero" => Ok(LevelMMode::Zero),
            other => Err(format!("unknown level-M mode `{other}` (gramian|zero)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("{path}: {message}")]
    InvalidParams { path: String, message: String },
    #[error(
        "(εI + K_next) is numerically singular at level {level}, mode index {mode}: \
         positive semidefiniteness was lost upstream"
    )]
    SingularShift { level: usize, mode: usize },
    #[error(
        "positive semidefiniteness violated at t = {t:.6}, level {level}, mode index {mode}: \
         λ_min = {lambda_min:.3e}"
    )]
    PsdViolation {
        t: f64,
        level: usize,
        mode: usize,
        lambda_min: f64,
    },
    #[error("non-finite values at t = {t:.6}, level {level}, mode index {mode}")]
    NonFinite { t: f64, level: usize, mode: usize },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> RiccatiError {
    RiccatiError::InvalidParams {
        path: path.into(),
        message: message.into(),
    }
}

/// Parameters of one Riccati solve.
#[derive(Debug, Clone)]
pub struct RiccatiParams {
    /// Regularization weight ε > 0 shifting the inverted blocks.
    pub epsilon: f64,
    /// Per-mode symmetric PSD cost matrices ℬ(γ).
    pub cost: Vec<Matrix>,
    /// Number of uniform RK4 steps on [0, T].
    pub grid_steps: usize,
    /// Terminal-level behavior.
    pub level_m_mode: LevelMMode,
}

impl RiccatiParams {
    /// The canonical choice `ℬ(γ) = B(γ)B(γ)ᵀ` used by the
    /// controllability metric.
    pub fn bbt(
        system: &SwitchSystem,
        epsilon: f64,
        grid_steps: usize,
        level_m_mode: LevelMMode,
    ) -> Self {
        let cost = (0..system.num_modes())
            .map(|g| system.b(g) * system.b(g).transpose())
            .collect();
        RiccatiParams {
            epsilon,
            cost,
            grid_steps,
            level_m_mode,
        }
    }

    fn validate(&self, system: &SwitchSystem) -> Result<(), RiccatiError> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(invalid(
                "epsilon",
                format!("must be finite and > 0, got {}", self.epsilon),
            ));
        }
        if self.grid_steps < MIN_GRID_STEPS {
            return Err(invalid(
                "grid_steps",
                format!("must be at least {MIN_GRID_STEPS}, got {}", self.grid_steps),
            ));
        }
        let n = system.state_dim();
        if self.cost.len() != system.num_modes() {
            return Err(invalid(
                "cost",
                format!(
                    "expected one matrix per mode ({}), got {}",
                    system.num_modes(),
                    self.cost.len()
                ),
            ));
        }
        for (g, c) in self.cost.iter().enumerate() {
            let path = format!("cost[{g}]");
            if c.nrows() != n || c.ncols() != n {
                return Err(invalid(
                    &path,
                    format!("expected {n}×{n}, got {}×{}", c.nrows(), c.ncols()),
                ));
            }
            let scale = 1.0 + c.norm();
            if (c - c.transpose()).norm() > 1e-10 * scale {
                return Err(invalid(&path, "cost matrix must be symmetric"));
            }
            let min_eig = c
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -1e-10 * scale {
                return Err(invalid(
                    &path,
                    format!("cost matrix must be positive semidefinite (λ_min = {min_eig:.3e})"),
                ));
            }
        }
        Ok(())
    }
}

/// Solution grid: `k[level][mode][j]` at `t_j = j·T/L`, `j = 0..=L`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: Vec<f64>,
    k: Vec<Vec<Vec<Matrix>>>,
    params: RiccatiParams,
    horizon: f64,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.params.grid_steps as f64
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon
    }

    pub fn params(&self) -> &RiccatiParams {
        &self.params
    }

    pub fn jump_cap(&self) -> usize {
        self.k.len() - 1
    }

    pub fn num_modes(&self) -> usize {
        self.k[0].len()
    }

    /// Value at grid index `j`.
    pub fn k(&self, level: usize, gamma: usize, j: usize) -> &Matrix {
        &self.k[level][gamma][j]
    }

    /// Index of the grid point nearest to `t` (clamped to the grid).
    pub fn nearest_index(&self, t: f64) -> usize {
        let l = self.params.grid_steps;
        let j = (t / self.step()).round();
        (j.max(0.0) as usize).min(l)
    }

    /// Value at the grid point nearest to `t`.
    pub fn k_at(&self, level: usize, gamma: usize, t: f64) -> &Matrix {
        self.k(level, gamma, self.nearest_index(t))
    }
}

/// Initial value of the bottom level: `K(0, γ₀, t = 0)`, the matrix the
/// controllability metric is built from.
pub fn k0(solution: &RiccatiSolution, gamma0: usize) -> Matrix {
    solution.k(0, gamma0, 0).clone()
}

fn sym(m: Matrix) -> Matrix {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Right-hand side of the level-`n` equation at mode `gamma`, given the
/// current level's `k_here` and the (level n+1) family `k_next` indexed
/// by target mode. At the terminal level `k_next` is ignored and may be
/// empty.
pub fn level_rhs(
    system: &SwitchSystem,
    params: &RiccatiParams,
    n: usize,
    gamma: usize,
    k_here: &Matrix,
    k_next: &[Matrix],
) -> Result<Matrix, RiccatiError> {
    let a = system.a(gamma);
    let cost = &params.cost[gamma];
    if n >= system.jump_cap() {
        return Ok(match params.level_m_mode {
            LevelMMode::Gramian => sym(k_here * a.transpose() + a * k_here - cost),
            LevelMMode::Zero => Matrix::zeros(k_here.nrows(), k_here.ncols()),
        });
    }
    assert_eq!(
        k_next.len(),
        system.num_modes(),
        "level {n} < M needs one next-level matrix per mode"
    );
    let nn = system.state_dim();
    let mut rhs = k_here * a.transpose() + a * k_here - cost;
    let lambda = system.lambda(gamma);
    for theta in 0..system.num_modes() {
        let w = lambda * system.q_entry(gamma, theta);
        if w <= 0.0 {
            continue;
        }
        let kn = &k_next[theta];
        let shift = Matrix::identity(nn, nn) * params.epsilon + kn;
        let g = shift.try_inverse().ok_or(RiccatiError::SingularShift {
            level: n,
            mode: gamma,
        })?;
        let f = system.jump_map(gamma, theta) * k_here - kn;
        rhs += (f.transpose() * g * &f - (kn - k_here)) * w;
    }
    Ok(sym(rhs))
}

/// The coefficient set of the equation rewritten as a single quadratic
/// form — the shape used to argue solvability level by level. For each
/// target mode θ: `b(θ) = C(γ,θ)ᵀ + I`, `r(θ) = εI + K_next(θ)`,
/// `ν(θ) = λ(γ)Q(γ,θ)` (zero at the terminal level), together with the
/// drift coefficient `a`, the constant term `Π`, and the assembled form
/// `p·a + aᵀ·p − Π + p·(Σ_θ ν b r⁻¹ bᵀ)·p` under the substitution
/// `p = εI + K_here`.
#[derive(Debug, Clone)]
pub struct CanonicalCoeffs {
    pub a: Matrix,
    pub pi: Matrix,
    pub b: Vec<Matrix>,
    pub r: Vec<Matrix>,
    pub nu: Vec<f64>,
    pub assembled_rhs: Matrix,
    /// `‖assembled_rhs − level_rhs‖_F`. Recorded for inspection, not
    /// asserted: the substitution `p = εI + K` reproduces the equation
    /// only up to O(ε) shift terms (see the unit tests for the exact
    /// correspondence at `p = K`).
    pub residual: f64,
}

/// Compute the canonical coefficient set. `k_here` is needed to assemble
/// the quadratic form and its residual against [`level_rhs`].
pub fn canonical_coeffs(
    system: &SwitchSystem,
    params: &RiccatiParams,
    n: usize,
    gamma: usize,
    k_here: &Matrix,
    k_next: &[Matrix],
) -> Result<CanonicalCoeffs, RiccatiError> {
    let nn = system.state_dim();
    let p_modes = system.num_modes();
    let terminal = n >= system.jump_cap();
    let lambda = system.lambda(gamma);
    let eye = Matrix::identity(nn, nn);

    let mut b = Vec::with_capacity(p_modes);
    let mut r = Vec::with_capacity(p_modes);
    let mut nu = Vec::with_capacity(p_modes);
    for theta in 0..p_modes {
        b.push(system.jump_map_t(gamma, theta));
        let kn = if terminal {
            Matrix::zeros(nn, nn)
        } else {
            k_next[theta].clone()
        };
        r.push(&eye * params.epsilon + kn);
        nu.push(if terminal {
            0.0
        } else {
            lambda * system.q_entry(gamma, theta)
        });
    }

    // Inverses only where the target carries intensity.
    let mut r_inv = vec![None; p_modes];
    for theta in 0..p_modes {
        if nu[theta] > 0.0 {
            r_inv[theta] = Some(r[theta].clone().try_inverse().ok_or(
                RiccatiError::SingularShift {
                    level: n,
                    mode: gamma,
                },
            )?);
        }
    }

    // a = Aᵀ − λ[ ½I + Σ_θ Q Cᵀ − ε Σ_θ Q b r⁻¹ ]
    let mut bracket = &eye * 0.5;
    let mut pi = params.cost[gamma].clone();
    let mut s = Matrix::zeros(nn, nn);
    for theta in 0..p_modes {
        let q = system.q_entry(gamma, theta);
        if nu[theta] <= 0.0 {
            continue;
        }
        let ri = r_inv[theta].as_ref().unwrap();
        bracket += (&b[theta] - &eye) * q; // C(γ,θ)ᵀ weighted by Q
        bracket -= &b[theta] * ri * (params.epsilon * q);
        let kn = &r[theta] - &eye * params.epsilon; // recover K_next(θ)
        pi += ri * kn * (params.epsilon * q);
        s += &b[theta] * ri * b[theta].transpose() * nu[theta];
    }
    let a = system.a(gamma).transpose() - bracket * lambda;

    let p_sub = &eye * params.epsilon + k_here;
    let assembled_rhs = &p_sub * &a + a.transpose() * &p_sub - &pi + &p_sub * &s * &p_sub;
    let reference = level_rhs(system, params, n, gamma, k_here, k_next)?;
    let residual = (&assembled_rhs - reference).norm();

    Ok(CanonicalCoeffs {
        a,
        pi,
        b,
        r,
        nu,
        assembled_rhs,
        residual,
    })
}

type State = Vec<Vec<Matrix>>;

/// `base + Σ coeff·increment`, entrywise symmetrized.
fn combine(base: &State, incs: &[(f64, &State)]) -> State {
    let mut out = base.clone();
    for (lev, row) in out.iter_mut().enumerate() {
        for (g, m) in row.iter_mut().enumerate() {
            for (c, inc) in incs {
                *m += &inc[lev][g] * *c;
            }
            *m = sym(m.clone());
        }
    }
    out
}

/// Integrate the full family backward from `K(·,·,T) = 0`.
pub fn solve(
    system: &SwitchSystem,
    params: RiccatiParams,
) -> Result<RiccatiSolution, RiccatiError> {
    solve_with_override(system, params, None)
}

/// Like [`solve`], but with the next-level coupling zeroed inside the
/// equations of one mode: wherever level `n < M` of `zero_next_for_mode`
/// would read `K(n+1,θ,·)` it reads 0 instead. This decouples that
/// mode's equation into a standalone Riccati flow with a known closed
/// form, which the tests compare against.
pub fn solve_with_override(
    system: &SwitchSystem,
    params: RiccatiParams,
    zero_next_for_mode: Option<usize>,
) -> Result<RiccatiSolution, RiccatiError> {
    params.validate(system)?;
    let m = system.jump_cap();
    let p = system.num_modes();
    let nn = system.state_dim();
    let l = params.grid_steps;
    let horizon = system.horizon();
    let h = horizon / l as f64;

    let zeros_row: Vec<Matrix> = vec![Matrix::zeros(nn, nn); p];
    let rhs_all = |state: &State| -> Result<State, RiccatiError> {
        let mut out = Vec::with_capacity(m + 1);
        for lev in 0..=m {
            let mut row = Vec::with_capacity(p);
            for g in 0..p {
                let next: &[Matrix] = if lev == m {
                    &[]
                } else if zero_next_for_mode == Some(g) {
                    &zeros_row
                } else {
                    &state[lev + 1]
                };
                row.push(level_rhs(system, &params, lev, g, &state[lev][g], next)?);
            }
            out.push(row);
        }
        Ok(out)
    };

    let mut storage = vec![vec![vec![Matrix::zeros(nn, nn); l + 1]; p]; m + 1];
    let mut current: State = vec![vec![Matrix::zeros(nn, nn); p]; m + 1];

    for j in (1..=l).rev() {
        let k1 = rhs_all(&current)?;
        let s2 = combine(&current, &[(-h / 2.0, &k1)]);
        let k2 = rhs_all(&s2)?;
        let s3 = combine(&current, &[(-h / 2.0, &k2)]);
        let k3 = rhs_all(&s3)?;
        let s4 = combine(&current, &[(-h, &k3)]);
        let k4 = rhs_all(&s4)?;
        current = combine(
            &current,
            &[
                (-h / 6.0, &k1),
                (-h / 3.0, &k2),
                (-h / 3.0, &k3),
                (-h / 6.0, &k4),
            ],
        );

        let t = (j - 1) as f64 * h;
        for lev in 0..=m {
            for g in 0..p {
                let k = &current[lev][g];
                if !k.iter().all(|v| v.is_finite()) {
                    return Err(RiccatiError::NonFinite {
                        t,
                        level: lev,
                        mode: g,
                    });
                }
                let eigs = k.clone().symmetric_eigen().eigenvalues;
                let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
                let norm2 = eigs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                if min_eig < -1e-6 * (1.0 + norm2) {
                    return Err(RiccatiError::PsdViolation {
                        t,
                        level: lev,
                        mode: g,
                        lambda_min: min_eig,
                    });
                }
                storage[lev][g][j - 1] = k.clone();
            }
        }
    }

    let grid = (0..=l).map(|j| j as f64 * h).collect();
    Ok(RiccatiSolution {
        grid,
        k: storage,
        params,
        horizon,
    })
}
