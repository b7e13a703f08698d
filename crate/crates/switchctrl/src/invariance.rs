//! Invariant-subspace ladder deciding approximate null-controllability,
//! plus the one-sided sufficient test for approximate controllability.
//!
//! The ladder assigns to every jump level `n ≤ M` and mode `γ` a subspace
//! of `ker Bᵀ`: at the terminal level `entries(M,γ) = ker Bᵀ`, and one
//! level down
//!
//! ```text
//! entries(n,γ) = largest V ⊆ ker Bᵀ with
//!     𝒜*(γ)·V ⊆ V + Σ_{θ: Q(γ,θ)>0} Im[(C(γ,θ)ᵀ + I)·Π_{entries(n+1,θ)}]
//! ```
//!
//! The system is approximately null-controllable from `γ₀` exactly when
//! `entries(0,γ₀) = {0}`: the ladder carries the observability defects a
//! dual trajectory can hide in, level by level, and an empty level-0
//! entry means no defect survives all jump budgets.

use thiserror::Error;

use crate::model::{cal_a_star, SwitchSystem};
use crate::subspace::{
    image_with_floor, kernel, largest_invariant_subspace, Matrix, Subspace, SubspaceError, RANK_TOL,
};

#[derive(Debug, Error)]
pub enum InvarianceError {
    #[error("the subspace ladder requires a mode-independent control matrix B")]
    ModeDependentB,
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
}

/// The level/mode-indexed family of subspaces. Level `n` holds the
/// subspaces relevant after `n` jumps; level `M` is always `ker Bᵀ`.
#[derive(Debug, Clone)]
pub struct VLadder {
    entries: Vec<Vec<Subspace>>,
    ker_bt: Subspace,
}

impl VLadder {
    /// Subspace at level `n` (0 ≤ n ≤ M) and mode `gamma`.
    pub fn entry(&self, n: usize, gamma: usize) -> &Subspace {
        &self.entries[n][gamma]
    }

    /// Jump cap M (the ladder has M+1 levels).
    pub fn jump_cap(&self) -> usize {
        self.entries.len() - 1
    }

    /// `ker Bᵀ`, the space every entry lives inside.
    pub fn ker_bt(&self) -> &Subspace {
        &self.ker_bt
    }

    /// Dimensions as `dims[level][mode]`, the shape reported by the CLI.
    pub fn dims(&self) -> Vec<Vec<usize>> {
        self.entries
            .iter()
            .map(|level| level.iter().map(Subspace::dim).collect())
            .collect()
    }
}

fn shared_b(system: &SwitchSystem) -> Result<&Matrix, InvarianceError> {
    if !system.b_mode_independent() {
        return Err(InvarianceError::ModeDependentB);
    }
    Ok(system.b(0))
}

/// Build the full ladder by backward recursion from level M.
pub fn v_ladder(system: &SwitchSystem) -> Result<VLadder, InvarianceError> {
    let b = shared_b(system)?;
    let ker_bt = kernel(&b.transpose(), RANK_TOL);
    let p = system.num_modes();
    let m = system.jump_cap();
    let mut entries = vec![vec![ker_bt.clone(); p]; m + 1];
    for n in (0..m).rev() {
        for gamma in 0..p {
            let family: Vec<Matrix> = (0..p)
                .filter(|&theta| system.q_supported(gamma, theta))
                .map(|theta| {
                    denoised_member(
                        &(system.jump_map_t(gamma, theta) * entries[n + 1][theta].projector()),
                    )
                })
                .collect();
            entries[n][gamma] = largest_invariant_subspace(
                &denoised_cal_a_star(system, gamma),
                &family,
                &ker_bt,
                RANK_TOL,
            )?;
        }
    }
    Ok(VLadder { entries, ker_bt })
}

/// Replace a family member `(Cᵀ + I)·Π` by the projector onto its image,
/// with the rank decision floored at unit scale. The map `Cᵀ + I` is a
/// difference of same-scale terms, so when it is zero in exact arithmetic
/// (e.g. `C = −I`, a jump that resets the state) the float product is a
/// matrix of ~1e−16 noise whose *relative* rank is full; flooring at the
/// composition's natural scale of 1 reads it as the zero map it is. The
/// image is unchanged for genuinely nonzero members.
fn denoised_member(member: &Matrix) -> Matrix {
    image_with_floor(member, RANK_TOL, 1.0).projector()
}

/// `𝒜*(γ)` with float cancellation noise zeroed. The map is a difference
/// `Aᵀ − λ Σ Q (Cᵀ + I)` whose terms can cancel exactly (e.g. after an
/// orthogonal change of state variables, where `U Uᵀ − I` leaves ~1e−16
/// residue); entries are therefore measured against the combined size of
/// the terms, and anything below `RANK_TOL` times that scale is snapped
/// to exact zero so the invariant-subspace iteration sees the true map.
fn denoised_cal_a_star(system: &SwitchSystem, gamma: usize) -> Matrix {
    let mut a = cal_a_star(system, gamma);
    let lambda = system.lambda(gamma);
    let mut scale = system.a(gamma).norm();
    for theta in 0..system.num_modes() {
        if system.q_supported(gamma, theta) {
            let q = system.q_entry(gamma, theta);
            let c_norm = system.c_block(gamma, theta).map_or(0.0, Matrix::norm);
            scale += lambda * q * (c_norm + 1.0);
        }
    }
    let cut = RANK_TOL * scale;
    for entry in a.iter_mut() {
        if entry.abs() <= cut {
            *entry = 0.0;
        }
    }
    a
}

/// Decide approximate null-controllability from the system's initial
/// mode: true iff the level-0 ladder entry at `γ₀` is `{0}`.
pub fn approx_null_verdict(system: &SwitchSystem) -> Result<bool, InvarianceError> {
    let ladder = v_ladder(system)?;
    Ok(ladder.entry(0, system.gamma0()).is_zero())
}

/// Outcome of the sufficient approximate-controllability test. The
/// condition is one-sided: a failed test proves nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sufficiency {
    Holds,
    Inconclusive,
}

impl Sufficiency {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sufficiency::Holds => "holds",
            Sufficiency::Inconclusive => "inconclusive",
        }
    }
}

/// Sufficient test for approximate controllability: `Holds` iff for
/// *every* mode γ the largest invariant subspace of `ker Bᵀ` under
/// `𝒜*(γ)` with family `{(C(γ,θ)ᵀ + I)·Π_{ker Bᵀ} : Q(γ,θ) > 0}` is
/// trivial.
pub fn approx_ctrl_sufficient(system: &SwitchSystem) -> Result<Sufficiency, InvarianceError> {
    let b = shared_b(system)?;
    let ker_bt = kernel(&b.transpose(), RANK_TOL);
    let proj = ker_bt.projector();
    for gamma in 0..system.num_modes() {
        let family: Vec<Matrix> = (0..system.num_modes())
            .filter(|&theta| system.q_supported(gamma, theta))
            .map(|theta| denoised_member(&(system.jump_map_t(gamma, theta) * &proj)))
            .collect();
        let v = largest_invariant_subspace(
            &denoised_cal_a_star(system, gamma),
            &family,
            &ker_bt,
            RANK_TOL,
        )?;
        if !v.is_zero() {
            return Ok(Sufficiency::Inconclusive);
        }
    }
    Ok(Sufficiency::Holds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture;
    use crate::model::parse_system;
    use crate::subspace::{orthonormalize, Vector};

    fn span_e2() -> Subspace {
        orthonormalize(2, &[Vector::from_column_slice(&[0.0, 1.0])], RANK_TOL).unwrap()
    }

    #[test]
    fn exp_3_3_ladder_collapses_only_at_the_initial_mode() {
        let sys = fixture("exp-3-3").unwrap();
        let ladder = v_ladder(&sys).unwrap();
        assert_eq!(ladder.jump_cap(), 2);
        let e2 = span_e2();
        for n in 0..2 {
            assert!(ladder.entry(n, 0).is_zero(), "level {n}, mode e1");
            assert!(ladder.entry(n, 1).approx_eq(&e2), "level {n}, mode e2");
            assert!(ladder.entry(n, 2).approx_eq(&e2), "level {n}, mode e3");
        }
        for gamma in 0..3 {
            assert!(ladder.entry(2, gamma).approx_eq(&e2), "terminal level");
        }
        assert!(approx_null_verdict(&sys).unwrap());
    }

    #[test]
    fn exp_3_4_ladder_is_span_gamma_e2() {
        let sys = fixture("exp-3-4").unwrap();
        let ladder = v_ladder(&sys).unwrap();
        let e2 = span_e2();
        for n in 0..2 {
            assert!(ladder.entry(n, 0).is_zero(), "level {n}, mode 0");
            assert!(ladder.entry(n, 1).approx_eq(&e2), "level {n}, mode 1");
        }
        assert!(approx_null_verdict(&sys).unwrap());
    }

    #[test]
    fn final_fixture_is_approx_null_but_sufficiency_stays_open() {
        let sys = fixture("exp-3-4-final").unwrap();
        assert!(approx_null_verdict(&sys).unwrap());
        // Mode e2 keeps span{e₂}, so the all-modes sufficient test fails.
        assert_eq!(
            approx_ctrl_sufficient(&sys).unwrap(),
            Sufficiency::Inconclusive
        );
    }

    #[test]
    fn exp_3_4_sufficiency_is_inconclusive_via_mode_1() {
        let sys = fixture("exp-3-4").unwrap();
        assert_eq!(
            approx_ctrl_sufficient(&sys).unwrap(),
            Sufficiency::Inconclusive
        );
    }

    #[test]
    fn trivial_ker_bt_makes_sufficiency_hold() {
        // With B square invertible, ker Bᵀ = {0} and the test passes.
        let doc = r#"{
            "N": 2, "d": 2,
            "modes": ["a", "b"],
            "lambda": {"a": 1.0, "b": 1.0},
            "Q": [[0.0, 1.0], [1.0, 0.0]],
            "A": {"a": [[0.0, 1.0], [0.0, 0.0]], "b": [[0.0, 0.0], [0.0, 0.0]]},
            "B": [[1.0, 0.0], [0.0, 1.0]],
            "M": 2, "T": 1.0, "gamma0": "a"
        }"#;
        let sys = parse_system(doc).unwrap();
        assert_eq!(approx_ctrl_sufficient(&sys).unwrap(), Sufficiency::Holds);
        assert!(approx_null_verdict(&sys).unwrap());
    }

    #[test]
    fn mode_dependent_b_is_an_error() {
        let doc = r#"{
            "N": 1, "d": 1,
            "modes": ["a", "b"],
            "lambda": {"a": 1.0, "b": 1.0},
            "Q": [[0.0, 1.0], [1.0, 0.0]],
            "A": {"a": [[0.0]], "b": [[0.0]]},
            "B": {"a": [[1.0]], "b": [[2.0]]},
            "M": 1, "T": 1.0, "gamma0": "a"
        }"#;
        let sys = parse_system(doc).unwrap();
        assert!(matches!(
            v_ladder(&sys),
            Err(InvarianceError::ModeDependentB)
        ));
    }

    #[test]
    fn every_entry_lives_inside_ker_bt() {
        for name in crate::fixtures::FIXTURE_NAMES {
            let sys = fixture(name).unwrap();
            let ladder = v_ladder(&sys).unwrap();
            for n in 0..=ladder.jump_cap() {
                for gamma in 0..sys.num_modes() {
                    assert!(
                        ladder.entry(n, gamma).is_subspace_of(ladder.ker_bt()),
                        "{name}: level {n}, mode {gamma}"
                    );
                }
            }
        }
    }

    #[test]
    fn ladder_stabilizes_once_two_levels_agree() {
        // Extending the jump budget must only prepend copies of the
        // already-stable levels: compare the deep ladder's shallow levels.
        for name in ["exp-3-3", "exp-3-4"] {
            let sys = fixture(name).unwrap();
            let deep = v_ladder(&sys.with_overrides(None, None, Some(5)).unwrap()).unwrap();
            // Find a level where deep(n,·) == deep(n+1,·) for all modes.
            let mut stable_at = None;
            for n in (0..5).rev() {
                let all_equal =
                    (0..sys.num_modes()).all(|g| deep.entry(n, g).approx_eq(deep.entry(n + 1, g)));
                if all_equal {
                    stable_at = Some(n);
                }
            }
            let Some(n0) = stable_at else {
                continue;
            };
            for n in 0..n0 {
                for g in 0..sys.num_modes() {
                    assert!(
                        deep.entry(n, g).approx_eq(deep.entry(n0, g)),
                        "{name}: level {n} should equal the stabilized level {n0}"
                    );
                }
            }
        }
    }

    #[test]
    fn verdict_is_invariant_under_mode_relabeling() {
        // exp-3-3 with the mode list rotated to (e3, e1, e2); Q rows and
        // columns permuted to match. Ladder entries per *label* agree.
        let rotated = r#"{
            "N": 2, "d": 1,
            "modes": ["e3", "e1", "e2"],
            "lambda": {"e1": 1.0, "e2": 1.0, "e3": 1.0},
            "Q": [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
            "A": {"e1": [[0.0, 0.0], [1.0, 0.0]], "e2": [[0.0, 0.0], [0.0, 0.0]], "e3": [[0.0, 0.0], [0.0, 0.0]]},
            "B": [[1.0], [0.0]],
            "M": 2, "T": 1.0, "gamma0": "e1"
        }"#;
        let original = fixture("exp-3-3").unwrap();
        let permuted = parse_system(rotated).unwrap();
        assert_eq!(
            approx_null_verdict(&original).unwrap(),
            approx_null_verdict(&permuted).unwrap()
        );
        let lad_o = v_ladder(&original).unwrap();
        let lad_p = v_ladder(&permuted).unwrap();
        for label in ["e1", "e2", "e3"] {
            let go = original.mode_index(label).unwrap();
            let gp = permuted.mode_index(label).unwrap();
            for n in 0..=2 {
                assert!(
                    lad_o.entry(n, go).approx_eq(lad_p.entry(n, gp)),
                    "level {n}, label {label}"
                );
            }
        }
    }

    #[test]
    fn verdict_is_invariant_under_orthogonal_state_change() {
        use rand::{Rng, SeedableRng};
        let sys = fixture("exp-3-4").unwrap();
        let base_verdict = approx_null_verdict(&sys).unwrap();
        let base_dims = v_ladder(&sys).unwrap().dims();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..5 {
            let g = Matrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let u = g.qr().q();
            let conj = |m: &Matrix| &u * m * u.transpose();
            let rows = |m: &Matrix| vec![vec![m[(0, 0)], m[(0, 1)]], vec![m[(1, 0)], m[(1, 1)]]];
            let ub = &u * sys.b(0);
            let doc = serde_json::json!({
                "N": 2, "d": 1,
                "modes": ["0", "1"],
                "lambda": {"0": 1.0, "1": 1.0},
                "Q": [[0.0, 1.0], [1.0, 0.0]],
                "A": {
                    "0": rows(&conj(sys.a(0))),
                    "1": rows(&conj(sys.a(1))),
                },
                "B": [[ub[(0, 0)]], [ub[(1, 0)]]],
                "C": {
                    "0->1": rows(&conj(sys.c_block(0, 1).unwrap())),
                    "1->0": rows(&conj(sys.c_block(1, 0).unwrap())),
                },
                "M": 2, "T": 1.0, "gamma0": "0"
            });
            let rotated = parse_system(&doc.to_string()).unwrap();
            assert_eq!(approx_null_verdict(&rotated).unwrap(), base_verdict);
            assert_eq!(v_ladder(&rotated).unwrap().dims(), base_dims);
        }
    }
}
