//! Built-in reference systems.
//!
//! Three small two-dimensional single-input systems exercise every
//! analysis the crate performs:
//!
//! * **`exp-3-3`** — a three-mode chain (`e1 → e2 → e3 → e2 → …`, unit
//!   rates, two jumps allowed) in which only the initial mode carries the
//!   integrator drift and jumps leave the state untouched. It is
//!   approximately null-controllable from `e1` but *not* exactly: the
//!   invariance ladder collapses to `{0}` at `e1`, while the small-ε
//!   Riccati limit loses rank in the uncontrolled direction.
//! * **`exp-3-4`** — a two-mode flip-flop whose `0 → 1` jump wipes the
//!   state (`I + C = 0`) and whose `1 → 0` jump shears it. Exactly
//!   null-controllable from mode `0`; the Riccati limit stays positive
//!   definite.
//! * **`exp-3-4-final`** — the `exp-3-3` matrices with a jump budget of
//!   one. Approximately null-controllable from `e1`, yet the sufficient
//!   full-controllability test stays inconclusive — the test demands the
//!   ladder collapse in *every* mode and `e2` keeps `span{e₂}`.

use crate::model::{parse_system, ModelError, SwitchSystem};

/// Names accepted by [`fixture`], in the order they are listed by the CLI.
pub const FIXTURE_NAMES: &[&str] = &["exp-3-3", "exp-3-4", "exp-3-4-final"];

const EXP_3_3: &str = r#"{
  "N": 2,
  "d": 1,
  "modes": ["e1", "e2", "e3"],
  "lambda": {"e1": 1.0, "e2": 1.0, "e3": 1.0},
  "Q": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
  "A": {"e1": [[0.0, 0.0], [1.0, 0.0]], "e2": [[0.0, 0.0], [0.0, 0.0]], "e3": [[0.0, 0.0], [0.0, 0.0]]},
  "B": [[1.0], [0.0]],
  "M": 2,
  "T": 1.0,
  "gamma0": "e1"
}"#;

const EXP_3_4: &str = r#"{
  "N": 2,
  "d": 1,
  "modes": ["0", "1"],
  "lambda": {"0": 1.0, "1": 1.0},
  "Q": [[0.0, 1.0], [1.0, 0.0]],
  "A": {"0": [[0.0, 0.0], [1.0, 0.0]], "1": [[0.0, 0.0], [1.0, 0.0]]},
  "B": [[1.0], [0.0]],
  "C": {"0->1": [[-1.0, 0.0], [0.0, -1.0]], "1->0": [[-1.0, 0.0], [1.0, -1.0]]},
  "M": 2,
  "T": 1.0,
  "gamma0": "0"
}"#;

const EXP_3_4_FINAL: &str = r#"{
  "N": 2,
  "d": 1,
  "modes": ["e1", "e2", "e3"],
  "lambda": {"e1": 1.0, "e2": 1.0, "e3": 1.0},
  "Q": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
  "A": {"e1": [[0.0, 0.0], [1.0, 0.0]], "e2": [[0.0, 0.0], [0.0, 0.0]], "e3": [[0.0, 0.0], [0.0, 0.0]]},
  "B": [[1.0], [0.0]],
  "M": 1,
  "T": 1.0,
  "gamma0": "e1"
}"#;

/// The raw JSON document of a fixture, exactly as `--show-fixture`
/// prints it.
pub fn fixture_json(name: &str) -> Result<&'static str, ModelError> {
    match name {
        "exp-3-3" => Ok(EXP_3_3),
        "exp-3-4" => Ok(EXP_3_4),
        "exp-3-4-final" => Ok(EXP_3_4_FINAL),
        other => Err(ModelError::Invalid {
            path: "fixture".into(),
            message: format!(
                "unknown fixture `{other}`; available: {}",
                FIXTURE_NAMES.join(", ")
            ),
        }),
    }
}

/// Parse a fixture into a validated system.
pub fn fixture(name: &str) -> Result<SwitchSystem, ModelError> {
    parse_system(fixture_json(name)?)
}
