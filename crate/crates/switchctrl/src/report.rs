//! Machine-readable run reports and CSV dumps.
//!
//! A [`RunReport`] collects everything one CLI invocation produced: an
//! echo of the analyzed system (config hash and summary), the exact
//! thresholds in force, and one JSON section per analysis that ran.
//! Serialization goes through `serde_json`'s sorted-key object type, so
//! two runs with the same config, seeds, and flags render byte-identical
//! documents except for the wall-clock `timing_ms` block, which callers
//! strip before comparing.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde_json::{json, Map, Value};

use crate::invariance::{Sufficiency, VLadder};
use crate::metric::K0Diagnostics;
use crate::model::{SwitchSystem, Q_SUPPORT_TOL};
use crate::riccati::RiccatiSolution;
use crate::sim::SamplePath;
use crate::subspace::{Matrix, RANK_TOL, SUBSPACE_EQ_TOL};

/// Matrix as a JSON array of row arrays.
pub fn matrix_rows(m: &Matrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Identifying echo of the analyzed system: enough to spot what ran
/// without reproducing the full config (the hash pins that down).
pub fn system_echo(system: &SwitchSystem) -> Value {
    json!({
        "config_sha256": system.config_hash(),
        "state_dim": system.state_dim(),
        "control_dim": system.control_dim(),
        "modes": system.mode_labels(),
        "rates": (0..system.num_modes()).map(|g| system.lambda(g)).collect::<Vec<_>>(),
        "jump_cap": system.jump_cap(),
        "horizon": system.horizon(),
        "initial_mode": system.mode_label(system.gamma0()),
        "control_matrix_mode_independent": system.b_mode_independent(),
    })
}

/// Global numerical thresholds in force for every analysis.
pub fn global_thresholds() -> Value {
    json!({
        "rank_tol": RANK_TOL,
        "subspace_eq_tol": SUBSPACE_EQ_TOL,
        "q_support_tol": Q_SUPPORT_TOL,
        "psd_monitor_slack": 1e-6,
    })
}

/// Invariance analysis results: ladder dimensions per level and mode,
/// the two verdicts, and the subspace the decision was read from.
pub fn invariance_section(
    system: &SwitchSystem,
    ladder: &VLadder,
    approx_null: bool,
    sufficiency: Sufficiency,
) -> Value {
    let gamma0 = system.gamma0();
    let entry = ladder.entry(0, gamma0);
    json!({
        "ladder_dims": ladder.dims(),
        "mode_labels": system.mode_labels(),
        "ker_bt_dim": ladder.ker_bt().dim(),
        "approx_null_controllable": approx_null,
        "decisive_subspace": {
            "level": 0,
            "mode": system.mode_label(gamma0),
            "dim": entry.dim(),
            "basis": matrix_rows(entry.basis()),
        },
        "sufficient_approx_controllability": sufficiency.as_str(),
    })
}

/// Metric sweep results. The `epsilons`/`eigenvalues`/`k0`/`verdict`
/// keys are the stable fragment downstream tooling reads; the rest
/// documents how the verdict was reached.
pub fn metric_section(diag: &K0Diagnostics) -> Value {
    json!({
        "epsilons": diag.epsilons,
        "eigenvalues": diag.eigenvalues,
        "k0": matrix_rows(&diag.k0),
        "verdict": diag.verdict.as_str(),
        "deltas": diag.deltas,
        "delta_pd": diag.delta_pd,
        "stagnation": diag.stagnation,
        "level_m_mode": diag.level_m_mode.as_str(),
        "grid_steps": diag.grid_steps,
    })
}

/// Single-ε Riccati solve summary: the bottom-level initial matrix and
/// the grid it was computed on.
pub fn riccati_section(system: &SwitchSystem, solution: &RiccatiSolution) -> Value {
    let k0 = solution.k(0, system.gamma0(), 0);
    json!({
        "epsilon": solution.epsilon(),
        "grid_steps": solution.grid().len() - 1,
        "step": solution.step(),
        "level_m_mode": solution.params().level_m_mode.as_str(),
        "initial_mode": system.mode_label(system.gamma0()),
        "k0_eps": matrix_rows(k0),
    })
}

/// One CLI invocation's full output.
#[derive(Debug)]
pub struct RunReport {
    command: String,
    invocation: Value,
    system: Value,
    sections: BTreeMap<String, Value>,
    timing_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, invocation: Value, system: &SwitchSystem) -> Self {
        RunReport {
            command: command.to_string(),
            invocation,
            system: system_echo(system),
            sections: BTreeMap::new(),
            timing_ms: BTreeMap::new(),
        }
    }

    /// Attach an analysis section under a stable key.
    pub fn add_section(&mut self, key: &str, value: Value) {
        self.sections.insert(key.to_string(), value);
    }

    /// Record how long a stage took (excluded from byte-identity checks).
    pub fn add_timing(&mut self, key: &str, millis: f64) {
        self.timing_ms.insert(key.to_string(), millis);
    }

    /// Assemble the report document.
    pub fn to_value(&self) -> Value {
        let mut root = Map::new();
        root.insert("command".into(), json!(self.command));
        root.insert("invocation".into(), self.invocation.clone());
        root.insert("system".into(), self.system.clone());
        root.insert("thresholds".into(), global_thresholds());
        for (key, value) in &self.sections {
            root.insert(key.clone(), value.clone());
        }
        root.insert(
            "timing_ms".into(),
            Value::Object(
                self.timing_ms
                    .iter()
                    .map(|(k, v)| (k.clone(), json!(v)))
                    .collect(),
            ),
        );
        root.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
        Value::Object(root)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn render(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_value())
            .expect("report serialization cannot fail");
        text.push('\n');
        text
    }
}

/// Dump a Riccati solution as CSV rows `t,level,mode,i,j,K_ij` — one row
/// per matrix entry per grid point, grouped by time, then level, then
/// mode.
pub fn write_riccati_csv(
    system: &SwitchSystem,
    solution: &RiccatiSolution,
    out: &mut impl Write,
) -> io::Result<()> {
    writeln!(out, "t,level,mode,i,j,K_ij")?;
    let n = system.state_dim();
    for (gj, t) in solution.grid().iter().enumerate() {
        for level in 0..=solution.jump_cap() {
            for gamma in 0..solution.num_modes() {
                let k = solution.k(level, gamma, gj);
                let label = system.mode_label(gamma);
                for i in 0..n {
                    for j in 0..n {
                        writeln!(out, "{t},{level},{label},{i},{j},{}", k[(i, j)])?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Dump simulated paths as CSV rows `sample,t,mode,x_1,…,x_N` — one row
/// per output grid point per path.
pub fn write_paths_csv(
    system: &SwitchSystem,
    paths: &[SamplePath],
    out: &mut impl Write,
) -> io::Result<()> {
    let n = system.state_dim();
    let header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    writeln!(out, "sample,t,mode,{}", header.join(","))?;
    for (sample, path) in paths.iter().enumerate() {
        for ((t, state), mode) in path.grid.iter().zip(&path.states).zip(&path.modes) {
            let cells: Vec<String> = state.iter().map(|v| format!("{v}")).collect();
            writeln!(
                out,
                "{sample},{t},{},{}",
                system.mode_label(*mode),
                cells.join(",")
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture;
    use crate::invariance::{approx_ctrl_sufficient, approx_null_verdict, v_ladder};
    use crate::metric::{k0_estimate, EpsilonSchedule};
    use crate::riccati::{solve, LevelMMode, RiccatiParams};
    use crate::sim::{simulate_primal, ZeroPolicy};
    use crate::subspace::Vector;

    #[test]
    fn report_is_deterministic_except_for_timing() {
        let sys = fixture("exp-3-4").unwrap();
        let build = |millis: f64| {
            let mut report = RunReport::new("invariance", json!({"fixture": "exp-3-4"}), &sys);
            let ladder = v_ladder(&sys).unwrap();
            report.add_section(
                "invariance",
                invariance_section(
                    &sys,
                    &ladder,
                    approx_null_verdict(&sys).unwrap(),
                    approx_ctrl_sufficient(&sys).unwrap(),
                ),
            );
            report.add_timing("invariance", millis);
            report.render()
        };
        let a = build(1.0);
        let b = build(250.0);
        let strip = |text: &str| -> Value {
            let mut v: Value = serde_json::from_str(text).unwrap();
            v.as_object_mut().unwrap().remove("timing_ms");
            v
        };
        assert_ne!(a, b, "timing should differ");
        assert_eq!(strip(&a), strip(&b), "everything else must match");
    }

    #[test]
    fn metric_fragment_exposes_the_stable_keys() {
        let sys = fixture("exp-3-4").unwrap();
        let schedule = EpsilonSchedule::new(vec![1e-2, 1e-3, 1e-5]).unwrap();
        let diag = k0_estimate(&sys, &schedule, 2000, LevelMMode::Gramian).unwrap();
        let section = metric_section(&diag);
        for key in ["epsilons", "eigenvalues", "k0", "verdict"] {
            assert!(section.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(section["epsilons"].as_array().unwrap().len(), 3);
        assert_eq!(section["k0"].as_array().unwrap().len(), sys.state_dim());
    }

    #[test]
    fn riccati_csv_has_one_row_per_entry_per_grid_point() {
        let sys = fixture("exp-3-4").unwrap();
        let solution = solve(
            &sys,
            RiccatiParams::bbt(&sys, 1e-2, 100, LevelMMode::Gramian),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_riccati_csv(&sys, &solution, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,level,mode,i,j,K_ij");
        let expected = 101 * (sys.jump_cap() + 1) * sys.num_modes() * 4;
        assert_eq!(lines.count(), expected);
        assert!(text.contains(",0,1,"), "mode labels appear in rows");
    }

    #[test]
    fn paths_csv_is_wide_enough_for_the_state() {
        let sys = fixture("exp-3-3").unwrap();
        let x0 = Vector::from_vec(vec![0.0, 1.0]);
        let paths: Vec<SamplePath> = (0..3)
            .map(|s| simulate_primal(&sys, &x0, &ZeroPolicy, s, 10).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_paths_csv(&sys, &paths, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "sample,t,mode,x_1,x_2");
        assert_eq!(lines.count(), 3 * 11);
        assert!(text.contains(",e1,"), "mode labels appear in rows");
    }
}
