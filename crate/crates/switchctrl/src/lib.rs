//! Controllability analysis for piecewise-linear Markov switch systems.
//!
//! A switch system couples a finite-state pure-jump mode process (jump
//! rates `λ(γ)`, transition kernel `Q`, at most `M` jumps, horizon `T`)
//! with a controlled linear state: between jumps the state follows
//! `ẋ = A(γ)x + B(γ)u` corrected by the jump compensator, and at a mode
//! switch `γ → θ` it is hit multiplicatively, `x ↦ (I + C(γ,θ))x`.
//!
//! The crate answers three questions about such a system:
//!
//! * **approximate null-controllability** — decided exactly, through a
//!   descending ladder of invariant subspaces of `ker Bᵀ` ([`invariance`]);
//! * **exact null-controllability** — probed numerically, through the
//!   small-`ε` limit of a coupled level/mode family of backward matrix
//!   Riccati equations and the quadratic metric it induces ([`riccati`],
//!   [`metric`]);
//! * **sufficient approximate controllability** — a one-sided invariant
//!   subspace test ([`invariance`]).
//!
//! A Monte-Carlo engine ([`sim`]) cross-checks the algebra on sampled
//! paths: open-loop Gramian controls that steer the primal state to zero,
//! Riccati feedback in the dual system, short "burst" controls, and a
//! primal/dual duality identity that ties the two sides together.
//!
//! The `switchctrl` binary drives the whole pipeline from JSON configs or
//! the built-in reference systems ([`fixtures`]) and emits machine-readable
//! run reports ([`report`], [`cli`]).

// Negated float comparisons (`!(a > b)`) are deliberate NaN guards: a NaN
// produced by a diverging computation must land in the failing branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Mode/level indices key several parallel tables at once; range loops over
// them are clearer than zipped enumerations.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod fixtures;
pub mod invariance;
pub mod metric;
pub mod model;
pub mod report;
pub mod riccati;
pub mod sim;
pub mod subspace;
