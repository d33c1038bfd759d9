//! Cavity-qubit dephasing from a thermally excited two-level ancilla, and its
//! recovery by repeated ancilla measurement, conditional reset and phase
//! feedback.
//!
//! The crate is split by concern:
//!
//! * [`model`] holds the physical parameter set and derived per-interval
//!   probabilities.
//! * [`trajectory`] samples exact continuous-time ancilla trajectories with
//!   imperfect readout and the measurement/reset/feedback loop.
//! * [`coherence`] turns shot ensembles into coherence estimates, fringe and
//!   decay fits, and erasure statistics.
//! * [`analytics`] evaluates the closed-form coherence and error-budget
//!   expressions that the stochastic results are checked against.
//! * [`hmm`] performs hidden-Markov inference over measurement records.
//! * [`harness`] is the command-line front end.

pub mod analytics;
pub mod coherence;
pub mod error;
pub mod harness;
pub mod hmm;
pub mod model;
pub mod numeric;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{AncillaState, DerivedRates, FeedbackPhase, SystemParams, ValidatedParams};
