//! Solver toolkit for discounted constrained Markov decision processes whose
//! transition probabilities are only known up to a deviation set built from
//! polyhedral and second-order cone constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] and [`occupation`]: the nominal CMDP, exact policy evaluation
//!   and the occupation-measure LP.
//! * [`conic`]: a single LP/SOCP standard form with primal and dual extraction.
//! * [`uncertainty`]: per-state deviation blocks, assumption checks, `P_min`,
//!   and Euclidean projection.
//! * [`robust`]: the inner SOCPs, their hand-built duals, the bilinear
//!   reformulation, a local-search heuristic and a McCormick spatial
//!   branch-and-bound.
//! * [`oracle`]: brute-force checks (projected gradient ascent, vertex
//!   enumeration) used to validate everything above.
//! * [`bench`] and [`synthetic`]: the machine-replacement family and small
//!   random instances.

pub mod bench;
pub mod conic;
pub mod error;
pub mod model;
pub mod occupation;
pub mod oracle;
pub mod robust;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};
pub use model::{CmdpModel, CostRef, PolicyMatrices, StationaryPolicy};
pub use uncertainty::{UncertaintyBlock, UncertaintySet};
