//! Exact tools for fractional online load balancing on bipartite graphs:
//! majorization, water-filling, hindsight optima, sequence transforms and
//! regret / competitive-ratio analysis.

pub mod error;
pub mod hindsight;
pub mod load;
pub mod objective;
pub mod policy;
pub mod rational;
pub mod regret;
pub mod sequence;
pub mod transform;
pub mod waterfill;

pub use error::{Error, Result};
pub use load::{compare_majorization, HarmonicMatrix, LoadVector, MajorizationRelation};
pub use rational::Rational;
pub use sequence::{Arrival, NodeSet, RequestSequence};
pub use objective::{Direction, Objective, SchurClass};
pub use policy::{ExpectationMode, Policy};
pub use waterfill::{run_waterfill, AllocationTrace};
