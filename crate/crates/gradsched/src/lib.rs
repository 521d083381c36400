//! Online scheduling of multi-server jobs on a bipartite job-type/instance
//! graph.
//!
//! The library models a cluster as a bipartite graph between job types
//! (ports) and computing instances, scores fractional allocations by concave
//! computation gains minus the dominant communication overhead, and drives
//! scheduling policies through a time-slotted simulation. The headline
//! policy performs online gradient ascent with a fast KKT projection onto
//! the feasible set; four classic heuristics (DRF, proportional fairness,
//! bin-packing, spreading) serve as baselines, and a regret harness compares
//! everything against the best stationary allocation in hindsight.
//!
//! Module map:
//!
//! - [`model`]: graph, allocation tensor, feasibility.
//! - [`reward`]: utilities, slot reward, analytic gradient.
//! - [`projection`]: per-`(instance, resource)` projection and its
//!   brute-force oracle.
//! - [`policies`]: the gradient policy and the four baselines.
//! - [`regret`]: offline optimum, empirical regret, analytic bound.
//! - [`simulator`]: scenario synthesis, arrival streams, the slot loop.
//! - [`config`] / [`trace`] / [`cli`]: TOML config, CSV trace bundles, and
//!   the command-line surface.

pub mod cli;
pub mod config;
pub mod model;
pub mod policies;
pub mod projection;
pub mod regret;
pub mod reward;
pub mod rng;
pub mod simulator;
pub mod trace;

pub use model::{Allocation, BipartiteGraph, GraphSpec, InstanceSpec, PortSpec, ResourceCatalog};
pub use policies::{LearningRateSchedule, OgaPolicy, Policy};
pub use reward::{ArrivalVector, RewardModel, UtilityKind, UtilitySpec};
pub use simulator::SimConfig;
