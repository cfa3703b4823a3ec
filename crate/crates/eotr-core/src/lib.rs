//! Entropic optimal transport at desk scale.
//!
//! This crate solves the discrete entropy-regularized transport problem in the
//! log domain, solves the unregularized problem exactly with a transportation
//! simplex, and provides the constructions used to study how the entropic cost
//! `v_eps` approaches the transport cost `v0` as the temperature vanishes:
//! grid entropy and entropy-dimension fits, block approximations of optimal
//! plans, duality-gap fields with their Minty-rotated inequality, Laplace
//! integrals of the gap, and least-squares fits of the expansion
//! `v_eps - v0 ≈ a·eps·log(1/eps) + b·eps`.
//!
//! Modules mirror that pipeline:
//!
//! - [`measures`]: discretized marginals (boxes, segments, densities)
//! - [`costs`]: cost models with derivatives and certified constants
//! - [`exact_ot`]: transportation simplex, Kantorovich potentials, oracles
//! - [`sinkhorn`]: log-domain Sinkhorn on the Schrödinger system
//! - [`blocks`]: grid entropy, block approximation, Alexandrov scaling check
//! - [`gap`]: duality gap field, gap inequality, Laplace integrals, stability
//! - [`rates`]: epsilon sweeps and rate fitting
//!
//! Everything is deterministic: solvers are single-threaded over iterations
//! (inner reductions are row-parallel with a thread-count-independent result),
//! and all sampling takes explicit seeds.

pub mod blocks;
pub mod costs;
pub mod exact_ot;
pub mod gap;
pub mod measures;
pub mod numerics;
pub mod rates;
pub mod sinkhorn;

pub use costs::{CostConstants, CostKind, CostModel};
pub use exact_ot::{Coupling, DualPair};
pub use measures::{DensityKind, DensitySpec, DiscreteMeasure};
pub use rates::RateFit;
pub use sinkhorn::{SinkhornConfig, SinkhornResult};
