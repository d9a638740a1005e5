//! Hybrid limit cycles: simulation, Poincaré analysis, certificates and
//! robustness checks for hybrid systems with guard-defined jump sets.
//!
//! The core is generic over the scalar type; `f64` aliases are provided for
//! the common case.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod error;
pub mod flow;
pub mod certify;
pub mod cycles;
pub mod discrete;
pub(crate) mod geom;
pub mod linalg;
pub mod model;
pub mod robust;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use flow::{flow_until_impact, rk4_step, time_to_impact, FlowResult, FlowTermination, IntegratorConfig};
pub use model::{
    flow_membership, jump_membership, lie_derivative_h, lie_derivative_h_fd, validate_assumptions, HybridSystem,
    HybridTime, Region, ValidationReport, Verdict,
};
pub use scalar::Scalar;
pub use sim::{distance_to_samples, omega_limit_estimate, simulate, ArcTermination, HybridArc, JumpRecord, Segment};

pub type HybridSystemF64 = HybridSystem<f64>;
pub type HybridSystemF32 = HybridSystem<f32>;
pub type HybridArcF64 = HybridArc<f64>;
pub type IntegratorConfigF64 = IntegratorConfig<f64>;
