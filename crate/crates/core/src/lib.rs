//! Functional and analytic model of a dual-engine depthwise-separable
//! convolution accelerator.
//!
//! The crate is split along the hardware boundaries:
//!
//! * [`workload`]: layer/network geometry, tiling, MAC counting.
//! * [`fixed`]: Q8.16 arithmetic and the fused Non-Conv affine unit.
//! * [`tensor`]: integer tensors and their binary file format.
//! * [`engine`]: bit-exact DWC/PWC engines, fused and sequential layer
//!   schedules with access counters and cycle traces.
//! * [`reference`]: naive oracles that share no code with [`engine`].
//! * [`dse`]: closed-form loop-order / tiling exploration.
//! * [`timing`]: analytic latency, throughput and utilization.
//! * [`cli`]: the command-line front end and report writers.

pub mod cli;
pub mod dse;
pub mod engine;
pub mod error;
pub mod fixed;
pub mod reference;
pub mod tensor;
pub mod timing;
pub mod workload;

pub use error::{Error, Result};
