//! Online distillation of a small segmentation student from a large
//! server-side teacher, with adaptive key-frame scheduling, a virtual-clock
//! network simulator and the closed-form throughput and traffic model.

pub mod analytics;
pub mod cli;
pub mod distill;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod protocol;
pub mod scheduler;
pub mod tensor;
pub mod videogen;
pub(crate) mod wire;

pub use wire::DecodeError;
