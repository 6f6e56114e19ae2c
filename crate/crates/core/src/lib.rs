//! Time-discretized pooling: model, relaxations, feasible-solution
//! recovery and rescheduling.

pub mod error;
pub mod ffs;
pub mod generator;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod qcqp;
pub mod relax;
pub mod report;
pub mod reschedule;
pub mod simplex;
pub mod standard;

pub use error::{PoolingError, Result};
pub use model::{
    residuals, sucs_ratio, Arc, Instance, InstanceData, Node, NodeKind, ResidualFamily, ResidualReport, Schedule,
    VariableLayout,
};
pub use qcqp::{build_qcqp, eliminate_binaries, eval, Qcqp};
