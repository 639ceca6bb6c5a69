//! Dense arrays and reverse-mode differentiation for the layer set the
//! forecasting models use.

mod array;
mod conv;
mod graph;
mod init;
mod linear;
mod lstm;
mod norm;
mod ops;
mod optim;

pub use array::NdArray;
pub use conv::{Conv2dGeom, TConv1dGeom};
pub use graph::{BatchStats, Graph, Phase, Var};
pub use init::Initializer;
pub use lstm::LstmVars;
pub use norm::{RunningStats, BN_EPS, BN_MOMENTUM};
pub use optim::{lr_schedule, AdamState};
