//! Minimal reverse-mode autodiff over dense f64 matrices, plus the LSTM,
//! optimizer and checkpoint pieces built on it.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod lstm;
pub mod params;

pub use adam::{adam_step, global_norm, AdamConfig, OptState};
pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, NodeId};
pub use lstm::{Dropout, Lstm, LstmState, StateValue};
pub use params::{Mat, ParamId, ParamSet};
