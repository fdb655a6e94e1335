//! Dense arrays, the layer kernels of the pose network, reverse-mode
//! differentiation and the Adam optimizer.

mod adam;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use ops::{batch_norm, conv2d, fully_connected, relu, BatchNormConfig, ConvGeometry, Mode, Padding, RunningStats};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{BatchNormIds, NodeId, Tape};
pub use tensor::NdArray;
