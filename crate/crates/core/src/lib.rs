pub mod error;
pub mod imgproc;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod plane;
pub mod scalar;
pub mod segmenter;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::{Gradients, Tape, TensorGrid, Var};

pub type Grid32 = TensorGrid<f32>;
pub type Grid64 = TensorGrid<f64>;
pub type Params32 = network::ModelParams<f32>;
pub type Params64 = network::ModelParams<f64>;
pub type State32 = trainer::TrainState<f32>;
pub type State64 = trainer::TrainState<f64>;
