pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod dct;
pub mod error;
mod gemm;
pub mod io;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Shape, Tensor};
