//! Federated learning simulator with sparse ternary compression of the
//! updates exchanged between clients and a parameter server.

pub mod codec;
pub mod compress;
pub mod data;
pub mod federation;
pub mod error;
pub mod model;
pub mod partition;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::FlatTensor;
