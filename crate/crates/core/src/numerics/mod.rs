//! Dense tensor arithmetic and the deterministic random stream used by
//! every other module.

mod rng;
mod tensor;

pub use rng::RngStream;
pub use tensor::{batch_stats, matmul, Tensor};
