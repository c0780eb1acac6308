//! Minimal f64 tensor stack: kernels, reverse-mode tape, parameter store.

pub mod geometry;
pub mod ops;
pub mod store;
pub mod tape;

pub use store::{normal_init, xavier_init, Adam, ParamStore};
pub use tape::{masked_sse, Grads, Mat, NodeId, Tape, PAD};
