//! portanet-core: a single-source, backend-switchable mini deep-learning
//! framework. Dense containers, a deterministic data-parallel kernel engine,
//! the classic layer blocks (convolution via im2col + gemm, pooling with an
//! origin mask, inner product, leaky ReLU, softmax and softmax loss), an SGD
//! solver, snapshotting, and MNIST / CIFAR-10 ingestion.
//!
//! One kernel codebase serves every execution target: the backend is picked
//! at run configuration through [`engine::Policy`], and all kernels are
//! write-disjoint with fixed internal loop order, so results are bitwise
//! identical no matter the policy or thread count.

pub mod blob;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod net;
pub mod rng;
pub mod snapshot;
pub mod solver;
pub mod tensor;

pub use blob::Blob;
pub use engine::{Engine, Policy};
pub use error::{Error, Result};
pub use net::{Net, NetSpec};
pub use solver::{Solver, SolverSpec, TrainEvent};
pub use tensor::{MatrixView, MatrixViewMut, Shape, Tensor};
