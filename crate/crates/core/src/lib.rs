//! Regular polytope fixed classifiers.
//!
//! A network whose final classifier layer is frozen to the vertices of a
//! regular polytope (d-simplex, d-orthoplex or d-cube) learns features that
//! align with those vertices. Combined with an additive angular margin equal
//! to the polytope's vertex angle `phi`, the features become both maximally
//! separated and maximally compact on the hypersphere.
//!
//! The crate is organised bottom-up:
//!
//! - [`polytope`]: vertex generators, embedding dimension, closed-form `phi`.
//! - [`losses`]: the softmax loss family with analytic feature gradients.
//! - [`network`]: a PReLU MLP backbone with Adam and a fixed or trainable head.
//! - [`data`]: IDX loading, synthetic blobs and seeded mini-batching.
//! - [`metrics`]: angular compactness/separation reports and CSV export.
//! - [`cli`]: the commands behind the `reponet` binary.
//!
//! ```
//! use reponet::polytope::{make_simplex, verify_geometry};
//!
//! let w = make_simplex(10).unwrap();
//! assert_eq!(w.dim(), 9);
//! assert!(verify_geometry(&w, 1e-10).unwrap().passed);
//! ```

pub mod cli;
pub mod data;
mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod polytope;

pub use error::{Error, Result};
pub use losses::{LossKind, LossResult};
pub use network::{MlpModel, TrainConfig};
pub use polytope::{ClassifierWeights, PolytopeKind};
