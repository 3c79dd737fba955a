//! Segmentation toolkit for thin tubular structures: a serpentine deformable
//! convolution with per-tap learned offsets, multi-template feature fusion
//! with random drop regularization, cubical persistent homology with a
//! topology-matching loss term, overlap/topology metrics, a synthetic
//! curvilinear data generator, and a small encoder-decoder network trained
//! by a minimal reverse-mode tape engine.

pub mod conv;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod mask;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod optim;
pub mod oracle;
pub mod persistence;
pub mod snake;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod topo_loss;

pub use error::{Error, Result};
pub use tape::Tape;
pub use tensor::{Element, Tensor};
