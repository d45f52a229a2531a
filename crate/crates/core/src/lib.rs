#![forbid(unsafe_code)]

//! End-to-end photo-to-sketch generation with a fully convolutional network.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — dense `(channels, height, width)` arrays and the
//!   differentiable primitives (valid convolution, ReLU, bilinear resize).
//! * [`network`] — layer stacks, parameter initialization, forward/backward,
//!   receptive-field arithmetic, and the binary model format.
//! * [`loss`] — the joint generative-discriminative objective and its
//!   gradients with respect to network outputs.
//! * [`data`] — netpbm image I/O, face alignment and cropping, XY-channel
//!   augmentation, dataset manifests, and a synthetic pair generator.
//! * [`training`] — seeded mini-batch SGD with loss-history logging.
//! * [`evaluation`] — pixel-wise reconstruction loss (PRL/MPRL) and the
//!   cumulative match score (CMS) verification protocol.
//!
//! All numeric kernels are generic over [`tensor::Scalar`] so that training
//! runs in `f32` while gradient checks instantiate the identical code paths
//! in `f64`.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ConvParams, Scalar, Tensor};
