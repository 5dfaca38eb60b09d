//! Facial attribute maps, a minimal convolutional-network engine, linear SVMs,
//! score fusion, evaluation protocols and gradient saliency for 3D facial
//! expression recognition.

pub mod attrmaps;
pub mod cnn;
pub mod eval;
pub mod expression;
pub mod imageio;
pub mod ftnsr;
pub mod linalg;
pub mod pipeline;
pub mod saliency;
pub mod scan;
pub mod svm;
pub mod synth;
pub mod tensor;

pub use expression::Expression;
pub use tensor::Tensor;
