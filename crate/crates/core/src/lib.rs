//! Normal/abnormal pap-smear cell classification toolkit.
//!
//! The crate bundles everything needed to compare classical classifiers and
//! a small convolutional network on the Herlev cell dataset:
//!
//! * [`data`]: feature-table and image loading, label mapping, scaling,
//!   stratified splits and synthetic datasets.
//! * [`metrics`]: confusion matrix and the five binary metrics, computed
//!   exactly over integer counts.
//! * [`classifiers`]: logistic regression, k-NN, RBF SVM (SMO), Gaussian
//!   naive Bayes, entropy decision tree, random forest and second-order
//!   gradient boosting behind one fit/predict contract.
//! * [`nn`]: a minimal tensor engine and the 4-convolution CNN with
//!   backpropagation, Adam and finite-difference gradient checking.
//! * [`tuning`]: grid expansion, stratified k-fold and parallel search.
//! * [`bench`]: experiment configuration, the end-to-end comparison run and
//!   report rendering.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for the common cases.

pub mod bench;
pub mod classifiers;
pub mod data;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod tuning;

pub use scalar::Real;

pub type FeatureTable64 = data::FeatureTable<f64>;
pub type FeatureTable32 = data::FeatureTable<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Model64 = classifiers::Model<f64>;
pub type Model32 = classifiers::Model<f32>;
pub type Pipeline64 = classifiers::Pipeline<f64>;
pub type Pipeline32 = classifiers::Pipeline<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type ImageSample64 = data::ImageSample<f64>;
