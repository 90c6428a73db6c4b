//! Micro-crack segmentation from spatio-temporal wave-field data.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod kv;
pub mod losses;
pub mod mda;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod wavegen;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_subset, GradCheckReport};
pub use kv::KvMap;
pub use losses::{LossConfig, LossKind};
pub use metrics::ConfusionCounts;
pub use model::{Model, ModelConfig};
pub use optim::{adam_step, AdamState};
pub use tensor::Tensor;
