//! Fair representation learning with distributional contrastive
//! disentanglement.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod mlp;
pub mod model;
pub mod objectives;
pub mod probdist;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Gradients, Var};
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, loss_and_grads, FiniteDiffReport, GradientSet};
pub use data::{Dataset, PairBatch, PairedDataset, PairingStrategy};
pub use mlp::{Activation, Linear, Mlp};
pub use model::{FarconModel, ModelDims, PairNoise, PairOutputs};
pub use objectives::{Kernel, LossBreakdown, LossWeights};
pub use probdist::{DiagGaussian, StandardPrior};
pub use tensor::Tensor;
pub use train::{FarconConfig, TrainHistory};
pub use eval::{ProbeConfig, RunMetrics};
