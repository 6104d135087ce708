//! Convolutional and residual threshold regressors, written from scratch.

pub mod adam;
pub mod arch;
pub mod io;
pub mod kernels;
pub mod lipschitz;
pub mod model;
pub mod train;

pub use adam::AdamState;
pub use arch::{build_cnn10, build_cnn5, build_resnet10, Arch, ArchScale};
pub use io::{decode_model, encode_model, load_model, load_model_expect, save_model};
pub use lipschitz::{alpha, lipschitz_bound, lipschitz_formula};
pub use model::{LayerParams, LayerSpec, Mode, ModelSpec, ModelState, Network, NnError, Tensor, Trace};
pub use train::{eval_mse, image_input, mse_loss, predict_all, train, TrainConfig, TrainOutcome, TrainSet};
