//! Weighted denoising losses and the training loop.

pub mod ensemble;
pub mod loss;
pub mod optim;
pub mod regularizer;
pub mod tabular;
pub mod train;
pub mod weighting;

pub use ensemble::{member_index, train_ensemble_10, EnsembleOutput, PiecewiseDenoiser};
pub use loss::{loss, loss_terms, LossBatch};
pub use optim::{Adam, AdamConfig, Ema};
pub use regularizer::{penalty_value, spectral_norm_penalty, Penalty, RegSpec};
pub use tabular::{fit_tabular_denoiser, TabularCell, TabularGrid};
pub use train::{train, TrainConfig, TrainOutput};
pub use weighting::{WeightKind, WeightingScheme, DEFAULT_WEIGHT_CAP};
