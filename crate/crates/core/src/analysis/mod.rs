//! Evaluation metrics.

pub mod distance;
pub mod lipschitz;
pub mod psnr;
pub mod spectral;
pub mod twosample;

pub use distance::{distance_to_trainset, pairwise_distance_matrix, write_matrix_csv};
pub use lipschitz::{lipschitz_profile, local_maxima, uniform_grid, LipschitzProfile};
pub use psnr::{default_data_max, psnr, psnr_curve, PsnrCurve, PsnrProbe, PSNR_CAP};
pub use spectral::{jacobian_spectral_norm, power_iteration, PowerEstimate, DEFAULT_POWER_ITERS};
pub use twosample::{median_bandwidth, permutation_test, two_sample_statistic, TwoSampleKind, TwoSampleReport};
