//! Configuration, data, training, metrics and rate-distortion evaluation.

pub mod config;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod train;

pub use config::{Fraction, StepSchedule, TrainConfig};
pub use data::Dataset;
pub use eval::{evaluate_image, evaluate_set, parse_rd_csv};
pub use metrics::{bd_rate, ms_ssim, psnr, MsSsim, RdPoint};
pub use train::{collect_qerr_stats, total_loss, train, Loss, StepReport};
