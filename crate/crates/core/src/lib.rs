//! Distribution-aligned training for imbalanced regression.
//!
//! The crate estimates a label density on a grid, turns it into the sorted
//! "expected labels" for a batch, and trains a small 1-D convolutional
//! regressor on the sum of a per-sample error and an error between the soft
//! sorted predictions and those expected labels. It also provides the
//! evaluation metrics, a synthetic signal generator, residual calibration,
//! and the experiment pipeline driven by the `distreg` command-line tool.

pub mod autodiff;
pub mod calibration;
pub mod error;
pub mod experiment;
pub mod label_distribution;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod softsort;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use label_distribution::{
    estimate_density, expected_labels, few_shot_region, Bandwidth, ExpectedLabels, LabelDensity, LabelSpace,
    RegionMask,
};
pub use loss::{BaseMetric, LossConfig};
pub use nn::{Net1DLite, NetConfig};
pub use softsort::{soft_sort, Direction, SoftSortConfig};
pub use train::{train, TrainConfig};
