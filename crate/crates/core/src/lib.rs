//! Segmentation quality toolkit: label volume I/O, the full metric battery,
//! segmentation losses, expert-rating analytics, the statistical models used
//! to relate ratings to scores, and compound losses built from fitted models.

pub mod volume;
pub mod distance_transform;
pub mod metrics;
pub mod losses;
pub mod table;
pub mod ratings;
pub mod seed;
pub mod stats;
pub mod compound;
pub mod experiment;
pub mod replica;
