//! Inertial dead-reckoning for wheeled vehicles.
//!
//! A right-invariant extended Kalman filter on SE₂(3) with IMU biases and the
//! IMU-to-car alignment in the state. Zero lateral and vertical car velocity
//! are fused as pseudo-measurements whose noise is predicted per step by a
//! small dilated convolutional network.

pub mod adapter;
pub mod config;
pub mod data;
pub mod eval;
pub mod geom;
pub mod iekf;
pub mod model;
pub mod train;

pub use adapter::{load_weights, save_weights, AdapterWeights, NoiseScale, WeightsError};
pub use config::{ConfigError, FilterConfig};
pub use data::{
    export_poses, generate_synthetic, import_poses, load_sequence, write_kitti_raw, DataError, PoseFormat, Segment,
    Sequence, SyntheticSpec,
};
pub use eval::{relative_errors, summarize, ErrorReport, EvalError, Summary};
pub use geom::{ExtendedPose, Mat3, Pose3, Vec3};
pub use iekf::{FilterError, FilterRun, Iekf, NoiseSchedule};
pub use model::{ErrorCovariance, FilterState, ImuSample, InitialBeliefs, MeasurementNoise, ProcessNoise};
pub use train::{run_training, LearnableSet, TrainConfig, TrainError, TrainingOutcome};
