//! Physics-conditioned waypoint network, its gradients and training loop.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradcheck, GradcheckReport, GroupCheck};
pub use model::{
    backward, backward_into, decode_waypoints, encode_physics, forward, forward_trace, fuse,
    l1_loss, PolicyInput, Trace, WaypointPlan,
};
pub use params::{ArchConfig, Group, Layout, PolicyParams, Variant};
pub use train::{
    evaluate_loss, fine_tune, prepare_samples, train, EpochStats, LrSchedule, Sample, TrainConfig,
    TrainHistory,
};
