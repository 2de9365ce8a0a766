//! Posed, timestamped image datasets and the synthetic scene generator.

pub mod dataset;
pub mod synthetic;

pub use dataset::{load_dataset, read_init_points, write_dataset, write_init_points, FrameRecord, InitPoint, SceneDataset, Split};
pub use synthetic::{canned, generate_synthetic, Decimation, Primitive, Rig, SyntheticSpec, Trajectory, CANNED};
