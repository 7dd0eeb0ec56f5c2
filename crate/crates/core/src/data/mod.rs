//! Feature containers, synthetic tasks, and few-shot sampling.

pub mod container;
pub mod rng;
pub mod sampling;
pub mod synthetic;

pub use container::{
    load_bank, load_container, load_container_with_meta, save_bank, save_container,
    ContainerSidecar,
};
pub use rng::Rng;
pub use sampling::{sample_few_shot, SupportSet};
pub use synthetic::{generate_synthetic, Geometry, Shift, SyntheticTask, SyntheticTaskSpec};
