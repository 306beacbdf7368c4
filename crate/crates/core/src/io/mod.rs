//! Files: images, checkpoints and run configuration.

pub mod checkpoint;
pub mod config;
pub mod image;

pub use self::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use self::config::RunConfig;
pub use self::image::{read_image, write_image};
