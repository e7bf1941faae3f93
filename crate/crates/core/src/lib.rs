pub mod bench;
pub mod epipolar;
pub mod error;
pub mod image;
pub mod perception;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod toolbox;
pub mod voting;

pub use error::{Error, Result};
