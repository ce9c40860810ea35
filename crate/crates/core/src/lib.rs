//! Data-augmentation vision transformer: a small ViT encoder with
//! hierarchical attention selection and attention-guided crop augmentation.

pub mod augment;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod has;
pub mod image;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
