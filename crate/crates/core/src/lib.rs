//! Joint review summarization and dual-view sentiment classification.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod hyper;
pub mod model;
pub mod par;
pub mod seed;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use hyper::HyperParams;
