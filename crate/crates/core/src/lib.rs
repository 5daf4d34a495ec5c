//! Few-shot entity recognition on document pages as label-aware sequence
//! generation over a layout-aware prefix language model.

pub mod analysis;
pub mod codec;
pub mod decode;
pub mod doc;
pub mod error;
pub mod eval;
pub mod model;
pub mod par;
pub mod suite;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
