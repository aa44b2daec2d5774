//! Frozen extractor, expandable linear head, losses and the optimizer.

mod extractor;
mod head;
pub mod loss;
mod sgd;

pub use extractor::{Extractor, ExtractorSpec};
pub use head::{HeadGrad, HeadInit, LinearHead};
pub use sgd::{cosine_lr, SgdConfig, SgdState};
