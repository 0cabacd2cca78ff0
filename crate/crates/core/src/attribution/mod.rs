//! Causal attribution: decoded bits against the concept registry.

pub mod protocol;
pub mod report;
pub mod score;

pub use protocol::{
    entry_truth, evaluate_encrypted, evaluate_heldout, evaluate_images, evaluate_sampled, sample_attributed, Attributor,
    HeldoutProtocol,
};
pub use report::{EvalRecord, EvalReport, HeadStats};
pub use score::{agreement, attribute, attribute_dual, attribute_image, null_threshold, AttributionResult};
