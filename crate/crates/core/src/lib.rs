//! Receptive-field attention convolution, multi-dilation receptive-field
//! enhancement, exponential channel attention, soft-NMS, mAP evaluation and
//! box-aware augmentation for single-stage object detectors.

pub mod augment;
pub mod blocks;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod postprocess;
pub mod tensor;

pub use augment::{AugmentOp, ImageRecord};
pub use error::{Error, Location, Result};
pub use metrics::{EvalConfig, EvalReport, GroundTruthBox, PredictionRecord};
pub use postprocess::{BBox, Detection, SuppressionConfig, SuppressionMode};
pub use tensor::{ConvSpec, Element, GradReport, Tensor, Var};
