//! Rationale quality metrics, the degradation sweep, plain-text rendering and
//! exact mutual information on finite joints.

mod degradation;
mod metrics;
mod mi;
mod render;

pub use degradation::{default_grid, degradation_sweep, CurvePoint, DegradationCurve};
pub use metrics::{evaluate, predict_examples, token_metrics, ExamplePrediction, MetricsRecord, TokenMetrics};
pub use mi::{mutual_information, redundant_joint, FiniteJoint, MutualInformation};
pub use render::render_rationale;
