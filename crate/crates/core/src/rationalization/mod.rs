//! The extractor-predictor game: Gumbel-softmax masks, the three extractor
//! objectives, and the alternating trainer.

mod loss;
mod mask;
mod model;
mod train;

pub use loss::{extractor_loss, predictor_loss, ExtractorLoss};
pub use mask::{deterministic_mask, regularizer_value, sample_mask, sparsity_regularizer, Mask, SampledMask};
pub use model::{Batch, BatchInput, BatchOutput, Extractor, Game, Modality, Predictor};
pub use train::{batches, train, train_epoch, EpochRecord, StepMetrics};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which loss the extractor minimizes. The predictor always minimizes
/// cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "MMI")]
    Mmi,
    #[serde(rename = "N2R")]
    N2r,
    #[serde(rename = "MMI_N2R")]
    MmiN2r,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::Mmi, ObjectiveKind::N2r, ObjectiveKind::MmiN2r];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Mmi => "MMI",
            ObjectiveKind::N2r => "N2R",
            ObjectiveKind::MmiN2r => "MMI_N2R",
        }
    }

    pub fn uses_cross_entropy(self) -> bool {
        matches!(self, ObjectiveKind::Mmi | ObjectiveKind::MmiN2r)
    }

    pub fn uses_norm(self) -> bool {
        matches!(self, ObjectiveKind::N2r | ObjectiveKind::MmiN2r)
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['+', '-'], "_").as_str() {
            "MMI" => Ok(ObjectiveKind::Mmi),
            "N2R" => Ok(ObjectiveKind::N2r),
            "MMI_N2R" => Ok(ObjectiveKind::MmiN2r),
            _ => Err(Error::Config(format!("unknown objective `{s}` (expected MMI, N2R or MMI_N2R)"))),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub objective: ObjectiveKind,
    /// Weight of the sparsity term.
    pub lambda1: f64,
    /// Weight of the coherence term.
    pub lambda2: f64,
    /// Target fraction of selected positions.
    pub sparsity: f64,
    pub temperature: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Floor applied to the representation norm inside the log.
    pub norm_floor: f64,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Mmi,
            lambda1: 1.0,
            lambda2: 1.0,
            sparsity: 0.15,
            temperature: 1.0,
            lr: 1e-4,
            batch_size: 128,
            epochs: 50,
            norm_floor: 1e-8,
            embedding_dim: 32,
            hidden_dim: 64,
            seed: 1,
        }
    }
}

impl GameConfig {
    /// Defaults for graph data, where the motif covers about a fifth of the nodes.
    pub fn for_graphs() -> Self {
        Self {
            sparsity: 0.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return fail(format!("lambda1 and lambda2 must be >= 0, got {} and {}", self.lambda1, self.lambda2));
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return fail(format!("sparsity must lie in (0, 1), got {}", self.sparsity));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.norm_floor > 0.0) {
            return fail(format!("norm_floor must be > 0, got {}", self.norm_floor));
        }
        if self.batch_size == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 {
            return fail("batch_size, embedding_dim and hidden_dim must be positive".into());
        }
        Ok(())
    }
}
