use std::rc::Rc;

use super::loss::{extractor_loss, predictor_loss};
use super::mask::{deterministic_mask, sample_mask, sparsity_regularizer};
use super::GameConfig;
use crate::data::{Example, ExampleKind, Input};
use crate::encoders::{
    batch_adjacency, pool_representation, EmbeddingTable, GcnEncoder, GruEncoder, Linear, Representation,
};
use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, AdamState, Bound, ParamStore, Rng, SparseMatrix, Tape, Tensor, Var};

/// Input type of a game, fixing the encoder family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Text { vocab_size: usize },
    Graph { feature_dim: usize },
}

impl Modality {
    /// Infers the modality from a corpus: vocabulary is one past the largest
    /// token id, feature width is taken from the first graph.
    pub fn infer<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Result<Self> {
        let mut found: Option<Modality> = None;
        for ex in examples {
            let this = match &ex.input {
                Input::Text { tokens } => Modality::Text {
                    vocab_size: tokens.iter().max().map_or(0, |m| m + 1),
                },
                Input::Graph { .. } => Modality::Graph {
                    feature_dim: ex.feature_dim().unwrap_or(0),
                },
            };
            found = Some(match (found, this) {
                (None, m) => m,
                (Some(Modality::Text { vocab_size: a }), Modality::Text { vocab_size: b }) => {
                    Modality::Text { vocab_size: a.max(b) }
                }
                (Some(Modality::Graph { feature_dim: a }), Modality::Graph { feature_dim: b }) if a == b => {
                    Modality::Graph { feature_dim: a }
                }
                (Some(Modality::Graph { feature_dim: a }), Modality::Graph { feature_dim: b }) => {
                    return Err(Error::Config(format!("graphs have feature widths {a} and {b}")))
                }
                _ => return Err(Error::Config("corpus mixes text and graph examples".into())),
            });
        }
        found.ok_or_else(|| Error::Config("cannot infer modality from an empty corpus".into()))
    }

    pub fn kind(self) -> ExampleKind {
        match self {
            Modality::Text { .. } => ExampleKind::Text,
            Modality::Graph { .. } => ExampleKind::Graph,
        }
    }
}

#[derive(Clone, Debug)]
pub enum BatchInput {
    /// Token ids laid out `[batch, positions]`.
    Text { ids: Vec<usize> },
    /// Node features `[batch * positions, feature_dim]` and the block-diagonal
    /// normalized adjacency of the batch.
    Graph {
        features: Tensor,
        adjacency: Rc<SparseMatrix>,
    },
}

/// Examples of one kind and equal length stacked together.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub positions: usize,
    pub input: BatchInput,
    pub labels: Vec<usize>,
    /// Flattened `[batch, positions]` gold masks, present only when every
    /// example carries one.
    pub gold: Option<Vec<bool>>,
}

impl Batch {
    pub fn new(examples: &[&Example]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::invalid("train_step", "empty batch"))?;
        let positions = first.len();
        if positions == 0 {
            return Err(Error::invalid("extract_mask", "example with no positions"));
        }
        if let Some(bad) = examples.iter().find(|e| e.len() != positions || e.kind() != first.kind()) {
            return Err(Error::invalid(
                "batch",
                format!("batch mixes lengths or kinds ({} vs {positions})", bad.len()),
            ));
        }
        let labels = examples.iter().map(|e| e.label).collect();
        let gold = examples
            .iter()
            .map(|e| e.rationale.clone())
            .collect::<Option<Vec<_>>>()
            .map(|g| g.concat());
        let input = match first.kind() {
            ExampleKind::Text => BatchInput::Text {
                ids: examples.iter().flat_map(|e| e.tokens().unwrap().iter().copied()).collect(),
            },
            ExampleKind::Graph => {
                let width = first.feature_dim().unwrap_or(0);
                let mut data = Vec::with_capacity(examples.len() * positions * width);
                let mut graphs = Vec::with_capacity(examples.len());
                for e in examples {
                    let Input::Graph { num_nodes, edges, features } = &e.input else { unreachable!() };
                    if features.iter().any(|f| f.len() != width) {
                        return Err(Error::invalid("batch", "graphs with different feature widths"));
                    }
                    data.extend(features.iter().flatten());
                    graphs.push((*num_nodes, edges.as_slice()));
                }
                BatchInput::Graph {
                    features: Tensor::new(vec![examples.len() * positions, width], data)?,
                    adjacency: Rc::new(batch_adjacency(graphs)?),
                }
            }
        };
        Ok(Self {
            size: examples.len(),
            positions,
            input,
            labels,
            gold,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Extractor {
    Text {
        embedding: EmbeddingTable,
        encoder: GruEncoder,
        head: Linear,
    },
    Graph {
        encoder: GcnEncoder,
        head: Linear,
    },
}

impl Extractor {
    pub fn new(store: &mut ParamStore, modality: Modality, cfg: &GameConfig, rng: &mut Rng) -> Self {
        match modality {
            Modality::Text { vocab_size } => {
                let embedding = EmbeddingTable::new(store, "extractor.embedding", vocab_size, cfg.embedding_dim, rng);
                let encoder = GruEncoder::new(store, "extractor.gru", cfg.embedding_dim, cfg.hidden_dim, rng);
                let head = Linear::new(store, "extractor.head", encoder.output_dim(), 2, rng);
                init_selection_bias(store, &head, cfg.sparsity);
                Extractor::Text {
                    embedding,
                    encoder,
                    head,
                }
            }
            Modality::Graph { feature_dim } => {
                let encoder = GcnEncoder::new(store, "extractor.gcn", feature_dim, cfg.hidden_dim, cfg.hidden_dim, rng);
                let head = Linear::new(store, "extractor.head", cfg.hidden_dim, 2, rng);
                init_selection_bias(store, &head, cfg.sparsity);
                Extractor::Graph { encoder, head }
            }
        }
    }

    /// Select / not-select logits `[batch, positions, 2]`.
    pub fn logits(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        match (self, &batch.input) {
            (Extractor::Text { embedding, encoder, head }, BatchInput::Text { ids }) => {
                let x = embedding.lookup(tape, bound, ids, &[batch.size, batch.positions])?;
                let h = encoder.forward(tape, bound, x)?;
                head.forward(tape, bound, h)
            }
            (Extractor::Graph { encoder, head }, BatchInput::Graph { features, adjacency }) => {
                let x = tape.constant(features.clone());
                let h = encoder.forward(tape, bound, x, adjacency)?;
                let h = tape.relu(h);
                let logits = head.forward(tape, bound, h)?;
                tape.reshape(logits, &[batch.size, batch.positions, 2])
            }
            _ => Err(Error::invalid("extractor", "batch kind does not match the model")),
        }
    }
}

/// Starts the select probability near the target sparsity so the sparsity
/// term does not dominate the first updates.
fn init_selection_bias(store: &mut ParamStore, head: &Linear, sparsity: f64) {
    store
        .get_mut(head.bias())
        .data_mut()
        .copy_from_slice(&[sparsity.ln(), (1.0 - sparsity).ln()]);
}

#[derive(Clone, Debug)]
pub enum Predictor {
    Text {
        embedding: EmbeddingTable,
        encoder: GruEncoder,
        classifier: Linear,
    },
    Graph {
        encoder: GcnEncoder,
        classifier: Linear,
    },
}

impl Predictor {
    pub fn new(store: &mut ParamStore, modality: Modality, cfg: &GameConfig, rng: &mut Rng) -> Self {
        match modality {
            Modality::Text { vocab_size } => {
                let embedding = EmbeddingTable::new(store, "predictor.embedding", vocab_size, cfg.embedding_dim, rng);
                let encoder = GruEncoder::new(store, "predictor.gru", cfg.embedding_dim, cfg.hidden_dim, rng);
                let classifier = Linear::new(store, "predictor.classifier", encoder.output_dim(), 2, rng);
                Predictor::Text {
                    embedding,
                    encoder,
                    classifier,
                }
            }
            Modality::Graph { feature_dim } => {
                let encoder = GcnEncoder::new(store, "predictor.gcn", feature_dim, cfg.hidden_dim, cfg.hidden_dim, rng);
                let classifier = Linear::new(store, "predictor.classifier", cfg.hidden_dim, 2, rng);
                Predictor::Graph { encoder, classifier }
            }
        }
    }

    /// Classifies the rationale candidate `mask ⊙ X`; `mask` is `[batch, positions]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch, mask: Var) -> Result<(Var, Representation)> {
        match (self, &batch.input) {
            (Predictor::Text { embedding, .. }, BatchInput::Text { ids }) => {
                let x = embedding.lookup(tape, bound, ids, &[batch.size, batch.positions])?;
                self.forward_embedded(tape, bound, x, mask)
            }
            (Predictor::Graph { encoder, classifier }, BatchInput::Graph { features, adjacency }) => {
                let x = tape.constant(features.clone());
                let flat = tape.reshape(mask, &[batch.size * batch.positions])?;
                let z = tape.row_scale(x, flat)?;
                let h = encoder.forward(tape, bound, z, adjacency)?;
                let h = tape.reshape(h, &[batch.size, batch.positions, encoder.output_dim])?;
                let repr = pool_representation(tape, h, mask)?;
                let logits = classifier.forward(tape, bound, repr.pooled)?;
                Ok((logits, repr))
            }
            _ => Err(Error::invalid("predictor", "batch kind does not match the model")),
        }
    }

    /// Text path from already-embedded tokens `[batch, positions, dim]`.
    pub fn forward_embedded(&self, tape: &mut Tape, bound: &Bound, embedded: Var, mask: Var) -> Result<(Var, Representation)> {
        let Predictor::Text { encoder, classifier, .. } = self else {
            return Err(Error::invalid("predictor", "embedded input requires a text predictor"));
        };
        let z = tape.row_scale(embedded, mask)?;
        let h = encoder.forward(tape, bound, z)?;
        let repr = pool_representation(tape, h, mask)?;
        let logits = classifier.forward(tape, bound, repr.pooled)?;
        Ok((logits, repr))
    }
}

/// Noise-free predictions for one batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// `[batch, positions]` binary mask actually fed to the predictor.
    pub mask: Tensor,
    /// `[batch, 2]` class logits.
    pub logits: Tensor,
    pub predictions: Vec<usize>,
    /// Per-example cross-entropy against the batch labels.
    pub losses: Vec<f64>,
    /// Per-example `‖Enc(Z)‖₂`.
    pub norms: Vec<f64>,
}

/// Extractor, predictor and their optimizer state.
#[derive(Clone, Debug)]
pub struct Game {
    pub config: GameConfig,
    pub modality: Modality,
    pub extractor: Extractor,
    pub predictor: Predictor,
    pub extractor_params: ParamStore,
    pub predictor_params: ParamStore,
    extractor_adam: AdamState,
    predictor_adam: AdamState,
}

/// RNG stream used for parameter initialization.
const INIT_STREAM: u64 = 0x1_0000;

impl Game {
    pub fn new(config: GameConfig, modality: Modality) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::with_stream(config.seed, INIT_STREAM);
        let mut extractor_params = ParamStore::new();
        let extractor = Extractor::new(&mut extractor_params, modality, &config, &mut rng);
        let mut predictor_params = ParamStore::new();
        let predictor = Predictor::new(&mut predictor_params, modality, &config, &mut rng);
        let adam = AdamConfig::with_lr(config.lr);
        Ok(Self {
            extractor_adam: AdamState::new(adam, &extractor_params),
            predictor_adam: AdamState::new(adam, &predictor_params),
            config,
            modality,
            extractor,
            predictor,
            extractor_params,
            predictor_params,
        })
    }

    /// Predictor update on detached masks. Returns the batch cross-entropy.
    pub fn predictor_phase(&mut self, batch: &Batch, rng: &mut Rng) -> Result<f64> {
        let mut tape = Tape::new();
        let ext = self.extractor_params.bind(&mut tape, true);
        let pred = self.predictor_params.bind(&mut tape, true);
        let logits = self.extractor.logits(&mut tape, &ext, batch)?;
        let sampled = sample_mask(&mut tape, logits, Some(rng), self.config.temperature)?;
        let mask = tape.detach(sampled.mask);
        let (class_logits, _) = self.predictor.forward(&mut tape, &pred, batch, mask)?;
        let loss = predictor_loss(&mut tape, class_logits, &batch.labels)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(non_finite("predictor", value, batch));
        }
        let grads = tape.backward(loss)?;
        self.extractor_params.accumulate(&ext, &grads)?;
        self.predictor_params.accumulate(&pred, &grads)?;
        debug_assert!(self.extractor_params.grads_all_zero());
        self.extractor_params.zero_grad();
        self.predictor_adam.step(&mut self.predictor_params)?;
        Ok(value)
    }

    /// Extractor update through the frozen predictor. Returns the loss, the
    /// number of representation norms that hit the floor and the fraction of
    /// positions the sampled masks selected.
    pub fn extractor_phase(&mut self, batch: &Batch, rng: &mut Rng) -> Result<(f64, usize, f64)> {
        let cfg = &self.config;
        let mut tape = Tape::new();
        let ext = self.extractor_params.bind(&mut tape, true);
        let pred = self.predictor_params.bind(&mut tape, false);
        let logits = self.extractor.logits(&mut tape, &ext, batch)?;
        let sampled = sample_mask(&mut tape, logits, Some(rng), cfg.temperature)?;
        let omega = sparsity_regularizer(&mut tape, sampled.soft, cfg.lambda1, cfg.lambda2, cfg.sparsity)?;
        let (class_logits, repr) = self.predictor.forward(&mut tape, &pred, batch, sampled.mask)?;
        let loss = extractor_loss(
            &mut tape,
            cfg.objective,
            &repr,
            class_logits,
            &batch.labels,
            omega,
            cfg.norm_floor,
        )?;
        let value = tape.value(loss.loss).item();
        if !value.is_finite() {
            return Err(non_finite("extractor", value, batch));
        }
        let grads = tape.backward(loss.loss)?;
        self.extractor_params.accumulate(&ext, &grads)?;
        self.extractor_adam.step(&mut self.extractor_params)?;
        let selected = sampled.hard.data().iter().sum::<f64>() / sampled.hard.numel() as f64;
        Ok((value, loss.clamped, selected))
    }

    /// Deterministic masks and predictions for a batch.
    pub fn predict(&self, batch: &Batch) -> Result<BatchOutput> {
        let mut tape = Tape::new();
        let ext = self.extractor_params.bind(&mut tape, false);
        let logits = self.extractor.logits(&mut tape, &ext, batch)?;
        let mask = deterministic_mask(tape.value(logits))?;
        self.predict_with_mask(batch, &mask)
    }

    /// Runs the predictor on a caller-supplied `[batch, positions]` mask.
    pub fn predict_with_mask(&self, batch: &Batch, mask: &Tensor) -> Result<BatchOutput> {
        let mut tape = Tape::new();
        let pred = self.predictor_params.bind(&mut tape, false);
        let m = tape.constant(mask.clone());
        let (logits, repr) = self.predictor.forward(&mut tape, &pred, batch, m)?;
        self.finish(tape, batch, mask, logits, repr)
    }

    /// Text predictor on explicit embeddings `[batch, positions, dim]`.
    pub fn predict_embedded(&self, batch: &Batch, embedded: Tensor, mask: &Tensor) -> Result<BatchOutput> {
        let mut tape = Tape::new();
        let pred = self.predictor_params.bind(&mut tape, false);
        let x = tape.constant(embedded);
        let m = tape.constant(mask.clone());
        let (logits, repr) = self.predictor.forward_embedded(&mut tape, &pred, x, m)?;
        self.finish(tape, batch, mask, logits, repr)
    }

    /// Predictor-side token embeddings of a text batch.
    pub fn predictor_embeddings(&self, batch: &Batch) -> Result<Tensor> {
        let (Predictor::Text { embedding, .. }, BatchInput::Text { ids }) = (&self.predictor, &batch.input) else {
            return Err(Error::invalid("predictor", "embeddings exist only for text"));
        };
        let mut tape = Tape::new();
        let pred = self.predictor_params.bind(&mut tape, false);
        let x = embedding.lookup(&mut tape, &pred, ids, &[batch.size, batch.positions])?;
        Ok(tape.value(x).clone())
    }

    fn finish(&self, mut tape: Tape, batch: &Batch, mask: &Tensor, logits: Var, repr: Representation) -> Result<BatchOutput> {
        let ce = tape.cross_entropy(logits, &batch.labels)?;
        let norms = tape.l2_norm(repr.pooled)?;
        let logits = tape.value(logits).clone();
        let predictions = logits.data().chunks(2).map(|c| usize::from(c[1] > c[0])).collect();
        Ok(BatchOutput {
            mask: mask.clone(),
            predictions,
            losses: tape.value(ce).data().to_vec(),
            norms: tape.value(norms).data().to_vec(),
            logits,
        })
    }
}

fn non_finite(phase: &str, value: f64, batch: &Batch) -> Error {
    Error::Numerical(format!(
        "{phase} loss is {value} on a batch of {} examples with {} positions (labels {:?})",
        batch.size, batch.positions, batch.labels
    ))
}
