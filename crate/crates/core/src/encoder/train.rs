//! Mini-batch training for stage one (EMD objective on categorical targets)
//! and stage two (squared error on continuous VAD targets).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::EncoderParams;
use super::optim::{Optimizer, OptimizerKind};
use super::vocab::Vocabulary;
use crate::distribution::DistributionTriple;
use crate::emd::total_loss;
use crate::error::{Error, Result};
use crate::labelspace::{AnnotationKind, AnnotationVector, Dim, LabelSpace};
use crate::lexicon::VadPoint;

/// Epochs during which only the regression head is updated in stage two.
pub const FREEZE_EPOCHS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without validation improvement.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            optimizer: OptimizerKind::Adam,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch size, max epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A tokenized categorical example with its sorted target triple.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub target: DistributionTriple,
}

impl EncodedExample {
    pub fn new(
        vocab: &Vocabulary,
        text: &str,
        space: &LabelSpace,
        ann: &AnnotationVector,
    ) -> Result<Self> {
        Ok(Self {
            ids: vocab.encode(text),
            target: DistributionTriple::target(space, ann)?,
        })
    }
}

/// A tokenized example with a continuous VAD target in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VadExample {
    pub ids: Vec<usize>,
    pub target: [f64; 3],
}

impl VadExample {
    pub fn new(vocab: &Vocabulary, text: &str, target: VadPoint) -> Self {
        Self {
            ids: vocab.encode(text),
            target: target.to_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub encoder_checksum: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest monitored loss.
    pub params: EncoderParams,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Loss of one example under the EMD objective; accumulates gradients when asked.
pub fn example_loss(
    params: &EncoderParams,
    ex: &EncodedExample,
    space: &LabelSpace,
    kind: AnnotationKind,
    grads: Option<&mut EncoderParams>,
) -> Result<f64> {
    let cache = params.forward_cached(&ex.ids, kind)?;
    let loss = total_loss(&ex.target, &cache.distributions(), space, kind)?;
    if let Some(grads) = grads {
        let [v, a, d] = &loss.per_dim;
        params.backward(&cache, [&v.grad, &a.grad, &d.grad], grads);
    }
    Ok(loss.value)
}

/// Mean over the three dimensions of the squared regression error.
pub fn regression_loss(
    params: &EncoderParams,
    ex: &VadExample,
    kind: AnnotationKind,
    grads: Option<&mut EncoderParams>,
) -> Result<f64> {
    let cache = params.forward_cached(&ex.ids, kind)?;
    let (z, out) = params.regress_cached(&cache)?;
    let diff = [0, 1, 2].map(|k| out[k] - ex.target[k]);
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / 3.0;
    if let Some(grads) = grads {
        let dout = diff.map(|d| 2.0 * d / 3.0);
        params.backward_regression(&cache, &z, &dout, grads);
    }
    Ok(loss)
}

pub fn mean_loss(
    params: &EncoderParams,
    examples: &[EncodedExample],
    space: &LabelSpace,
    kind: AnnotationKind,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for ex in examples {
        sum += example_loss(params, ex, space, kind, None)?;
    }
    Ok(sum / examples.len() as f64)
}

pub fn mean_regression_loss(
    params: &EncoderParams,
    examples: &[VadExample],
    kind: AnnotationKind,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for ex in examples {
        sum += regression_loss(params, ex, kind, None)?;
    }
    Ok(sum / examples.len() as f64)
}

/// Callback invoked after every epoch with the stats and the current parameters.
pub type EpochObserver<'a> = &'a mut dyn FnMut(&EpochStats, &EncoderParams);

struct FitPlan<'a, L, V, T> {
    n_train: usize,
    example: L,
    valid: V,
    trainable: T,
    /// Epochs before this one are neither selected as best nor counted toward patience.
    min_epochs: usize,
    observer: Option<EpochObserver<'a>>,
}

fn fit<L, V, T>(
    mut params: EncoderParams,
    config: &TrainConfig,
    mut plan: FitPlan<'_, L, V, T>,
) -> Result<TrainOutcome>
where
    L: Fn(&EncoderParams, usize, &mut EncoderParams) -> Result<f64>,
    V: Fn(&EncoderParams) -> Result<Option<f64>>,
    T: Fn(usize) -> Vec<bool>,
{
    config.validate()?;
    if plan.n_train == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &params);
    let mut order: Vec<usize> = (0..plan.n_train).collect();
    let mut losses = vec![0.0; plan.n_train];
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, EncoderParams)> = None;
    let mut stale = 0;
    let mut batch_index = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let trainable = (plan.trainable)(epoch);
        for chunk in order.chunks(config.batch_size) {
            let mut grads = params.zeros_like();
            for &i in chunk {
                let loss = (plan.example)(&params, i, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        batch: batch_index,
                        what: format!("loss {loss} on example {i}"),
                    });
                }
                losses[i] = loss;
            }
            grads.scale(1.0 / chunk.len() as f64);
            optimizer.step(&mut params, &grads, &trainable);
            if !params.all_finite() {
                return Err(Error::Diverged {
                    batch: batch_index,
                    what: "parameters".into(),
                });
            }
            batch_index += 1;
        }
        // Summed in index order so the value does not depend on the shuffle.
        let train_loss = losses.iter().sum::<f64>() / plan.n_train as f64;
        let valid_loss = (plan.valid)(&params)?;
        let stats = EpochStats {
            epoch,
            train_loss,
            valid_loss,
            encoder_checksum: params.encoder_checksum(),
        };
        log::debug!("epoch {epoch}: train {train_loss:.6} valid {valid_loss:?}");
        if let Some(obs) = plan.observer.as_mut() {
            obs(&stats, &params);
        }
        trace.push(stats);

        if epoch < plan.min_epochs && epoch < config.max_epochs {
            continue;
        }
        let monitored = valid_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| monitored < *b) {
            best = Some((monitored, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        trace,
        best_epoch,
    })
}

/// Minimizes the mean summed EMD loss over mini-batches.
pub fn train(
    params: EncoderParams,
    train: &[EncodedExample],
    valid: Option<&[EncodedExample]>,
    space: &LabelSpace,
    kind: AnnotationKind,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(params, train, valid, space, kind, config, None)
}

pub fn train_observed(
    params: EncoderParams,
    train: &[EncodedExample],
    valid: Option<&[EncodedExample]>,
    space: &LabelSpace,
    kind: AnnotationKind,
    config: &TrainConfig,
    observer: Option<EpochObserver<'_>>,
) -> Result<TrainOutcome> {
    check_alignment(&params, space)?;
    for ex in train.iter().chain(valid.unwrap_or(&[])) {
        if ex.target.kind() != kind {
            return Err(Error::InvalidArgument(format!(
                "example annotated as {} in a {kind} run",
                ex.target.kind()
            )));
        }
    }
    if kind == AnnotationKind::Multi {
        let empty = train
            .iter()
            .filter(|ex| ex.target.get(Dim::V).iter().all(|&t| t == 0.0))
            .count();
        if empty > 0 {
            log::warn!("{empty} training examples have no positive labels; interclass term skipped for them");
        }
    }
    let plan = FitPlan {
        n_train: train.len(),
        example: |p: &EncoderParams, i: usize, g: &mut EncoderParams| {
            example_loss(p, &train[i], space, kind, Some(g))
        },
        valid: |p: &EncoderParams| match valid {
            Some(v) if !v.is_empty() => mean_loss(p, v, space, kind).map(Some),
            _ => Ok(None),
        },
        trainable: |_| vec![true; EncoderParams::ENCODER_TENSORS],
        min_epochs: 0,
        observer,
    };
    fit(params, config, plan)
}

/// Stage-two fine-tuning: attaches the regression head, trains only that head
/// for [`FREEZE_EPOCHS`] epochs, then trains every parameter.
pub fn finetune_vad(
    params: EncoderParams,
    train: &[VadExample],
    valid: Option<&[VadExample]>,
    kind: AnnotationKind,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    finetune_vad_observed(params, train, valid, kind, config, None)
}

pub fn finetune_vad_observed(
    mut params: EncoderParams,
    train: &[VadExample],
    valid: Option<&[VadExample]>,
    kind: AnnotationKind,
    config: &TrainConfig,
    observer: Option<EpochObserver<'_>>,
) -> Result<TrainOutcome> {
    for ex in train.iter().chain(valid.unwrap_or(&[])) {
        if ex.target.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument(
                "VAD targets must be rescaled to [0, 1]".into(),
            ));
        }
    }
    params.attach_reg_head(config.seed);
    let plan = FitPlan {
        n_train: train.len(),
        example: |p: &EncoderParams, i: usize, g: &mut EncoderParams| {
            regression_loss(p, &train[i], kind, Some(g))
        },
        valid: |p: &EncoderParams| match valid {
            Some(v) if !v.is_empty() => mean_regression_loss(p, v, kind).map(Some),
            _ => Ok(None),
        },
        trainable: |epoch| {
            let encoder = epoch > FREEZE_EPOCHS;
            let mut flags = vec![encoder; EncoderParams::ENCODER_TENSORS];
            flags.extend([true, true]);
            flags
        },
        min_epochs: FREEZE_EPOCHS,
        observer,
    };
    fit(params, config, plan)
}

fn check_alignment(params: &EncoderParams, space: &LabelSpace) -> Result<()> {
    params.check_shapes()?;
    if params.num_labels != space.len() {
        return Err(Error::LengthMismatch {
            expected: space.len(),
            actual: params.num_labels,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vocabulary, LabelSpace, Vec<EncodedExample>) {
        let space = LabelSpace::from_coords(
            vec!["calm".into(), "rage".into()],
            vec![
                VadPoint {
                    v: 0.9,
                    a: 0.1,
                    d: 0.6,
                },
                VadPoint {
                    v: 0.1,
                    a: 0.9,
                    d: 0.4,
                },
            ],
        )
        .unwrap();
        let texts: Vec<(String, usize)> = (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    ("serene".to_string(), 0)
                } else {
                    ("furious".to_string(), 1)
                }
            })
            .collect();
        let vocab = Vocabulary::build(texts.iter().map(|(t, _)| t.as_str()));
        let examples = texts
            .iter()
            .map(|(t, l)| {
                EncodedExample::new(
                    &vocab,
                    t,
                    &space,
                    &AnnotationVector::one_hot(2, *l).unwrap(),
                )
                .unwrap()
            })
            .collect();
        (vocab, space, examples)
    }

    #[test]
    fn separable_toy_problem_converges() {
        let (vocab, space, examples) = toy();
        let params = EncoderParams::init(vocab.len(), 8, 2, 1);
        let config = TrainConfig {
            learning_rate: 0.05,
            batch_size: 8,
            max_epochs: 200,
            patience: 200,
            ..TrainConfig::default()
        };
        let out = train(
            params,
            &examples,
            None,
            &space,
            AnnotationKind::Single,
            &config,
        )
        .unwrap();
        let losses: Vec<f64> = out.trace.iter().map(|s| s.train_loss).collect();
        assert_eq!(losses.len(), 200);
        assert!(losses[1..].windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert!(*losses.last().unwrap() < 0.01);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (vocab, space, examples) = toy();
        let params = EncoderParams::init(vocab.len(), 4, 2, 3);
        let config = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 4,
            ..TrainConfig::default()
        };
        let out = train(
            params.clone(),
            &examples,
            None,
            &space,
            AnnotationKind::Single,
            &config,
        )
        .unwrap();
        assert_eq!(out.params, params);
        let first = out.trace[0].train_loss;
        assert!(out
            .trace
            .iter()
            .all(|s| s.train_loss.to_bits() == first.to_bits()));
    }

    #[test]
    fn training_is_deterministic() {
        let (vocab, space, examples) = toy();
        let config = TrainConfig {
            max_epochs: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let params = EncoderParams::init(vocab.len(), 4, 2, 11);
            train(
                params,
                &examples,
                None,
                &space,
                AnnotationKind::Single,
                &config,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn rejects_empty_and_divergent_runs() {
        let (vocab, space, examples) = toy();
        let params = EncoderParams::init(vocab.len(), 4, 2, 3);
        let config = TrainConfig::default();
        assert!(matches!(
            train(
                params.clone(),
                &[],
                None,
                &space,
                AnnotationKind::Single,
                &config
            ),
            Err(Error::EmptyDataset)
        ));
        let mut bad = params;
        bad.embeddings[2 * 4] = f64::NAN;
        assert!(matches!(
            train(
                bad,
                &examples,
                None,
                &space,
                AnnotationKind::Single,
                &config
            ),
            Err(Error::Diverged { batch: 0, .. })
        ));
    }

    #[test]
    fn finetune_freezes_encoder_for_five_epochs() {
        let (vocab, _space, _) = toy();
        let data: Vec<VadExample> = (0..20)
            .map(|i| {
                let (t, p) = if i % 2 == 0 {
                    (
                        "serene",
                        VadPoint {
                            v: 0.8,
                            a: 0.2,
                            d: 0.5,
                        },
                    )
                } else {
                    (
                        "furious",
                        VadPoint {
                            v: 0.2,
                            a: 0.8,
                            d: 0.5,
                        },
                    )
                };
                VadExample::new(&vocab, t, p)
            })
            .collect();
        let params = EncoderParams::init(vocab.len(), 4, 2, 5);
        let before = params.encoder_checksum();
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            max_epochs: 8,
            patience: 100,
            ..TrainConfig::default()
        };
        let out = finetune_vad(params, &data, None, AnnotationKind::Single, &config).unwrap();
        assert_eq!(out.trace.len(), 8);
        for s in &out.trace[..FREEZE_EPOCHS] {
            assert_eq!(s.encoder_checksum, before);
        }
        assert_ne!(out.trace[FREEZE_EPOCHS].encoder_checksum, before);
        assert!(out.params.reg_head.is_some());
    }
}
