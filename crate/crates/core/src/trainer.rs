//! SGD training over merged source/target batches.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DomainTag, Sample};
use crate::error::{Error, Result};
use crate::eval::{predict_dataset, topk_accuracy};
use crate::losses::NegativeMining;
use crate::model::{
    forward_backward, FusionConfig, InferenceText, LossConfig, ModelDims, ModelParams,
};
use crate::rng::{SeededRng, Stream};
use crate::scalar::Scalar;

/// Which training counts calibrate the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    #[default]
    Combined,
    TargetOnly,
    SourceOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate factor; epoch `e` steps with
    /// `learning_rate · lr_decay^e`. 1 keeps the rate constant.
    pub lr_decay: f64,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    pub batch_per_domain: usize,
    pub epochs: usize,
    pub shared_dim: usize,
    pub lambda_align: f64,
    pub lambda_cal: f64,
    pub margin: f64,
    pub mining: NegativeMining,
    pub use_alignment: bool,
    pub use_calibration: bool,
    pub use_title: bool,
    pub use_ingredients: bool,
    pub renormalize_fused: bool,
    pub count_mode: CountMode,
    /// Set from the experiment seed; not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            lr_decay: 1.0,
            momentum: 0.0,
            batch_per_domain: 128,
            epochs: 30,
            shared_dim: 32,
            lambda_align: 1.0,
            lambda_cal: 1.0,
            margin: 0.3,
            mining: NegativeMining::HardestInBatch,
            use_alignment: true,
            use_calibration: true,
            use_title: true,
            use_ingredients: true,
            renormalize_fused: false,
            count_mode: CountMode::Combined,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings used by the default experiment on the synthetic benchmark.
    ///
    /// The classifier reads unit-norm embeddings, so its logits grow slowly
    /// and need a much larger step than the full-scale defaults. The step
    /// decays per epoch so that late epochs settle instead of bouncing
    /// between minibatch optima.
    pub fn desk() -> Self {
        Self {
            learning_rate: 30.0,
            lr_decay: 0.95,
            batch_per_domain: 32,
            epochs: 80,
            lambda_align: 0.5,
            ..Self::default()
        }
    }

    /// The five component rows of the ablation table, from the image-only
    /// cross-entropy baseline to the full method.
    pub fn ablation_rows(&self) -> [TrainConfig; 5] {
        let row = |a, c, t, i| TrainConfig {
            use_alignment: a,
            use_calibration: c,
            use_title: t,
            use_ingredients: i,
            ..self.clone()
        };
        [
            row(false, false, false, false),
            row(true, false, false, false),
            row(true, true, false, false),
            row(true, true, true, false),
            row(true, true, true, true),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        // zero is accepted so that a no-op run can be checked bit-for-bit
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_per_domain < 2 {
            return bad("batch_per_domain must be ≥ 2");
        }
        if self.epochs < 1 {
            return bad("epochs must be ≥ 1");
        }
        if self.shared_dim < 1 {
            return bad("shared_dim must be ≥ 1");
        }
        if !(self.lambda_align >= 0.0 && self.lambda_cal >= 0.0 && self.margin >= 0.0) {
            return bad("loss weights and margin must be non-negative");
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            use_title: self.use_title,
            use_ingredients: self.use_ingredients,
            renormalize_fused: self.renormalize_fused,
        }
    }

    pub fn loss_config<T: Scalar>(&self) -> LossConfig<T> {
        LossConfig {
            lambda_align: if self.use_alignment {
                T::lit(self.lambda_align)
            } else {
                T::zero()
            },
            lambda_cal: T::lit(self.lambda_cal),
            margin: T::lit(self.margin),
            mining: self.mining,
            fusion: self.fusion(),
        }
    }

    /// Class frequencies for the calibration loss. Without calibration all
    /// counts are 1, which reduces the loss to plain cross-entropy. Classes
    /// absent from the chosen counts are given frequency 1.
    pub fn calibration_counts<T: Scalar>(
        &self,
        source: &Dataset<T>,
        target: &Dataset<T>,
    ) -> Vec<usize> {
        let c = source.num_classes();
        if !self.use_calibration {
            return vec![1; c];
        }
        let src = &source.class_counts().source;
        let tgt = &target.class_counts().target;
        (0..c)
            .map(|k| match self.count_mode {
                CountMode::Combined => src[k] + tgt[k],
                CountMode::TargetOnly => tgt[k],
                CountMode::SourceOnly => src[k],
            })
            .map(|n| n.max(1))
            .collect()
    }
}

/// One merged batch: `batch_per_domain` source and target sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedBatch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Shuffles both domains and pairs consecutive source chunks with target
/// chunks. An epoch is one pass over the source set; the target order is
/// cycled when it runs out. Trailing partial source chunks are dropped.
pub fn make_epoch_batches<T: Scalar, R: Rng>(
    source: &Dataset<T>,
    target: &Dataset<T>,
    batch_per_domain: usize,
    rng: &mut R,
) -> Result<Vec<MergedBatch>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("both domains need samples".into()));
    }
    if batch_per_domain == 0 {
        return Err(Error::InvalidConfig(
            "batch_per_domain must be positive".into(),
        ));
    }
    let mut src: Vec<usize> = (0..source.len()).collect();
    let mut tgt: Vec<usize> = (0..target.len()).collect();
    src.shuffle(rng);
    tgt.shuffle(rng);
    Ok(src
        .chunks_exact(batch_per_domain)
        .enumerate()
        .map(|(b, chunk)| MergedBatch {
            source: chunk.to_vec(),
            target: (0..batch_per_domain)
                .map(|k| tgt[(b * batch_per_domain + k) % tgt.len()])
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    /// Means over the epoch's minibatches, each taken before its update.
    pub total_loss: f64,
    pub alignment_loss: f64,
    pub calibration_loss: f64,
    /// Objective after the epoch, averaged over one fixed batch partition of
    /// the training data. Unlike the minibatch means it does not move with
    /// the epoch's shuffle, so it tracks optimization progress alone.
    pub train_set_loss: f64,
    pub source_train_top1: f64,
    pub target_train_top1: f64,
    pub wall_time_secs: f64,
}

/// Wall time is excluded: it is the only field that varies between
/// otherwise identical runs.
impl PartialEq for EpochRecord {
    fn eq(&self, o: &Self) -> bool {
        self.epoch == o.epoch
            && self.batches == o.batches
            && self.total_loss.to_bits() == o.total_loss.to_bits()
            && self.alignment_loss.to_bits() == o.alignment_loss.to_bits()
            && self.calibration_loss.to_bits() == o.calibration_loss.to_bits()
            && self.train_set_loss.to_bits() == o.train_set_loss.to_bits()
            && self.source_train_top1.to_bits() == o.source_train_top1.to_bits()
            && self.target_train_top1.to_bits() == o.target_train_top1.to_bits()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Top-1 of the model on every sample of one domain of a training set.
pub fn train_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    fusion: FusionConfig,
    data: &Dataset<T>,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let logits = predict_dataset(params, fusion, data, InferenceText::SampleText)?;
    let labels: Vec<usize> = data.samples().iter().map(|s| s.label).collect();
    topk_accuracy(&logits, &labels, 1)
}

/// Trains a model from scratch on a source and a target training set.
pub fn train<T: Scalar>(
    source: &Dataset<T>,
    target: &Dataset<T>,
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainHistory)> {
    config.validate()?;
    source.check_compatible(target)?;
    if source.domain_size(DomainTag::Source) != source.len()
        || target.domain_size(DomainTag::Target) != target.len()
    {
        return Err(Error::InvalidInput(
            "source/target sets contain samples of the other domain".into(),
        ));
    }
    if source.len() < config.batch_per_domain {
        return Err(Error::InvalidConfig(format!(
            "batch_per_domain {} exceeds the {} source samples",
            config.batch_per_domain,
            source.len()
        )));
    }
    let dims = ModelDims {
        feature_dim: source.feature_dim(),
        text_dim: source.text_dim(),
        shared_dim: config.shared_dim,
        num_classes: source.num_classes(),
    };
    let seeds = SeededRng::new(config.seed);
    let mut params = ModelParams::<T>::init(dims, &mut seeds.stream(Stream::WeightInit));
    let mut velocity = (config.momentum > 0.0).then(|| params.zeros_like());
    let counts = config.calibration_counts(source, target);
    let loss_config = config.loss_config::<T>();
    let fusion = config.fusion();
    let mut batch_rng = seeds.stream(Stream::Batching);
    let probe = make_epoch_batches(
        source,
        target,
        config.batch_per_domain,
        &mut seeds.stream(Stream::LossProbe),
    )?;
    let gather = |batch: &MergedBatch| -> Vec<&Sample<T>> {
        batch
            .source
            .iter()
            .map(|&i| &source.samples()[i])
            .chain(batch.target.iter().map(|&i| &target.samples()[i]))
            .collect()
    };

    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = T::lit(config.learning_rate * config.lr_decay.powi(epoch as i32));
        let batches = make_epoch_batches(source, target, config.batch_per_domain, &mut batch_rng)?;
        let (mut total, mut align, mut cal) = (0.0, 0.0, 0.0);
        for (b, batch) in batches.iter().enumerate() {
            let samples = gather(batch);
            // A collapsed or overflowing projection means the weights have blown up.
            let (loss, grads) = match forward_backward(&params, &samples, &counts, &loss_config) {
                Err(Error::DegenerateVector) => {
                    return Err(Error::TrainingDiverged { epoch, batch: b })
                }
                other => other?,
            };
            if !loss.total.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            match velocity.as_mut() {
                Some(v) => {
                    v.scale(T::lit(config.momentum));
                    v.axpy(T::one(), &grads);
                    params.axpy(-lr, v);
                }
                None => params.axpy(-lr, &grads),
            }
            if !params.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            total += loss.total.as_f64();
            align += loss.alignment.as_f64();
            cal += loss.calibration.as_f64();
        }
        let n = batches.len() as f64;
        let mut probe_total = 0.0;
        for batch in &probe {
            let (loss, _) = forward_backward(&params, &gather(batch), &counts, &loss_config)?;
            probe_total += loss.total.as_f64();
        }
        history.epochs.push(EpochRecord {
            epoch,
            batches: batches.len(),
            total_loss: total / n,
            alignment_loss: align / n,
            calibration_loss: cal / n,
            train_set_loss: probe_total / probe.len() as f64,
            source_train_top1: train_accuracy(&params, fusion, source)?,
            target_train_top1: train_accuracy(&params, fusion, target)?,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok((params, history))
}
