//! Training loop: deterministic minibatch sampling over the one-to-multi
//! relation, forward through query and key encoders, four-loss combination,
//! Adam updates of the query parameters, EMA updates of the key parameters,
//! queue and center maintenance, and per-epoch validation with best-model
//! tracking.
//!
//! Everything that influences a run lives in [`TrainState`] (including the
//! PRNG and the current epoch's batch plan), so a checkpoint taken between
//! any two steps resumes bit-exactly.

use crate::datakit::Dataset;
use crate::encoder::{backward, forward, Activation, EncoderPair, MlpGrads, MlpParams};
use crate::error::{MeelError, Result};
use crate::memory::{CenterBank, CrossModalQueue};
use crate::numerics::{similarity_matrix, Matrix, PrngStream};
use crate::objective::{center_loss, infonce_batch, total_loss, triplet_ranking_loss, LossParts};
use crate::retrieval::{compute_ranks, summarize_metrics, Direction, GroundTruth, RetrievalReport};
use serde::{Deserialize, Serialize};

/// Which encoder embeds the evaluation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalEncoder {
    Momentum,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// All training hyperparameters. Defaults follow the reference setting
/// (temperature 0.07, queue of 2560, momentum 0.99 stepping to 0.999 after
/// two epochs, center weight 0.005); desk-scale runs override sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub queue_size: usize,
    pub temperature: f64,
    pub margin: f64,
    pub center_weight: f64,
    pub center_step: f64,
    /// `(first_epoch, m)` entries; the last entry whose epoch has been
    /// reached is in effect. Must start at epoch 1.
    pub momentum_schedule: Vec<(usize, f64)>,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub eval_encoder: EvalEncoder,
    /// Ablation switches: disabled terms contribute zero loss and zero
    /// gradient; bank maintenance runs regardless.
    pub use_infonce: bool,
    pub use_center: bool,
    /// When false the key encoders are hard-synced from the query encoders
    /// every step instead of EMA-updated.
    pub use_momentum: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            embedding_dim: 128,
            hidden_dims: vec![256],
            batch_size: 64,
            queue_size: 2560,
            temperature: 0.07,
            margin: 0.2,
            center_weight: 0.005,
            center_step: 0.5,
            momentum_schedule: vec![(1, 0.99), (3, 0.999)],
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            epochs: 10,
            seed: 1,
            eval_encoder: EvalEncoder::Momentum,
            use_infonce: true,
            use_center: true,
            use_momentum: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(MeelError::NonPositiveDimension {
                name: "embedding_dim",
                value: 0,
            });
        }
        if self.hidden_dims.contains(&0) {
            return Err(MeelError::NonPositiveDimension {
                name: "hidden_dims entry",
                value: 0,
            });
        }
        if self.batch_size < 2 {
            return Err(MeelError::BatchTooSmall {
                batch: self.batch_size,
                reason: "in-batch hard negatives need at least 2 videos",
            });
        }
        if self.queue_size == 0 || !self.queue_size.is_multiple_of(self.batch_size) {
            return Err(MeelError::Config {
                field: "queue_size".into(),
                message: format!(
                    "queue size must be a positive integer multiple of batch_size \
                     (queue_size={}, batch_size={})",
                    self.queue_size, self.batch_size
                ),
            });
        }
        if self.temperature <= 0.0 || self.temperature.is_nan() {
            return Err(MeelError::InvalidParameter {
                name: "temperature",
                value: self.temperature,
                constraint: "must be > 0",
            });
        }
        if self.margin < 0.0 || self.margin.is_nan() {
            return Err(MeelError::InvalidParameter {
                name: "margin",
                value: self.margin,
                constraint: "must be >= 0",
            });
        }
        if !(self.center_weight >= 0.0 && self.center_weight.is_finite()) {
            return Err(MeelError::InvalidParameter {
                name: "center_weight",
                value: self.center_weight,
                constraint: "must be finite and >= 0",
            });
        }
        if self.center_step.is_nan() || self.center_step <= 0.0 || self.center_step > 1.0 {
            return Err(MeelError::InvalidParameter {
                name: "center_step",
                value: self.center_step,
                constraint: "0 < center_step <= 1",
            });
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(MeelError::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
                constraint: "must be > 0",
            });
        }
        for (name, beta) in [
            ("adam_betas.0", self.adam_betas.0),
            ("adam_betas.1", self.adam_betas.1),
        ] {
            if !(0.0..1.0).contains(&beta) {
                return Err(MeelError::InvalidParameter {
                    name,
                    value: beta,
                    constraint: "0 <= beta < 1",
                });
            }
        }
        if self.adam_eps <= 0.0 || self.adam_eps.is_nan() {
            return Err(MeelError::InvalidParameter {
                name: "adam_eps",
                value: self.adam_eps,
                constraint: "must be > 0",
            });
        }
        if self.epochs == 0 {
            return Err(MeelError::NonPositiveDimension {
                name: "epochs",
                value: 0,
            });
        }
        if self.momentum_schedule.is_empty() || self.momentum_schedule[0].0 != 1 {
            return Err(MeelError::Config {
                field: "momentum_schedule".into(),
                message: "schedule must be non-empty and start at epoch 1".into(),
            });
        }
        let mut last_epoch = 0usize;
        let mut last_m = -1.0f64;
        for &(epoch, m) in &self.momentum_schedule {
            if epoch <= last_epoch {
                return Err(MeelError::Config {
                    field: "momentum_schedule".into(),
                    message: "epochs must be strictly increasing".into(),
                });
            }
            if !(0.0..1.0).contains(&m) {
                return Err(MeelError::InvalidParameter {
                    name: "momentum",
                    value: m,
                    constraint: "0 <= m < 1",
                });
            }
            if m < last_m {
                return Err(MeelError::Config {
                    field: "momentum_schedule".into(),
                    message: "momentum must be non-decreasing over training".into(),
                });
            }
            last_epoch = epoch;
            last_m = m;
        }
        Ok(())
    }
}

/// Momentum coefficient in effect at a (1-based) epoch.
pub fn momentum_for_epoch(schedule: &[(usize, f64)], epoch: usize) -> f64 {
    let mut m = schedule[0].1;
    for &(from, value) in schedule {
        if epoch >= from {
            m = value;
        }
    }
    m
}

/// Adam first/second moment estimates, flat and aligned with
/// [`MlpParams::flat`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> AdamState {
        AdamState {
            t: 0,
            m1: vec![0.0; param_count],
            m2: vec![0.0; param_count],
        }
    }
}

/// One bias-corrected Adam step applied element-wise.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    moments: &mut AdamState,
    learning_rate: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    let n = params.param_count();
    if moments.m1.len() != n || moments.m2.len() != n {
        return Err(MeelError::CountMismatch {
            what: "Adam moment length",
            expected: n,
            actual: moments.m1.len(),
        });
    }
    let grad_count = grads.flat().count();
    if grad_count != n {
        return Err(MeelError::CountMismatch {
            what: "gradient length",
            expected: n,
            actual: grad_count,
        });
    }
    moments.t += 1;
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(moments.t as i32);
    let bc2 = 1.0 - b2.powi(moments.t as i32);
    for (((p, g), m1), m2) in params
        .flat_mut()
        .zip(grads.flat())
        .zip(moments.m1.iter_mut())
        .zip(moments.m2.iter_mut())
    {
        *m1 = b1 * *m1 + (1.0 - b1) * g;
        *m2 = b2 * *m2 + (1.0 - b2) * g * g;
        let m_hat = *m1 / bc1;
        let v_hat = *m2 / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// One sampled training example: a video, one of its captions, and the
/// video's train-local class used by the center bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub video: usize,
    pub caption: usize,
    pub class: usize,
}

/// Complete mutable training state; checkpointable and resumable bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub video_encoder: EncoderPair,
    pub text_encoder: EncoderPair,
    pub video_queue: CrossModalQueue,
    pub text_queue: CrossModalQueue,
    pub center_bank: CenterBank,
    pub adam_video: AdamState,
    pub adam_text: AdamState,
    /// Current 1-based epoch; 0 before training starts.
    pub epoch: usize,
    pub step: u64,
    pub stream: PrngStream,
    /// The current epoch's batch schedule as (video, caption) pairs, and how
    /// many batches of it have been consumed.
    pub plan: Vec<Vec<(usize, usize)>>,
    pub plan_cursor: usize,
}

/// Per-step log record. Serialized field names are the wire format of the
/// training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_tri: f64,
    pub l_v2t: f64,
    pub l_t2v: f64,
    pub l_c: f64,
    pub total: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_total: f64,
    pub m: f64,
    pub val: RetrievalReport,
}

#[derive(Debug, Clone)]
pub enum TrainEvent {
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// State at the end of the epoch with the highest validation recall sum
    /// (first such epoch on ties).
    pub best_state: TrainState,
    pub best_epoch: usize,
    pub best_val: RetrievalReport,
    pub history: Vec<EpochRecord>,
}

/// Owns the training state and drives it over a dataset.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub state: TrainState,
    dataset: &'a Dataset,
    /// Global video index -> train-local class, None for non-train videos.
    class_of: Vec<Option<usize>>,
}

fn class_map(dataset: &Dataset) -> Vec<Option<usize>> {
    let mut map = vec![None; dataset.n_videos()];
    for (class, &video) in dataset.splits.train.iter().enumerate() {
        map[video] = Some(class);
    }
    map
}

impl<'a> Trainer<'a> {
    /// Builds fresh state. Draw order from the seed: video encoder, text
    /// encoder, video queue, text queue, center bank, then per-epoch plans.
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Trainer<'a>> {
        config.validate()?;
        let n_train = dataset.splits.train.len();
        if n_train < config.batch_size {
            return Err(MeelError::CountMismatch {
                what: "training videos (need at least one full batch)",
                expected: config.batch_size,
                actual: n_train,
            });
        }
        let d = config.embedding_dim;
        let mut stream = PrngStream::new(config.seed);
        let video_encoder = EncoderPair::new(
            dataset.video_dim(),
            &config.hidden_dims,
            d,
            Activation::Tanh,
            &mut stream,
        )?;
        let text_encoder = EncoderPair::new(
            dataset.caption_dim(),
            &config.hidden_dims,
            d,
            Activation::Tanh,
            &mut stream,
        )?;
        let video_queue = CrossModalQueue::init(config.queue_size, d, &mut stream)?;
        let text_queue = CrossModalQueue::init(config.queue_size, d, &mut stream)?;
        let center_bank = CenterBank::init(n_train, d, &mut stream)?;
        let adam_video = AdamState::new(video_encoder.query.param_count());
        let adam_text = AdamState::new(text_encoder.query.param_count());
        let state = TrainState {
            video_encoder,
            text_encoder,
            video_queue,
            text_queue,
            center_bank,
            adam_video,
            adam_text,
            epoch: 0,
            step: 0,
            stream,
            plan: Vec::new(),
            plan_cursor: 0,
        };
        Ok(Trainer {
            class_of: class_map(dataset),
            config,
            state,
            dataset,
        })
    }

    /// Continues from checkpointed state, validating it against the dataset
    /// and config.
    pub fn resume(
        dataset: &'a Dataset,
        config: TrainConfig,
        state: TrainState,
    ) -> Result<Trainer<'a>> {
        config.validate()?;
        let checks = [
            (
                "video encoder input dim",
                state.video_encoder.input_dim(),
                dataset.video_dim(),
            ),
            (
                "text encoder input dim",
                state.text_encoder.input_dim(),
                dataset.caption_dim(),
            ),
            (
                "video embedding dim",
                state.video_encoder.output_dim(),
                config.embedding_dim,
            ),
            (
                "text embedding dim",
                state.text_encoder.output_dim(),
                config.embedding_dim,
            ),
            (
                "queue capacity",
                state.video_queue.capacity(),
                config.queue_size,
            ),
            ("queue dim", state.video_queue.dim(), config.embedding_dim),
            (
                "center classes",
                state.center_bank.class_count(),
                dataset.splits.train.len(),
            ),
            (
                "Adam moments (video)",
                state.adam_video.m1.len(),
                state.video_encoder.query.param_count(),
            ),
            (
                "Adam moments (text)",
                state.adam_text.m1.len(),
                state.text_encoder.query.param_count(),
            ),
        ];
        for (what, actual, expected) in checks {
            if actual != expected {
                return Err(MeelError::Config {
                    field: format!("checkpoint {what}"),
                    message: format!("expected {expected}, got {actual}"),
                });
            }
        }
        let class_of = class_map(dataset);
        if state.plan_cursor > state.plan.len() {
            return Err(MeelError::CountMismatch {
                what: "checkpoint plan cursor",
                expected: state.plan.len(),
                actual: state.plan_cursor,
            });
        }
        for batch in &state.plan {
            for &(video, caption) in batch {
                if video >= dataset.n_videos() || class_of[video].is_none() {
                    return Err(MeelError::Config {
                        field: "checkpoint plan".into(),
                        message: format!("video {video} is not in the training split"),
                    });
                }
                if caption >= dataset.n_captions() || dataset.caption_owner[caption] != video {
                    return Err(MeelError::Config {
                        field: "checkpoint plan".into(),
                        message: format!("caption {caption} does not belong to video {video}"),
                    });
                }
            }
        }
        Ok(Trainer {
            class_of,
            config,
            state,
            dataset,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    /// Shuffles the training videos, partitions them into full batches
    /// (remainder dropped), and draws one caption per video uniformly.
    fn make_plan(&mut self) -> Result<()> {
        let b = self.config.batch_size;
        let mut order = self.dataset.splits.train.clone();
        self.state.stream.shuffle(&mut order);
        let mut plan = Vec::with_capacity(order.len() / b);
        for chunk in order.chunks_exact(b) {
            let batch = chunk
                .iter()
                .map(|&video| {
                    let captions = &self.dataset.video_captions[video];
                    let pick = self.state.stream.next_below(captions.len());
                    (video, captions[pick])
                })
                .collect();
            plan.push(batch);
        }
        self.state.plan = plan;
        self.state.plan_cursor = 0;
        Ok(())
    }

    fn materialize(&self, planned: &[(usize, usize)]) -> Vec<BatchItem> {
        planned
            .iter()
            .map(|&(video, caption)| BatchItem {
                video,
                caption,
                class: self.class_of[video].expect("planned video is in the training split"),
            })
            .collect()
    }

    /// True right after the last batch of an epoch has been trained on.
    pub fn at_epoch_boundary(&self) -> bool {
        self.state.epoch >= 1 && self.state.plan_cursor == self.state.plan.len()
    }

    /// Runs one training step, opening a new epoch when the previous plan is
    /// exhausted. Returns `None` once all epochs have finished.
    pub fn step_once(&mut self) -> Result<Option<StepRecord>> {
        if self.state.plan_cursor >= self.state.plan.len() {
            if self.state.epoch >= self.config.epochs {
                return Ok(None);
            }
            self.state.epoch += 1;
            self.make_plan()?;
        }
        let planned = self.state.plan[self.state.plan_cursor].clone();
        self.state.plan_cursor += 1;
        let batch = self.materialize(&planned);
        let record = self.train_step(&batch)?;
        Ok(Some(record))
    }

    /// One full training step. The ordering is normative:
    /// (1) query forward, (2) key forward without gradients, (3) contrastive
    /// losses against the queues, (4) triplet loss, (5) center loss,
    /// (6) backprop into query parameters, (7) Adam, (8) key update,
    /// (9) enqueue key embeddings, (10) center bank update.
    fn train_step(&mut self, batch: &[BatchItem]) -> Result<StepRecord> {
        let cfg = &self.config;
        let b = batch.len();
        let d = cfg.embedding_dim;
        let state = &mut self.state;

        // (1) query encoders, caches kept for the backward pass
        let mut v_q = Matrix::zeros(b, d);
        let mut t_q = Matrix::zeros(b, d);
        let mut caches_v = Vec::with_capacity(b);
        let mut caches_t = Vec::with_capacity(b);
        for (i, item) in batch.iter().enumerate() {
            let (emb, cache) = forward(
                &state.video_encoder.query,
                self.dataset.video_features.row(item.video),
            )?;
            v_q.row_mut(i).copy_from_slice(&emb);
            caches_v.push(cache);
            let (emb, cache) = forward(
                &state.text_encoder.query,
                self.dataset.caption_features.row(item.caption),
            )?;
            t_q.row_mut(i).copy_from_slice(&emb);
            caches_t.push(cache);
        }

        // (2) key encoders; outputs only, nothing retained for gradients
        let mut v_k = Matrix::zeros(b, d);
        let mut t_k = Matrix::zeros(b, d);
        for (i, item) in batch.iter().enumerate() {
            v_k.row_mut(i).copy_from_slice(
                &forward(
                    &state.video_encoder.key,
                    self.dataset.video_features.row(item.video),
                )?
                .0,
            );
            t_k.row_mut(i).copy_from_slice(
                &forward(
                    &state.text_encoder.key,
                    self.dataset.caption_features.row(item.caption),
                )?
                .0,
            );
        }

        let owners: Vec<usize> = batch.iter().map(|item| item.video).collect();
        let classes: Vec<usize> = batch.iter().map(|item| item.class).collect();

        // (3) masked InfoNCE against the queues, positives from the keys
        let (v2t, t2v) = if cfg.use_infonce {
            (
                infonce_batch(&v_q, &t_k, &state.text_queue, &owners, cfg.temperature)?,
                infonce_batch(&t_q, &v_k, &state.video_queue, &owners, cfg.temperature)?,
            )
        } else {
            ((0.0, Matrix::zeros(b, d)), (0.0, Matrix::zeros(b, d)))
        };

        // (4) batch-hard triplet between query embeddings
        let triplet = triplet_ranking_loss(&v_q, &t_q, cfg.margin)?;

        // (5) center loss on query text embeddings
        let center = if cfg.use_center {
            center_loss(&t_q, &classes, &state.center_bank)?
        } else {
            (0.0, Matrix::zeros(b, d))
        };

        // (6) combine, then backprop per sample into the query networks
        let report = total_loss(
            LossParts {
                triplet,
                v2t,
                t2v,
                center,
            },
            cfg.center_weight,
        )?;
        let mut grads_video = MlpGrads::zeros_of(&state.video_encoder.query);
        let mut grads_text = MlpGrads::zeros_of(&state.text_encoder.query);
        for i in 0..b {
            let (g, _) = backward(
                &state.video_encoder.query,
                &caches_v[i],
                report.grads_v.row(i),
            )?;
            grads_video.accumulate(&g)?;
            let (g, _) = backward(
                &state.text_encoder.query,
                &caches_t[i],
                report.grads_t.row(i),
            )?;
            grads_text.accumulate(&g)?;
        }

        // (7) Adam on query parameters only
        adam_step(
            &mut state.video_encoder.query,
            &grads_video,
            &mut state.adam_video,
            cfg.learning_rate,
            cfg.adam_betas,
            cfg.adam_eps,
        )?;
        adam_step(
            &mut state.text_encoder.query,
            &grads_text,
            &mut state.adam_text,
            cfg.learning_rate,
            cfg.adam_betas,
            cfg.adam_eps,
        )?;

        // (8) key update: EMA, or a hard sync when momentum is disabled
        let m = if cfg.use_momentum {
            let m = momentum_for_epoch(&cfg.momentum_schedule, state.epoch);
            state.video_encoder.momentum_update(m)?;
            state.text_encoder.momentum_update(m)?;
            m
        } else {
            state.video_encoder.sync_key_from_query();
            state.text_encoder.sync_key_from_query();
            0.0
        };

        // (9) the key embeddings from (2) enter the queues
        let video_payload: Vec<(&[f64], usize)> = (0..b).map(|i| (v_k.row(i), owners[i])).collect();
        state.video_queue.enqueue_dequeue(&video_payload)?;
        let text_payload: Vec<(&[f64], usize)> = (0..b).map(|i| (t_k.row(i), owners[i])).collect();
        state.text_queue.enqueue_dequeue(&text_payload)?;

        // (10) centers track the current query text embeddings
        if cfg.use_center {
            let members: Vec<(&[f64], usize)> = (0..b).map(|i| (t_q.row(i), classes[i])).collect();
            state.center_bank.update(&members, cfg.center_step)?;
        }

        state.step += 1;
        Ok(StepRecord {
            step: state.step,
            epoch: state.epoch,
            l_tri: report.triplet,
            l_v2t: report.v2t,
            l_t2v: report.t2v,
            l_c: report.center,
            total: report.total,
            m,
        })
    }

    /// Trains all remaining epochs, evaluating on the validation split at
    /// every epoch boundary and keeping the state of the best epoch by
    /// validation recall sum.
    pub fn run(&mut self, on_event: &mut dyn FnMut(&TrainEvent)) -> Result<FitOutcome> {
        let mut best: Option<(f64, usize, RetrievalReport, TrainState)> = None;
        let mut history = Vec::with_capacity(self.config.epochs);
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0usize;
        while let Some(record) = self.step_once()? {
            epoch_total += record.total;
            epoch_steps += 1;
            let epoch = record.epoch;
            let m = record.m;
            on_event(&TrainEvent::Step(record));
            if self.at_epoch_boundary() {
                let val = evaluate(
                    &self.state,
                    self.dataset,
                    SplitKind::Val,
                    self.config.eval_encoder,
                )?;
                let epoch_record = EpochRecord {
                    epoch,
                    mean_total: epoch_total / epoch_steps as f64,
                    m,
                    val: val.clone(),
                };
                on_event(&TrainEvent::Epoch(epoch_record.clone()));
                history.push(epoch_record);
                let improved = best
                    .as_ref()
                    .is_none_or(|(best_rsum, ..)| val.rsum > *best_rsum);
                if improved {
                    best = Some((val.rsum, epoch, val, self.state.clone()));
                }
                epoch_total = 0.0;
                epoch_steps = 0;
            }
        }
        let (_, best_epoch, best_val, best_state) = best.ok_or(MeelError::EmptyInput {
            what: "training run (no epochs executed)",
        })?;
        Ok(FitOutcome {
            best_state,
            best_epoch,
            best_val,
            history,
        })
    }
}

/// Convenience wrapper: fresh trainer plus a full [`Trainer::run`].
pub fn fit(
    dataset: &Dataset,
    config: TrainConfig,
    on_event: &mut dyn FnMut(&TrainEvent),
) -> Result<FitOutcome> {
    Trainer::new(dataset, config)?.run(on_event)
}

/// Embeds a split with the selected encoder pair halves and computes the
/// full retrieval report. Texts are the captions of the split's videos;
/// candidates never cross split boundaries.
pub fn evaluate(
    state: &TrainState,
    dataset: &Dataset,
    split: SplitKind,
    encoder: EvalEncoder,
) -> Result<RetrievalReport> {
    let videos = match split {
        SplitKind::Train => &dataset.splits.train,
        SplitKind::Val => &dataset.splits.val,
        SplitKind::Test => &dataset.splits.test,
    };
    if videos.is_empty() {
        return Err(MeelError::EmptyInput {
            what: "evaluation split",
        });
    }
    let (video_params, text_params) = match encoder {
        EvalEncoder::Momentum => (&state.video_encoder.key, &state.text_encoder.key),
        EvalEncoder::Query => (&state.video_encoder.query, &state.text_encoder.query),
    };
    evaluate_with_params(video_params, text_params, dataset, videos)
}

/// The evaluation core, usable with any parameter sets of matching shape.
pub fn evaluate_with_params(
    video_params: &MlpParams,
    text_params: &MlpParams,
    dataset: &Dataset,
    videos: &[usize],
) -> Result<RetrievalReport> {
    let mut video_rows = Vec::with_capacity(videos.len());
    let mut text_rows = Vec::new();
    let mut text_owner_local = Vec::new();
    for (local, &video) in videos.iter().enumerate() {
        video_rows.push(forward(video_params, dataset.video_features.row(video))?.0);
        for &caption in &dataset.video_captions[video] {
            text_rows.push(forward(text_params, dataset.caption_features.row(caption))?.0);
            text_owner_local.push(local);
        }
    }
    let video_mat = Matrix::from_rows(&video_rows)?;
    let text_mat = Matrix::from_rows(&text_rows)?;
    let sims = similarity_matrix(&video_mat, &text_mat)?;
    let gt = GroundTruth::new(text_owner_local, videos.len())?;
    let ranks_t2v = compute_ranks(&sims, &gt, Direction::TextToVideo)?;
    let ranks_v2t = compute_ranks(&sims, &gt, Direction::VideoToText)?;
    summarize_metrics(&ranks_t2v, &ranks_v2t)
}
