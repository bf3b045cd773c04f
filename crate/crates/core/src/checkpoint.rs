//! Binary checkpointing of [`TrainState`].
//!
//! Layout: magic `MEELCK01`, format version (u32 LE), payload length
//! (u64 LE), payload. Within the payload every count is u64 LE, every real
//! is an f64 LE, and a missing queue owner is encoded as `u64::MAX`. Because
//! the payload captures the complete state (parameters, queues, centers,
//! optimizer moments, step counters, PRNG, and the current epoch's remaining
//! batch plan), save/load/save is byte-identical and a resumed run matches
//! an uninterrupted one bit for bit.

use crate::encoder::{Activation, EncoderPair, LayerParams, MlpParams};
use crate::error::{MeelError, Result};
use crate::memory::{CenterBank, CrossModalQueue, QueueEntry};
use crate::numerics::{Matrix, PrngStream};
use crate::trainer::{AdamState, TrainState};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MEELCK01";
pub const CHECKPOINT_VERSION: u32 = 1;

const OWNER_NONE: u64 = u64::MAX;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn mlp(&mut self, params: &MlpParams) {
        self.u8(match params.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        self.u64(params.layers.len() as u64);
        for layer in &params.layers {
            self.u64(layer.weight.rows() as u64);
            self.u64(layer.weight.cols() as u64);
            for &v in layer.weight.data() {
                self.f64(v);
            }
            for &v in &layer.bias {
                self.f64(v);
            }
        }
    }

    fn queue(&mut self, queue: &CrossModalQueue) {
        self.u64(queue.dim() as u64);
        self.u64(queue.capacity() as u64);
        self.u64(queue.cursor() as u64);
        for entry in queue.slots() {
            self.u64(entry.owner.map_or(OWNER_NONE, |o| o as u64));
            for &v in &entry.embedding {
                self.f64(v);
            }
        }
    }

    fn adam(&mut self, adam: &AdamState) {
        self.u64(adam.t);
        self.u64(adam.m1.len() as u64);
        for &v in &adam.m1 {
            self.f64(v);
        }
        for &v in &adam.m2 {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Reader<'a> {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(MeelError::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &'static str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| MeelError::CountMismatch {
            what,
            expected: usize::MAX,
            actual: 0,
        })
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn mlp(&mut self) -> Result<MlpParams> {
        let activation = match self.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            other => {
                return Err(MeelError::Config {
                    field: "checkpoint activation tag".into(),
                    message: format!("unknown tag {other}"),
                })
            }
        };
        let n_layers = self.count("layer count")?;
        if n_layers == 0 {
            return Err(MeelError::EmptyInput {
                what: "checkpoint MLP layers",
            });
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut prev_out: Option<usize> = None;
        for _ in 0..n_layers {
            let rows = self.count("weight rows")?;
            let cols = self.count("weight cols")?;
            if rows == 0 || cols == 0 {
                return Err(MeelError::NonPositiveDimension {
                    name: "checkpoint layer dim",
                    value: 0,
                });
            }
            if let Some(prev) = prev_out {
                if cols != prev {
                    return Err(MeelError::CountMismatch {
                        what: "layer dimension chain",
                        expected: prev,
                        actual: cols,
                    });
                }
            }
            prev_out = Some(rows);
            let weight = Matrix::from_vec(rows, cols, self.f64_vec(rows * cols)?)?;
            let bias = self.f64_vec(rows)?;
            layers.push(LayerParams { weight, bias });
        }
        Ok(MlpParams { layers, activation })
    }

    fn queue(&mut self) -> Result<CrossModalQueue> {
        let dim = self.count("queue dim")?;
        let capacity = self.count("queue capacity")?;
        let cursor = self.count("queue cursor")?;
        let mut entries = Vec::with_capacity(capacity);
        for _ in 0..capacity {
            let owner_raw = self.u64()?;
            let owner = if owner_raw == OWNER_NONE {
                None
            } else {
                Some(usize::try_from(owner_raw).map_err(|_| MeelError::Config {
                    field: "checkpoint queue owner".into(),
                    message: format!("owner {owner_raw} does not fit this platform"),
                })?)
            };
            entries.push(QueueEntry {
                embedding: self.f64_vec(dim)?,
                owner,
            });
        }
        CrossModalQueue::from_parts(dim, entries, cursor)
    }

    fn adam(&mut self) -> Result<AdamState> {
        let t = self.u64()?;
        let n = self.count("Adam length")?;
        Ok(AdamState {
            t,
            m1: self.f64_vec(n)?,
            m2: self.f64_vec(n)?,
        })
    }
}

/// Serializes the full state to the checkpoint wire format.
pub fn checkpoint_bytes(state: &TrainState) -> Vec<u8> {
    let mut w = Writer::new();
    w.mlp(&state.video_encoder.query);
    w.mlp(&state.video_encoder.key);
    w.mlp(&state.text_encoder.query);
    w.mlp(&state.text_encoder.key);
    w.queue(&state.video_queue);
    w.queue(&state.text_queue);
    let centers = state.center_bank.matrix();
    w.u64(centers.rows() as u64);
    w.u64(centers.cols() as u64);
    for &v in centers.data() {
        w.f64(v);
    }
    w.adam(&state.adam_video);
    w.adam(&state.adam_text);
    w.u64(state.epoch as u64);
    w.u64(state.step);
    w.u64(state.stream.seed());
    w.u64(state.stream.state());
    w.u64(state.plan.len() as u64);
    for batch in &state.plan {
        w.u64(batch.len() as u64);
        for &(video, caption) in batch {
            w.u64(video as u64);
            w.u64(caption as u64);
        }
    }
    w.u64(state.plan_cursor as u64);
    let payload = w.buf;

    let mut out = Vec::with_capacity(payload.len() + 20);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Parses a checkpoint, validating magic, version, declared length, and
/// structural consistency.
pub fn state_from_bytes(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 20 {
        return Err(MeelError::Truncated {
            expected: 20,
            actual: bytes.len() as u64,
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if magic != CHECKPOINT_MAGIC {
        return Err(MeelError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(MeelError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let actual = (bytes.len() - 20) as u64;
    if actual < declared {
        return Err(MeelError::Truncated {
            expected: declared + 20,
            actual: bytes.len() as u64,
        });
    }
    if actual > declared {
        return Err(MeelError::TrailingBytes {
            extra: actual - declared,
        });
    }

    let mut r = Reader::new(&bytes[20..]);
    let video_query = r.mlp()?;
    let video_key = r.mlp()?;
    let text_query = r.mlp()?;
    let text_key = r.mlp()?;
    for (q, k) in [(&video_query, &video_key), (&text_query, &text_key)] {
        if !q.same_shape(k) {
            return Err(MeelError::Config {
                field: "checkpoint encoder pair".into(),
                message: "query and key parameter shapes differ".into(),
            });
        }
    }
    let video_queue = r.queue()?;
    let text_queue = r.queue()?;
    let center_rows = r.count("center rows")?;
    let center_cols = r.count("center cols")?;
    let center_bank = CenterBank::from_matrix(Matrix::from_vec(
        center_rows,
        center_cols,
        r.f64_vec(center_rows * center_cols)?,
    )?);
    let adam_video = r.adam()?;
    let adam_text = r.adam()?;
    let epoch = r.count("epoch")?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let prng_state = r.u64()?;
    let n_batches = r.count("plan batches")?;
    let mut plan = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let n_items = r.count("plan batch size")?;
        let mut batch = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            let video = r.count("plan video")?;
            let caption = r.count("plan caption")?;
            batch.push((video, caption));
        }
        plan.push(batch);
    }
    let plan_cursor = r.count("plan cursor")?;
    if r.pos != r.bytes.len() {
        return Err(MeelError::TrailingBytes {
            extra: (r.bytes.len() - r.pos) as u64,
        });
    }

    let d = video_query.output_dim();
    for (what, value) in [
        ("text embedding dim", text_query.output_dim()),
        ("video queue dim", video_queue.dim()),
        ("text queue dim", text_queue.dim()),
        ("center dim", center_bank.dim()),
    ] {
        if value != d {
            return Err(MeelError::Config {
                field: format!("checkpoint {what}"),
                message: format!("expected {d}, got {value}"),
            });
        }
    }
    if plan_cursor > plan.len() {
        return Err(MeelError::CountMismatch {
            what: "plan cursor",
            expected: plan.len(),
            actual: plan_cursor,
        });
    }

    Ok(TrainState {
        video_encoder: EncoderPair {
            query: video_query,
            key: video_key,
        },
        text_encoder: EncoderPair {
            query: text_query,
            key: text_key,
        },
        video_queue,
        text_queue,
        center_bank,
        adam_video,
        adam_text,
        epoch,
        step,
        stream: PrngStream::from_parts(seed, prng_state),
        plan,
        plan_cursor,
    })
}

/// Writes the checkpoint atomically: a temporary sibling file is written
/// first and renamed into place, so a partial file is never left behind.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state);
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    state_from_bytes(&bytes)
}
