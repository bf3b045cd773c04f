//! Memory banks: two cross-modal FIFO queues holding momentum-encoded
//! embeddings for global negative mining, and a center bank recording one
//! text center per training video.
//!
//! Queue entries carry the id of the video they belong to so that queries
//! can mask their own ground truth out of the contrastive denominator.
//! Freshly initialized entries carry no owner and are always usable as
//! negatives.

use crate::error::{MeelError, Result};
use crate::numerics::{dot, l2_normalize, Matrix, PrngStream};
use std::collections::BTreeMap;

/// How far an enqueued embedding's norm may deviate from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// One queue slot: a unit embedding plus the owning video, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub embedding: Vec<f64>,
    pub owner: Option<usize>,
}

/// Fixed-capacity FIFO of embeddings. The entry count equals the capacity at
/// all times; enqueueing a batch of B replaces exactly the B oldest slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalQueue {
    dim: usize,
    entries: Vec<QueueEntry>,
    /// Index of the oldest slot, i.e. the next write position.
    cursor: usize,
}

impl CrossModalQueue {
    /// Fills all `capacity` slots with random unit vectors owned by nobody.
    pub fn init(capacity: usize, dim: usize, stream: &mut PrngStream) -> Result<CrossModalQueue> {
        if capacity == 0 {
            return Err(MeelError::NonPositiveDimension {
                name: "queue capacity",
                value: 0,
            });
        }
        if dim == 0 {
            return Err(MeelError::NonPositiveDimension {
                name: "queue dim",
                value: 0,
            });
        }
        let entries = (0..capacity)
            .map(|_| {
                Ok(QueueEntry {
                    embedding: l2_normalize(&stream.gaussian_vec(dim))?,
                    owner: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CrossModalQueue {
            dim,
            entries,
            cursor: 0,
        })
    }

    pub(crate) fn from_parts(
        dim: usize,
        entries: Vec<QueueEntry>,
        cursor: usize,
    ) -> Result<CrossModalQueue> {
        if entries.is_empty() {
            return Err(MeelError::EmptyInput {
                what: "queue entries",
            });
        }
        if cursor >= entries.len() {
            return Err(MeelError::CountMismatch {
                what: "queue cursor",
                expected: entries.len(),
                actual: cursor,
            });
        }
        for e in &entries {
            if e.embedding.len() != dim {
                return Err(MeelError::LengthMismatch {
                    left: e.embedding.len(),
                    right: dim,
                });
            }
        }
        Ok(CrossModalQueue {
            dim,
            entries,
            cursor,
        })
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn cursor(&self) -> usize {
        self.cursor
    }

    /// Slots in their fixed storage order; this is the order logits are laid
    /// out in.
    pub fn slots(&self) -> &[QueueEntry] {
        &self.entries
    }

    /// Entries from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &QueueEntry> {
        let k = self.entries.len();
        (0..k).map(move |i| &self.entries[(self.cursor + i) % k])
    }

    /// Replaces the B oldest slots with the batch, preserving batch order.
    /// The whole batch is validated before anything is written.
    pub fn enqueue_dequeue(&mut self, batch: &[(&[f64], usize)]) -> Result<()> {
        if batch.len() > self.capacity() {
            return Err(MeelError::BatchExceedsCapacity {
                batch: batch.len(),
                capacity: self.capacity(),
            });
        }
        for (embedding, _) in batch {
            if embedding.len() != self.dim {
                return Err(MeelError::LengthMismatch {
                    left: embedding.len(),
                    right: self.dim,
                });
            }
            let n = dot(embedding, embedding).sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(MeelError::NotUnitNorm { norm: n });
            }
        }
        for (embedding, owner) in batch {
            self.entries[self.cursor] = QueueEntry {
                embedding: embedding.to_vec(),
                owner: Some(*owner),
            };
            self.cursor = (self.cursor + 1) % self.capacity();
        }
        Ok(())
    }
}

/// Logits over `[positive | queue slots]`, scaled by temperature. Index 0 is
/// the positive and is never masked; masked slots hold `-inf` and are
/// excluded from any downstream softmax.
#[derive(Debug, Clone)]
pub struct MaskedLogits {
    pub values: Vec<f64>,
    pub masked: Vec<bool>,
}

impl MaskedLogits {
    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }
}

/// Builds contrastive logits for one query: `values[0] = query·positive/τ`,
/// `values[1+i] = query·slot_i/τ`, with slots owned by `query_owner` masked
/// out (they are ground truth for this query, not negatives).
pub fn masked_negative_logits(
    query: &[f64],
    positive_key: &[f64],
    queue: &CrossModalQueue,
    query_owner: usize,
    temperature: f64,
) -> Result<MaskedLogits> {
    if temperature <= 0.0 {
        return Err(MeelError::InvalidParameter {
            name: "temperature",
            value: temperature,
            constraint: "must be > 0",
        });
    }
    if query.len() != queue.dim() {
        return Err(MeelError::LengthMismatch {
            left: query.len(),
            right: queue.dim(),
        });
    }
    if positive_key.len() != queue.dim() {
        return Err(MeelError::LengthMismatch {
            left: positive_key.len(),
            right: queue.dim(),
        });
    }
    let mut values = Vec::with_capacity(1 + queue.capacity());
    let mut masked = Vec::with_capacity(1 + queue.capacity());
    values.push(dot(query, positive_key) / temperature);
    masked.push(false);
    for entry in queue.slots() {
        if entry.owner == Some(query_owner) {
            values.push(f64::NEG_INFINITY);
            masked.push(true);
        } else {
            values.push(dot(query, &entry.embedding) / temperature);
            masked.push(false);
        }
    }
    Ok(MaskedLogits { values, masked })
}

/// One center vector per training video class, updated from mini-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBank {
    centers: Matrix,
}

impl CenterBank {
    /// Random Gaussian centers with std `1/sqrt(dim)`, so initial rows sit
    /// near the unit sphere the embeddings live on. Centers are not
    /// constrained to the sphere afterwards.
    pub fn init(class_count: usize, dim: usize, stream: &mut PrngStream) -> Result<CenterBank> {
        if class_count == 0 {
            return Err(MeelError::NonPositiveDimension {
                name: "class_count",
                value: 0,
            });
        }
        if dim == 0 {
            return Err(MeelError::NonPositiveDimension {
                name: "center dim",
                value: 0,
            });
        }
        let sigma = 1.0 / (dim as f64).sqrt();
        let data: Vec<f64> = (0..class_count * dim)
            .map(|_| stream.gaussian() * sigma)
            .collect();
        Ok(CenterBank {
            centers: Matrix::from_vec(class_count, dim, data)?,
        })
    }

    pub(crate) fn from_matrix(centers: Matrix) -> CenterBank {
        CenterBank { centers }
    }

    pub fn class_count(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn center(&self, class: usize) -> &[f64] {
        self.centers.row(class)
    }

    pub(crate) fn matrix(&self) -> &Matrix {
        &self.centers
    }

    /// Mini-batch center update. For every class j present in the batch with
    /// members t_i (n_j of them):
    ///
    /// `delta_j = sum_{y_i = j} (c_j - t_i) / (1 + n_j)`, then
    /// `c_j <- c_j - gamma * delta_j`.
    ///
    /// Classes absent from the batch are untouched.
    pub fn update(&mut self, batch: &[(&[f64], usize)], gamma: f64) -> Result<()> {
        if gamma.is_nan() || gamma <= 0.0 || gamma > 1.0 {
            return Err(MeelError::InvalidParameter {
                name: "center_step",
                value: gamma,
                constraint: "0 < gamma <= 1",
            });
        }
        let dim = self.dim();
        for (embedding, class) in batch {
            if *class >= self.class_count() {
                return Err(MeelError::ClassOutOfRange {
                    class: *class,
                    count: self.class_count(),
                });
            }
            if embedding.len() != dim {
                return Err(MeelError::LengthMismatch {
                    left: embedding.len(),
                    right: dim,
                });
            }
        }
        // Per-class member sums, in deterministic class order.
        let mut groups: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for (embedding, class) in batch {
            let (sum, count) = groups.entry(*class).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, t) in sum.iter_mut().zip(*embedding) {
                *s += t;
            }
            *count += 1;
        }
        for (class, (sum, count)) in groups {
            let n = count as f64;
            let row = self.centers.row_mut(class);
            for (c, s) in row.iter_mut().zip(&sum) {
                let delta = (n * *c - s) / (1.0 + n);
                *c -= gamma * delta;
            }
        }
        Ok(())
    }
}
