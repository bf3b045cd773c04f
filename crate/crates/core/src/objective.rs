//! Loss terms with analytic gradients.
//!
//! Four terms drive training: a batch-hard triplet ranking loss between the
//! two modalities, two InfoNCE terms that classify each query's positive
//! against a memory queue of global negatives, and a center loss pulling
//! each caption toward its video's text center. All of them consume unit
//! embeddings, so similarities are plain dot products; gradients flow only
//! into query-encoder embeddings.

use crate::error::{MeelError, Result};
use crate::memory::{masked_negative_logits, CenterBank, CrossModalQueue};
use crate::numerics::{dot, softmax_cross_entropy_with_grad, Matrix};

/// Bidirectional hinge loss with the hardest in-batch negative per anchor.
///
/// Row i of `videos` pairs with row i of `texts`; no two rows may share a
/// video. Per anchor the single most similar non-matching candidate is used
/// in each direction, ties broken by lowest index. The result is averaged
/// over anchors. Returns `(loss, grads_videos, grads_texts)`.
pub fn triplet_ranking_loss(
    videos: &Matrix,
    texts: &Matrix,
    margin: f64,
) -> Result<(f64, Matrix, Matrix)> {
    if videos.rows() != texts.rows() || videos.cols() != texts.cols() {
        return Err(MeelError::ShapeMismatch {
            expected_rows: videos.rows(),
            expected_cols: videos.cols(),
            rows: texts.rows(),
            cols: texts.cols(),
        });
    }
    let b = videos.rows();
    if b < 2 {
        return Err(MeelError::BatchTooSmall {
            batch: b,
            reason: "triplet loss needs at least one in-batch negative",
        });
    }
    if margin < 0.0 {
        return Err(MeelError::InvalidParameter {
            name: "margin",
            value: margin,
            constraint: "must be >= 0",
        });
    }
    let d = videos.cols();

    // Similarities between every video row and every text row.
    let mut sims = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            sims.set(i, j, dot(videos.row(i), texts.row(j)));
        }
    }

    // Highest-similarity candidate excluding the matching index; ties go to
    // the lowest index.
    fn argmax_excluding(values: impl Iterator<Item = f64>, skip: usize) -> usize {
        let mut best = usize::MAX;
        let mut best_val = f64::NEG_INFINITY;
        for (j, v) in values.enumerate() {
            if j != skip && v > best_val {
                best_val = v;
                best = j;
            }
        }
        best
    }

    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grads_v = Matrix::zeros(b, d);
    let mut grads_t = Matrix::zeros(b, d);
    for i in 0..b {
        let positive = sims.get(i, i);

        // Hardest negative text for video i.
        let jn = argmax_excluding((0..b).map(|j| sims.get(i, j)), i);
        let hinge_vt = margin - positive + sims.get(i, jn);
        if hinge_vt > 0.0 {
            loss += hinge_vt * inv;
            for k in 0..d {
                grads_v.row_mut(i)[k] += (texts.get(jn, k) - texts.get(i, k)) * inv;
                grads_t.row_mut(jn)[k] += videos.get(i, k) * inv;
                grads_t.row_mut(i)[k] -= videos.get(i, k) * inv;
            }
        }

        // Hardest negative video for text i.
        let kn = argmax_excluding((0..b).map(|j| sims.get(j, i)), i);
        let hinge_tv = margin - positive + sims.get(kn, i);
        if hinge_tv > 0.0 {
            loss += hinge_tv * inv;
            for k in 0..d {
                grads_t.row_mut(i)[k] += (videos.get(kn, k) - videos.get(i, k)) * inv;
                grads_v.row_mut(kn)[k] += texts.get(i, k) * inv;
                grads_v.row_mut(i)[k] -= texts.get(i, k) * inv;
            }
        }
    }
    Ok((loss, grads_v, grads_t))
}

/// InfoNCE for one query against `[positive | queue]` with label 0.
///
/// The positive key comes from a momentum encoder and receives no gradient;
/// only `grad_query` is returned. Which queue is passed determines the
/// direction (text queue for video queries and vice versa).
pub fn infonce_loss(
    query: &[f64],
    positive_key: &[f64],
    queue: &CrossModalQueue,
    query_owner: usize,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let logits = masked_negative_logits(query, positive_key, queue, query_owner, temperature)?;
    let (loss, grad_logits) = softmax_cross_entropy_with_grad(&logits.values, 0)?;
    let mut grad_query = vec![0.0; query.len()];
    let scale = 1.0 / temperature;
    let g0 = grad_logits[0] * scale;
    for (gq, p) in grad_query.iter_mut().zip(positive_key) {
        *gq += g0 * p;
    }
    for (slot, g) in queue.slots().iter().zip(&grad_logits[1..]) {
        if *g != 0.0 {
            let gs = g * scale;
            for (gq, e) in grad_query.iter_mut().zip(&slot.embedding) {
                *gq += gs * e;
            }
        }
    }
    Ok((loss, grad_query))
}

/// Mean InfoNCE over a batch of rows; gradient rows carry the 1/B factor.
pub fn infonce_batch(
    queries: &Matrix,
    positive_keys: &Matrix,
    queue: &CrossModalQueue,
    owners: &[usize],
    temperature: f64,
) -> Result<(f64, Matrix)> {
    let b = queries.rows();
    if b == 0 {
        return Err(MeelError::EmptyInput {
            what: "InfoNCE batch",
        });
    }
    if positive_keys.rows() != b {
        return Err(MeelError::CountMismatch {
            what: "InfoNCE positive keys",
            expected: b,
            actual: positive_keys.rows(),
        });
    }
    if owners.len() != b {
        return Err(MeelError::CountMismatch {
            what: "InfoNCE owners",
            expected: b,
            actual: owners.len(),
        });
    }
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grads = Matrix::zeros(b, queries.cols());
    for i in 0..b {
        let (l, g) = infonce_loss(
            queries.row(i),
            positive_keys.row(i),
            queue,
            owners[i],
            temperature,
        )?;
        loss += l * inv;
        for (out, gi) in grads.row_mut(i).iter_mut().zip(&g) {
            *out = gi * inv;
        }
    }
    Ok((loss, grads))
}

/// Half squared distance of each text embedding to its class center:
/// `1/2 * sum_i ||t_i - c_{y_i}||^2`, summed over the batch.
///
/// The gradient with respect to `t_i` is `t_i - c_{y_i}`. Centers receive no
/// gradient here; they move through [`CenterBank::update`].
pub fn center_loss(texts: &Matrix, labels: &[usize], bank: &CenterBank) -> Result<(f64, Matrix)> {
    if labels.len() != texts.rows() {
        return Err(MeelError::CountMismatch {
            what: "center loss labels",
            expected: texts.rows(),
            actual: labels.len(),
        });
    }
    if texts.cols() != bank.dim() {
        return Err(MeelError::LengthMismatch {
            left: texts.cols(),
            right: bank.dim(),
        });
    }
    let mut loss = 0.0;
    let mut grads = Matrix::zeros(texts.rows(), texts.cols());
    for (i, &class) in labels.iter().enumerate() {
        if class >= bank.class_count() {
            return Err(MeelError::ClassOutOfRange {
                class,
                count: bank.class_count(),
            });
        }
        let center = bank.center(class);
        let row = texts.row(i);
        let g = grads.row_mut(i);
        for k in 0..row.len() {
            let diff = row[k] - center[k];
            loss += 0.5 * diff * diff;
            g[k] = diff;
        }
    }
    Ok((loss, grads))
}

/// The four loss terms with their per-sample embedding gradients, before
/// combination.
#[derive(Debug, Clone)]
pub struct LossParts {
    /// (loss, grads for video rows, grads for text rows)
    pub triplet: (f64, Matrix, Matrix),
    /// (loss, grads for video rows)
    pub v2t: (f64, Matrix),
    /// (loss, grads for text rows)
    pub t2v: (f64, Matrix),
    /// (loss, grads for text rows)
    pub center: (f64, Matrix),
}

impl LossParts {
    /// All-zero parts for a B×d batch; used when a term is disabled.
    pub fn zeros(batch: usize, dim: usize) -> LossParts {
        LossParts {
            triplet: (0.0, Matrix::zeros(batch, dim), Matrix::zeros(batch, dim)),
            v2t: (0.0, Matrix::zeros(batch, dim)),
            t2v: (0.0, Matrix::zeros(batch, dim)),
            center: (0.0, Matrix::zeros(batch, dim)),
        }
    }
}

/// Combined loss values and summed per-embedding gradients.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub triplet: f64,
    pub v2t: f64,
    pub t2v: f64,
    pub center: f64,
    pub total: f64,
    pub grads_v: Matrix,
    pub grads_t: Matrix,
}

/// Weighted sum `triplet + v2t + t2v + center_weight * center` with the
/// matching gradient combination.
pub fn total_loss(parts: LossParts, center_weight: f64) -> Result<LossReport> {
    let (l_tri, grads_v_tri, grads_t_tri) = parts.triplet;
    let (l_v2t, grads_v2t) = parts.v2t;
    let (l_t2v, grads_t2v) = parts.t2v;
    let (l_c, grads_c) = parts.center;
    for (value, name) in [
        (l_tri, "triplet loss"),
        (l_v2t, "v2t loss"),
        (l_t2v, "t2v loss"),
        (l_c, "center loss"),
        (center_weight, "center weight"),
    ] {
        if !value.is_finite() {
            return Err(MeelError::NonFinite { context: name });
        }
    }
    let mut grads_v = grads_v_tri;
    grads_v.add_scaled(&grads_v2t, 1.0)?;
    let mut grads_t = grads_t_tri;
    grads_t.add_scaled(&grads_t2v, 1.0)?;
    grads_t.add_scaled(&grads_c, center_weight)?;
    Ok(LossReport {
        triplet: l_tri,
        v2t: l_v2t,
        t2v: l_t2v,
        center: l_c,
        total: l_tri + l_v2t + l_t2v + center_weight * l_c,
        grads_v,
        grads_t,
    })
}
