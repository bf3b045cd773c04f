//! Bidirectional retrieval evaluation: ranks ground truth by descending
//! cosine similarity and reports R@{1,5,10}, median rank, mean rank per
//! direction plus their recall sum.

use crate::error::{MeelError, Result};
use crate::numerics::Matrix;
use serde::{Deserialize, Serialize};

/// The one-to-multi relation over an evaluation set: each text has exactly
/// one owner video, each video owns at least one text.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    text_owner: Vec<usize>,
    video_texts: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn new(text_owner: Vec<usize>, n_videos: usize) -> Result<GroundTruth> {
        if text_owner.is_empty() {
            return Err(MeelError::EmptyInput {
                what: "ground-truth texts",
            });
        }
        let mut video_texts = vec![Vec::new(); n_videos];
        for (text, &video) in text_owner.iter().enumerate() {
            if video >= n_videos {
                return Err(MeelError::DanglingOwner {
                    caption: text,
                    owner: video,
                    n_videos,
                });
            }
            video_texts[video].push(text);
        }
        if let Some(video) = video_texts.iter().position(Vec::is_empty) {
            return Err(MeelError::VideoWithoutCaption { video });
        }
        Ok(GroundTruth {
            text_owner,
            video_texts,
        })
    }

    pub fn n_videos(&self) -> usize {
        self.video_texts.len()
    }

    pub fn n_texts(&self) -> usize {
        self.text_owner.len()
    }

    pub fn owner_of(&self, text: usize) -> usize {
        self.text_owner[text]
    }

    pub fn texts_of(&self, video: usize) -> &[usize] {
        &self.video_texts[video]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    TextToVideo,
    VideoToText,
}

/// 1-based rank of `target` among `candidates` sorted by descending score;
/// equal scores are won by the lower index.
fn rank_of(scores: impl Iterator<Item = f64>, target: usize, target_score: f64) -> usize {
    let mut rank = 1;
    for (i, s) in scores.enumerate() {
        if s > target_score || (s == target_score && i < target) {
            rank += 1;
        }
    }
    rank
}

/// Ranks every query's ground truth. `similarities` is videos × texts.
///
/// Text-to-video: the rank of the owner video among all videos. Video-to-text:
/// the best rank over the video's texts.
pub fn compute_ranks(
    similarities: &Matrix,
    gt: &GroundTruth,
    direction: Direction,
) -> Result<Vec<usize>> {
    if similarities.rows() != gt.n_videos() || similarities.cols() != gt.n_texts() {
        return Err(MeelError::ShapeMismatch {
            expected_rows: gt.n_videos(),
            expected_cols: gt.n_texts(),
            rows: similarities.rows(),
            cols: similarities.cols(),
        });
    }
    let p = similarities.rows();
    let q = similarities.cols();
    match direction {
        Direction::TextToVideo => Ok((0..q)
            .map(|text| {
                let owner = gt.owner_of(text);
                let target_score = similarities.get(owner, text);
                rank_of(
                    (0..p).map(|video| similarities.get(video, text)),
                    owner,
                    target_score,
                )
            })
            .collect()),
        Direction::VideoToText => Ok((0..p)
            .map(|video| {
                gt.texts_of(video)
                    .iter()
                    .map(|&text| {
                        rank_of(
                            similarities.row(video).iter().copied(),
                            text,
                            similarities.get(video, text),
                        )
                    })
                    .min()
                    .expect("every video owns at least one text")
            })
            .collect()),
    }
}

/// Metrics for one retrieval direction. Recalls are percentages, ranks are
/// 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
    pub meanr: f64,
}

/// Full bidirectional report; `rsum` adds the six recall values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub t2v: DirectionMetrics,
    pub v2t: DirectionMetrics,
    pub rsum: f64,
}

fn direction_metrics(ranks: &[usize]) -> Result<DirectionMetrics> {
    if ranks.is_empty() {
        return Err(MeelError::EmptyInput { what: "rank list" });
    }
    let n = ranks.len() as f64;
    let recall_at = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let medr = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2] as f64
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) as f64 / 2.0
    };
    Ok(DirectionMetrics {
        r1: recall_at(1),
        r5: recall_at(5),
        r10: recall_at(10),
        medr,
        meanr: ranks.iter().sum::<usize>() as f64 / n,
    })
}

/// Builds the report from per-query ranks of both directions.
pub fn summarize_metrics(ranks_t2v: &[usize], ranks_v2t: &[usize]) -> Result<RetrievalReport> {
    let t2v = direction_metrics(ranks_t2v)?;
    let v2t = direction_metrics(ranks_v2t)?;
    let rsum = t2v.r1 + t2v.r5 + t2v.r10 + v2t.r1 + v2t.r5 + v2t.r10;
    Ok(RetrievalReport { t2v, v2t, rsum })
}
