//! Dataset representation, the correlated synthetic video/text generator for
//! desk-scale runs, and feature-file I/O for real precomputed features.
//!
//! Feature files are binary: magic `MEELFT01`, u32-LE row count, u32-LE
//! dimension, then row-major 32-bit little-endian floats. Values are
//! promoted to f64 when loaded; the synthetic generator quantizes its output
//! to f32 up front so an in-memory dataset and its exported round trip are
//! bit-identical.

use crate::error::{MeelError, Result};
use crate::numerics::{matvec, Matrix, PrngStream};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const FEATURE_MAGIC: [u8; 8] = *b"MEELFT01";

/// Disjoint video-index sets for training, validation, and testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Videos, captions, their ownership relation, and the split assignment.
/// Immutable after construction; all invariants are checked eagerly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub video_features: Matrix,
    pub caption_features: Matrix,
    pub caption_owner: Vec<usize>,
    /// Inverse of `caption_owner`: caption indices per video, ascending.
    pub video_captions: Vec<Vec<usize>>,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(
        video_features: Matrix,
        caption_features: Matrix,
        caption_owner: Vec<usize>,
        splits: Splits,
    ) -> Result<Dataset> {
        let n_videos = video_features.rows();
        if n_videos == 0 {
            return Err(MeelError::EmptyInput { what: "videos" });
        }
        if caption_features.rows() == 0 {
            return Err(MeelError::EmptyInput { what: "captions" });
        }
        if caption_owner.len() != caption_features.rows() {
            return Err(MeelError::CountMismatch {
                what: "caption owners",
                expected: caption_features.rows(),
                actual: caption_owner.len(),
            });
        }
        let mut video_captions = vec![Vec::new(); n_videos];
        for (caption, &owner) in caption_owner.iter().enumerate() {
            if owner >= n_videos {
                return Err(MeelError::DanglingOwner {
                    caption,
                    owner,
                    n_videos,
                });
            }
            video_captions[owner].push(caption);
        }
        if let Some(video) = video_captions.iter().position(Vec::is_empty) {
            return Err(MeelError::VideoWithoutCaption { video });
        }
        let mut seen = vec![false; n_videos];
        for (name, split) in [
            ("train", &splits.train),
            ("val", &splits.val),
            ("test", &splits.test),
        ] {
            for &video in split {
                if video >= n_videos {
                    return Err(MeelError::SplitIndexOutOfRange {
                        split: name,
                        video,
                        n_videos,
                    });
                }
                if seen[video] {
                    return Err(MeelError::OverlappingSplits { video });
                }
                seen[video] = true;
            }
        }
        Ok(Dataset {
            video_features,
            caption_features,
            caption_owner,
            video_captions,
            splits,
        })
    }

    /// Same data, different split assignment (revalidated).
    pub fn with_splits(self, splits: Splits) -> Result<Dataset> {
        Dataset::new(
            self.video_features,
            self.caption_features,
            self.caption_owner,
            splits,
        )
    }

    pub fn n_videos(&self) -> usize {
        self.video_features.rows()
    }

    pub fn n_captions(&self) -> usize {
        self.caption_features.rows()
    }

    pub fn video_dim(&self) -> usize {
        self.video_features.cols()
    }

    pub fn caption_dim(&self) -> usize {
        self.caption_features.cols()
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub captions_per_video: usize,
    pub latent_dim: usize,
    pub video_dim: usize,
    pub text_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            n_videos: 100,
            captions_per_video: 5,
            latent_dim: 16,
            video_dim: 64,
            text_dim: 48,
            noise_std: 0.3,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("n_videos", self.n_videos),
            ("captions_per_video", self.captions_per_video),
            ("latent_dim", self.latent_dim),
            ("video_dim", self.video_dim),
            ("text_dim", self.text_dim),
        ] {
            if value == 0 {
                return Err(MeelError::NonPositiveDimension { name, value });
            }
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(MeelError::InvalidParameter {
                name: "noise_std",
                value: self.noise_std,
                constraint: "must be finite and >= 0",
            });
        }
        Ok(())
    }
}

fn draw_maps(cfg: &SynthConfig, stream: &mut PrngStream) -> Result<(Matrix, Matrix)> {
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let video_map = Matrix::from_vec(
        cfg.video_dim,
        cfg.latent_dim,
        (0..cfg.video_dim * cfg.latent_dim)
            .map(|_| stream.gaussian() * scale)
            .collect(),
    )?;
    let text_map = Matrix::from_vec(
        cfg.text_dim,
        cfg.latent_dim,
        (0..cfg.text_dim * cfg.latent_dim)
            .map(|_| stream.gaussian() * scale)
            .collect(),
    )?;
    Ok((video_map, text_map))
}

/// The fixed cross-modal projections a seed induces. The generator draws
/// these first, so they can be reproduced independently of the dataset.
pub fn synthetic_maps(cfg: &SynthConfig) -> Result<(Matrix, Matrix)> {
    cfg.validate()?;
    let mut stream = PrngStream::new(cfg.seed);
    draw_maps(cfg, &mut stream)
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates a correlated video/multi-caption dataset.
///
/// Per video a latent `z ~ N(0, I)` is drawn; the video feature is
/// `video_map * z + noise` and each caption feature is `text_map * z + noise`,
/// so modalities share latent structure without sharing a feature space.
/// Draw order: maps, then per video its latent, its video noise, and the
/// noise of each of its captions. Videos are split 70/10/20 by prefix.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut stream = PrngStream::new(cfg.seed);
    let (video_map, text_map) = draw_maps(cfg, &mut stream)?;

    let n = cfg.n_videos;
    let mut video_data = Vec::with_capacity(n * cfg.video_dim);
    let mut caption_data = Vec::with_capacity(n * cfg.captions_per_video * cfg.text_dim);
    let mut caption_owner = Vec::with_capacity(n * cfg.captions_per_video);
    for video in 0..n {
        let z = stream.gaussian_vec(cfg.latent_dim);
        let base_v = matvec(&video_map, &z);
        for value in base_v {
            video_data.push(quantize(value + cfg.noise_std * stream.gaussian()));
        }
        for _ in 0..cfg.captions_per_video {
            let base_t = matvec(&text_map, &z);
            for value in base_t {
                caption_data.push(quantize(value + cfg.noise_std * stream.gaussian()));
            }
            caption_owner.push(video);
        }
    }

    let n_train = n * 7 / 10;
    let n_val = n / 10;
    let splits = Splits {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n).collect(),
    };
    Dataset::new(
        Matrix::from_vec(n, cfg.video_dim, video_data)?,
        Matrix::from_vec(n * cfg.captions_per_video, cfg.text_dim, caption_data)?,
        caption_owner,
        splits,
    )
}

/// Writes a feature matrix in the binary format described in the module
/// docs, at 32-bit precision.
pub fn write_features(path: &Path, features: &Matrix) -> Result<()> {
    let rows = u32::try_from(features.rows()).map_err(|_| MeelError::CountMismatch {
        what: "feature rows (must fit u32)",
        expected: u32::MAX as usize,
        actual: features.rows(),
    })?;
    let cols = u32::try_from(features.cols()).map_err(|_| MeelError::CountMismatch {
        what: "feature dim (must fit u32)",
        expected: u32::MAX as usize,
        actual: features.cols(),
    })?;
    let mut buf = Vec::with_capacity(16 + features.data().len() * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for &v in features.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a feature file, validating magic, declared sizes, and that the
/// payload length matches exactly. Values are promoted to f64.
pub fn read_features(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(MeelError::Truncated {
            expected: 16,
            actual: bytes.len() as u64,
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if magic != FEATURE_MAGIC {
        return Err(MeelError::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if rows == 0 {
        return Err(MeelError::NonPositiveDimension {
            name: "feature rows",
            value: 0,
        });
    }
    if cols == 0 {
        return Err(MeelError::NonPositiveDimension {
            name: "feature dim",
            value: 0,
        });
    }
    let expected = 16 + 4 * rows as u64 * cols as u64;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(MeelError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(MeelError::TrailingBytes {
            extra: actual - expected,
        });
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// On-disk manifest tying feature files, ownership, and splits together.
/// Feature paths are resolved relative to the manifest's directory.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    video_features: String,
    caption_features: String,
    caption_owner: Vec<usize>,
    splits: Splits,
}

pub const VIDEO_FEATURES_FILE: &str = "video_features.bin";
pub const CAPTION_FEATURES_FILE: &str = "caption_features.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the two feature files plus `manifest.json` into `dir`, returning
/// the manifest path.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    write_features(&dir.join(VIDEO_FEATURES_FILE), &dataset.video_features)?;
    write_features(&dir.join(CAPTION_FEATURES_FILE), &dataset.caption_features)?;
    let manifest = ManifestFile {
        video_features: VIDEO_FEATURES_FILE.to_string(),
        caption_features: CAPTION_FEATURES_FILE.to_string(),
        caption_owner: dataset.caption_owner.clone(),
        splits: dataset.splits.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json)?;
    Ok(path)
}

/// Loads a dataset from a manifest, validating every invariant eagerly.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: ManifestFile = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let video_features = read_features(&base.join(&manifest.video_features))?;
    let caption_features = read_features(&base.join(&manifest.caption_features))?;
    Dataset::new(
        video_features,
        caption_features,
        manifest.caption_owner,
        manifest.splits,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_similarity;

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig {
            n_videos: 20,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.video_features, other.video_features);
    }

    #[test]
    fn generator_respects_captions_per_video() {
        let cfg = SynthConfig {
            n_videos: 13,
            captions_per_video: 3,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.n_captions(), 39);
        for v in 0..13 {
            assert_eq!(d.video_captions[v].len(), 3);
        }
    }

    #[test]
    fn generator_default_split_fractions() {
        let d = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(d.splits.train.len(), 70);
        assert_eq!(d.splits.val.len(), 10);
        assert_eq!(d.splits.test.len(), 20);
    }

    #[test]
    fn generator_rejects_zero_counts() {
        let cfg = SynthConfig {
            n_videos: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(MeelError::NonPositiveDimension {
                name: "n_videos",
                ..
            })
        ));
    }

    /// Least-squares solve via normal equations and Gauss-Jordan; the test's
    /// own tool, independent of the library.
    fn lstsq(map: &Matrix, target: &[f64]) -> Vec<f64> {
        let l = map.cols();
        let mut ata = vec![vec![0.0; l + 1]; l];
        for i in 0..l {
            for j in 0..l {
                let mut s = 0.0;
                for r in 0..map.rows() {
                    s += map.get(r, i) * map.get(r, j);
                }
                ata[i][j] = s;
            }
            let mut s = 0.0;
            for r in 0..map.rows() {
                s += map.get(r, i) * target[r];
            }
            ata[i][l] = s;
        }
        for col in 0..l {
            let pivot = (col..l)
                .max_by(|&a, &b| ata[a][col].abs().partial_cmp(&ata[b][col].abs()).unwrap());
            let pivot = pivot.unwrap();
            ata.swap(col, pivot);
            let p = ata[col][col];
            for j in col..=l {
                ata[col][j] /= p;
            }
            for row in 0..l {
                if row != col {
                    let f = ata[row][col];
                    for j in col..=l {
                        ata[row][j] -= f * ata[col][j];
                    }
                }
            }
        }
        (0..l).map(|i| ata[i][l]).collect()
    }

    #[test]
    fn noise_free_features_retrieve_through_latent_map() {
        let cfg = SynthConfig {
            n_videos: 500,
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let (video_map, text_map) = synthetic_maps(&cfg).unwrap();
        let test = &d.splits.test;
        assert_eq!(test.len(), 100);
        let mut hits = 0usize;
        let mut total = 0usize;
        for (pos, &video) in test.iter().enumerate() {
            for &caption in &d.video_captions[video] {
                // Recover the latent from the caption, project into video
                // space, and rank test videos by cosine.
                let z = lstsq(&text_map, d.caption_features.row(caption));
                let mapped = matvec(&video_map, &z);
                let mut best = 0usize;
                let mut best_sim = f64::NEG_INFINITY;
                for (candidate_pos, &candidate) in test.iter().enumerate() {
                    let sim = cosine_similarity(&mapped, d.video_features.row(candidate)).unwrap();
                    if sim > best_sim {
                        best_sim = sim;
                        best = candidate_pos;
                    }
                }
                if best == pos {
                    hits += 1;
                }
                total += 1;
            }
        }
        let r1 = 100.0 * hits as f64 / total as f64;
        assert!(r1 > 90.0, "noise-free R@1 through the latent map: {r1}");
    }

    #[test]
    fn feature_file_size_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        write_features(&path, &m).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 40);
    }

    #[test]
    fn feature_file_golden_bytes_one_by_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let m = Matrix::from_vec(1, 1, vec![1.5]).unwrap();
        write_features(&path, &m).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"MEELFT01");
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        assert_eq!(fs::read(&path).unwrap(), expected);
        let back = read_features(&path).unwrap();
        assert_eq!(back.data(), &[1.5]);
    }

    #[test]
    fn feature_file_round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.bin");
        let mut stream = PrngStream::new(7);
        let data: Vec<f64> = stream
            .gaussian_vec(60)
            .iter()
            .map(|&v| quantize(v))
            .collect();
        let m = Matrix::from_vec(10, 6, data).unwrap();
        write_features(&path, &m).unwrap();
        assert_eq!(read_features(&path).unwrap(), m);
    }

    #[test]
    fn feature_file_error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");

        fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x01\x00\x00\x00AAAA").unwrap();
        assert!(matches!(
            read_features(&path),
            Err(MeelError::BadMagic { .. })
        ));

        let mut truncated = Vec::new();
        truncated.extend_from_slice(b"MEELFT01");
        truncated.extend_from_slice(&3u32.to_le_bytes());
        truncated.extend_from_slice(&2u32.to_le_bytes());
        truncated.extend_from_slice(&[0u8; 8]); // 8 of the 24 payload bytes
        fs::write(&path, &truncated).unwrap();
        match read_features(&path) {
            Err(MeelError::Truncated { expected, actual }) => {
                assert_eq!(expected, 40);
                assert_eq!(actual, 24);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }

        let mut zero_dim = Vec::new();
        zero_dim.extend_from_slice(b"MEELFT01");
        zero_dim.extend_from_slice(&1u32.to_le_bytes());
        zero_dim.extend_from_slice(&0u32.to_le_bytes());
        fs::write(&path, &zero_dim).unwrap();
        assert!(matches!(
            read_features(&path),
            Err(MeelError::NonPositiveDimension { .. })
        ));
    }

    #[test]
    fn export_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_videos: 12,
            captions_per_video: 2,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let manifest = export_dataset(&d, dir.path()).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(d, loaded);
    }

    #[test]
    fn dataset_validation_errors() {
        let videos = Matrix::zeros(2, 3);
        let captions = Matrix::zeros(3, 4);
        let splits = Splits {
            train: vec![0],
            val: vec![],
            test: vec![1],
        };

        assert!(matches!(
            Dataset::new(
                videos.clone(),
                captions.clone(),
                vec![0, 1, 2],
                splits.clone()
            ),
            Err(MeelError::DanglingOwner { owner: 2, .. })
        ));

        assert!(matches!(
            Dataset::new(videos.clone(), captions.clone(), vec![0, 1], splits.clone()),
            Err(MeelError::CountMismatch { .. })
        ));

        assert!(matches!(
            Dataset::new(
                videos.clone(),
                captions.clone(),
                vec![0, 0, 0],
                splits.clone()
            ),
            Err(MeelError::VideoWithoutCaption { video: 1 })
        ));

        let overlapping = Splits {
            train: vec![0, 1],
            val: vec![],
            test: vec![1],
        };
        assert!(matches!(
            Dataset::new(videos.clone(), captions.clone(), vec![0, 1, 1], overlapping),
            Err(MeelError::OverlappingSplits { video: 1 })
        ));

        let out_of_range = Splits {
            train: vec![0],
            val: vec![5],
            test: vec![],
        };
        assert!(matches!(
            Dataset::new(videos, captions, vec![0, 1, 1], out_of_range),
            Err(MeelError::SplitIndexOutOfRange { video: 5, .. })
        ));
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_videos: 10,
            captions_per_video: 1,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let manifest = export_dataset(&d, dir.path()).unwrap();
        let mut text = fs::read_to_string(&manifest).unwrap();
        text.insert_str(1, "\"surprise\": 1,");
        fs::write(&manifest, text).unwrap();
        assert!(matches!(load_dataset(&manifest), Err(MeelError::Json(_))));
    }
}
