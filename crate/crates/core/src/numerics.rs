//! Deterministic numeric kernel: dense vectors and matrices, L2
//! normalization and softmax cross-entropy with analytic gradients, and a
//! seeded, explicitly specified PRNG used everywhere randomness is needed.
//!
//! All training math runs in `f64`. Operations are pure functions; only
//! [`PrngStream`] carries mutable state and it is single-owner.

use crate::error::{MeelError, Result};

/// Norm threshold below which a vector is rejected as degenerate instead of
/// being normalized into NaNs.
pub const EPS_NORM: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from a row-major buffer, validating length and
    /// finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(MeelError::CountMismatch {
                what: "matrix buffer length",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MeelError::NonFinite {
                context: "matrix entries",
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(MeelError::LengthMismatch {
                    left: cols,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += scale * other`, shapes must agree.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(MeelError::ShapeMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                rows: other.rows,
                cols: other.cols,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Matrix-vector product `m * x`.
pub fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols(), x.len());
    (0..m.rows()).map(|i| dot(m.row(i), x)).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Scales `x` to unit L2 norm. Rejects vectors with norm below [`EPS_NORM`].
pub fn l2_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = norm(x);
    if n <= EPS_NORM || n.is_nan() {
        return Err(MeelError::DegenerateNorm { norm: n });
    }
    Ok(x.iter().map(|v| v / n).collect())
}

/// Backward map of [`l2_normalize_with_grad`]: applies the Jacobian
/// `(I - u uᵀ) / ‖x‖` to an output gradient.
#[derive(Debug, Clone)]
pub struct NormalizeBackward {
    pub unit: Vec<f64>,
    pub norm: f64,
}

impl NormalizeBackward {
    pub fn apply(&self, grad_unit: &[f64]) -> Vec<f64> {
        assert_eq!(grad_unit.len(), self.unit.len());
        let proj = dot(&self.unit, grad_unit);
        self.unit
            .iter()
            .zip(grad_unit)
            .map(|(u, g)| (g - u * proj) / self.norm)
            .collect()
    }
}

/// L2 normalization together with its gradient map.
pub fn l2_normalize_with_grad(x: &[f64]) -> Result<(Vec<f64>, NormalizeBackward)> {
    let unit = l2_normalize(x)?;
    let backward = NormalizeBackward {
        unit: unit.clone(),
        norm: norm(x),
    };
    Ok((unit, backward))
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`, in [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MeelError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na <= EPS_NORM || na.is_nan() {
        return Err(MeelError::DegenerateNorm { norm: na });
    }
    if nb <= EPS_NORM || nb.is_nan() {
        return Err(MeelError::DegenerateNorm { norm: nb });
    }
    Ok(dot(a, b) / (na * nb))
}

/// Pairwise cosine similarities between the rows of `a` (p×d) and the rows
/// of `b` (q×d), producing a p×q matrix.
pub fn similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(MeelError::InnerDimMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, cosine_similarity(a.row(i), b.row(j))?);
        }
    }
    Ok(out)
}

/// Softmax cross-entropy `-log softmax(logits)[label]` with its gradient
/// `softmax(logits) - onehot(label)`.
///
/// Entries equal to `-inf` are masked: they contribute nothing to the
/// partition sum and receive exactly zero gradient. Any other non-finite
/// entry is rejected.
pub fn softmax_cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let n = logits.len();
    if label >= n {
        return Err(MeelError::LabelOutOfRange { label, n });
    }
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if l.is_nan() || l == f64::INFINITY {
            return Err(MeelError::NonFinite { context: "logits" });
        }
        if l > max {
            max = l;
        }
    }
    if logits[label] == f64::NEG_INFINITY {
        return Err(MeelError::MaskedLabel { label });
    }
    // max is finite here because the label entry is.
    let mut partition = 0.0;
    for &l in logits {
        if l != f64::NEG_INFINITY {
            partition += (l - max).exp();
        }
    }
    let loss = partition.ln() + max - logits[label];
    let mut grad = vec![0.0; n];
    for (g, &l) in grad.iter_mut().zip(logits) {
        if l != f64::NEG_INFINITY {
            *g = (l - max).exp() / partition;
        }
    }
    grad[label] -= 1.0;
    Ok((loss.max(0.0), grad))
}

/// Deterministic pseudo-random stream.
///
/// The generator is pinned so sequences reproduce across runs and
/// implementations:
///
/// * seeding: one round of `splitmix64` over the seed (`z = seed + 0x9E3779B97F4A7C15`,
///   `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`, `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`,
///   `state = z ^ (z >> 31)`, replaced by `0x9E3779B97F4A7C15` if zero);
/// * stream: `xorshift64*` — `s ^= s >> 12; s ^= s << 25; s ^= s >> 27;
///   output = s * 0x2545F4914F6CDD1D`;
/// * uniforms: top 53 bits of the output mapped to `[0, 1)`;
/// * gaussians: Box–Muller cosine branch, two uniforms per sample, the sine
///   branch discarded so the stream carries no hidden cache.
///
/// The integer stream is exactly portable; floats derived through `ln`/`cos`
/// are bit-stable per platform and toolchain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrngStream {
    seed: u64,
    state: u64,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl PrngStream {
    pub fn new(seed: u64) -> PrngStream {
        let mut state = splitmix64(seed);
        if state == 0 {
            state = 0x9E37_79B9_7F4A_7C15;
        }
        PrngStream { seed, state }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// Rebuilds a stream from checkpointed (seed, state).
    pub fn from_parts(seed: u64, state: u64) -> PrngStream {
        PrngStream { seed, state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut s = self.state;
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        self.state = s;
        s.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal sample.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps ln finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }

    /// Uniform integer in `[0, n)` by rejection, exactly unbiased.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let rem = (u64::MAX % n + 1) % n;
        let limit = u64::MAX - rem;
        loop {
            let x = self.next_u64();
            if x <= limit {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }
}
