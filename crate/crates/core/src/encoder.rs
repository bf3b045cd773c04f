//! Two-branch MLP encoders over precomputed features.
//!
//! Each modality owns an [`EncoderPair`]: a query network trained by
//! gradient descent and a key network of identical shape updated only by
//! exponential moving average (never back-propagated). The forward pass ends
//! in L2 normalization, so dot products of encoder outputs are cosine
//! similarities.

use crate::error::{MeelError, Result};
use crate::numerics::{l2_normalize_with_grad, Matrix, NormalizeBackward, PrngStream};

/// Hidden-layer nonlinearity tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One dense layer: `weight` is out×in, `bias` has length out.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(&self) -> LayerParams {
        LayerParams {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Full MLP parameter set. Adjacent layer dimensions chain; the last layer's
/// output dimension is the embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.rows() == b.weight.rows()
                    && a.weight.cols() == b.weight.cols()
                    && a.bias.len() == b.bias.len()
            })
    }

    /// All parameters in a fixed order: per layer, weights row-major, then
    /// bias. The flat order is the contract between gradients, optimizer
    /// moments, and checkpoints.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.weight
                .data()
                .iter()
                .copied()
                .chain(l.bias.iter().copied())
        })
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.data_mut().iter_mut().chain(l.bias.iter_mut()))
    }
}

/// Gradient container shaped exactly like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerParams>,
}

impl MlpGrads {
    pub fn zeros_of(params: &MlpParams) -> MlpGrads {
        MlpGrads {
            layers: params.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.weight
                .data()
                .iter()
                .copied()
                .chain(l.bias.iter().copied())
        })
    }

    pub fn accumulate(&mut self, other: &MlpGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(MeelError::CountMismatch {
                what: "gradient layer count",
                expected: self.layers.len(),
                actual: other.layers.len(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled(&b.weight, 1.0)?;
            if a.bias.len() != b.bias.len() {
                return Err(MeelError::LengthMismatch {
                    left: a.bias.len(),
                    right: b.bias.len(),
                });
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// Per-layer values retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer: `layer_inputs[0]` is the raw feature vector,
    /// `layer_inputs[l]` for l > 0 is the post-activation output of layer l-1.
    layer_inputs: Vec<Vec<f64>>,
    norm_back: NormalizeBackward,
}

/// Draws fresh MLP parameters: weights from a Gaussian with std `1/sqrt(fan_in)`,
/// biases zero. Deterministic per stream state.
pub fn init_params(
    input_dim: usize,
    hidden_dims: &[usize],
    output_dim: usize,
    activation: Activation,
    stream: &mut PrngStream,
) -> Result<MlpParams> {
    if input_dim == 0 {
        return Err(MeelError::NonPositiveDimension {
            name: "input_dim",
            value: 0,
        });
    }
    if output_dim == 0 {
        return Err(MeelError::NonPositiveDimension {
            name: "output_dim",
            value: 0,
        });
    }
    if hidden_dims.contains(&0) {
        return Err(MeelError::NonPositiveDimension {
            name: "hidden_dim",
            value: 0,
        });
    }
    let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden_dims);
    dims.push(output_dim);

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let data: Vec<f64> = (0..fan_out * fan_in)
            .map(|_| stream.gaussian() * scale)
            .collect();
        layers.push(LayerParams {
            weight: Matrix::from_vec(fan_out, fan_in, data)?,
            bias: vec![0.0; fan_out],
        });
    }
    Ok(MlpParams { layers, activation })
}

/// Runs the MLP and normalizes the final output to the unit sphere.
/// Returns the embedding and the cache needed by [`backward`].
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if x.len() != params.input_dim() {
        return Err(MeelError::LengthMismatch {
            left: x.len(),
            right: params.input_dim(),
        });
    }
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut current = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z: Vec<f64> = layer
            .bias
            .iter()
            .enumerate()
            .map(|(o, b)| b + crate::numerics::dot(layer.weight.row(o), &current))
            .collect();
        layer_inputs.push(std::mem::take(&mut current));
        if l + 1 < n_layers {
            for v in z.iter_mut() {
                *v = params.activation.apply(*v);
            }
        }
        current = z;
    }
    let (unit, norm_back) = l2_normalize_with_grad(&current)?;
    Ok((
        unit,
        ForwardCache {
            layer_inputs,
            norm_back,
        },
    ))
}

/// Back-propagates a gradient with respect to the embedding through the
/// normalize layer and every dense layer. Returns parameter gradients and
/// the gradient with respect to the input vector.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_embedding: &[f64],
) -> Result<(MlpGrads, Vec<f64>)> {
    let n_layers = params.layers.len();
    if cache.layer_inputs.len() != n_layers {
        return Err(MeelError::CountMismatch {
            what: "cache layer count",
            expected: n_layers,
            actual: cache.layer_inputs.len(),
        });
    }
    if grad_embedding.len() != params.output_dim() {
        return Err(MeelError::LengthMismatch {
            left: grad_embedding.len(),
            right: params.output_dim(),
        });
    }
    for (layer, input) in params.layers.iter().zip(&cache.layer_inputs) {
        if input.len() != layer.weight.cols() {
            return Err(MeelError::LengthMismatch {
                left: input.len(),
                right: layer.weight.cols(),
            });
        }
    }

    let mut grads = MlpGrads::zeros_of(params);
    // Pull the embedding gradient back through the unit-sphere projection.
    let mut grad_z = cache.norm_back.apply(grad_embedding);
    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let input = &cache.layer_inputs[l];
        let g = &mut grads.layers[l];
        for (o, gz) in grad_z.iter().enumerate() {
            g.bias[o] = *gz;
            let row = g.weight.row_mut(o);
            for (r, inp) in row.iter_mut().zip(input) {
                *r = gz * inp;
            }
        }
        let mut grad_input = vec![0.0; layer.weight.cols()];
        for (o, gz) in grad_z.iter().enumerate() {
            let row = layer.weight.row(o);
            for (gi, w) in grad_input.iter_mut().zip(row) {
                *gi += gz * w;
            }
        }
        if l > 0 {
            // input was produced by the previous layer's activation.
            for (gi, a) in grad_input.iter_mut().zip(input) {
                *gi *= params.activation.derivative_from_output(*a);
            }
        }
        grad_z = grad_input;
    }
    Ok((grads, grad_z))
}

/// A query network and its momentum (key) twin for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub query: MlpParams,
    pub key: MlpParams,
}

impl EncoderPair {
    /// Initializes the query network and copies it into the key network.
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        activation: Activation,
        stream: &mut PrngStream,
    ) -> Result<EncoderPair> {
        let query = init_params(input_dim, hidden_dims, output_dim, activation, stream)?;
        let key = query.clone();
        Ok(EncoderPair { query, key })
    }

    pub fn input_dim(&self) -> usize {
        self.query.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.query.output_dim()
    }

    /// EMA update of the key parameters: `k <- m*k + (1-m)*q`, element-wise.
    ///
    /// Computed as `k += (1-m)*(q-k)` so that `k == q` is an exact fixed
    /// point; `m = 0` copies q exactly.
    pub fn momentum_update(&mut self, m: f64) -> Result<()> {
        if !(0.0..1.0).contains(&m) {
            return Err(MeelError::InvalidParameter {
                name: "momentum",
                value: m,
                constraint: "0 <= m < 1",
            });
        }
        if m == 0.0 {
            self.key = self.query.clone();
            return Ok(());
        }
        let step = 1.0 - m;
        for (k, q) in self.key.flat_mut().zip(self.query.flat()) {
            *k += step * (q - *k);
        }
        Ok(())
    }

    /// Copies query parameters into the key network, bit for bit.
    pub fn sync_key_from_query(&mut self) {
        self.key = self.query.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().max(1e-12);
        (diff / scale).sqrt()
    }

    fn identity_linear(dim: usize) -> MlpParams {
        let mut w = Matrix::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        MlpParams {
            layers: vec![LayerParams {
                weight: w,
                bias: vec![0.0; dim],
            }],
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn init_no_hidden_is_single_layer() {
        let mut stream = PrngStream::new(1);
        let p = init_params(6, &[], 3, Activation::Tanh, &mut stream).unwrap();
        assert_eq!(p.layers.len(), 1);
        assert_eq!(p.input_dim(), 6);
        assert_eq!(p.output_dim(), 3);
        assert!(p.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_same_seed_bitwise_identical() {
        let a = init_params(8, &[5], 4, Activation::Tanh, &mut PrngStream::new(3)).unwrap();
        let b = init_params(8, &[5], 4, Activation::Tanh, &mut PrngStream::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_weight_std_tracks_fan_in() {
        let mut stream = PrngStream::new(5);
        // 256 -> 40 gives 10240 weight samples.
        let p = init_params(256, &[], 40, Activation::Tanh, &mut stream).unwrap();
        let w = p.layers[0].weight.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let expected = 1.0 / 256.0f64.sqrt();
        assert!((var.sqrt() - expected).abs() / expected < 0.10);
    }

    #[test]
    fn init_rejects_zero_dims() {
        let mut s = PrngStream::new(1);
        assert!(init_params(0, &[], 3, Activation::Tanh, &mut s).is_err());
        assert!(init_params(3, &[0], 3, Activation::Tanh, &mut s).is_err());
        assert!(init_params(3, &[], 0, Activation::Tanh, &mut s).is_err());
    }

    #[test]
    fn forward_identity_weight_keeps_basis_vector() {
        let p = identity_linear(4);
        let (emb, _) = forward(&p, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(emb, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_output_unit_norm() {
        let mut stream = PrngStream::new(9);
        let p = init_params(10, &[7], 5, Activation::Tanh, &mut stream).unwrap();
        for _ in 0..20 {
            let x = stream.gaussian_vec(10);
            let (emb, _) = forward(&p, &x).unwrap();
            assert_close(dot(&emb, &emb).sqrt(), 1.0, 1e-9);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_len() {
        let p = identity_linear(4);
        assert!(forward(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mut stream = PrngStream::new(11);
        let p = init_params(5, &[4], 3, Activation::Tanh, &mut stream).unwrap();
        let x = stream.gaussian_vec(5);
        let h = 1e-6;
        for out in 0..3 {
            let mut one_hot = vec![0.0; 3];
            one_hot[out] = 1.0;
            let (_, cache) = forward(&p, &x).unwrap();
            let (_, analytic) = backward(&p, &cache, &one_hot).unwrap();
            let numeric: Vec<f64> = (0..5)
                .map(|i| {
                    let mut plus = x.clone();
                    let mut minus = x.clone();
                    plus[i] += h;
                    minus[i] -= h;
                    let e_plus = forward(&p, &plus).unwrap().0[out];
                    let e_minus = forward(&p, &minus).unwrap().0[out];
                    (e_plus - e_minus) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&analytic, &numeric) <= 1e-5);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let mut stream = PrngStream::new(13);
        let p = init_params(4, &[3], 2, Activation::Tanh, &mut stream).unwrap();
        let (_, cache) = forward(&p, &stream.gaussian_vec(4)).unwrap();
        let (grads, grad_in) = backward(&p, &cache, &[0.0, 0.0]).unwrap();
        assert!(grads.flat().all(|g| g == 0.0));
        assert!(grad_in.iter().all(|&g| g == 0.0));
    }

    /// Probe loss g·embedding; every parameter gradient must match central
    /// finite differences.
    fn check_param_grads(p: &MlpParams, x: &[f64], probe: &[f64], tol: f64) {
        let (_, cache) = forward(p, x).unwrap();
        let (grads, _) = backward(p, &cache, probe).unwrap();
        let analytic: Vec<f64> = grads.flat().collect();
        let h = 1e-6;
        let n = p.param_count();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let mut plus = p.clone();
            let mut minus = p.clone();
            *plus.flat_mut().nth(i).unwrap() += h;
            *minus.flat_mut().nth(i).unwrap() -= h;
            let e_plus = forward(&plus, x).unwrap().0;
            let e_minus = forward(&minus, x).unwrap().0;
            numeric.push((dot(probe, &e_plus) - dot(probe, &e_minus)) / (2.0 * h));
        }
        assert!(
            rel_err(&analytic, &numeric) <= tol,
            "rel err {} > {tol}",
            rel_err(&analytic, &numeric)
        );
    }

    #[test]
    fn single_linear_layer_param_grads_match_finite_differences() {
        let mut stream = PrngStream::new(17);
        let p = init_params(4, &[], 3, Activation::Tanh, &mut stream).unwrap();
        let x = stream.gaussian_vec(4);
        let probe = stream.gaussian_vec(3);
        check_param_grads(&p, &x, &probe, 1e-5);
    }

    #[test]
    fn two_hidden_layer_param_grads_match_finite_differences() {
        let mut stream = PrngStream::new(19);
        for _ in 0..5 {
            let p = init_params(6, &[5, 4], 3, Activation::Tanh, &mut stream).unwrap();
            let x = stream.gaussian_vec(6);
            let probe = stream.gaussian_vec(3);
            check_param_grads(&p, &x, &probe, 1e-5);
        }
    }

    #[test]
    fn relu_param_grads_match_finite_differences() {
        let mut stream = PrngStream::new(23);
        let p = init_params(5, &[4], 3, Activation::Relu, &mut stream).unwrap();
        let x = stream.gaussian_vec(5);
        let probe = stream.gaussian_vec(3);
        check_param_grads(&p, &x, &probe, 1e-5);
    }

    #[test]
    fn momentum_update_basic_arithmetic() {
        let mut stream = PrngStream::new(29);
        let mut pair = EncoderPair::new(2, &[], 2, Activation::Tanh, &mut stream).unwrap();
        for q in pair.query.flat_mut() {
            *q = 1.0;
        }
        for k in pair.key.flat_mut() {
            *k = 0.0;
        }
        pair.momentum_update(0.99).unwrap();
        for k in pair.key.flat() {
            assert_close(k, 0.01, 1e-15);
        }
    }

    #[test]
    fn momentum_zero_copies_exactly() {
        let mut stream = PrngStream::new(31);
        let mut pair = EncoderPair::new(3, &[2], 2, Activation::Tanh, &mut stream).unwrap();
        for k in pair.key.flat_mut() {
            *k += 0.5;
        }
        pair.momentum_update(0.0).unwrap();
        assert_eq!(pair.key, pair.query);
    }

    #[test]
    fn momentum_rejects_out_of_range() {
        let mut stream = PrngStream::new(37);
        let mut pair = EncoderPair::new(2, &[], 2, Activation::Tanh, &mut stream).unwrap();
        assert!(pair.momentum_update(1.0).is_err());
        assert!(pair.momentum_update(-0.1).is_err());
    }

    #[test]
    fn momentum_closed_form_geometric_recursion() {
        let mut stream = PrngStream::new(41);
        for &m in &[0.5f64, 0.99] {
            let mut pair = EncoderPair::new(4, &[3], 2, Activation::Tanh, &mut stream).unwrap();
            // Give the key a distinct starting point, freeze the query.
            for k in pair.key.flat_mut() {
                *k += 0.25;
            }
            let k0: Vec<f64> = pair.key.flat().collect();
            let q: Vec<f64> = pair.query.flat().collect();
            let t = 27;
            for _ in 0..t {
                pair.momentum_update(m).unwrap();
            }
            let decay = m.powi(t);
            for ((k, k0), q) in pair.key.flat().zip(&k0).zip(&q) {
                assert_close(k, decay * k0 + (1.0 - decay) * q, 1e-10);
            }
        }
    }

    #[test]
    fn sync_makes_forward_agree_and_update_a_noop() {
        let mut stream = PrngStream::new(43);
        let mut pair = EncoderPair::new(5, &[4], 3, Activation::Tanh, &mut stream).unwrap();
        for q in pair.query.flat_mut() {
            *q *= 1.7;
        }
        pair.sync_key_from_query();
        assert_eq!(pair.key, pair.query);
        let x = stream.gaussian_vec(5);
        assert_eq!(
            forward(&pair.query, &x).unwrap().0,
            forward(&pair.key, &x).unwrap().0
        );
        let before = pair.key.clone();
        pair.momentum_update(0.73).unwrap();
        assert_eq!(pair.key, before);
    }

    #[test]
    fn momentum_update_preserves_shapes() {
        let mut stream = PrngStream::new(47);
        let mut pair = EncoderPair::new(6, &[5, 4], 3, Activation::Tanh, &mut stream).unwrap();
        pair.momentum_update(0.9).unwrap();
        assert!(pair.key.same_shape(&pair.query));
    }
}
