use rand::{Rng, RngCore};

use super::matrix::{Matrix, Real};
use super::Parameters;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Learned per-feature gain and shift of a layer normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub gain: Matrix<T>,
    pub shift: Matrix<T>,
}

impl<T: Real> LayerNormParams<T> {
    pub fn new(dim: usize) -> Self {
        let mut gain = Matrix::zeros(1, dim);
        gain.fill(T::one());
        Self {
            gain,
            shift: Matrix::zeros(1, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Matrix::zeros(1, dim),
            shift: Matrix::zeros(1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.cols()
    }
}

/// Values saved by [`layer_norm_rows`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    normalized: Matrix<T>,
    inv_std: Vec<T>,
}

/// `gain ⊙ (x − mean) / sqrt(var + ε) + shift` for a single vector.
pub fn layer_norm<T: Real>(x: &[T], p: &LayerNormParams<T>) -> Vec<T> {
    let m = Matrix::row_vector(x.to_vec());
    layer_norm_rows(&m, p).0.into_vec()
}

/// Gradient of [`layer_norm`] with respect to its input, gain and shift.
pub fn layer_norm_backward<T: Real>(x: &[T], p: &LayerNormParams<T>, dy: &[T]) -> (Vec<T>, LayerNormParams<T>) {
    let m = Matrix::row_vector(x.to_vec());
    let (_, cache) = layer_norm_rows(&m, p);
    let mut grads = LayerNormParams::zeros(p.dim());
    let dx = layer_norm_rows_backward(&cache, p, &Matrix::row_vector(dy.to_vec()), &mut grads);
    (dx.into_vec(), grads)
}

/// Normalizes each row of `x` independently (biased variance).
pub fn layer_norm_rows<T: Real>(x: &Matrix<T>, p: &LayerNormParams<T>) -> (Matrix<T>, LayerNormCache<T>) {
    let n = x.cols();
    let eps = T::of(LAYER_NORM_EPS);
    let inv_n = T::one() / T::of(n as f64);
    let mut normalized = Matrix::zeros(x.rows(), n);
    let mut out = Matrix::zeros(x.rows(), n);
    let mut inv_std = Vec::with_capacity(x.rows());
    let (gain, shift) = (p.gain.as_slice(), p.shift.as_slice());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        let xhat = normalized.row_mut(i);
        for j in 0..n {
            xhat[j] = (row[j] - mean) * inv;
        }
        let xhat = normalized.row(i).to_vec();
        let o = out.row_mut(i);
        for j in 0..n {
            o[j] = gain[j] * xhat[j] + shift[j];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `dx` and accumulates gain/shift gradients into `grads`.
pub fn layer_norm_rows_backward<T: Real>(
    cache: &LayerNormCache<T>,
    p: &LayerNormParams<T>,
    dy: &Matrix<T>,
    grads: &mut LayerNormParams<T>,
) -> Matrix<T> {
    let n = dy.cols();
    let nf = T::of(n as f64);
    let gain = p.gain.as_slice();
    let mut dx = Matrix::zeros(dy.rows(), n);
    for i in 0..dy.rows() {
        let xhat = cache.normalized.row(i);
        let g = dy.row(i);
        let dgain = grads.gain.as_mut_slice();
        for j in 0..n {
            dgain[j] += g[j] * xhat[j];
        }
        let dshift = grads.shift.as_mut_slice();
        for j in 0..n {
            dshift[j] += g[j];
        }
        let dxhat: Vec<T> = (0..n).map(|j| g[j] * gain[j]).collect();
        let sum: T = dxhat.iter().copied().sum();
        let sum_x: T = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
        let scale = cache.inv_std[i] / nf;
        let out = dx.row_mut(i);
        for j in 0..n {
            out[j] = scale * (nf * dxhat[j] - sum - xhat[j] * sum_x);
        }
    }
    dx
}

/// Affine layer: `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weight.as_mut_slice() {
            *w = T::of(rng.random_range(-limit..limit));
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Multi-layer perceptron with input dropout.
///
/// Hidden layers compute `relu(layer_norm(x·W + b))` (or `relu(x·W + b)`
/// when layer norm is disabled); the output layer is affine only.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub layers: Vec<Dense<T>>,
    /// One per hidden layer; empty when layer norm is disabled.
    pub norms: Vec<LayerNormParams<T>>,
    /// Probability of zeroing each input activation during training.
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct FfCache<T> {
    dims: Vec<usize>,
    rows: usize,
    /// Scaled keep mask (`0` or `1/(1-p)`), present only in training mode.
    mask: Option<Matrix<T>>,
    /// Input of each layer; index 0 is the post-dropout network input.
    inputs: Vec<Matrix<T>>,
    norm_caches: Vec<LayerNormCache<T>>,
    /// Pre-activation (post-norm) values of each hidden layer.
    pre_act: Vec<Matrix<T>>,
}

impl<T: Real> FeedForward<T> {
    /// `dims` lists layer widths from input to output, e.g. `[100, 200, 200]`.
    pub fn new(dims: &[usize], dropout: f64, layer_norm: bool, rng: &mut dyn RngCore) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "a feed-forward net needs at least two widths".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let layers = dims.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        let norms = if layer_norm {
            dims[1..dims.len() - 1]
                .iter()
                .map(|&d| LayerNormParams::new(d))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { layers, norms, dropout })
    }

    /// Same shapes, all parameters zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            norms: self.norms.iter().map(|n| LayerNormParams::zeros(n.dim())).collect(),
            dropout: self.dropout,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::output_dim));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn has_layer_norm(&self) -> bool {
        !self.norms.is_empty()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.1.add_assign(b.1);
        }
    }

    /// Applies the network to every row of `x`. Dropout is active only when
    /// an rng is supplied.
    pub fn forward(&self, x: &Matrix<T>, rng: Option<&mut dyn RngCore>) -> Result<(Matrix<T>, FfCache<T>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("ff_forward", self.input_dim(), x.cols()));
        }
        let mut mask = None;
        let mut h = x.clone();
        if let Some(rng) = rng {
            if self.dropout > 0.0 {
                let keep = T::of(1.0 / (1.0 - self.dropout));
                let mut m = Matrix::zeros(x.rows(), x.cols());
                for v in m.as_mut_slice() {
                    if rng.random::<f64>() >= self.dropout {
                        *v = keep;
                    }
                }
                h = h.hadamard(&m);
                mask = Some(m);
            }
        }

        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut norm_caches = Vec::with_capacity(hidden);
        let mut pre_act = Vec::with_capacity(hidden);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight);
            z.add_row(&layer.bias);
            inputs.push(h);
            if l < hidden {
                if let Some(norm) = self.norms.get(l) {
                    let (zn, c) = layer_norm_rows(&z, norm);
                    norm_caches.push(c);
                    z = zn;
                }
                h = z.map(|v| v.max(T::zero()));
                pre_act.push(z);
            } else {
                h = z;
            }
        }
        let cache = FfCache {
            dims: self.dims(),
            rows: x.rows(),
            mask,
            inputs,
            norm_caches,
            pre_act,
        };
        Ok((h, cache))
    }

    /// Exact gradients of [`forward`](Self::forward) (including its dropout
    /// mask) given the upstream gradient `dy`. Returns `(dx, dparams)`.
    pub fn backward(&self, cache: &FfCache<T>, dy: &Matrix<T>) -> Result<(Matrix<T>, FeedForward<T>)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, dy, &mut grads)?;
        Ok((dx, grads))
    }

    /// Like [`backward`](Self::backward) but adds parameter gradients into
    /// an existing accumulator.
    pub fn backward_into(&self, cache: &FfCache<T>, dy: &Matrix<T>, grads: &mut FeedForward<T>) -> Result<Matrix<T>> {
        if cache.dims != self.dims() || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache built for dims {:?}, network has {:?}",
                cache.dims,
                self.dims()
            )));
        }
        if dy.shape() != (cache.rows, self.output_dim()) {
            return Err(Error::StaleCache(format!(
                "upstream gradient {:?} does not match forward output {:?}",
                dy.shape(),
                (cache.rows, self.output_dim())
            )));
        }
        if grads.dims() != self.dims() || grads.norms.len() != self.norms.len() {
            return Err(Error::dims(
                "ff_backward",
                format!("{:?}", self.dims()),
                format!("{:?}", grads.dims()),
            ));
        }
        let hidden = self.layers.len() - 1;
        let mut g = dy.clone();
        for l in (0..self.layers.len()).rev() {
            if l < hidden {
                let z = &cache.pre_act[l];
                for (gv, &zv) in g.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                if let Some(norm) = self.norms.get(l) {
                    g = layer_norm_rows_backward(&cache.norm_caches[l], norm, &g, &mut grads.norms[l]);
                }
            }
            let input = &cache.inputs[l];
            grads.layers[l].weight.add_matmul_at(input, &g);
            grads.layers[l].bias.add_col_sums(&g);
            g = g.matmul_bt(&self.layers[l].weight);
        }
        if let Some(mask) = &cache.mask {
            g = g.hadamard(mask);
        }
        Ok(g)
    }
}

impl<T: Real> Parameters<T> for FeedForward<T> {
    fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("w{i}"), &layer.weight));
            out.push((format!("b{i}"), &layer.bias));
            if let Some(n) = self.norms.get(i) {
                out.push((format!("ln{i}.gain"), &n.gain));
                out.push((format!("ln{i}.shift"), &n.shift));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("w{i}"), &mut layer.weight));
            out.push((format!("b{i}"), &mut layer.bias));
            if let Some(n) = norms.next() {
                out.push((format!("ln{i}.gain"), &mut n.gain));
                out.push((format!("ln{i}.shift"), &mut n.shift));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::gradcheck::grad_check;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_net_is_identity() {
        let mut net = FeedForward::<f64>::new(&[3, 3], 0.0, false, &mut rng(0)).unwrap();
        net.layers[0].weight = Matrix::from_rows(&[vec![1., 0., 0.], vec![0., 1., 0.], vec![0., 0., 1.]]).unwrap();
        let x = random_matrix(4, 3, &mut rng(1));
        assert_eq!(net.forward(&x, None).unwrap().0, x);
    }

    #[test]
    fn zero_input_gives_bias_path() {
        let mut net = FeedForward::<f64>::new(&[2, 3, 2], 0.0, false, &mut rng(0)).unwrap();
        net.layers[0].bias = Matrix::row_vector(vec![0.5, -1.0, 2.0]);
        net.layers[1].bias = Matrix::row_vector(vec![0.1, 0.2]);
        let (y, _) = net.forward(&Matrix::zeros(3, 2), None).unwrap();
        let relu_b = Matrix::row_vector(vec![0.5, 0.0, 2.0]);
        let mut expected = relu_b.matmul(&net.layers[1].weight);
        expected.add_row(&net.layers[1].bias);
        for i in 0..3 {
            assert_eq!(y.row(i), expected.row(0));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = FeedForward::<f32>::new(&[4, 2], 0.0, false, &mut rng(0)).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(1, 3), None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(FeedForward::<f32>::new(&[4, 2], 1.0, false, &mut rng(0)).is_err());
        assert!(FeedForward::<f32>::new(&[4], 0.0, false, &mut rng(0)).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = FeedForward::<f64>::new(&[3, 4, 2], 0.0, true, &mut rng(0)).unwrap();
        let b = FeedForward::<f64>::new(&[3, 5, 2], 0.0, true, &mut rng(0)).unwrap();
        let (_, cache) = a.forward(&Matrix::zeros(2, 3), None).unwrap();
        assert!(matches!(
            b.backward(&cache, &Matrix::zeros(2, 2)),
            Err(Error::StaleCache(_))
        ));
        assert!(matches!(
            a.backward(&cache, &Matrix::zeros(3, 2)),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = FeedForward::<f64>::new(&[3, 4, 2], 0.0, true, &mut rng(2)).unwrap();
        let x = random_matrix(5, 3, &mut rng(3));
        let (_, cache) = net.forward(&x, None).unwrap();
        let (dx, grads) = net.backward(&cache, &Matrix::zeros(5, 2)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(grads
            .tensors()
            .iter()
            .all(|(_, m)| m.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_net_gradient_closed_form() {
        // y = xW + b, L = sum(y ⊙ c): dW = xᵀc, db = colsum(c), dx = cWᵀ.
        let net = FeedForward::<f64>::new(&[3, 2], 0.0, false, &mut rng(4)).unwrap();
        let x = random_matrix(4, 3, &mut rng(5));
        let c = random_matrix(4, 2, &mut rng(6));
        let (_, cache) = net.forward(&x, None).unwrap();
        let (dx, grads) = net.backward(&cache, &c).unwrap();
        assert!(grads.layers[0].weight.max_abs_diff(&x.transpose().matmul(&c)) < 1e-12);
        assert!(grads.layers[0].bias.max_abs_diff(&c.col_sums()) < 1e-12);
        assert!(dx.max_abs_diff(&c.matmul(&net.layers[0].weight.transpose())) < 1e-12);
    }

    fn weighted_sum(y: &Matrix<f64>, c: &Matrix<f64>) -> f64 {
        y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    }

    /// Central finite differences on the parameters and on the input, with
    /// dropout masks frozen by reseeding the same rng for every evaluation.
    fn check_random_net(seed: u64, dims: &[usize], rows: usize, dropout: f64, layer_norm: bool) {
        let mut r = rng(seed);
        let mut net = FeedForward::<f64>::new(dims, dropout, layer_norm, &mut r).unwrap();
        for (_, t) in net.tensors_mut() {
            for v in t.as_mut_slice() {
                *v = r.random_range(-1.0..1.0);
            }
        }
        let x = random_matrix(rows, dims[0], &mut r);
        let c = random_matrix(rows, *dims.last().unwrap(), &mut r);
        let mask_seed = seed + 1000;

        let (_, cache) = net.forward(&x, Some(&mut rng(mask_seed))).unwrap();
        let (dx, grads) = net.backward(&cache, &c).unwrap();
        let report = grad_check(
            &mut net,
            &grads,
            |n: &FeedForward<f64>| weighted_sum(&n.forward(&x, Some(&mut rng(mask_seed))).unwrap().0, &c),
            1e-5,
            1e-4,
        );
        assert!(report.passed(), "{report}");

        // Input Jacobian-vector product.
        let h = 1e-5;
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut xp = x.clone();
                xp.set(i, j, x.get(i, j) + h);
                let mut xm = x.clone();
                xm.set(i, j, x.get(i, j) - h);
                let fp = weighted_sum(&net.forward(&xp, Some(&mut rng(mask_seed))).unwrap().0, &c);
                let fm = weighted_sum(&net.forward(&xm, Some(&mut rng(mask_seed))).unwrap().0, &c);
                let num = (fp - fm) / (2.0 * h);
                let ana = dx.get(i, j);
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                assert!(rel < 1e-4, "dx[{i},{j}] analytic {ana} numeric {num}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_random_net(10, &[4, 6, 3], 5, 0.0, true);
        check_random_net(11, &[5, 7, 4, 2], 3, 0.3, true);
        check_random_net(12, &[3, 5, 3], 4, 0.5, false);
    }

    #[test]
    fn layer_norm_examples() {
        let p = LayerNormParams::<f64>::new(4);
        assert!(layer_norm(&[3.0; 4], &p).iter().all(|v| v.abs() < 1e-12));
        let p = LayerNormParams::<f64>::new(2);
        let y = layer_norm(&[1.0, -1.0], &p);
        assert!((y[0] - 1.0).abs() < 1e-5 && (y[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut r = rng(7);
        for _ in 0..20 {
            let n = r.random_range(2..9);
            let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let dy: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut p = LayerNormParams::<f64>::new(n);
            for v in p.gain.as_mut_slice().iter_mut().chain(p.shift.as_mut_slice()) {
                *v = r.random_range(-1.5..1.5);
            }
            let (dx, grads) = layer_norm_backward(&x, &p, &dy);
            let f = |x: &[f64], p: &LayerNormParams<f64>| -> f64 {
                layer_norm(x, p).iter().zip(&dy).map(|(a, b)| a * b).sum()
            };
            let h = 1e-5;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            for j in 0..n {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let num = (f(&xp, &p) - f(&xm, &p)) / (2.0 * h);
                assert!(rel(num, dx[j]) < 1e-4, "dx {num} vs {}", dx[j]);

                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp.gain.as_mut_slice()[j] += h;
                pm.gain.as_mut_slice()[j] -= h;
                let num = (f(&x, &pp) - f(&x, &pm)) / (2.0 * h);
                assert!(rel(num, grads.gain.as_slice()[j]) < 1e-4);
            }
            assert_eq!(grads.shift.as_slice(), dy.as_slice());
        }
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let net = FeedForward::<f64>::new(&[1, 1], 0.68, false, &mut rng(0)).unwrap();
        let mut r = rng(99);
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let trials = 100_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let (_, cache) = net.forward(&x, Some(&mut r)).unwrap();
            total += cache.inputs[0].get(0, 0);
        }
        let mean = total / f64::from(trials);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }
}
