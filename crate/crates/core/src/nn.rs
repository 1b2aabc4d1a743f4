//! Dense ReLU networks with hand-written backpropagation and Adam.
//!
//! Batches are row-major `(batch, features)` matrices. Weights are stored as
//! `(fan_in, fan_out)` so a layer is `x.dot(w) + b`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `bound * tanh(z)`.
    ScaledTanh(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|x| x.is_finite())
    }
}

/// Parameter gradients, one entry per layer, same shapes as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

/// Activations kept from a forward pass for [`MlpNet::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Multilayer perceptron: ReLU hidden layers, configurable output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
    output: OutputActivation,
}

impl MlpNet {
    /// `sizes` lists input, hidden and output widths. Weights and biases are
    /// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.weights.nrows() as f64).sqrt();
            layer
                .weights
                .iter_mut()
                .chain(layer.bias.iter_mut())
                .for_each(|p| *p = rng.random_range(-bound..=bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "network needs at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            output,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| Error::DimensionMismatch { expected: self.input_dim(), got: input.len() })?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        check_dim(self.input_dim(), input.ncols())?;
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = x.dot(&layer.weights) + &layer.bias;
            let next = if i == last {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::ScaledTanh(bound) => z.mapv(|v| bound * v.tanh()),
                }
            } else {
                z.mapv(|v| v.max(0.0))
            };
            inputs.push(x);
            pre.push(z);
            x = next;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: x,
        })
    }

    /// Backpropagates `output_grad` (gradient of a scalar loss with respect
    /// to each output row) and returns parameter gradients summed over the
    /// batch together with the gradient with respect to the input.
    ///
    /// ReLU uses subgradient 0 at exactly 0.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if output_grad.dim() != cache.output.dim() {
            return Err(Error::DimensionMismatch {
                expected: cache.output.len(),
                got: output_grad.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut delta = match self.output {
            OutputActivation::Identity => output_grad.to_owned(),
            OutputActivation::ScaledTanh(bound) => {
                let mut d = output_grad.to_owned();
                Zip::from(&mut d).and(&cache.pre[last]).for_each(|g, &z| {
                    let t = z.tanh();
                    *g *= bound * (1.0 - t * t);
                });
                d
            }
        };
        let mut grads = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let weights = cache.inputs[i].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&layer.weights.t());
            if i > 0 {
                Zip::from(&mut upstream)
                    .and(&cache.pre[i - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            grads[i] = Some(Dense { weights, bias });
            delta = upstream;
        }
        let layers = grads.into_iter().map(|g| g.expect("every layer visited")).collect();
        Ok((Gradients { layers }, delta))
    }

    /// All parameters, layer by layer: weights in `(out, in)` order, then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.num_params(), params.len())?;
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            for o in 0..fan_out {
                for i in 0..fan_in {
                    layer.weights[[i, o]] = it.next().unwrap();
                }
            }
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// Polyak averaging: `self <- (1 - tau) * self + tau * online`.
    pub fn soft_update_from(&mut self, online: &MlpNet, tau: f64) -> Result<()> {
        if self.sizes != online.sizes {
            return Err(Error::Config("soft update between different shapes".into()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weights)
                .and(&o.weights)
                .for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
            Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
        }
        Ok(())
    }

    /// Euclidean distance between two parameter vectors of equal shape.
    pub fn param_distance(&self, other: &MlpNet) -> f64 {
        self.params_flat()
            .iter()
            .zip(other.params_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Writes `u64 count`, `count` layer sizes as `u64`, then every parameter
    /// in [`params_flat`](Self::params_flat) order as `f64`, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.sizes.len() as u64).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for p in self.params_flat() {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint; the output activation is not stored in the file.
    pub fn read_checkpoint<R: Read>(mut r: R, output: OutputActivation) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)
                .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
            Ok(u64::from_le_bytes(word))
        };
        let count = next_u64(&mut r)?;
        if !(2..=64).contains(&count) {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let sizes = (0..count)
            .map(|_| {
                let s = next_u64(&mut r)?;
                usize::try_from(s)
                    .ok()
                    .filter(|&s| s > 0 && s <= 1 << 20)
                    .ok_or_else(|| Error::Checkpoint(format!("bad layer size {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes, output)?;
        let mut params = vec![0.0; net.num_params()];
        let mut buf = [0u8; 8];
        for p in &mut params {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
            *p = f64::from_le_bytes(buf);
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        net.set_params_flat(&params)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>, output: OutputActivation) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?), output)
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        let (fan_in, fan_out) = layer.weights.dim();
        for o in 0..fan_out {
            for i in 0..fan_in {
                out.push(layer.weights[[i, o]]);
            }
        }
        out.extend(layer.bias.iter());
    }
    out
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Dense>,
    second: Vec<Dense>,
}

impl AdamState {
    pub fn new(net: &MlpNet, lr: f64) -> Self {
        let zeros: Vec<Dense> = net
            .layers
            .iter()
            .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.weights.dim() != l.weights.dim() || g.bias.dim() != l.bias.dim())
        {
            return Err(Error::Config("gradient shapes do not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpNet::zeros(&[3, 5, 2], OutputActivation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_matrix_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MlpNet::new(&[3, 2], OutputActivation::Identity, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let l = &net.layers()[0];
        let expected: Vec<f64> = (0..2)
            .map(|o| (0..3).map(|i| l.weights[[i, o]] * x[i]).sum::<f64>() + l.bias[o])
            .collect();
        let got = net.forward(&x).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn actor_output_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = MlpNet::new(&[4, 16, 2], OutputActivation::ScaledTanh(0.7), &mut rng).unwrap();
        // large weights push tanh into saturation
        for l in net.layers_mut() {
            l.weights.mapv_inplace(|w| w * 50.0);
        }
        let x = random_input(&mut rng, 10_000, 4);
        let y = net.forward_batch(x.view()).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 0.7));
    }

    #[test]
    fn errors() {
        let net = MlpNet::zeros(&[2, 2], OutputActivation::Identity).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.forward(&[f64::NAN, 0.0]).is_err());
        let cache = net.forward_cached(array![[1.0, 2.0]].view()).unwrap();
        assert!(net.backward(&cache, array![[1.0, 2.0, 3.0]].view()).is_err());
        assert!(MlpNet::zeros(&[3], OutputActivation::Identity).is_err());
    }

    #[test]
    fn single_layer_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpNet::new(&[3, 2], OutputActivation::Identity, &mut rng).unwrap();
        let x = array![[0.3, -0.7, 1.1]];
        let g = array![[2.0, -0.5]];
        let cache = net.forward_cached(x.view()).unwrap();
        let (grads, _) = net.backward(&cache, g.view()).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                assert_eq!(grads.layers[0].weights[[i, o]], x[[0, i]] * g[[0, o]]);
            }
        }
        assert_eq!(grads.layers[0].bias, array![2.0, -0.5]);
    }

    #[test]
    fn relu_at_zero_has_zero_subgradient() {
        // hidden pre-activation is exactly zero for this input
        let mut net = MlpNet::zeros(&[1, 1, 1], OutputActivation::Identity).unwrap();
        net.layers_mut()[0].weights[[0, 0]] = 1.0;
        net.layers_mut()[1].weights[[0, 0]] = 3.0;
        let cache = net.forward_cached(array![[0.0]].view()).unwrap();
        let (grads, dx) = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert_eq!(dx[[0, 0]], 0.0);
        assert_eq!(grads.layers[0].weights[[0, 0]], 0.0);
        assert_eq!(grads.layers[0].bias[0], 0.0);
    }

    fn finite_difference_check(sizes: &[usize], output: OutputActivation, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpNet::new(sizes, output, &mut rng).unwrap();
        let x = random_input(&mut rng, 3, sizes[0]);
        let c = random_input(&mut rng, 3, *sizes.last().unwrap());
        let loss = |net: &MlpNet, x: &Array2<f64>| (net.forward_batch(x.view()).unwrap() * &c).sum();
        let cache = net.forward_cached(x.view()).unwrap();
        let (grads, dx) = net.backward(&cache, c.view()).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        let params = net.params_flat();
        let analytic = grads.flat();
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            net.set_params_flat(&p).unwrap();
            let up = loss(&net, &x);
            p[k] -= 2.0 * h;
            net.set_params_flat(&p).unwrap();
            let down = loss(&net, &x);
            let numeric = (up - down) / (2.0 * h);
            assert!(rel(analytic[k], numeric) < 1e-4, "param {k}: {} vs {numeric}", analytic[k]);
        }
        net.set_params_flat(&params).unwrap();
        for idx in 0..x.len() {
            let (r, col) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, col]] += h;
            let up = loss(&net, &xp);
            xp[[r, col]] -= 2.0 * h;
            let down = loss(&net, &xp);
            let numeric = (up - down) / (2.0 * h);
            assert!(rel(dx[[r, col]], numeric) < 1e-4);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(&[3, 8, 2], OutputActivation::Identity, 10);
        finite_difference_check(&[4, 6, 5, 2], OutputActivation::ScaledTanh(1.5), 11);
        finite_difference_check(&[2, 1], OutputActivation::ScaledTanh(1.0), 12);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = MlpNet::new(&[3, 4, 1], OutputActivation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-3);
        let zero = Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        };
        adam.step(&mut net, &zero).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // Step 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        let mut net = MlpNet::zeros(&[2, 1], OutputActivation::Identity).unwrap();
        let mut adam = AdamState::new(&net, 1e-3);
        let g = 0.37;
        let grads = Gradients {
            layers: vec![Dense {
                weights: Array2::from_elem((2, 1), g),
                bias: Array1::from_elem(1, g),
            }],
        };
        adam.step(&mut net, &grads).unwrap();
        let expected = -1e-3 * g / (g + 1e-8);
        for p in net.params_flat() {
            assert!((p - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut net = MlpNet::zeros(&[2, 1], OutputActivation::Identity).unwrap();
        let mut adam = AdamState::new(&net, 1e-3);
        let mut bad = Gradients {
            layers: vec![Dense::zeros(2, 1)],
        };
        bad.layers[0].bias[0] = f64::INFINITY;
        assert!(matches!(adam.step(&mut net, &bad), Err(Error::NonFinite(_))));
        let wrong = Gradients {
            layers: vec![Dense::zeros(3, 1)],
        };
        assert!(adam.step(&mut net, &wrong).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MlpNet::new(&[5, 7, 3], OutputActivation::ScaledTanh(1.0), &mut rng).unwrap();
        let mut bytes = Vec::new();
        net.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 * (1 + 3 + net.num_params()));
        assert_eq!(&bytes[..8], &3u64.to_le_bytes());
        let back = MlpNet::read_checkpoint(bytes.as_slice(), OutputActivation::ScaledTanh(1.0)).unwrap();
        assert_eq!(back, net);
        assert!(MlpNet::read_checkpoint(&bytes[..bytes.len() - 1], OutputActivation::Identity).is_err());
    }

    #[test]
    fn soft_update_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let online = MlpNet::new(&[3, 4, 1], OutputActivation::Identity, &mut rng).unwrap();
        let mut target = MlpNet::new(&[3, 4, 1], OutputActivation::Identity, &mut rng).unwrap();
        let mut last = target.param_distance(&online);
        for _ in 0..20 {
            target.soft_update_from(&online, 0.1).unwrap();
            let d = target.param_distance(&online);
            assert!(d <= last);
            last = d;
        }
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target, online);
    }
}
