//! Dense tanh networks with hand-written reverse mode.
//!
//! Hidden layers use `tanh`; the output layer is linear. A value network has
//! a single output, a policy network feeds its outputs through a softmax.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::duality::softmax;
use crate::error::{Error, Result};

/// Weights (`n_out x n_in`, row-major) and biases of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.n_in)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Partial derivatives laid out exactly like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<Dense>,
}

impl GradientBundle {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for x in self.values_mut() {
            *x *= k;
        }
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.scale(k);
        self
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &GradientBundle, k: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += k * b;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|x| x.is_finite())
    }
}

impl Mlp {
    /// Network with every parameter zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Self {
            layers: layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Dimension {
                    expected: pair[0].n_out,
                    got: pair[1].n_in,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.n_in * l.n_out || l.biases.len() != l.n_out {
                return Err(Error::InvalidArgument("layer parameter length mismatch".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.n_out))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flat parameter view, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut i = index;
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.biases.len() {
                return &mut l.biases[i];
            }
            i -= l.biases.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Raw output layer (no softmax).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cache(x)?;
        Ok(cache.into_iter().last().unwrap_or_default())
    }

    /// Scalar output of a value network.
    pub fn forward_value(&self, x: &[f64]) -> Result<f64> {
        self.ensure_output(1)?;
        Ok(self.forward(x)?[0])
    }

    /// Softmax over the outputs.
    pub fn forward_policy(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(x)?))
    }

    /// Gradient of `upstream * V(x)`.
    pub fn backprop_value(&self, x: &[f64], upstream: f64) -> Result<GradientBundle> {
        let mut grad = GradientBundle::zeros_like(self);
        self.accumulate_value_grad(x, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient of `upstream * V(x)` into `grad`.
    pub fn accumulate_value_grad(&self, x: &[f64], upstream: f64, grad: &mut GradientBundle) -> Result<()> {
        self.ensure_output(1)?;
        let cache = self.forward_cache(x)?;
        self.backward(&cache, vec![upstream], grad);
        Ok(())
    }

    /// Gradient of `log pi(action | x)`.
    pub fn backprop_log_policy(&self, x: &[f64], action: usize) -> Result<GradientBundle> {
        let mut grad = GradientBundle::zeros_like(self);
        self.accumulate_log_policy_grad(x, action, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale * grad log pi(action | x)` into `grad`.
    pub fn accumulate_log_policy_grad(
        &self,
        x: &[f64],
        action: usize,
        scale: f64,
        grad: &mut GradientBundle,
    ) -> Result<()> {
        let n_out = self.output_dim();
        if action >= n_out {
            return Err(Error::InvalidArgument(format!(
                "action {action} out of range for {n_out} outputs"
            )));
        }
        let cache = self.forward_cache(x)?;
        let probs = softmax(cache.last().expect("output layer"));
        // d log softmax_a / dz = e_a - pi
        let dout = probs
            .iter()
            .enumerate()
            .map(|(i, p)| scale * (if i == action { 1.0 } else { 0.0 } - p))
            .collect();
        self.backward(&cache, dout, grad);
        Ok(())
    }

    /// `theta <- theta + direction * eta * grad`.
    pub fn sgd_step(&mut self, grad: &GradientBundle, eta: f64, direction: f64) -> Result<()> {
        if grad.layers.len() != self.layers.len()
            || grad
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.n_in != l.n_in || g.n_out != l.n_out)
        {
            return Err(Error::InvalidArgument(
                "gradient shape does not match network".into(),
            ));
        }
        let k = direction * eta;
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, dw) in l.weights.iter_mut().zip(&g.weights) {
                *w += k * dw;
            }
            for (b, db) in l.biases.iter_mut().zip(&g.biases) {
                *b += k * db;
            }
        }
        Ok(())
    }

    fn ensure_output(&self, n: usize) -> Result<()> {
        if self.output_dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.output_dim(),
            });
        }
        Ok(())
    }

    /// Activations per layer: `cache[0]` is the input, `cache[i]` the output
    /// of layer `i` (post-tanh for hidden layers, raw for the last).
    fn forward_cache(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cache = Vec::with_capacity(self.layers.len() + 1);
        cache.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.apply(cache.last().expect("input"), &mut out);
            if i < last {
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            cache.push(out);
        }
        Ok(cache)
    }

    /// Reverse pass given the gradient w.r.t. the raw output; accumulates.
    fn backward(&self, cache: &[Vec<f64>], mut delta: Vec<f64>, grad: &mut GradientBundle) {
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache[i];
            let g = &mut grad.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if i == 0 {
                break;
            }
            // input of this layer is tanh output of the previous one
            let mut prev = vec![0.0; layer.n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, h) in prev.iter_mut().zip(input) {
                *p *= 1.0 - h * h;
            }
            delta = prev;
        }
    }

    /// Writes the shape header and all parameters.
    ///
    /// Layout (little endian): `u64` count of layer sizes, each size as
    /// `u64`, then per layer the `n_out x n_in` weights row-major followed by
    /// the biases, all as `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let sizes = self.layer_sizes();
        w.write_all(&(sizes.len() as u64).to_le_bytes())?;
        for s in &sizes {
            w.write_all(&(*s as u64).to_le_bytes())?;
        }
        for x in self.params() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut buf)?;
            Ok(u64::from_le_bytes(buf))
        };
        let count = next_u64(&mut r)? as usize;
        if !(2..=1024).contains(&count) {
            return Err(Error::InvalidArgument(format!("implausible layer count {count}")));
        }
        let sizes = (0..count)
            .map(|_| next_u64(&mut r).map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes)?;
        let mut bytes = vec![0u8; net.n_params() * 8];
        r.read_exact(&mut bytes)?;
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for l in &mut net.layers {
            for x in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *x = values.next().expect("sized buffer");
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least input and output sizes".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument("layer sizes must be positive".into()));
    }
    Ok(())
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
pub fn init_mlp<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Mlp> {
    let mut net = Mlp::zeros(layer_sizes)?;
    for l in &mut net.layers {
        let bound = 1.0 / (l.n_in as f64).sqrt();
        for w in &mut l.weights {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 1]).unwrap();
        assert_eq!(net.forward_value(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn bias_passthrough() {
        let mut net = Mlp::zeros(&[3, 5, 5, 1]).unwrap();
        net.layers_mut().last_mut().unwrap().biases[0] = 0.7;
        assert_eq!(net.forward_value(&[0.3, 0.1, 9.0]).unwrap(), 0.7);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward_policy(&[1.0]),
            Err(Error::Dimension { expected: 3, got: 1 })
        ));
        assert!(net.forward_value(&[1.0, 2.0, 3.0]).is_err());
        assert!(Mlp::zeros(&[3]).is_err());
    }

    #[test]
    fn zero_logits_give_uniform() {
        let net = Mlp::zeros(&[2, 4, 3]).unwrap();
        for p in net.forward_policy(&[0.5, 0.5]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let mut net = Mlp::zeros(&[1, 2]).unwrap();
        net.layers_mut()[0].biases = vec![1e4, 1e4 - 1000.0];
        let p = net.forward_policy(&[0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] < 1e-300);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn single_action_policy_has_zero_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = init_mlp(&[3, 6, 1], &mut rng).unwrap();
        let g = net.backprop_log_policy(&[0.1, 0.2, 0.3], 0).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(net.backprop_log_policy(&[0.1, 0.2, 0.3], 1).is_err());
    }

    #[test]
    fn backprop_value_is_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = init_mlp(&[4, 7, 7, 1], &mut rng).unwrap();
        let x = random_input(4, &mut rng);
        assert_eq!(net.backprop_value(&x, 0.0).unwrap().max_abs(), 0.0);
        let one = net.backprop_value(&x, 1.0).unwrap();
        let two = net.backprop_value(&x, 2.0).unwrap();
        assert_eq!(two, one.scaled(2.0));
    }

    #[test]
    fn sgd_step_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = init_mlp(&[3, 4, 1], &mut rng).unwrap();
        let g = net.backprop_value(&[0.2, 0.4, -0.1], 1.0).unwrap();

        let mut same = net.clone();
        same.sgd_step(&g, 0.0, 1.0).unwrap();
        assert_eq!(same, net);

        let mut once = net.clone();
        once.sgd_step(&g, 0.5, -1.0).unwrap();
        let mut twice = net.clone();
        twice.sgd_step(&g, 0.25, -1.0).unwrap();
        twice.sgd_step(&g, 0.25, -1.0).unwrap();
        for (a, b) in once.params().iter().zip(twice.params()) {
            assert!((a - b).abs() < 1e-15);
        }

        let other = Mlp::zeros(&[3, 5, 1]).unwrap();
        let bad = GradientBundle::zeros_like(&other);
        assert!(once.sgd_step(&bad, 0.1, 1.0).is_err());
    }

    #[test]
    fn descent_fits_a_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut net = init_mlp(&[4, 16, 16, 1], &mut rng).unwrap();
        let x = random_input(4, &mut rng);
        let y = 1.5;
        let loss = |n: &Mlp| (n.forward_value(&x).unwrap() - y).powi(2);
        let before = loss(&net);
        for _ in 0..100 {
            let err = net.forward_value(&x).unwrap() - y;
            let g = net.backprop_value(&x, 2.0 * err).unwrap();
            net.sgd_step(&g, 1e-3, -1.0).unwrap();
        }
        assert!(loss(&net) < before);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_mlp(&[4, 8], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_mlp(&[4, 8], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= 0.5));
        assert!(a.layers()[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn binary_round_trip() {
        let net = init_mlp(&[4, 5, 2], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (1 + 3 + net.n_params()));
        assert_eq!(Mlp::read_from(buf.as_slice()).unwrap(), net);
        assert!(Mlp::read_from(&buf[..buf.len() - 1]).is_err());
    }
}
