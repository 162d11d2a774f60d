use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How the last layer's weights start out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputInit {
    Zero,
    /// Uniform in `±scale * sqrt(6 / (fan_in + fan_out))`.
    Scaled(f64),
}

/// Fully connected network, tanh hidden units, linear output.
///
/// Parameters are one flat vector; layer `i` stores its `out x in` weights
/// row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpParts")]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Deserialize)]
struct MlpParts {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl TryFrom<MlpParts> for Mlp {
    type Error = Error;

    fn try_from(p: MlpParts) -> Result<Self> {
        Mlp::from_parts(p.sizes, p.params)
    }
}

/// Post-activation values of every layer from one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    layers: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    checked_param_count(sizes).expect("layer sizes overflow")
}

fn checked_param_count(sizes: &[usize]) -> Option<usize> {
    sizes.windows(2).try_fold(0usize, |acc, w| {
        w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc)
    })
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R, output: OutputInit) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&n| n > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::with_capacity(param_count(sizes));
        let last = sizes.len() - 2;
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = match (i == last, output) {
                (true, OutputInit::Zero) => 0.0,
                (true, OutputInit::Scaled(s)) => s,
                (false, _) => 1.0,
            };
            let bound = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    /// Rebuild from a layout and flat parameters.
    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::format("network", format!("bad layer sizes {sizes:?}")));
        }
        let want = checked_param_count(&sizes);
        if want != Some(params.len()) {
            return Err(Error::format(
                "network",
                format!("expected {want:?} parameters for {sizes:?}, found {}", params.len()),
            ));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).layers.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, x: &[f64]) -> Cache {
        assert_eq!(x.len(), self.input_dim(), "input width");
        let mut layers = vec![x.to_vec()];
        let mut off = 0;
        let n = self.sizes.len() - 1;
        for (i, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[off..off + fan_in * fan_out];
            let bias = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let input = &layers[i];
            let mut out: Vec<f64> = bias.to_vec();
            for (o, row) in out.iter_mut().zip(weights.chunks_exact(fan_in)) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if i + 1 < n {
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            layers.push(out);
            off += fan_in * fan_out + fan_out;
        }
        Cache { layers }
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d output`,
    /// and return `d loss / d input`.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len(), "gradient width");
        assert_eq!(grad_out.len(), self.output_dim(), "output gradient width");
        let n = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for i in (0..n).rev() {
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            if i + 1 < n {
                // tanh' = 1 - y^2 on the cached activation
                for (d, y) in delta.iter_mut().zip(&cache.layers[i + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let off = offsets[i];
            let input = &cache.layers[i];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                for (g, x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (row, d) in weights.chunks_exact(fan_in).zip(&delta) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }
}

/// First-order adaptive-moment optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scale `grad` down to at most `max_norm` in 2-norm; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
