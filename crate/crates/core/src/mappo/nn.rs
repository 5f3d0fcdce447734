use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Fully connected network with tanh hidden layers and a linear output,
/// parameters stored flat as `[W₀ (row-major, out × in), b₀, W₁, b₁, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Activations kept by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    acts: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("tape holds at least the input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases; the last layer is scaled by
    /// `out_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid("network needs an input and an output layer of nonzero width"));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        let n_layers = sizes.len() - 1;
        for (j, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if j + 1 == n_layers {
                bound *= out_gain;
            }
            for _ in 0..fan_in * fan_out {
                params.push(T::of(rng.random_range(-bound..=bound)));
            }
            params.extend(std::iter::repeat_n(T::zero(), fan_out));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid("network needs an input and an output layer of nonzero width"));
        }
        if params.len() != param_count(sizes) {
            return Err(invalid(format!(
                "expected {} parameters for layer sizes {sizes:?}, got {}",
                param_count(sizes),
                params.len()
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
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

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward_tape(&self, x: &[T]) -> Tape<T> {
        assert_eq!(x.len(), self.input_dim(), "input width");
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let n_layers = self.sizes.len() - 1;
        for j in 0..n_layers {
            let (n_in, n_out) = (self.sizes[j], self.sizes[j + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let inp = acts.last().unwrap();
            let mut out: Vec<T> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    row.iter().zip(inp).fold(b[o], |acc, (&a, &c)| acc + a * c)
                })
                .collect();
            if j + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        Tape { acts }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_tape(x).acts.pop().unwrap()
    }

    /// Adds `∂L/∂params` into `grad` given `∂L/∂output`.
    pub fn backward(&self, tape: &Tape<T>, d_out: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for j in 0..n_layers {
            offsets.push(off);
            off += self.sizes[j] * self.sizes[j + 1] + self.sizes[j + 1];
        }
        let mut delta = d_out.to_vec();
        for j in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[j], self.sizes[j + 1]);
            let off = offsets[j];
            let inp = &tape.acts[j];
            for o in 0..n_out {
                let d = delta[o];
                for i in 0..n_in {
                    grad[off + o * n_in + i] += d * inp[i];
                }
                grad[off + n_in * n_out + o] += d;
            }
            if j > 0 {
                let w = &self.params[off..off + n_in * n_out];
                // input to this layer is tanh output of the previous one
                delta = (0..n_in)
                    .map(|i| {
                        let s = (0..n_out).fold(T::zero(), |acc, o| acc + w[o * n_in + i] * delta[o]);
                        let a = inp[i];
                        s * (T::one() - a * a)
                    })
                    .collect();
            }
        }
    }
}

/// Adaptive moment estimation state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    /// Descent step `p ← p − lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64, cfg: &AdamConfig) {
        if lr == 0.0 {
            return;
        }
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::one() - T::of(cfg.beta1.powi(self.t as i32));
        let c2 = T::one() - T::of(cfg.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(lr), T::of(cfg.eps));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::<f64>::new(&[3, 5, 4, 2], 1.0, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1];
        // L = 0.5‖y‖²
        let tape = net.forward_tape(&x);
        let y = tape.output().to_vec();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&tape, &y, &mut grad);
        let h = 1e-6;
        for i in 0..net.num_params() {
            let p = net.params()[i];
            net.params_mut()[i] = p + h;
            let lp: f64 = net.forward(&x).iter().map(|v| 0.5 * v * v).sum();
            net.params_mut()[i] = p - h;
            let lm: f64 = net.forward(&x).iter().map(|v| 0.5 * v * v).sum();
            net.params_mut()[i] = p;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(Mlp::<f64>::from_params(&[2, 2], vec![0.0; 5]).is_err());
        assert!(Mlp::<f64>::from_params(&[2], vec![]).is_err());
        assert_eq!(Mlp::<f64>::from_params(&[2, 3, 1], vec![0.0; 13]).unwrap().num_params(), 13);
    }

    #[test]
    fn adam_zero_rate_is_noop() {
        let mut p = vec![1.0, 2.0];
        let mut a = Adam::<f64>::new(2);
        a.step(&mut p, &[1.0, 1.0], 0.0, &AdamConfig::default());
        assert_eq!(p, vec![1.0, 2.0]);
        a.step(&mut p, &[1.0, -1.0], 0.1, &AdamConfig::default());
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] - 2.1).abs() < 1e-6);
    }
}
