//! Seeded two-layer toy networks.
//!
//! `y = out(W2 · tanh(W1 · x + b1) + b2)` where `out` is the logistic sigmoid
//! for generators and the identity for extractors.
//!
//! Weights come from a 64-bit linear congruential sequence so that any
//! language can rebuild them bit for bit:
//!
//! ```text
//! state <- state * 6364136223846793005 + 1442695040888963407   (mod 2^64)
//! u      = (state >> 40) as f32 / 2^24                         in [0, 1)
//! w      = (2u - 1) * bound,   bound = gain / sqrt(fan_in)     (all f32)
//! ```
//!
//! The initial state is the model seed and the state advances before every
//! draw. Parameters are drawn in the order W1 (row-major, hidden x input),
//! b1, W2 (row-major, output x hidden), b2. Each layer uses its own fan-in
//! for `bound`; `gain` only scales the second layer.

use super::{check_len, DiffModel, ModelSpec, Role, DEFAULT_HIDDEN};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform `f32` in `[0, 1)` from the top 24 bits of the next state.
    pub fn next_unit(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / 16_777_216.0
    }

    /// Uniform `f32` in `[-bound, bound)`.
    pub fn next_symmetric(&mut self, bound: f32) -> f32 {
        (2.0 * self.next_unit() - 1.0) * bound
    }
}

#[derive(Debug, Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn draw(rng: &mut Lcg, rows: usize, cols: usize, gain: f32) -> Self {
        let bound = gain / (cols as f32).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.next_symmetric(bound) as f64)
            .collect();
        let bias = (0..rows).map(|_| rng.next_symmetric(bound) as f64).collect();
        Dense {
            rows,
            cols,
            weights,
            bias,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &gi) in self.weights.chunks_exact(self.cols).zip(g) {
            if gi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += w * gi;
                }
            }
        }
        out
    }

    fn frobenius(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Deterministic two-layer network implementing [`DiffModel`].
#[derive(Debug, Clone)]
pub struct ToyModel {
    spec: ModelSpec,
    first: Dense,
    second: Dense,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl ToyModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let hidden = spec.hidden.unwrap_or(DEFAULT_HIDDEN);
        let gain = spec.gain.unwrap_or(1.0) as f32;
        let mut rng = Lcg::new(spec.seed.unwrap_or(0));
        let first = Dense::draw(&mut rng, hidden, spec.input_len(), 1.0);
        let second = Dense::draw(&mut rng, spec.output_len(), hidden, gain);
        Ok(ToyModel {
            spec,
            first,
            second,
        })
    }

    /// `(W1, b1, W2, b2)` with row-major matrices.
    pub fn parameters(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (
            &self.first.weights,
            &self.first.bias,
            &self.second.weights,
            &self.second.bias,
        )
    }

    pub fn hidden(&self) -> usize {
        self.first.rows
    }

    /// Upper bound on the Lipschitz constant of the forward map:
    /// the product of the layers' Frobenius norms (tanh is 1-Lipschitz and the
    /// sigmoid is 1/4-Lipschitz).
    pub fn lipschitz_bound(&self) -> f64 {
        let out = if self.spec.role == Role::Generator { 0.25 } else { 1.0 };
        self.first.frobenius() * self.second.frobenius() * out
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        self.first.apply(x).into_iter().map(f64::tanh).collect()
    }
}

impl DiffModel for ToyModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("diffmodel toy forward", self.first.cols, input.len())?;
        let h = self.hidden_activations(input);
        let out = self.second.apply(&h);
        Ok(match self.spec.role {
            Role::Generator => out.into_iter().map(sigmoid).collect(),
            _ => out,
        })
    }

    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len("diffmodel toy vjp input", self.first.cols, input.len())?;
        check_len("diffmodel toy vjp cotangent", self.second.rows, cotangent.len())?;
        let h = self.hidden_activations(input);
        let g_pre_out: Vec<f64> = match self.spec.role {
            Role::Generator => {
                let pre = self.second.apply(&h);
                pre.iter()
                    .zip(cotangent)
                    .map(|(&a, &c)| {
                        let s = sigmoid(a);
                        c * s * (1.0 - s)
                    })
                    .collect()
            }
            _ => cotangent.to_vec(),
        };
        let g_h = self.second.apply_transpose(&g_pre_out);
        let g_pre_hidden: Vec<f64> = g_h
            .iter()
            .zip(&h)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        Ok(self.first.apply_transpose(&g_pre_hidden))
    }
}
